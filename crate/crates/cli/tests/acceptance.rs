//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The run always completes; set `SEQSTREAM_ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a nonzero exit.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqstream::encoder::decode_output;
use seqstream::eval::{ccr, convergence_curve, experiment_params, resolved, run_fixture};
use seqstream::merge::{backtrack, merge};
use seqstream::similarity::{distance, is_subsequence, lcs_brute, lcs_table};
use seqstream::synthgen::{gen_sequence_stream_with, standard_fixture, NoiseKind, SequenceNoise};
use seqstream::{Hyperparams, MicroCluster, NodeState, Sequence, Symbol};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Random sequence of length `0..=max_len` over `1..=alphabet`, with no
/// adjacent repeats.
fn random_sequence(rng: &mut ChaCha8Rng, max_len: usize, alphabet: u32) -> Sequence {
    let len = rng.gen_range(0..=max_len);
    let mut out: Vec<Symbol> = Vec::with_capacity(len);
    while out.len() < len {
        let s = Symbol(rng.gen_range(1..=alphabet));
        if out.last() != Some(&s) {
            out.push(s);
        }
    }
    Sequence::new(out).unwrap()
}

fn random_cluster(rng: &mut ChaCha8Rng, max_len: usize, integral: bool) -> MicroCluster {
    let se = random_sequence(rng, max_len, 16);
    let sw = (0..se.len())
        .map(|_| if integral { rng.gen_range(1..=20) as f64 } else { rng.gen_range(0.01..50.0) })
        .collect();
    MicroCluster::new(0, 1.0, se, sw).unwrap()
}

fn lcs_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let a = random_sequence(&mut rng, 10, 16);
        let b = random_sequence(&mut rng, 10, 16);
        let table = lcs_table(&a, &MicroCluster::from_sequence(b.clone(), 0));
        if table.score() != lcs_brute(a.symbols(), b.symbols()).unwrap() as f64 {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("1000 pairs, {mismatches} mismatches, {:.3}s", elapsed.as_secs_f64()),
    )
}

fn distance_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut out_of_range, mut self_nonzero, mut worst_scale) = (0, 0, 0.0f64);
    for _ in 0..10_000 {
        let q = random_sequence(&mut rng, 12, 16);
        let m = random_cluster(&mut rng, 12, false);
        let d = distance(&q, &m);
        if !(0.0..=1.0).contains(&d) {
            out_of_range += 1;
        }
        if !q.is_empty() && distance(&q, &MicroCluster::from_sequence(q.clone(), 0)) != 0.0 {
            self_nonzero += 1;
        }
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scaled = MicroCluster::new(0, 1.0, m.se().clone(), m.sw().iter().map(|w| w * c).collect()).unwrap();
        worst_scale = worst_scale.max((distance(&q, &scaled) - d).abs());
    }
    outcome(
        out_of_range == 0 && self_nonzero == 0 && worst_scale <= 1e-12,
        format!("10000 pairs, {out_of_range} out of [0,1], {self_nonzero} non-zero self distances, max scale drift {worst_scale:.1e}"),
    )
}

/// Weighted LCS table built from scratch: rows follow `n`, columns `e`, a
/// match adds `e`'s character weight over its maximum.
fn oracle_table(e: &MicroCluster, n: &MicroCluster) -> Vec<Vec<f64>> {
    let max = e.sw().iter().cloned().fold(0.0, f64::max);
    let (es, ns) = (e.se().symbols(), n.se().symbols());
    let mut c = vec![vec![0.0f64; es.len() + 1]; ns.len() + 1];
    for j in 1..=ns.len() {
        for i in 1..=es.len() {
            let mut best = c[j - 1][i].max(c[j][i - 1]);
            if ns[j - 1] == es[i - 1] {
                best = best.max(c[j - 1][i - 1] + e.sw()[i - 1] / max);
            }
            c[j][i] = best;
        }
    }
    c
}

fn oracle_gen(c: &[Vec<f64>], e: &MicroCluster, n: &MicroCluster, i: usize, j: usize, out: &mut Vec<(Symbol, f64)>) {
    let (es, ew, ns, nw) = (e.se().symbols(), e.sw(), n.se().symbols(), n.sw());
    if i == 0 {
        out.extend((0..j).map(|k| (ns[k], nw[k])));
    } else if j == 0 {
        out.extend((0..i).map(|k| (es[k], ew[k])));
    } else if c[j][i] == c[j - 1][i] {
        oracle_gen(c, e, n, i, j - 1, out);
        out.push((ns[j - 1], nw[j - 1]));
    } else if c[j][i] == c[j][i - 1] {
        oracle_gen(c, e, n, i - 1, j, out);
        out.push((es[i - 1], ew[i - 1]));
    } else {
        oracle_gen(c, e, n, i - 1, j - 1, out);
        out.push((es[i - 1], ew[i - 1] + nw[j - 1]));
    }
}

fn merge_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..1000 {
        let e = random_cluster(&mut rng, 10, true);
        let n = random_cluster(&mut rng, 10, true);
        let a = backtrack(&lcs_table(n.se(), &e), &e, &n);
        let total: f64 = e.sw().iter().sum::<f64>() + n.sw().iter().sum::<f64>();
        let mut expect = Vec::new();
        oracle_gen(&oracle_table(&e, &n), &e, &n, e.len(), n.len(), &mut expect);
        let got: Vec<(Symbol, f64)> = a.symbols.iter().copied().zip(a.weights.iter().copied()).collect();
        let ok = a.weights.iter().sum::<f64>() == total
            && merge(&e, &n, 0).sw().iter().sum::<f64>() == total
            && is_subsequence(e.se().symbols(), &a.symbols)
            && is_subsequence(n.se().symbols(), &a.symbols)
            && got == expect;
        failures += usize::from(!ok);
    }
    let abc = MicroCluster::from_sequence(Sequence::from_hex("ABC").unwrap(), 0);
    let abd = MicroCluster::from_sequence(Sequence::from_hex("ABD").unwrap(), 0);
    let m = merge(&abc, &abd, 0);
    let example = m.se().to_string() == "ABCD" && m.sw() == [2.0, 2.0, 1.0, 1.0];
    outcome(failures == 0 && example, format!("1000 pairs, {failures} failures; ABC+ABD -> {} {:?}", m.se(), m.sw()))
}

fn decay_cleanup() -> Outcome {
    let p = Hyperparams { lambda: 0.01, t_gap: 20, ..Hyperparams::default() };
    // Stale model: created at tick 1, untouched through two cleanup intervals.
    let mut stale = NodeState::new(1, p).unwrap();
    stale.ingest_sequence(Sequence::from_hex("4CEA2").unwrap().symbols(), 1).unwrap();
    stale.advance_to(41).unwrap();
    let removed = stale.is_empty();
    // Reinforced model: the same sequence every t_gap ticks, between cleanups.
    let mut kept = NodeState::new(1, Hyperparams { min_models_for_matching: 0, ..p }).unwrap();
    let seq = Sequence::from_hex("4CEA2").unwrap();
    let mut survived = 0;
    for cycle in 0..100u64 {
        kept.ingest_sequence(seq.symbols(), cycle * 20 + 10).unwrap();
        kept.advance_to((cycle + 1) * 20).unwrap();
        if kept.len() == 1 && kept.model_ids() == vec![1] {
            survived += 1;
        }
    }
    outcome(
        removed && survived == 100 && kept.stats().cleanups >= 100,
        format!(
            "stale w=1 model removed: {removed}; reinforced model alive after {survived}/100 cleanups (threshold {:.4})",
            p.removal_threshold()
        ),
    )
}

fn noise_forgetting() -> Outcome {
    let start = Instant::now();
    let pattern = vec![Sequence::from_hex("4CEA2").unwrap()];
    let mut bad = Vec::new();
    for seed in 0..10 {
        let fx = gen_sequence_stream_with(&pattern, 50, SequenceNoise::new(0.1, NoiseKind::Insert), seed).unwrap();
        let mut node = run_fixture(&fx, experiment_params(0.3), None).unwrap().node;
        node.flush();
        let ok = node.len() == 1 && {
            let m = node.model(1).unwrap();
            let min = m.sw().iter().cloned().fold(f64::MAX, f64::min);
            m.se().to_string() == "4CEA2" && min >= 0.8 * m.max_sw()
        };
        if !ok {
            bad.push(seed);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(1),
        format!("10 seeds, failing seeds {bad:?}, {:.3}s", elapsed.as_secs_f64()),
    )
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let (mut final_ok, mut stable_ok) = (0, 0);
    let mut mins = Vec::new();
    for seed in 0..10 {
        let curve = convergence_curve(&standard_fixture(seed), experiment_params(0.3), 30).unwrap();
        let ccrs: Vec<f64> = curve.iter().map(|(_, c)| *c).collect();
        let last100 = ccrs[ccrs.len() - 100..].iter().cloned().fold(1.0, f64::min);
        // First point from which the curve never drops below 0.85.
        let settle = ccrs.iter().rposition(|c| *c < 0.85).map_or(1, |k| k + 2);
        final_ok += usize::from(last100 >= 0.90);
        stable_ok += usize::from(settle <= 50);
        mins.push(format!("{last100:.2}@{settle}"));
    }
    let elapsed = start.elapsed();
    outcome(
        final_ok >= 8 && stable_ok >= 7 && elapsed < Duration::from_secs(30),
        format!(
            "final-100 min >= 0.90 in {final_ok}/10, settled >= 0.85 by 50 in {stable_ok}/10 (min@settle: {}), {:.2}s",
            mins.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn epsilon_sweep() -> Outcome {
    let eps = [0.05, 0.2, 0.3, 0.5, 0.8];
    let means: Vec<f64> = eps
        .iter()
        .map(|&e| {
            (0..10)
                .map(|seed| {
                    let run = run_fixture(&standard_fixture(seed), experiment_params(e), None).unwrap();
                    ccr(&resolved(&run.log, &run.node)).unwrap()
                })
                .sum::<f64>()
                / 10.0
        })
        .collect();
    let best = (0..eps.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
    let pass = (0.2..=0.5).contains(&eps[best]) && means[0] < means[2] && means[4] < means[2];
    let table: Vec<String> = eps.iter().zip(&means).map(|(e, m)| format!("{e}:{m:.3}")).collect();
    outcome(pass, format!("mean CCR {}", table.join(" ")))
}

fn bounded_memory() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = Vec::new();
    // Default decay, and decay slow enough that nothing expires and eviction
    // alone holds the cap.
    for lambda in [1e-2, 1e-7] {
        let mut node = NodeState::new(1, Hyperparams { m_u: 100, lambda, ..Hyperparams::default() }).unwrap();
        let mut max = 0;
        for k in 0..100_000u64 {
            let mut q = random_sequence(&mut rng, 10, 15);
            if q.is_empty() {
                q = Sequence::from_hex("1").unwrap();
            }
            node.ingest_sequence(q.symbols(), k + 1).unwrap();
            max = max.max(node.len());
        }
        worst.push(max);
    }
    outcome(worst.iter().all(|m| *m <= 100), format!("100000 sequences, m_u=100, max stored models {worst:?}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_seqstream")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let cfg = p("pipe.cfg");
    std::fs::write(
        &cfg,
        "grid.rows = 4\ngrid.cols = 4\nlayer2.block_rows = 2\nlayer2.block_cols = 2\nmin_models_for_matching = 0\n",
    )
    .unwrap();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "sequences".into(), "--out".into(), p("seqs.jsonl"), "--seed".into(), "9".into()],
        vec![
            "synth".into(),
            "points".into(),
            "--out".into(),
            p("pts.jsonl"),
            "--seed".into(),
            "9".into(),
            "--objects".into(),
            "40".into(),
        ],
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        if let Err(e) = run_cli(&args) {
            return outcome(false, format!("synth failed: {e}"));
        }
    }
    let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let names = [
            format!("snap{run}.json"),
            format!("log{run}.jsonl"),
            format!("ev{run}.jsonl"),
            format!("psnap{run}.json"),
        ];
        let (snap, log, ev, psnap) = (p(&names[0]), p(&names[1]), p(&names[2]), p(&names[3]));
        let cluster = ["cluster", "--input", &p("seqs.jsonl"), "--snapshot", &snap, "--log", &log];
        let pipeline =
            ["pipeline", "--input", &p("pts.jsonl"), "--config", &cfg, "--events", &ev, "--snapshot", &psnap];
        if let Err(e) = run_cli(&cluster).and_then(|_| run_cli(&pipeline)) {
            return outcome(false, format!("run failed: {e}"));
        }
        files.push(names.iter().map(|n| std::fs::read(dir.path().join(n)).unwrap()).collect());
    }
    let identical = files[0] == files[1];
    // Layer-2 traffic must decode back to (layer-1 node, model) pairs.
    let events = String::from_utf8(files[0][2].clone()).unwrap();
    let mut transfers = 0;
    let mut undecodable = 0;
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if v["kind"] == "transfer" {
            transfers += 1;
            let symbol = Symbol(v["symbol"].as_u64().unwrap() as u32);
            match decode_output(symbol, Hyperparams::default().m_u) {
                Ok((node, _)) if u64::from(node) == v["from_node"].as_u64().unwrap() => {}
                _ => undecodable += 1,
            }
        }
    }
    outcome(
        identical && transfers > 0 && undecodable == 0,
        format!("cluster and pipeline outputs identical across reruns: {identical}; {transfers} layer-2 transfers, {undecodable} undecodable"),
    )
}

fn throughput() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // Heavy prefilled models outlive the run; a tight epsilon keeps random
    // queries from merging into them.
    let p = Hyperparams { m_u: 100, lambda: 1e-7, epsilon: 0.05, ..Hyperparams::default() };
    let mut node = NodeState::new(1, p).unwrap();
    let models: Vec<MicroCluster> = (0..100)
        .map(|_| loop {
            let s = random_sequence(&mut rng, 20, 15);
            if s.len() >= 15 {
                let sw = vec![1.0; s.len()];
                break MicroCluster::new(0, 1000.0, s, sw).unwrap();
            }
        })
        .collect();
    node.set_models(models);
    let queries: Vec<Sequence> = (0..20_000)
        .map(|_| loop {
            let s = random_sequence(&mut rng, 20, 15);
            if s.len() >= 10 {
                break s;
            }
        })
        .collect();
    let start = Instant::now();
    for (k, q) in queries.iter().enumerate() {
        node.ingest_sequence(q.symbols(), k as u64 + 1).unwrap();
    }
    let elapsed = start.elapsed().as_secs_f64();
    let rate = node.stats().symbols as f64 / elapsed;
    let longest = node.models().map(MicroCluster::len).max().unwrap_or(0);
    outcome(
        rate >= 50_000.0 && node.len() >= 90 && longest <= 20,
        format!(
            "{} symbols in {elapsed:.3}s = {rate:.0} symbols/s, {} models, longest {longest}",
            node.stats().symbols,
            node.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("LCS oracle equivalence", lcs_oracle_equivalence),
        ("distance contract", distance_contract),
        ("merge conservation", merge_conservation),
        ("decay and cleanup", decay_cleanup),
        ("noise forgetting", noise_forgetting),
        ("convergence", convergence),
        ("epsilon sweep shape", epsilon_sweep),
        ("bounded memory", bounded_memory),
        ("CLI determinism", determinism),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        failed += usize::from(!r.pass);
        println!("{} {:>2}. {name}: {}", if r.pass { "PASS" } else { "FAIL" }, k + 1, r.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    let strict = std::env::var("SEQSTREAM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
