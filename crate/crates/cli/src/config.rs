//! Flat `key = value` configuration.
//!
//! Hyperparameter keys apply to every node; a `layer2.` prefix overrides
//! them for layer-2 nodes only. Blank lines and `#` comments are ignored.

use std::fmt;
use std::path::Path;

use seqstream::encoder::GridSpec;
use seqstream::topology::{Grouping, PipelineSpec};
use seqstream::Hyperparams;

/// A configuration problem the user has to fix; reported as a usage error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const PARAM_KEYS: [&str; 6] = ["epsilon", "lambda", "mu", "t_gap", "m_u", "min_models_for_matching"];
const GRID_KEYS: [&str; 4] = ["grid.rows", "grid.cols", "frame.width", "frame.height"];
const GROUP_KEYS: [&str; 2] = ["layer2.block_rows", "layer2.block_cols"];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub layer1: Hyperparams,
    pub layer2: Hyperparams,
    pub rows: usize,
    pub cols: usize,
    pub frame_width: Option<f64>,
    pub frame_height: Option<f64>,
    pub block_rows: Option<usize>,
    pub block_cols: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            layer1: Hyperparams::default(),
            layer2: Hyperparams::default(),
            rows: 4,
            cols: 4,
            frame_width: None,
            frame_height: None,
            block_rows: None,
            block_cols: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value.parse().map_err(|_| UsageError(format!("bad value for {key}: {value:?}")))
}

fn set_param(p: &mut Hyperparams, key: &str, value: &str) -> Result<(), UsageError> {
    match key {
        "epsilon" => p.epsilon = parse(key, value)?,
        "lambda" => p.lambda = parse(key, value)?,
        "mu" => p.mu = parse(key, value)?,
        "t_gap" => p.t_gap = parse(key, value)?,
        "m_u" => p.m_u = parse(key, value)?,
        "min_models_for_matching" => p.min_models_for_matching = parse(key, value)?,
        _ => unreachable!("checked by caller"),
    }
    Ok(())
}

impl Settings {
    /// Reads a config file, or returns defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut settings = Settings::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
            settings.apply_text(&text)?;
        }
        Ok(settings)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), UsageError> {
        // Layer-2 overrides must win over shared keys regardless of order.
        let mut overrides = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(inner) = key.strip_prefix("layer2.").filter(|k| PARAM_KEYS.contains(k)) {
                overrides.push((inner.to_string(), value.to_string()));
            } else {
                self.set(key, value).map_err(|e| UsageError(format!("config line {}: {e}", n + 1)))?;
            }
        }
        for (key, value) in overrides {
            set_param(&mut self.layer2, &key, &value)?;
        }
        Ok(())
    }

    /// Sets one key. Shared hyperparameter keys set both layers.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        if PARAM_KEYS.contains(&key) {
            set_param(&mut self.layer1, key, value)?;
            set_param(&mut self.layer2, key, value)?;
        } else if let Some(inner) = key.strip_prefix("layer2.").filter(|k| PARAM_KEYS.contains(k)) {
            set_param(&mut self.layer2, inner, value)?;
        } else if GRID_KEYS.contains(&key) || GROUP_KEYS.contains(&key) {
            match key {
                "grid.rows" => self.rows = parse(key, value)?,
                "grid.cols" => self.cols = parse(key, value)?,
                "frame.width" => self.frame_width = Some(parse(key, value)?),
                "frame.height" => self.frame_height = Some(parse(key, value)?),
                "layer2.block_rows" => self.block_rows = Some(parse(key, value)?),
                _ => self.block_cols = Some(parse(key, value)?),
            }
        } else {
            return Err(UsageError(format!("unknown config key {key:?}")));
        }
        Ok(())
    }

    /// Applies `key=value` flag overrides after the file.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), UsageError> {
        for pair in pairs {
            let (key, value) =
                pair.split_once('=').ok_or_else(|| UsageError(format!("--set expects key=value, got {pair:?}")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.layer1.validate().map_err(|e| UsageError(e.to_string()))?;
        self.layer2.validate().map_err(|e| UsageError(e.to_string()))
    }

    /// Frame defaults to ten scene units per cell.
    pub fn pipeline_spec(&self) -> Result<PipelineSpec, UsageError> {
        self.validate()?;
        let width = self.frame_width.unwrap_or(self.cols as f64 * 10.0);
        let height = self.frame_height.unwrap_or(self.rows as f64 * 10.0);
        let grid = GridSpec::new(width, height, self.rows, self.cols).map_err(|e| UsageError(e.to_string()))?;
        let grouping = match (self.block_rows, self.block_cols) {
            (None, None) => Grouping::single(),
            (r, c) => Grouping::Blocks { rows: r.unwrap_or(usize::MAX), cols: c.unwrap_or(usize::MAX) },
        };
        Ok(PipelineSpec { grid, layer1: self.layer1, layer2: self.layer2, grouping })
    }
}
