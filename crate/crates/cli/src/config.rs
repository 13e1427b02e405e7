//! Run configuration: a key/value text file plus command-line overrides.
//! Every effective value is echoed into the fit summary for reproducibility.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use samm_core::basis::ScalingMode;
use samm_core::reml::FitControls;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub response: String,
    pub coord_x: String,
    pub coord_y: String,
    pub svc: Vec<String>,
    pub fixed: Vec<String>,
    pub group: Option<String>,
    pub intercept: bool,
    pub residual_spatial: bool,
    pub knots: usize,
    pub max_eigenpairs: usize,
    pub block_rows: usize,
    pub workers: usize,
    pub seed: u64,
    pub scaling_mode: ScalingMode,
    pub outer_tol: f64,
    pub max_sweeps: usize,
    pub nm_tol: f64,
    pub reservoir_rows: usize,
    pub save_store: bool,
    pub deterministic_merge: bool,
    pub delimiter: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("samm-out"),
            response: "y".into(),
            coord_x: "x".into(),
            coord_y: "y_coord".into(),
            svc: vec![],
            fixed: vec![],
            group: None,
            intercept: true,
            residual_spatial: true,
            knots: 50,
            max_eigenpairs: 200,
            block_rows: 10_000,
            workers: 0, // 0: rayon default
            seed: 1,
            scaling_mode: ScalingMode::AsPrinted,
            outer_tol: 1e-5,
            max_sweeps: 20,
            nm_tol: 1e-6,
            reservoir_rows: 100_000,
            save_store: false,
            deterministic_merge: true,
            delimiter: b',',
        }
    }
}

impl RunConfig {
    pub fn controls(&self) -> FitControls {
        FitControls {
            outer_tol: self.outer_tol,
            max_sweeps: self.max_sweeps,
            nm_tol: self.nm_tol,
            ..FitControls::default()
        }
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Usage(format!("config key '{key}': {what} ('{value}')"));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad("expected an integer"));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
        let parse_bool = |v: &str| match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad("expected true/false")),
        };
        let parse_list = |v: &str| -> Vec<String> {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "response" => self.response = value.into(),
            "coord_x" => self.coord_x = value.into(),
            "coord_y" => self.coord_y = value.into(),
            "svc" => self.svc = parse_list(value),
            "fixed" => self.fixed = parse_list(value),
            "group" => {
                self.group = if value.is_empty() {
                    None
                } else {
                    Some(value.into())
                }
            }
            "intercept" => self.intercept = parse_bool(value)?,
            "residual_spatial" => self.residual_spatial = parse_bool(value)?,
            "knots" => self.knots = parse_usize(value)?,
            "max_eigenpairs" => self.max_eigenpairs = parse_usize(value)?,
            "block_rows" => self.block_rows = parse_usize(value)?,
            "workers" => self.workers = parse_usize(value)?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| bad("expected an unsigned integer"))?
            }
            "scaling_mode" => {
                self.scaling_mode = value
                    .parse::<ScalingMode>()
                    .map_err(|e| CliError::Usage(e.to_string()))?
            }
            "outer_tol" => self.outer_tol = parse_f64(value)?,
            "max_sweeps" => self.max_sweeps = parse_usize(value)?,
            "nm_tol" => self.nm_tol = parse_f64(value)?,
            "reservoir_rows" => self.reservoir_rows = parse_usize(value)?,
            "save_store" => self.save_store = parse_bool(value)?,
            "deterministic_merge" => self.deterministic_merge = parse_bool(value)?,
            "delimiter" => {
                let bytes = value.as_bytes();
                if bytes.len() != 1 {
                    return Err(bad("expected a single character"));
                }
                self.delimiter = bytes[0];
            }
            _ => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.knots < 2 {
            return Err(CliError::Usage("knots must be at least 2".into()));
        }
        if self.block_rows == 0 {
            return Err(CliError::Usage("block_rows must be at least 1".into()));
        }
        if self.max_eigenpairs == 0 {
            return Err(CliError::Usage("max_eigenpairs must be at least 1".into()));
        }
        if self.reservoir_rows < self.knots {
            return Err(CliError::Usage(
                "reservoir_rows must be at least the knot count".into(),
            ));
        }
        if !self.residual_spatial && self.svc.is_empty() && self.group.is_none() {
            return Err(CliError::Usage(
                "model has no terms: enable residual_spatial, svc columns, or a group column"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Every effective key/value, for the summary echo.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert(
            "input".into(),
            self.input
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m.insert("output_dir".into(), self.output_dir.display().to_string());
        m.insert("response".into(), self.response.clone());
        m.insert("coord_x".into(), self.coord_x.clone());
        m.insert("coord_y".into(), self.coord_y.clone());
        m.insert("svc".into(), self.svc.join(","));
        m.insert("fixed".into(), self.fixed.join(","));
        m.insert("group".into(), self.group.clone().unwrap_or_default());
        m.insert("intercept".into(), self.intercept.to_string());
        m.insert(
            "residual_spatial".into(),
            self.residual_spatial.to_string(),
        );
        m.insert("knots".into(), self.knots.to_string());
        m.insert("max_eigenpairs".into(), self.max_eigenpairs.to_string());
        m.insert("block_rows".into(), self.block_rows.to_string());
        m.insert("workers".into(), self.workers.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("scaling_mode".into(), self.scaling_mode.to_string());
        m.insert("outer_tol".into(), format!("{:e}", self.outer_tol));
        m.insert("max_sweeps".into(), self.max_sweeps.to_string());
        m.insert("nm_tol".into(), format!("{:e}", self.nm_tol));
        m.insert("reservoir_rows".into(), self.reservoir_rows.to_string());
        m.insert("save_store".into(), self.save_store.to_string());
        m.insert(
            "deterministic_merge".into(),
            self.deterministic_merge.to_string(),
        );
        m.insert(
            "delimiter".into(),
            (self.delimiter as char).to_string(),
        );
        m
    }
}
