//! Replicated simulation experiments: grid configuration, the experiment
//! runner, and deterministic summary tables.

use std::path::{Path, PathBuf};

use samm_core::reml::FitControls;
use samm_core::sim::{
    median, paired_mean_se, run_experiment, sign_test_p_greater, ExperimentCell, ExperimentConfig,
    ExperimentSummary,
};

use crate::fit::write_text;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub n_list: Vec<usize>,
    pub s_x_list: Vec<f64>,
    pub tau_g2_ratio_list: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub tau2: f64,
    pub fit_knots: usize,
    pub max_eigenpairs: usize,
    pub group_size: usize,
    pub gen_knots: usize,
    pub output_dir: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_list: vec![500],
            s_x_list: vec![0.0, 0.5],
            tau_g2_ratio_list: vec![0.0, 1.0],
            replicates: 10,
            seed: 1,
            tau2: 1.0,
            fit_knots: 50,
            max_eigenpairs: 200,
            group_size: 20,
            gen_knots: 0, // 0: min(200, n/2)
            output_dir: PathBuf::from("samm-sim"),
        }
    }
}

impl SimulateConfig {
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
                    "{}:{}: expected 'key = value'",
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
        let ints = |v: &str| -> Result<Vec<usize>, CliError> {
            v.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad("expected integers")))
                .collect()
        };
        let floats = |v: &str| -> Result<Vec<f64>, CliError> {
            v.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("expected numbers")))
                .collect()
        };
        match key {
            "n_list" => self.n_list = ints(value)?,
            "s_x_list" => self.s_x_list = floats(value)?,
            "tau_g2_ratio_list" => self.tau_g2_ratio_list = floats(value)?,
            "replicates" => {
                self.replicates = value.parse().map_err(|_| bad("expected an integer"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an integer"))?,
            "tau2" => self.tau2 = value.parse().map_err(|_| bad("expected a number"))?,
            "fit_knots" => self.fit_knots = value.parse().map_err(|_| bad("expected an integer"))?,
            "max_eigenpairs" => {
                self.max_eigenpairs = value.parse().map_err(|_| bad("expected an integer"))?
            }
            "group_size" => {
                self.group_size = value.parse().map_err(|_| bad("expected an integer"))?
            }
            "gen_knots" => self.gen_knots = value.parse().map_err(|_| bad("expected an integer"))?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(CliError::Usage(format!("unknown simulate key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_experiment(&self) -> Result<ExperimentConfig, CliError> {
        if self.n_list.is_empty() || self.s_x_list.is_empty() || self.tau_g2_ratio_list.is_empty() {
            return Err(CliError::Usage("simulate grid has an empty axis".into()));
        }
        if self.replicates == 0 {
            return Err(CliError::Usage("replicates must be at least 1".into()));
        }
        let mut cells = Vec::new();
        for &n in &self.n_list {
            for &s_x in &self.s_x_list {
                for &ratio in &self.tau_g2_ratio_list {
                    cells.push(ExperimentCell {
                        n,
                        s_x,
                        tau_g2_ratio: ratio,
                    });
                }
            }
        }
        Ok(ExperimentConfig {
            cells,
            replicates: self.replicates,
            base_seed: self.seed,
            tau2: self.tau2,
            fit_knots: self.fit_knots,
            fit_max_pairs: self.max_eigenpairs,
            group_size: self.group_size,
            gen_knots: (self.gen_knots > 0).then_some(self.gen_knots),
            controls: FitControls::default(),
            ..ExperimentConfig::default()
        })
    }
}

pub struct SimulateArtifacts {
    pub summary_path: PathBuf,
    pub seeds_path: PathBuf,
    pub timings_path: PathBuf,
    pub summary: ExperimentSummary,
}

pub fn run_simulate(config: &SimulateConfig) -> Result<SimulateArtifacts, CliError> {
    let experiment = config.to_experiment()?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create output dir: {e}")))?;
    let summary = run_experiment(&experiment).map_err(CliError::from)?;

    let summary_path = config.output_dir.join("summary.tsv");
    write_text(&summary_path, &summary_table(&summary))?;
    let seeds_path = config.output_dir.join("seeds.tsv");
    write_text(&seeds_path, &seeds_table(&summary))?;
    // Wall times vary run to run; they live outside the deterministic table.
    let timings_path = config.output_dir.join("timings.txt");
    write_text(&timings_path, &timings_table(&summary))?;

    Ok(SimulateArtifacts {
        summary_path,
        seeds_path,
        timings_path,
        summary,
    })
}

/// Per-cell medians plus the paired comparisons between the full model and
/// its no-group ablation. Deterministic for a fixed seed.
pub fn summary_table(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    out.push_str(
        "n\ts_x\ttau_g2_ratio\treplicates\tfailures\
         \tamm_rmse_svc_large\tammg_rmse_svc_large\tamm_rmse_svc_small\tammg_rmse_svc_small\
         \tamm_rmse_w0\tammg_rmse_w0\tamm_rmse_group\
         \tamm_alpha_large_median\tamm_alpha_small_median\
         \tsign_p_ammg_worse_large\tpaired_diff_large_mean\tpaired_diff_large_se\n",
    );
    for cell in &summary.cells {
        let ok: Vec<_> = cell
            .outcomes
            .iter()
            .filter(|o| o.error.is_none())
            .collect();
        let failures = cell.outcomes.len() - ok.len();
        let amm: Vec<_> = ok.iter().map(|o| o.with_group.as_ref().unwrap()).collect();
        let ammg: Vec<_> = ok.iter().map(|o| o.no_group.as_ref().unwrap()).collect();
        let collect = |f: &dyn Fn(&samm_core::sim::ModelEval) -> f64, v: &[&samm_core::sim::ModelEval]| {
            v.iter().map(|e| f(e)).collect::<Vec<f64>>()
        };
        let amm_large = collect(&|e| e.rmse_svc_large, &amm);
        let ammg_large = collect(&|e| e.rmse_svc_large, &ammg);
        let amm_small = collect(&|e| e.rmse_svc_small, &amm);
        let ammg_small = collect(&|e| e.rmse_svc_small, &ammg);
        let amm_w0 = collect(&|e| e.rmse_w0, &amm);
        let ammg_w0 = collect(&|e| e.rmse_w0, &ammg);
        let amm_group: Vec<f64> = amm.iter().filter_map(|e| e.rmse_group).collect();
        let alpha_large: Vec<f64> = amm.iter().map(|e| median(&e.alpha_svc[..3])).collect();
        let alpha_small: Vec<f64> = amm.iter().map(|e| median(&e.alpha_svc[3..])).collect();
        let p = sign_test_p_greater(&ammg_large, &amm_large);
        let (diff_mean, diff_se) = if ammg_large.len() >= 2 {
            paired_mean_se(&ammg_large, &amm_large)
        } else {
            (f64::NAN, f64::NAN)
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6}\t{:.6}\t{:.6e}\t{:.6e}\t{:.6e}\n",
            cell.cell.n,
            cell.cell.s_x,
            cell.cell.tau_g2_ratio,
            cell.outcomes.len(),
            failures,
            median(&amm_large),
            median(&ammg_large),
            median(&amm_small),
            median(&ammg_small),
            median(&amm_w0),
            median(&ammg_w0),
            median(&amm_group),
            median(&alpha_large),
            median(&alpha_small),
            p,
            diff_mean,
            diff_se,
        ));
    }
    out
}

fn seeds_table(summary: &ExperimentSummary) -> String {
    let mut out = String::from("n\ts_x\ttau_g2_ratio\treplicate\tseed\terror\n");
    for cell in &summary.cells {
        for o in &cell.outcomes {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                cell.cell.n,
                cell.cell.s_x,
                cell.cell.tau_g2_ratio,
                o.replicate,
                o.seed,
                o.error.clone().unwrap_or_default()
            ));
        }
    }
    out
}

fn timings_table(summary: &ExperimentSummary) -> String {
    let mut out = String::from("n\ts_x\ttau_g2_ratio\tmean_secs_amm\tmean_secs_ammg\n");
    for cell in &summary.cells {
        let ok: Vec<_> = cell
            .outcomes
            .iter()
            .filter(|o| o.error.is_none())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let mean = |f: &dyn Fn(&samm_core::sim::ReplicateOutcome) -> f64| {
            ok.iter().map(|o| f(o)).sum::<f64>() / ok.len() as f64
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.3}\t{:.3}\n",
            cell.cell.n,
            cell.cell.s_x,
            cell.cell.tau_g2_ratio,
            mean(&|o| o.with_group.as_ref().unwrap().seconds),
            mean(&|o| o.no_group.as_ref().unwrap().seconds),
        ));
    }
    out
}
