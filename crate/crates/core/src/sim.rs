//! Synthetic-data generation and replicated experiments.
//!
//! Datasets follow the additive design: six spatially varying coefficients
//! (three large-scale, three small-scale), group intercepts, residual spatial
//! dependence, and noise at 30% of the signal's standard deviation. The
//! experiment runner fits the full model and its no-group ablation to each
//! replicate and tabulates recovery accuracy.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accumulate::{accumulate_block, init_store};
use crate::basis::{
    knot_eigen_with_cap, nystrom_block, select_knots, BasisFactory, ScalingMode, SiteSet,
    DEFAULT_MAX_EIGENPAIRS,
};
use crate::error::{Result, SammError};
use crate::predict::Predictor;
use crate::reml::{fit, FitControls, FitResult, ModelSpec};
use crate::terms::{build_term_block, GroupIndex, TermSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Share of spatially structured variation in the covariates, in [0, 1).
    pub s_x: f64,
    /// Group variance as a multiple of `tau2`.
    pub tau_g2_ratio: f64,
    pub tau2: f64,
    pub n_svc_large: usize,
    pub n_svc_small: usize,
    pub group_size: usize,
    pub seed: u64,
    /// Knot count of the generator basis; defaults to `min(200, n/2)`.
    pub gen_knots: Option<usize>,
}

impl SimConfig {
    pub fn new(n: usize, s_x: f64, tau_g2_ratio: f64, seed: u64) -> Self {
        Self {
            n,
            s_x,
            tau_g2_ratio,
            tau2: 1.0,
            n_svc_large: 3,
            n_svc_small: 3,
            group_size: 20,
            seed,
            gen_knots: None,
        }
    }

    pub fn n_svc(&self) -> usize {
        self.n_svc_large + self.n_svc_small
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.s_x) {
            return Err(SammError::InvalidParameter(format!(
                "s_x must lie in [0, 1), got {}",
                self.s_x
            )));
        }
        if !(self.tau2.is_finite() && self.tau2 > 0.0) || !(self.tau_g2_ratio >= 0.0) {
            return Err(SammError::InvalidParameter(
                "tau2 must be positive and tau_g2_ratio nonnegative".into(),
            ));
        }
        if self.n < 2 * self.group_size {
            return Err(SammError::InvalidParameter(format!(
                "n = {} is below two group sizes ({})",
                self.n,
                2 * self.group_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub coords: Vec<[f64; 2]>,
    /// Covariates, one column per SVC.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// True residual spatial surface.
    pub w0: DVector<f64>,
    /// True SVC surfaces including their unit means, one per covariate.
    pub w: Vec<DVector<f64>>,
    /// True group effect per row.
    pub group_effects_row: DVector<f64>,
    pub labels: Vec<String>,
    pub group_count: usize,
    pub sigma: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix(base ^ splitmix(stream))
}

/// Basis rows for many sites, chunked across workers. Row-wise generation is
/// a pure function, so the partitioning cannot change the result.
pub fn basis_rows_par(factory: &BasisFactory, coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    const CHUNK: usize = 4096;
    if coords.len() <= CHUNK {
        return nystrom_block(factory, coords);
    }
    let chunks: Vec<DMatrix<f64>> = coords
        .par_chunks(CHUNK)
        .map(|c| nystrom_block(factory, c))
        .collect::<Result<_>>()?;
    let mut out = DMatrix::<f64>::zeros(coords.len(), factory.l_pos());
    let mut off = 0;
    for c in chunks {
        out.view_mut((off, 0), (c.nrows(), c.ncols())).copy_from(&c);
        off += c.nrows();
    }
    Ok(out)
}

fn sample_sd(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.mean();
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Eigenvector-basis coefficient draw: `gamma_l ~ N(0, tau2 lambda_l^e)`.
fn draw_gamma(lambda_hat: &DVector<f64>, exponent: f64, tau2: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(lambda_hat.len(), |l, _| {
        let sd = (tau2 * lambda_hat[l].powf(exponent)).sqrt();
        sd * rng.sample::<f64, _>(StandardNormal)
    })
}

/// One true surface: eigenvalue-power weights set the spatial scale, the
/// draw is then rescaled to sample standard deviation `tau` so that surfaces,
/// group effects, and noise stay on comparable scales regardless of the
/// eigenvalue magnitudes the basis approximation produces.
fn draw_surface(
    e_rows: &DMatrix<f64>,
    lambda_hat: &DVector<f64>,
    exponent: f64,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let lam_max = lambda_hat[0];
    let weights = DVector::from_fn(lambda_hat.len(), |l, _| {
        (lambda_hat[l] / lam_max).powf(exponent)
    });
    let gamma = DVector::from_fn(lambda_hat.len(), |l, _| {
        weights[l].sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    let raw = e_rows * gamma;
    let sd = sample_sd(&raw);
    if sd > 1e-12 {
        raw * (tau / sd)
    } else {
        raw
    }
}

fn covariate_with_basis(
    e_rows: &DMatrix<f64>,
    lambda_hat: &DVector<f64>,
    s_x: f64,
    rng: &mut ChaCha8Rng,
) -> (DVector<f64>, DVector<f64>) {
    let n = e_rows.nrows();
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gamma = draw_gamma(lambda_hat, 1.0, 1.0, rng);
    let raw = e_rows * gamma;
    let scale = 1.0 / sample_sd(&raw);
    let spatial = raw * scale;
    let x = &noise * (1.0 - s_x) + &spatial * s_x;
    (x, spatial)
}

/// One covariate per the mixing design: `(1 - s_x) noise + s_x` times a
/// variance-one spatial component. Returns the covariate and that component.
pub fn generate_covariate(
    factory: &BasisFactory,
    coords: &[[f64; 2]],
    s_x: f64,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(0.0..1.0).contains(&s_x) {
        return Err(SammError::InvalidParameter(format!(
            "s_x must lie in [0, 1), got {s_x}"
        )));
    }
    let e_rows = basis_rows_par(factory, coords)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(covariate_with_basis(
        &e_rows,
        &factory.lambda_hat,
        s_x,
        &mut rng,
    ))
}

/// Full synthetic dataset. Bit-identical for a given `(config, seed)`.
pub fn generate_dataset(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let sites = SiteSet::new(coords.clone())?;

    let l_gen = config
        .gen_knots
        .unwrap_or_else(|| DEFAULT_MAX_EIGENPAIRS.min(n / 2))
        .max(2);
    let knots = select_knots(&sites, l_gen, derive_seed(config.seed, 1))?;
    let eig = knot_eigen_with_cap(&knots, DEFAULT_MAX_EIGENPAIRS)?;
    let factory = BasisFactory::new(knots, eig, n, ScalingMode::AsPrinted)?;
    let e_rows = basis_rows_par(&factory, &coords)?;
    let lambda_hat = factory.lambda_hat.clone();

    // Residual spatial surface at moderate scale.
    let w0 = &e_rows * draw_gamma(&lambda_hat, 1.0, config.tau2, &mut rng);

    // SVC surfaces: eigenvalue powers set the spatial scale.
    let n_svc = config.n_svc();
    let mut w = Vec::with_capacity(n_svc);
    for p in 0..n_svc {
        let exponent = if p < config.n_svc_large { 3.0 } else { 0.5 };
        let gamma = draw_gamma(&lambda_hat, exponent, config.tau2, &mut rng);
        let surface = &e_rows * gamma;
        w.push(surface.add_scalar(1.0));
    }

    // Covariates.
    let mut x = DMatrix::<f64>::zeros(n, n_svc);
    for p in 0..n_svc {
        let (xp, _) = covariate_with_basis(&e_rows, &lambda_hat, config.s_x, &mut rng);
        x.column_mut(p).copy_from(&xp);
    }

    // Random partition into groups of `group_size`; remainder rows join the
    // last group.
    let group_count = n / config.group_size;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut group_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        group_of[row] = (pos / config.group_size).min(group_count - 1);
    }
    let tau_g2 = config.tau_g2_ratio * config.tau2;
    let g_values = DVector::from_fn(group_count, |_, _| {
        tau_g2.sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    let group_effects_row = DVector::from_fn(n, |i, _| g_values[group_of[i]]);
    let width = group_count.to_string().len();
    let labels: Vec<String> = group_of.iter().map(|g| format!("g{g:0width$}")).collect();

    // Assemble the signal and scale the noise to 30% of its spread.
    let mut signal = w0.clone() + &group_effects_row;
    for p in 0..n_svc {
        for i in 0..n {
            signal[i] += x[(i, p)] * w[p][i];
        }
    }
    let sigma = 0.3 * sample_sd(&signal);
    let y = DVector::from_fn(n, |i, _| {
        signal[i] + sigma * rng.sample::<f64, _>(StandardNormal)
    });

    Ok(SimDataset {
        coords,
        x,
        y,
        w0,
        w,
        group_effects_row,
        labels,
        group_count,
        sigma,
    })
}

/// Root mean squared error pooled over replicates and rows. A single shared
/// truth may be broadcast across replicates.
pub fn rmse(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(SammError::InvalidInput("no replicates".into()));
    }
    if truths.len() != estimates.len() && truths.len() != 1 {
        return Err(SammError::InvalidInput(format!(
            "{} truth vectors for {} estimate vectors",
            truths.len(),
            estimates.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, est) in estimates.iter().enumerate() {
        let truth = if truths.len() == 1 { &truths[0] } else { &truths[r] };
        if est.len() != truth.len() {
            return Err(SammError::InvalidInput(format!(
                "replicate {r}: estimate length {} vs truth length {}",
                est.len(),
                truth.len()
            )));
        }
        sum += (est - truth).norm_squared();
        count += est.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// One-sided sign test: p-value for the hypothesis that `a` tends to exceed
/// `b` in pairs. Ties are dropped.
pub fn sign_test_p_greater(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut n = 0u64;
    let mut s = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        if x > y {
            s += 1;
            n += 1;
        } else if x < y {
            n += 1;
        }
    }
    if n == 0 {
        return 1.0;
    }
    // P(Bin(n, 1/2) >= s) via log binomial coefficients.
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let ln_half = 0.5f64.ln();
    (s..=n)
        .map(|k| {
            let ln_c = ln_fact[n as usize] - ln_fact[k as usize] - ln_fact[(n - k) as usize];
            (ln_c + n as f64 * ln_half).exp()
        })
        .sum()
}

/// Mean and standard error of the paired differences `a - b`.
pub fn paired_mean_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub n: usize,
    pub s_x: f64,
    pub tau_g2_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub cells: Vec<ExperimentCell>,
    pub replicates: usize,
    pub base_seed: u64,
    pub tau2: f64,
    /// Knots of the fitted model's basis (desk-scale default keeps runtimes
    /// small; the generator always uses `min(200, n/2)`).
    pub fit_knots: usize,
    pub fit_max_pairs: usize,
    pub block_rows: usize,
    pub group_size: usize,
    pub gen_knots: Option<usize>,
    pub controls: FitControls,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cells: vec![],
            replicates: 50,
            base_seed: 1,
            tau2: 1.0,
            fit_knots: 50,
            fit_max_pairs: DEFAULT_MAX_EIGENPAIRS,
            block_rows: 2048,
            group_size: 20,
            gen_knots: None,
            controls: FitControls::default(),
        }
    }
}

/// Recovery metrics of one model on one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEval {
    /// Pooled RMSE over the large-scale SVC surfaces.
    pub rmse_svc_large: f64,
    /// Pooled RMSE over the small-scale SVC surfaces.
    pub rmse_svc_small: f64,
    pub rmse_w0: f64,
    /// Per-row group-effect RMSE; absent for the no-group ablation.
    pub rmse_group: Option<f64>,
    /// Estimated scale parameter per SVC, in covariate order.
    pub alpha_svc: Vec<f64>,
    pub alpha_w0: f64,
    pub loglik: f64,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub with_group: Option<ModelEval>,
    pub no_group: Option<ModelEval>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: ExperimentCell,
    pub outcomes: Vec<ReplicateOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub cells: Vec<CellSummary>,
    pub replicates: usize,
    pub base_seed: u64,
}

/// A fitted model together with the context prediction needs.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub fit: FitResult,
    pub spec: ModelSpec,
    pub factory: BasisFactory,
    pub group_index: GroupIndex,
    /// Fixed-effect design: intercept then the SVC covariates.
    pub x: DMatrix<f64>,
    pub include_group: bool,
}

impl FittedModel {
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor {
            fit: &self.fit,
            spec: &self.spec,
            factory: Some(&self.factory),
            group_index: Some(&self.group_index),
        }
    }
}

/// Fits one model variant (with or without the group term) to a dataset.
pub fn fit_dataset(
    ds: &SimDataset,
    include_group: bool,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<FittedModel> {
    let n = ds.y.len();
    let n_svc = ds.w.len();
    let k = 1 + n_svc;

    // Fixed effects: intercept plus every SVC covariate.
    let mut x = DMatrix::<f64>::zeros(n, k);
    x.column_mut(0).fill(1.0);
    x.view_mut((0, 1), (n, n_svc)).copy_from(&ds.x);

    let sites = SiteSet::new(ds.coords.clone())?;
    let knots = select_knots(&sites, cfg.fit_knots, derive_seed(seed, 2))?;
    let eig = knot_eigen_with_cap(&knots, cfg.fit_max_pairs)?;
    let factory = BasisFactory::new(knots, eig, n, ScalingMode::AsPrinted)?;
    let l_pos = factory.l_pos();

    let group_index = GroupIndex::from_labels(ds.labels.iter().map(|s| s.as_str()))?;
    let mut terms: Vec<TermSpec> = (0..n_svc)
        .map(|p| TermSpec::svc(format!("x{}", p + 1), p + 1, l_pos))
        .collect();
    terms.push(TermSpec::residual_spatial(l_pos));
    if include_group {
        terms.push(TermSpec::group("group", group_index.len()));
    }
    let spec = ModelSpec::new(terms, factory.lambda_hat.clone())?;

    let widths = spec.widths();
    let mut store = init_store(k, &widths)?;
    let mut lo = 0usize;
    while lo < n {
        let hi = (lo + cfg.block_rows).min(n);
        let rows = hi - lo;
        let coords_block = &ds.coords[lo..hi];
        let x_block = x.rows(lo, rows).into_owned();
        let y_block = DVector::from_column_slice(&ds.y.as_slice()[lo..hi]);
        let labels_block = &ds.labels[lo..hi];
        let mut blocks = Vec::with_capacity(spec.terms.len());
        for t in &spec.terms {
            let covariate: Option<Vec<f64>> = match t.kind {
                crate::terms::TermKind::Svc { x_col } => {
                    Some((lo..hi).map(|i| x[(i, x_col)]).collect())
                }
                _ => None,
            };
            blocks.push(build_term_block(
                t,
                Some(&factory),
                coords_block,
                covariate.as_deref(),
                Some(labels_block),
                Some(&group_index),
            )?);
        }
        accumulate_block(&mut store, &x_block, &y_block, &blocks)?;
        lo = hi;
    }
    let store = store.finalize(n)?;
    let fit_result = fit(&store, &spec, None, &cfg.controls)?;
    Ok(FittedModel {
        fit: fit_result,
        spec,
        factory,
        group_index,
        x,
        include_group,
    })
}

/// Fits one model variant to a dataset and evaluates surface recovery.
pub fn fit_and_evaluate(
    ds: &SimDataset,
    include_group: bool,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ModelEval> {
    let start = std::time::Instant::now();
    let fitted = fit_dataset(ds, include_group, cfg, seed)?;
    let eval = evaluate_fit(
        ds,
        &fitted.fit,
        &fitted.spec,
        &fitted.factory,
        &fitted.group_index,
        include_group,
    )?;
    Ok(ModelEval {
        seconds: start.elapsed().as_secs_f64(),
        ..eval
    })
}

fn evaluate_fit(
    ds: &SimDataset,
    fit_result: &FitResult,
    spec: &ModelSpec,
    factory: &BasisFactory,
    group_index: &GroupIndex,
    include_group: bool,
) -> Result<ModelEval> {
    let predictor = Predictor {
        fit: fit_result,
        spec,
        factory: Some(factory),
        group_index: Some(group_index),
    };
    let n_svc = ds.w.len();
    let n_large = 3.min(n_svc);

    let mut sse_large = 0.0;
    let mut count_large = 0usize;
    let mut sse_small = 0.0;
    let mut count_small = 0usize;
    let mut alpha_svc = Vec::with_capacity(n_svc);
    for p in 0..n_svc {
        let surface = predictor.recover_effects(p, &ds.coords, Some(&ds.labels))?;
        let err = (&surface.values - &ds.w[p]).norm_squared();
        if p < n_large {
            sse_large += err;
            count_large += surface.values.len();
        } else {
            sse_small += err;
            count_small += surface.values.len();
        }
        alpha_svc.push(
            fit_result.theta_hat.terms[p]
                .alpha()
                .expect("SVC terms carry alpha"),
        );
    }
    let w0_term = n_svc; // residual term follows the SVCs
    let w0_surface = predictor.recover_effects(w0_term, &ds.coords, Some(&ds.labels))?;
    let rmse_w0 = ((&w0_surface.values - &ds.w0).norm_squared() / ds.w0.len() as f64).sqrt();
    let alpha_w0 = fit_result.theta_hat.terms[w0_term]
        .alpha()
        .expect("residual term carries alpha");

    let rmse_group = if include_group {
        let g_term = n_svc + 1;
        let g_surface = predictor.recover_effects(g_term, &ds.coords, Some(&ds.labels))?;
        Some(
            ((&g_surface.values - &ds.group_effects_row).norm_squared()
                / ds.group_effects_row.len() as f64)
                .sqrt(),
        )
    } else {
        None
    };

    Ok(ModelEval {
        rmse_svc_large: (sse_large / count_large.max(1) as f64).sqrt(),
        rmse_svc_small: (sse_small / count_small.max(1) as f64).sqrt(),
        rmse_w0,
        rmse_group,
        alpha_svc,
        alpha_w0,
        loglik: fit_result.loglik_r,
        converged: fit_result.converged,
        seconds: 0.0,
    })
}

/// Runs the full grid: for every cell, `replicates` seeded datasets, each
/// fitted with and without the group term. Replicates run on independent
/// workers; failures are recorded per replicate, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    if cfg.cells.is_empty() || cfg.replicates == 0 {
        return Err(SammError::InvalidParameter(
            "experiment needs at least one cell and one replicate".into(),
        ));
    }
    let mut cells = Vec::with_capacity(cfg.cells.len());
    for (cell_idx, cell) in cfg.cells.iter().enumerate() {
        let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(cfg.base_seed, (cell_idx as u64) << 32 | rep as u64);
                let mut sim_cfg = SimConfig::new(cell.n, cell.s_x, cell.tau_g2_ratio, seed);
                sim_cfg.tau2 = cfg.tau2;
                sim_cfg.group_size = cfg.group_size;
                sim_cfg.gen_knots = cfg.gen_knots;
                let run = || -> Result<(ModelEval, ModelEval)> {
                    let ds = generate_dataset(&sim_cfg)?;
                    let with_group = fit_and_evaluate(&ds, true, cfg, seed)?;
                    let no_group = fit_and_evaluate(&ds, false, cfg, seed)?;
                    Ok((with_group, no_group))
                };
                match run() {
                    Ok((wg, ng)) => ReplicateOutcome {
                        replicate: rep,
                        seed,
                        with_group: Some(wg),
                        no_group: Some(ng),
                        error: None,
                    },
                    Err(e) => ReplicateOutcome {
                        replicate: rep,
                        seed,
                        with_group: None,
                        no_group: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        cells.push(CellSummary {
            cell: *cell,
            outcomes,
        });
    }
    Ok(ExperimentSummary {
        cells,
        replicates: cfg.replicates,
        base_seed: cfg.base_seed,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_reference_values() {
        let zero = DVector::from_column_slice(&[0.0, 0.0]);
        let est = DVector::from_column_slice(&[3.0, 4.0]);
        assert_abs_diff_eq!(
            rmse(&[est.clone()], &[zero.clone()]).unwrap(),
            (25.0f64 / 2.0).sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(rmse(&[zero.clone()], &[zero.clone()]).unwrap(), 0.0);
        let shifted = DVector::from_column_slice(&[1.5, 1.5]);
        assert_abs_diff_eq!(
            rmse(&[shifted], &[zero]).unwrap(),
            1.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rmse_rejects_mismatched_lengths() {
        let a = DVector::from_column_slice(&[1.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(rmse(&[a], &[b]).is_err());
    }

    #[test]
    fn covariate_spatial_component_has_unit_variance() {
        let cfg = SimConfig::new(400, 0.5, 0.0, 7);
        let ds = generate_dataset(&cfg).unwrap();
        let sites = SiteSet::new(ds.coords.clone()).unwrap();
        let knots = select_knots(&sites, 30, 3).unwrap();
        let eig = knot_eigen_with_cap(&knots, 50).unwrap();
        let factory = BasisFactory::new(knots, eig, 400, ScalingMode::AsPrinted).unwrap();
        let (_, spatial) = generate_covariate(&factory, &ds.coords, 0.5, 11).unwrap();
        assert_abs_diff_eq!(sample_sd(&spatial), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn independent_covariate_has_unit_variance_statistically() {
        let cfg = SimConfig::new(1000, 0.0, 0.0, 5);
        let ds = generate_dataset(&cfg).unwrap();
        // At s_x = 0 each covariate is pure iid noise; sample variance is
        // within 3 standard errors of 1 (se ~ sqrt(2/(n-1))).
        let se = (2.0 / 999.0f64).sqrt();
        for p in 0..ds.x.ncols() {
            let col = ds.x.column(p).into_owned();
            let var = sample_sd(&col).powi(2);
            assert!((var - 1.0).abs() < 3.0 * se, "var = {var}");
        }
    }

    #[test]
    fn datasets_are_bit_reproducible() {
        let cfg = SimConfig::new(200, 0.5, 1.0, 99);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
    }

    #[test]
    fn group_structure_matches_design() {
        let cfg = SimConfig::new(215, 0.0, 1.0, 3);
        let ds = generate_dataset(&cfg).unwrap();
        // floor(215/20) = 10 groups; remainder rows join the last group.
        assert_eq!(ds.group_count, 10);
        let distinct: std::collections::BTreeSet<&String> = ds.labels.iter().collect();
        assert_eq!(distinct.len(), 10);
        let last_label = ds.labels.iter().max().unwrap().clone();
        let last_size = ds.labels.iter().filter(|l| **l == last_label).count();
        assert_eq!(last_size, 20 + 215 % 20);
    }

    #[test]
    fn zero_group_ratio_means_zero_effects() {
        let cfg = SimConfig::new(120, 0.0, 0.0, 8);
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.group_effects_row.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn noise_ratio_is_exactly_point_three() {
        for seed in [1u64, 2] {
            let cfg = SimConfig::new(300, 0.5, 0.5, seed);
            let ds = generate_dataset(&cfg).unwrap();
            let mut signal = ds.w0.clone() + &ds.group_effects_row;
            for p in 0..ds.w.len() {
                for i in 0..signal.len() {
                    signal[i] += ds.x[(i, p)] * ds.w[p][i];
                }
            }
            assert_abs_diff_eq!(ds.sigma / sample_sd(&signal), 0.3, epsilon = 1e-10);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_dataset(&SimConfig::new(100, 1.0, 0.0, 1)).is_err());
        assert!(generate_dataset(&SimConfig::new(30, 0.0, 0.0, 1)).is_err());
    }

    #[test]
    fn sign_test_matches_hand_binomial() {
        // 9 of 10 pairs greater: p = (C(10,9) + C(10,10)) / 2^10 = 11/1024.
        let a: Vec<f64> = (0..10).map(|i| if i < 9 { 1.0 } else { -1.0 }).collect();
        let b = vec![0.0; 10];
        assert_abs_diff_eq!(
            sign_test_p_greater(&a, &b),
            11.0 / 1024.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn median_of_even_and_odd_lists() {
        assert_abs_diff_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_abs_diff_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
