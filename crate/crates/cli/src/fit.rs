//! The streaming fit pipeline.
//!
//! Pass 1 scans the table for the group index, a coordinate sample, and row
//! counts. Knots, eigenpairs, and the basis factory are then built once.
//! Pass 2 streams blocks into per-block inner-product stores that are merged
//! in block order (bit-reproducible for any worker count) or in completion
//! order (fast mode). The fit itself never sees a data row. Pass 3 streams
//! again to write per-row effects with standard errors.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use samm_core::accumulate::{accumulate_block, init_store, merge_stores, InnerProductStore};
use samm_core::basis::{
    expected_mc, knot_eigen_with_cap, mst_range, range_source_for, select_centers, BasisFactory,
    KnotSet, RangeSource, SiteSet,
};
use samm_core::memtrack::{self, MemStats};
use samm_core::model::{ColumnBindings, ModelFile, MODEL_FORMAT, MODEL_VERSION};
use samm_core::predict::Predictor;
use samm_core::reml::{fit as reml_fit, FitResult, ModelSpec};
use samm_core::terms::{build_term_block, GroupIndex, TermKind, TermSpec};

use crate::config::RunConfig;
use crate::table::{scan, Block, BlockReader, TableSchema};
use crate::CliError;

#[derive(Debug)]
pub struct FitArtifacts {
    pub model_path: PathBuf,
    pub effects_path: PathBuf,
    pub summary_path: PathBuf,
    pub store_path: Option<PathBuf>,
    pub summary_text: String,
    pub n_rows: usize,
    pub n_rejected: usize,
    pub mem: MemStats,
    pub fit: FitResult,
}

struct StageTimes {
    scan: f64,
    basis: f64,
    accumulate: f64,
    fit: f64,
    effects: f64,
}

pub fn run_fit(config: &RunConfig) -> Result<FitArtifacts, CliError> {
    config.validate()?;
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("fit needs an input table (key 'input')".into()))?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Data(format!("cannot create output dir: {e}")))?;

    let x_names: Vec<String> = config
        .svc
        .iter()
        .chain(config.fixed.iter())
        .cloned()
        .collect();
    let schema = TableSchema::resolve(
        input,
        config.delimiter,
        Some(&config.response),
        &config.coord_x,
        &config.coord_y,
        config.intercept,
        &x_names,
        config.group.as_deref(),
    )?;
    let k = schema.x_cols.len();
    if k == 0 {
        return Err(CliError::Usage(
            "the model needs at least one fixed-effect column (or the intercept)".into(),
        ));
    }

    memtrack::reset();
    let spatial_needed = config.residual_spatial || !config.svc.is_empty();

    // Pass 1: group labels, coordinate sample, row accounting.
    let t = Instant::now();
    let scan_result = scan(&schema, config.reservoir_rows, config.seed)?;
    let n = scan_result.n_accepted;
    let scan_secs = t.elapsed().as_secs_f64();

    // Knots and eigenpairs.
    let t = Instant::now();
    let (factory, range_source) = if spatial_needed {
        let sample = SiteSet::new(scan_result.reservoir.clone()).map_err(CliError::from)?;
        if config.knots > sample.len() {
            return Err(CliError::Data(format!(
                "{} knots requested but only {} sampled sites are available",
                config.knots,
                sample.len()
            )));
        }
        let centers = select_centers(&sample, config.knots, config.seed)?;
        let source = range_source_for(n);
        let range_r = match source {
            RangeSource::SampleSites => mst_range(sample.coords())?,
            RangeSource::KnotCenters => mst_range(&centers)?,
        };
        let knots = KnotSet::new(centers, range_r)?;
        let eig = knot_eigen_with_cap(&knots, config.max_eigenpairs)?;
        let factory = BasisFactory::new(knots, eig, n, config.scaling_mode)?;
        (Some(factory), Some(source))
    } else {
        (None, None)
    };
    let basis_secs = t.elapsed().as_secs_f64();

    let group_index = match (&config.group, scan_result.labels.is_empty()) {
        (Some(_), false) => Some(GroupIndex::from_sorted(
            scan_result.labels.iter().cloned().collect(),
        )),
        (Some(col), true) => {
            return Err(CliError::Data(format!(
                "group column '{col}' produced no labels"
            )))
        }
        (None, _) => None,
    };

    // Term order: SVCs, residual spatial, group.
    let l_pos = factory.as_ref().map(|f| f.l_pos()).unwrap_or(0);
    let mut terms = Vec::new();
    for (i, name) in config.svc.iter().enumerate() {
        let x_col = usize::from(config.intercept) + i;
        terms.push(TermSpec::svc(name.clone(), x_col, l_pos));
    }
    if config.residual_spatial {
        terms.push(TermSpec::residual_spatial(l_pos));
    }
    if let Some(idx) = &group_index {
        terms.push(TermSpec::group(
            config.group.clone().unwrap_or_else(|| "group".into()),
            idx.len(),
        ));
    }
    let lambda_hat = factory
        .as_ref()
        .map(|f| f.lambda_hat.clone())
        .unwrap_or_else(|| nalgebra::DVector::zeros(0));
    let spec = ModelSpec::new(terms, lambda_hat).map_err(CliError::from)?;

    // Pass 2: block accumulation.
    let t = Instant::now();
    let store = accumulate_pass(config, &schema, &spec, factory.as_ref(), group_index.as_ref())?;
    let store = store.finalize(n).map_err(CliError::from)?;
    let accumulate_secs = t.elapsed().as_secs_f64();

    let mem = memtrack::stats();
    enforce_memory_contract(config, &spec, &mem)?;

    let store_path = if config.save_store {
        let path = config.output_dir.join("store.bin");
        store.save(&path).map_err(CliError::from)?;
        Some(path)
    } else {
        None
    };

    // The fit stage: store-only, no data rows.
    let t = Instant::now();
    let fit_result = reml_fit(&store, &spec, None, &config.controls()).map_err(CliError::from)?;
    let fit_secs = t.elapsed().as_secs_f64();

    // Pass 3: effect recovery.
    let t = Instant::now();
    let effects_path = config.output_dir.join("effects.csv");
    let predictor = Predictor {
        fit: &fit_result,
        spec: &spec,
        factory: factory.as_ref(),
        group_index: group_index.as_ref(),
    };
    write_effects(config, &schema, &spec, &predictor, &effects_path)?;
    let effects_secs = t.elapsed().as_secs_f64();

    // Model file.
    let model_path = config.output_dir.join("model.json");
    let model = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        spec: spec.clone(),
        fit: fit_result.clone(),
        columns: ColumnBindings {
            response: config.response.clone(),
            coord_x: config.coord_x.clone(),
            coord_y: config.coord_y.clone(),
            x_cols: schema.x_names(),
            svc_cols: config.svc.clone(),
            group: config.group.clone(),
        },
        knots: factory.as_ref().map(|f| f.knots.clone()),
        eigen: factory.as_ref().map(|f| f.eig.clone()),
        scaling_mode: config.scaling_mode,
        range_source,
        group_index: group_index.clone(),
    };
    model.save(&model_path).map_err(CliError::from)?;

    let times = StageTimes {
        scan: scan_secs,
        basis: basis_secs,
        accumulate: accumulate_secs,
        fit: fit_secs,
        effects: effects_secs,
    };
    let summary_text = summary_text(
        config,
        &scan_result.labels,
        &scan_result.reservoir,
        n,
        scan_result.n_rejected,
        &spec,
        factory.as_ref(),
        range_source,
        &fit_result,
        &times,
        &mem,
    );
    let summary_path = config.output_dir.join("summary.txt");
    std::fs::write(&summary_path, &summary_text)
        .map_err(|e| CliError::Data(format!("cannot write summary: {e}")))?;

    Ok(FitArtifacts {
        model_path,
        effects_path,
        summary_path,
        store_path,
        summary_text,
        n_rows: n,
        n_rejected: scan_result.n_rejected,
        mem,
        fit: fit_result,
    })
}

fn block_store(
    spec: &ModelSpec,
    k: usize,
    factory: Option<&BasisFactory>,
    group_index: Option<&GroupIndex>,
    block: &Block,
) -> Result<InnerProductStore, CliError> {
    let mut store = init_store(k, &spec.widths()).map_err(CliError::from)?;
    let mut term_blocks = Vec::with_capacity(spec.terms.len());
    for t in &spec.terms {
        let covariate: Option<Vec<f64>> = match t.kind {
            TermKind::Svc { x_col } => Some((0..block.rows()).map(|i| block.x[(i, x_col)]).collect()),
            _ => None,
        };
        term_blocks.push(
            build_term_block(
                t,
                factory,
                &block.coords,
                covariate.as_deref(),
                block.labels.as_deref(),
                group_index,
            )
            .map_err(CliError::from)?,
        );
    }
    accumulate_block(&mut store, &block.x, &block.y, &term_blocks).map_err(CliError::from)?;
    Ok(store)
}

fn accumulate_pass(
    config: &RunConfig,
    schema: &TableSchema,
    spec: &ModelSpec,
    factory: Option<&BasisFactory>,
    group_index: Option<&GroupIndex>,
) -> Result<InnerProductStore, CliError> {
    let k = schema.x_cols.len();
    let workers = if config.workers == 0 {
        rayon::current_num_threads()
    } else {
        config.workers
    };
    let mut total = init_store(k, &spec.widths()).map_err(CliError::from)?;
    let mut reader = BlockReader::open(schema, config.block_rows)?;
    loop {
        // Read up to `workers` blocks, process them in parallel, then fold
        // their stores in block order so the result cannot depend on timing.
        let mut batch = Vec::with_capacity(workers);
        for _ in 0..workers {
            match reader.next() {
                Some(block) => batch.push(block?),
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        let partials: Vec<InnerProductStore> = batch
            .par_iter()
            .map(|block| block_store(spec, k, factory, group_index, block))
            .collect::<Result<_, _>>()?;
        if config.deterministic_merge {
            for part in &partials {
                total = merge_stores(&total, part).map_err(CliError::from)?;
            }
        } else {
            let combined = partials
                .into_par_iter()
                .reduce_with(|a, b| merge_stores(&a, &b).expect("shapes match"));
            if let Some(c) = combined {
                total = merge_stores(&total, &c).map_err(CliError::from)?;
            }
        }
    }
    Ok(total)
}

fn enforce_memory_contract(
    config: &RunConfig,
    spec: &ModelSpec,
    mem: &MemStats,
) -> Result<(), CliError> {
    let max_width = spec.widths().iter().copied().max().unwrap_or(0);
    let cap = config.block_rows * max_width;
    if mem.max_rows > config.block_rows || (cap > 0 && mem.peak_single_entries > cap) {
        return Err(CliError::Numerical(format!(
            "streaming contract violated: basis buffer of {} rows / {} entries exceeds \
             block target {} x width {}",
            mem.max_rows, mem.peak_single_entries, config.block_rows, max_width
        )));
    }
    Ok(())
}

fn write_effects(
    config: &RunConfig,
    schema: &TableSchema,
    spec: &ModelSpec,
    predictor: &Predictor<'_>,
    path: &PathBuf,
) -> Result<(), CliError> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(config.delimiter)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["line".to_string(), "fitted".to_string()];
    for t in &spec.terms {
        header.push(format!("{}_effect", t.name));
        header.push(format!("{}_se", t.name));
    }
    writer
        .write_record(&header)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let reader = BlockReader::open(schema, config.block_rows)?;
    for block in reader {
        let block = block?;
        let prediction = predictor
            .predict(&block.coords, &block.x, block.labels.as_deref())
            .map_err(CliError::from)?;
        for i in 0..block.rows() {
            let mut row = vec![
                block.lines[i].to_string(),
                format!("{:.10e}", prediction.y_hat[i]),
            ];
            for surface in &prediction.effects {
                row.push(format!("{:.10e}", surface.values[i]));
                row.push(format!("{:.10e}", surface.se[i]));
            }
            writer
                .write_record(&row)
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

/// Estimated `N / 1'C_0 1` from sampled site pairs; the expected-MC report
/// is a diagnostic, so a pair-sampled estimate of the mean kernel value is
/// enough.
fn mc_scale_estimate(sample: &[[f64; 2]], n: usize, range_r: f64, seed: u64) -> Option<f64> {
    if sample.len() < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d63_7363616c65);
    let pairs = 200_000.min(sample.len() * (sample.len() - 1) / 2);
    let mut sum = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..sample.len());
        let mut j = rng.random_range(0..sample.len());
        while j == i {
            j = rng.random_range(0..sample.len());
        }
        let dx = sample[i][0] - sample[j][0];
        let dy = sample[i][1] - sample[j][1];
        sum += (-(dx * dx + dy * dy).sqrt() / range_r).exp();
    }
    let mean_kernel = sum / pairs as f64;
    Some(1.0 / ((n as f64 - 1.0) * mean_kernel))
}

#[allow(clippy::too_many_arguments)]
fn summary_text(
    config: &RunConfig,
    labels: &std::collections::BTreeSet<String>,
    site_sample: &[[f64; 2]],
    n: usize,
    rejected: usize,
    spec: &ModelSpec,
    factory: Option<&BasisFactory>,
    range_source: Option<RangeSource>,
    fit_result: &FitResult,
    times: &StageTimes,
    mem: &MemStats,
) -> String {
    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line("[config]".into());
    for (key, value) in config.echo() {
        line(format!("{key} = {value}"));
    }
    line(String::new());
    line("[data]".into());
    line(format!("rows_used = {n}"));
    line(format!("rows_rejected_nonfinite = {rejected}"));
    line(format!("fixed_effects = {}", fit_result.k));
    line(format!("groups = {}", labels.len()));
    line(String::new());
    line("[basis]".into());
    match factory {
        Some(f) => {
            line(format!("knots = {}", f.knots.len()));
            line(format!("eigenpairs = {}", f.l_pos()));
            line(format!("range_r = {:.6e}", f.knots.range_r));
            line(format!(
                "range_source = {}",
                match range_source {
                    Some(RangeSource::SampleSites) => "sample_sites",
                    Some(RangeSource::KnotCenters) => "knot_centers",
                    None => "none",
                }
            ));
            line(format!(
                "lambda_hat = [{:.6e} .. {:.6e}]",
                f.lambda_hat[f.l_pos() - 1],
                f.lambda_hat[0]
            ));
        }
        None => line("knots = 0 (no spatial term)".into()),
    }
    line(String::new());
    line("[fit]".into());
    line(format!("sigma2 = {:.10e}", fit_result.sigma2_hat));
    line(format!("loglik_r = {:.10e}", fit_result.loglik_r));
    line(format!("sweeps = {}", fit_result.n_sweeps));
    line(format!("converged = {}", fit_result.converged));
    line(format!(
        "dropped_terms = {}",
        if fit_result.dropped_terms.is_empty() {
            "none".to_string()
        } else {
            fit_result
                .dropped_terms
                .iter()
                .map(|p| spec.terms[*p].name.clone())
                .collect::<Vec<_>>()
                .join(",")
        }
    ));
    let mc_scale =
        factory.and_then(|f| mc_scale_estimate(site_sample, n, f.knots.range_r, config.seed));
    for (p, t) in spec.terms.iter().enumerate() {
        let theta = &fit_result.theta_hat.terms[p];
        let mut parts = vec![
            format!("term.{} = {}", p, t.name),
            format!("tau2 = {:.6e}", theta.tau() * theta.tau()),
        ];
        if let Some(alpha) = theta.alpha() {
            parts.push(format!("alpha = {alpha:.6}"));
            if let (Some(f), Some(scale)) = (factory, mc_scale) {
                if let Ok(emc) = expected_mc(f.lambda_hat.as_slice(), alpha, scale) {
                    parts.push(format!("expected_mc = {emc:.6}"));
                }
            }
        }
        line(parts.join(", "));
    }
    line(String::new());
    line("[timing_seconds]".into());
    line(format!("pass1_scan = {:.3}", times.scan));
    line(format!("knots_eigen = {:.3}", times.basis));
    line(format!("pass2_accumulate = {:.3}", times.accumulate));
    line(format!("fit = {:.3}", times.fit));
    line(format!("pass3_effects = {:.3}", times.effects));
    line(String::new());
    line("[memory]".into());
    line(format!(
        "peak_basis_buffer_entries = {}",
        mem.peak_single_entries
    ));
    line(format!("peak_basis_live_entries = {}", mem.peak_live_entries));
    line(format!("max_basis_buffer_rows = {}", mem.max_rows));
    line(format!(
        "block_target_x_max_width = {}",
        config.block_rows * spec.widths().iter().copied().max().unwrap_or(0)
    ));
    s
}

/// Writes text to a file, creating parents.
pub fn write_text(path: &PathBuf, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}
