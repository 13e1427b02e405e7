//! Prints a model file's parameters in plain text.

use std::path::Path;

use samm_core::model::ModelFile;

use crate::CliError;

pub fn run_inspect(model_path: &Path) -> Result<String, CliError> {
    let model = ModelFile::load(model_path).map_err(CliError::from)?;
    let mut s = String::new();
    let mut line = |t: String| {
        s.push_str(&t);
        s.push('\n');
    };
    line(format!("format = {} v{}", model.format, model.version));
    line(format!(
        "trained_rows = {}, fixed_effects = {}",
        model.fit.n, model.fit.k
    ));
    line(format!(
        "response = {}, coords = ({}, {})",
        model.columns.response, model.columns.coord_x, model.columns.coord_y
    ));
    line(format!("x_cols = {}", model.columns.x_cols.join(",")));
    if let Some(g) = &model.columns.group {
        line(format!(
            "group = {} ({} levels)",
            g,
            model.group_index.as_ref().map(|i| i.len()).unwrap_or(0)
        ));
    }
    match (&model.knots, &model.eigen) {
        (Some(k), Some(e)) => {
            line(format!(
                "basis: {} knots, {} eigenpairs, range_r = {:.6e}, scaling = {}",
                k.len(),
                e.l_pos,
                k.range_r,
                model.scaling_mode
            ));
        }
        _ => line("basis: none (no spatial term)".into()),
    }
    line(format!(
        "sigma2 = {:.10e}, loglik_r = {:.10e}, sweeps = {}, converged = {}",
        model.fit.sigma2_hat, model.fit.loglik_r, model.fit.n_sweeps, model.fit.converged
    ));
    for (p, t) in model.spec.terms.iter().enumerate() {
        let theta = &model.fit.theta_hat.terms[p];
        let dropped = if model.fit.dropped_terms.contains(&p) {
            " (dropped)"
        } else {
            ""
        };
        match theta.alpha() {
            Some(alpha) => line(format!(
                "term {} '{}': tau2 = {:.6e}, alpha = {:.6}{}",
                p,
                t.name,
                theta.tau() * theta.tau(),
                alpha,
                dropped
            )),
            None => line(format!(
                "term {} '{}': tau2 = {:.6e}{}",
                p,
                t.name,
                theta.tau() * theta.tau(),
                dropped
            )),
        }
    }
    Ok(s)
}
