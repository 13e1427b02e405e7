//! Prediction at new sites from a saved model file.

use std::path::{Path, PathBuf};

use samm_core::model::ModelFile;
use samm_core::predict::Predictor;

use crate::table::{BlockReader, TableSchema};
use crate::CliError;

#[derive(Debug)]
pub struct PredictArtifacts {
    pub output_path: PathBuf,
    pub rows: usize,
    pub unseen_label_rows: usize,
}

pub fn run_predict(
    model_path: &Path,
    input: &Path,
    output: &Path,
    block_rows: usize,
    delimiter: u8,
) -> Result<PredictArtifacts, CliError> {
    let model = ModelFile::load(model_path).map_err(CliError::from)?;
    let factory = model.factory().map_err(CliError::from)?;

    // The prediction table must carry every non-intercept X column; the
    // group column is optional (absent labels fall back to the prior mean).
    let intercept = model
        .columns
        .x_cols
        .first()
        .map(|c| c == "(intercept)")
        .unwrap_or(false);
    let x_names: Vec<String> = model
        .columns
        .x_cols
        .iter()
        .filter(|c| c.as_str() != "(intercept)")
        .cloned()
        .collect();
    let has_group_term = model.group_index.is_some();
    let group_col = if has_group_term {
        let header = header_of(input, delimiter)?;
        model
            .columns
            .group
            .clone()
            .filter(|g| header.iter().any(|h| h == g))
    } else {
        None
    };
    let schema = TableSchema::resolve(
        input,
        delimiter,
        None,
        &model.columns.coord_x,
        &model.columns.coord_y,
        intercept,
        &x_names,
        group_col.as_deref(),
    )?;

    let predictor = Predictor {
        fit: &model.fit,
        spec: &model.spec,
        factory: factory.as_ref(),
        group_index: model.group_index.as_ref(),
    };

    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(output)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", output.display())))?;
    let mut header = vec!["line".to_string(), "y_hat".to_string()];
    for t in &model.spec.terms {
        header.push(format!("{}_effect", t.name));
        header.push(format!("{}_se", t.name));
    }
    header.push("unseen_group".into());
    writer
        .write_record(&header)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut rows = 0usize;
    let mut unseen_total = 0usize;
    let reader = BlockReader::open(&schema, block_rows)?;
    for block in reader {
        let block = block?;
        let prediction = predictor
            .predict(&block.coords, &block.x, block.labels.as_deref())
            .map_err(CliError::from)?;
        unseen_total += prediction.unseen_label_rows.len();
        let unseen: std::collections::BTreeSet<usize> =
            prediction.unseen_label_rows.iter().copied().collect();
        for i in 0..block.rows() {
            let mut row = vec![
                block.lines[i].to_string(),
                format!("{:.10e}", prediction.y_hat[i]),
            ];
            for surface in &prediction.effects {
                row.push(format!("{:.10e}", surface.values[i]));
                row.push(format!("{:.10e}", surface.se[i]));
            }
            row.push(unseen.contains(&i).to_string());
            writer
                .write_record(&row)
                .map_err(|e| CliError::Data(e.to_string()))?;
            rows += 1;
        }
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(PredictArtifacts {
        output_path: output.to_path_buf(),
        rows,
        unseen_label_rows: unseen_total,
    })
}

fn header_of(path: &Path, delimiter: u8) -> Result<Vec<String>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(String::from)
        .collect())
}
