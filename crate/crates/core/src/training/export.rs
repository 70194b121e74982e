use std::io::Write;

use super::TrainError;
use crate::nn::{embed, ModelConfig, Parameters, Tensor};
use crate::signal_io::EpochDataset;

/// Scientific notation with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes one tab-separated row per epoch: source id, stage label (`NA`
/// when unscored) and the eval-mode embedding.
pub fn export_embeddings<W: Write>(
    params: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    mut out: W,
) -> Result<usize, TrainError> {
    let dim = model.embedding_dim();
    let header: Vec<String> = (0..dim).map(|i| format!("e{i}")).collect();
    writeln!(out, "source_id\tlabel\t{}", header.join("\t"))?;
    for chunk in data.epochs.chunks(256) {
        let len = chunk[0].samples.len();
        let flat = chunk.iter().flat_map(|e| e.samples.iter().copied()).collect();
        let emb = embed(params, model, &Tensor::from_vec(&[chunk.len(), len], flat)?)?;
        for (epoch, row) in chunk.iter().zip(emb.rows()) {
            let label = epoch.label.map_or("NA", |l| l.name());
            let values: Vec<String> = row.iter().map(|&v| format_sig9(f64::from(v))).collect();
            writeln!(out, "{}\t{label}\t{}", epoch.source_id, values.join("\t"))?;
        }
    }
    out.flush()?;
    Ok(data.len())
}
