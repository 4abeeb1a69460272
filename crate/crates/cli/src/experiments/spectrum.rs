//! Singular-value spectrum of the embedding Jacobian at each input.

use atlas_core::spectral::{jacobian_at, svd_analysis, svd_report};

use crate::output::{cell, OutputSink};
use crate::pipeline::{numeric, PipelineError, ValidatedPipeline};

pub fn run(v: &ValidatedPipeline, sink: &mut OutputSink) -> Result<(), PipelineError> {
    let model = v.embedder()?;
    for (i, input) in v.inputs.iter().enumerate() {
        let j = jacobian_at(&model, input).map_err(numeric)?;
        let svd = svd_analysis(&j, input).map_err(numeric)?;
        let report = svd_report(&svd);

        let suffix = if v.inputs.len() == 1 {
            String::new()
        } else {
            format!("-{i}")
        };
        sink.write_json(
            &format!("svd-report{suffix}.json"),
            &serde_json::json!({
                "sigma": report.sigma,
                "effective_rank": report.effective_rank,
                "sigma_max": report.sigma_max,
                "anchor_checksum": report.anchor_checksum,
            }),
        )?;
        let rows: Vec<Vec<String>> = report
            .sigma
            .iter()
            .enumerate()
            .map(|(k, s)| vec![k.to_string(), cell(*s)])
            .collect();
        sink.write_csv(&format!("spectrum{suffix}.csv"), &["index", "sigma"], &rows)?;
    }
    Ok(())
}
