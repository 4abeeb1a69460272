//! Embedding evolution along the straight segment between two inputs.

use atlas_core::path::interpolate_trace;
use atlas_core::tensor::Tensor;

use crate::output::{cell, OutputSink};
use crate::pipeline::{numeric, PipelineError, ValidatedPipeline};

pub fn run(v: &ValidatedPipeline, sink: &mut OutputSink) -> Result<(), PipelineError> {
    let p = v.config.interpolate.clone().unwrap_or_default();
    let model = v.embedder()?;
    let xa = &v.inputs[p.a];
    let xb = &v.inputs[p.b];
    let trace = interpolate_trace(&model, xa, xb, p.steps).map_err(numeric)?;

    let rows: Vec<Vec<String>> = trace
        .points
        .iter()
        .map(|pt| {
            vec![
                cell(pt.t),
                cell(pt.cos_to_a),
                cell(pt.cos_to_b),
                cell(pt.dist_a),
                cell(pt.dist_b),
                cell(pt.mean_abs_delta),
            ]
        })
        .collect();
    sink.write_csv(
        "path-trace.csv",
        &["t", "cos_to_a", "cos_to_b", "dist_a", "dist_b", "mean_abs_delta"],
        &rows,
    )?;

    if let Some(every) = p.frames_every {
        let every = every.max(1);
        let denom = p.steps as f64;
        for k in (0..=p.steps).step_by(every) {
            let wa = (p.steps - k) as f64 / denom;
            let wb = k as f64 / denom;
            let data: Vec<f64> = xa
                .data()
                .iter()
                .zip(xb.data())
                .map(|(a, b)| wa * a + wb * b)
                .collect();
            let frame = Tensor::from_vec(xa.shape(), data).map_err(numeric)?;
            sink.write_tensor_ppm(&format!("frame-{k:04}.ppm"), &frame)?;
        }
    }
    Ok(())
}
