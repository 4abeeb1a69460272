//! Null-space walk: large input displacement under a capped embedding drift.

use atlas_core::path::{null_walk, WalkMode, WalkParams};
use atlas_core::rng::Rng;
use atlas_core::spectral::{jacobian_at, svd_analysis};

use crate::output::{cell, OutputSink};
use crate::pipeline::{numeric, PipelineError, ValidatedPipeline};

pub fn parse_mode(s: &str) -> Option<WalkMode> {
    match s {
        "fresh" => Some(WalkMode::FreshRandom),
        "persistent" => Some(WalkMode::Persistent),
        _ => None,
    }
}

pub fn run(v: &ValidatedPipeline, sink: &mut OutputSink) -> Result<(), PipelineError> {
    let p = v.config.walk.clone().unwrap_or_default();
    let model = v.embedder()?;
    let x0 = &v.inputs[p.input];

    // resolve the drift cap against the starting spectrum when relative
    let drift_cap = match p.drift_cap {
        Some(cap) => cap,
        None => {
            let j = jacobian_at(&model, x0).map_err(numeric)?;
            let svd = svd_analysis(&j, x0).map_err(numeric)?;
            p.drift_cap_rel_sigma * svd.sigma_max
        }
    };

    let params = WalkParams {
        step_len: p.step_len,
        n_steps: p.n_steps,
        rank_cut: p.rank_cut,
        drift_cap,
        mode: parse_mode(&p.mode).expect("mode validated"),
        correction_lr: p.correction_learning_rate,
        correction_iters: p.correction_iters,
    };
    let mut rng = Rng::with_stream(v.seed, 2);
    let trace = null_walk(&model, x0, &params, &mut rng).map_err(numeric)?;

    let rows: Vec<Vec<String>> = trace
        .steps
        .iter()
        .map(|s| {
            vec![
                s.k.to_string(),
                cell(s.input_disp),
                cell(s.embed_drift),
                s.reprojections.to_string(),
            ]
        })
        .collect();
    sink.write_csv(
        "walk-trace.csv",
        &["k", "input_disp", "embed_drift", "reprojections"],
        &rows,
    )?;
    sink.write_json(
        "walk-report.json",
        &serde_json::json!({
            "steps": p.n_steps,
            "step_len": p.step_len,
            "drift_cap": drift_cap,
            "final_input_disp": trace.last().input_disp,
            "final_embed_drift": trace.last().embed_drift,
            "reprojections": trace.last().reprojections,
        }),
    )?;
    Ok(())
}
