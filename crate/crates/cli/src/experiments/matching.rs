//! One embedding-matching run with its full trace and pixel-difference
//! report.

use atlas_core::autodiff::eval;
use atlas_core::matcher::{match_embedding, perturbation_report, MatchConfig};

use crate::output::{cell, OutputSink};
use crate::pipeline::{numeric, PipelineError, ValidatedPipeline};

pub fn run(v: &ValidatedPipeline, sink: &mut OutputSink) -> Result<(), PipelineError> {
    let p = v.config.match_params.clone().unwrap_or_default();
    let model = v.embedder()?;
    let original = &v.inputs[p.original];
    let target_emb = eval(&model, &v.inputs[p.target]).map_err(numeric)?;

    let mcfg = MatchConfig {
        learning_rate: p.learning_rate,
        max_iters: p.max_iters,
        loss_tol: p.loss_tol,
        cos_tol: p.cos_tol,
        perturb_budget: p.perturb_budget,
        record_every: p.record_every,
    };
    let (x_star, trace) = match_embedding(&model, original, &target_emb, &mcfg).map_err(numeric)?;

    let rows: Vec<Vec<String>> = trace
        .rows
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                cell(r.loss),
                cell(r.cosine),
                cell(r.mean_abs_delta),
                cell(r.max_abs_delta),
            ]
        })
        .collect();
    sink.write_csv(
        "match-trace.csv",
        &["iter", "loss", "cosine", "mean_abs_delta", "max_abs_delta"],
        &rows,
    )?;

    sink.write_tensor_emat("x_star.emat", &x_star)?;
    let report = perturbation_report(original, &x_star, p.diff_scale).map_err(numeric)?;
    if p.save_images {
        sink.write_tensor_ppm("x_star.ppm", &x_star)?;
        sink.write_tensor_ppm("diff-image.ppm", &report.diff_image)?;
    }
    let last = trace.rows.last().expect("trace never empty");
    sink.write_json(
        "match-report.json",
        &serde_json::json!({
            "converged": trace.converged,
            "stop_reason": trace.stop_reason.label(),
            "iterations": last.iter,
            "final_loss": last.loss,
            "final_cosine": last.cosine,
            "mean_abs": report.mean_abs,
            "max_abs": report.max_abs,
            "linf": report.linf,
            "diff_scale": p.diff_scale,
            "clamped_steps": trace.total_clamped_steps,
        }),
    )?;
    Ok(())
}
