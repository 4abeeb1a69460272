//! Local directional Lipschitz distributions over the four direction
//! families at an anchor input.

use atlas_core::autodiff::eval;
use atlas_core::lipschitz::{
    direction_suite, ldlc_distribution, DirectionCounts, DirectionFamily,
};
use atlas_core::matcher::{match_embedding, MatchConfig};
use atlas_core::rng::Rng;
use atlas_core::spectral::{jacobian_at, svd_analysis};
use atlas_core::synth::noise_image;
use atlas_core::tensor::Tensor;

use crate::output::{cell, OutputSink};
use crate::pipeline::{numeric, PipelineError, ValidatedPipeline};

pub fn run(v: &ValidatedPipeline, sink: &mut OutputSink) -> Result<(), PipelineError> {
    let p = v.config.ldlc.clone().unwrap_or_default();
    let model = v.embedder()?;
    let anchor = &v.inputs[p.anchor];

    let j = jacobian_at(&model, anchor).map_err(numeric)?;
    let svd = svd_analysis(&j, anchor).map_err(numeric)?;

    let mut rng = Rng::with_stream(v.seed, 1);
    let (mut directions, skipped) = direction_suite(
        &svd,
        &mut rng,
        DirectionCounts {
            singular: p.singular,
            random: p.random,
            null: p.null,
        },
    )
    .map_err(numeric)?;
    if skipped > 0 {
        eprintln!("warning: {skipped} degenerate null projections skipped");
    }

    // optimization-derived directions: match the anchor toward the
    // embeddings of seeded noise images and keep the normalized deltas
    directions.extend(optimized_directions(v, &model, anchor, &p)?);

    let dists =
        ldlc_distribution(&model, anchor, &directions, p.epsilon, p.grid_n).map_err(numeric)?;

    let mut report_rows = Vec::new();
    let mut hist_rows = Vec::new();
    for dist in &dists {
        for (idx, est) in dist.estimates.iter().enumerate() {
            report_rows.push(vec![
                dist.family.label().to_string(),
                idx.to_string(),
                cell(est.epsilon),
                cell(est.value),
                cell(est.argmax_alpha),
                cell(est.argmax_beta),
            ]);
        }
        for bin in &dist.histogram {
            hist_rows.push(vec![
                dist.family.label().to_string(),
                cell(bin.lo),
                cell(bin.hi),
                bin.count.to_string(),
            ]);
        }
    }
    sink.write_csv(
        "ldlc-report.csv",
        &[
            "family",
            "direction_index",
            "epsilon",
            "value",
            "argmax_alpha",
            "argmax_beta",
        ],
        &report_rows,
    )?;
    sink.write_csv(
        "ldlc-hist.csv",
        &["family", "bin_lo", "bin_hi", "count"],
        &hist_rows,
    )?;
    Ok(())
}

fn optimized_directions(
    v: &ValidatedPipeline,
    model: &atlas_core::vit::Embedder<'_>,
    anchor: &Tensor,
    p: &crate::config::LdlcParams,
) -> Result<Vec<(DirectionFamily, Tensor)>, PipelineError> {
    let mut out = Vec::with_capacity(p.optimized);
    let mcfg = MatchConfig {
        learning_rate: p.match_learning_rate,
        max_iters: p.match_max_iters,
        cos_tol: Some(p.match_cos_tol),
        loss_tol: None,
        perturb_budget: None,
        record_every: p.match_max_iters.max(1),
    };
    for k in 0..p.optimized {
        let target_img = noise_image(
            v.seed.wrapping_mul(0x9E37_79B9).wrapping_add(k as u64),
            v.vit_config.channels,
            v.vit_config.image_size,
        );
        let target = eval(model, &target_img).map_err(numeric)?;
        let (x_star, _) = match_embedding(model, anchor, &target, &mcfg).map_err(numeric)?;
        let delta = x_star.sub(anchor).map_err(numeric)?;
        if delta.norm_l2() == 0.0 {
            continue; // anchor already matched this target; no direction
        }
        let flat = delta
            .reshape(&[anchor.len()])
            .and_then(|d| d.normalized())
            .map_err(numeric)?;
        out.push((DirectionFamily::Optimized, flat));
    }
    Ok(out)
}
