//! Nearest-anchor classification over class-mean embeddings, plus the
//! optional classification-flip protocol: match a query toward another
//! class's exemplar embedding and classify both versions.

use atlas_core::autodiff::eval;
use atlas_core::classify::{build_anchor_set, nearest_anchor_classify, AnchorSet};
use atlas_core::matcher::{match_embedding, MatchConfig};
use atlas_core::tensor::{mean_abs_diff, Tensor};
use atlas_core::vit::Embedder;

use crate::output::{cell, OutputSink};
use crate::pipeline::{load_input, numeric, PipelineError, ValidatedPipeline};

pub fn run(v: &ValidatedPipeline, sink: &mut OutputSink) -> Result<(), PipelineError> {
    let p = v
        .config
        .classify
        .clone()
        .expect("classify block validated");
    let model = v.embedder()?;

    let mut labeled: Vec<(String, Vec<Tensor>)> = Vec::with_capacity(p.classes.len());
    for class in &p.classes {
        let inputs: Result<Vec<Tensor>, PipelineError> = class
            .inputs
            .iter()
            .map(|spec| load_input(spec, &v.vit_config))
            .collect();
        labeled.push((class.label.clone(), inputs?));
    }
    let anchors = build_anchor_set(&model, &labeled).map_err(numeric)?;

    let queries: Result<Vec<Tensor>, PipelineError> = p
        .queries
        .iter()
        .map(|spec| load_input(spec, &v.vit_config))
        .collect();
    let queries = queries?;

    let mut header: Vec<String> = vec!["query".to_string(), "predicted".to_string()];
    for label in &anchors.labels {
        header.push(format!("cos_{label}"));
    }
    for label in &anchors.labels {
        header.push(format!("score_{label}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let mut rows = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let emb = eval(&model, q).map_err(numeric)?;
        let c = nearest_anchor_classify(&emb, &anchors).map_err(numeric)?;
        rows.push(classification_row(qi.to_string(), &c));
    }
    sink.write_csv("classification.csv", &header_refs, &rows)?;

    if let Some(flip) = &p.flip {
        run_flip(&model, &anchors, &labeled, &queries, flip, sink)?;
    }
    Ok(())
}

fn classification_row(tag: String, c: &atlas_core::classify::Classification) -> Vec<String> {
    let mut row = vec![tag, c.label.clone()];
    row.extend(c.cosines.iter().map(|&v| cell(v)));
    row.extend(c.softmax_scores.iter().map(|&v| cell(v)));
    row
}

fn run_flip(
    model: &Embedder<'_>,
    anchors: &AnchorSet,
    labeled: &[(String, Vec<Tensor>)],
    queries: &[Tensor],
    flip: &crate::config::FlipSpec,
    sink: &mut OutputSink,
) -> Result<(), PipelineError> {
    let mcfg = MatchConfig {
        learning_rate: flip.learning_rate,
        max_iters: flip.max_iters,
        cos_tol: Some(flip.cos_tol),
        loss_tol: None,
        perturb_budget: None,
        record_every: flip.max_iters.max(1),
    };

    let mut rows = Vec::new();
    for (i, pair) in flip.pairs.iter().enumerate() {
        let original = &queries[pair.query];
        let exemplar = &labeled[pair.target_class].1[pair.target_exemplar];
        let target_emb = eval(model, exemplar).map_err(numeric)?;

        let (matched, trace) = match_embedding(model, original, &target_emb, &mcfg).map_err(numeric)?;
        let orig_cls =
            nearest_anchor_classify(&eval(model, original).map_err(numeric)?, anchors)
                .map_err(numeric)?;
        let matched_cls =
            nearest_anchor_classify(&eval(model, &matched).map_err(numeric)?, anchors)
                .map_err(numeric)?;

        sink.write_tensor_ppm(&format!("flip-{i}-matched.ppm"), &matched)?;
        rows.push(vec![
            i.to_string(),
            pair.query.to_string(),
            orig_cls.label.clone(),
            anchors.labels[pair.target_class].clone(),
            matched_cls.label.clone(),
            cell(mean_abs_diff(original, &matched).map_err(numeric)?),
            trace.converged.to_string(),
        ]);
    }
    sink.write_csv(
        "flip-matrix.csv",
        &[
            "pair",
            "query",
            "original_predicted",
            "target_label",
            "matched_predicted",
            "mean_abs_delta",
            "converged",
        ],
        &rows,
    )?;
    Ok(())
}
