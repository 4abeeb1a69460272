//! Nearest-anchor classification: label embeddings by cosine similarity
//! against per-class anchor embeddings (class means of image embeddings,
//! standing in for a multimodal model's text-side class vectors).

use crate::autodiff::{eval, Model};
use crate::error::{Error, Result};
use crate::io::tensor_checksum;
use crate::tensor::Tensor;

/// Temperature applied to cosines before the reported softmax scores.
pub const SCORE_TEMPERATURE: f64 = 100.0;

/// Labeled anchor embeddings, one row per class.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub labels: Vec<String>,
    /// `labels.len() x embed_dim`.
    pub anchors: Tensor,
    /// Checksums of the source inputs, label by label.
    pub provenance: Vec<String>,
}

impl AnchorSet {
    pub fn validate(&self) -> Result<()> {
        let l = self.labels.len();
        if l < 2 {
            return Err(Error::Config("anchor set needs at least 2 labels".to_string()));
        }
        if self.anchors.rank() != 2 || self.anchors.rows() != l {
            return Err(Error::dim(
                "anchor_set",
                format!("{:?} anchors for {} labels", self.anchors.shape(), l),
            ));
        }
        for (i, a) in self.labels.iter().enumerate() {
            if self.labels[i + 1..].contains(a) {
                return Err(Error::Config(format!("duplicate label '{}'", a)));
            }
        }
        for i in 0..l {
            let norm: f64 = self.anchors.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "anchor '{}' has zero norm",
                    self.labels[i]
                )));
            }
        }
        Ok(())
    }
}

/// Anchor per label = mean embedding of that label's inputs.
pub fn build_anchor_set<M: Model>(
    model: &M,
    labeled_inputs: &[(String, Vec<Tensor>)],
) -> Result<AnchorSet> {
    if labeled_inputs.len() < 2 {
        return Err(Error::Config("need at least 2 labeled classes".to_string()));
    }
    let mut labels = Vec::with_capacity(labeled_inputs.len());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(labeled_inputs.len());
    let mut provenance = Vec::with_capacity(labeled_inputs.len());
    for (label, inputs) in labeled_inputs {
        if inputs.is_empty() {
            return Err(Error::Config(format!("label '{}' has no inputs", label)));
        }
        let mut mean: Option<Tensor> = None;
        let mut sums = Vec::new();
        for input in inputs {
            let emb = eval(model, input)?;
            sums.push(tensor_checksum(input));
            mean = Some(match mean {
                None => emb,
                Some(acc) => acc.add(&emb)?,
            });
        }
        let mean = mean.expect("non-empty checked above").scale(1.0 / inputs.len() as f64);
        labels.push(label.clone());
        rows.push(mean.data().to_vec());
        provenance.push(sums.join("+"));
    }
    let set = AnchorSet {
        labels,
        anchors: Tensor::from_rows(&rows)?,
        provenance,
    };
    set.validate()?;
    Ok(set)
}

/// Outcome of classifying one embedding.
#[derive(Debug, Clone)]
pub struct Classification {
    pub label_index: usize,
    pub label: String,
    /// Cosine similarity to each anchor, in label order.
    pub cosines: Vec<f64>,
    /// Softmax over `SCORE_TEMPERATURE * cosines`.
    pub softmax_scores: Vec<f64>,
}

/// Argmax of cosine similarity against the anchors; ties break toward the
/// lowest label index.
pub fn nearest_anchor_classify(emb: &Tensor, anchors: &AnchorSet) -> Result<Classification> {
    anchors.validate()?;
    if emb.len() != anchors.anchors.cols() {
        return Err(Error::dim(
            "classify",
            format!(
                "embedding length {} vs anchor width {}",
                emb.len(),
                anchors.anchors.cols()
            ),
        ));
    }
    let norm = emb.norm_l2();
    if norm == 0.0 {
        return Err(Error::DegenerateInput(
            "cannot classify a zero-norm embedding".to_string(),
        ));
    }
    let mut cosines = Vec::with_capacity(anchors.labels.len());
    for i in 0..anchors.labels.len() {
        let row = anchors.anchors.row(i);
        let dot: f64 = row.iter().zip(emb.data()).map(|(a, b)| a * b).sum();
        let anorm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        cosines.push(dot / (anorm * norm));
    }
    let mut best = 0usize;
    for (i, &c) in cosines.iter().enumerate() {
        if c > cosines[best] {
            best = i;
        }
    }
    // stable softmax over scaled cosines
    let max = cosines
        .iter()
        .map(|c| c * SCORE_TEMPERATURE)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cosines
        .iter()
        .map(|c| (c * SCORE_TEMPERATURE - max).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(Classification {
        label_index: best,
        label: anchors.labels[best].clone(),
        cosines,
        softmax_scores: exps.iter().map(|e| e / z).collect(),
    })
}
