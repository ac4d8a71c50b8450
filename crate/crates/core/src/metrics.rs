//! Ranking metrics for scored link predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "scores vs labels",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    Ok(())
}

/// Area under the ROC curve, with tied scores counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks of tie groups
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        rank_sum += mid * order[start..end].iter().filter(|&&k| labels[k]).count() as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision `Σ_k (recall_k - recall_{k-1}) · precision_k` over
/// prefixes of the descending-score ranking. Tied scores keep input order,
/// so the result depends on that order when ties are present.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::InvalidInput(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut recall_prev = 0.0;
    let mut total = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            let recall = hits as f64 / pos as f64;
            total += (recall - recall_prev) * (hits as f64 / (rank + 1) as f64);
            recall_prev = recall;
        }
    }
    Ok(total)
}

/// Summary written by the `evaluate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auc: f64,
    pub ap: f64,
    pub n_test: usize,
    pub elbo_final: Option<f64>,
    pub seed: u64,
}

impl EvaluationReport {
    pub fn new(
        scores: &[f64],
        labels: &[bool],
        elbo_final: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            auc: auc(scores, labels)?,
            ap: average_precision(scores, labels)?,
            n_test: labels.len(),
            elbo_final,
            seed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
