//! Layer-wise relevance propagation for trained dense networks.
//!
//! Relevance starts at the network output (the predicted class's pre-softmax
//! logit, or the regression output) and flows backwards: each input unit
//! receives a share proportional to its contribution a_j * w_jk of every
//! output unit's pre-activation. Denominators are epsilon-stabilized, and
//! each layer's inflow is rescaled to match its outflow so relevance is
//! conserved sample by sample.

use ndarray::{Array1, Array2};

use crate::nn::{NetError, Task, TrainedNetwork};

/// Stabilizer added to redistribution denominators, in the direction of the
/// denominator's sign.
const STABILIZER: f64 = 1e-6;

/// Per-sample relevance scores for every input feature.
///
/// Row i decomposes sample i's `output_score` across the input features;
/// row sums match the score up to the conservation tolerance.
#[derive(Debug, Clone)]
pub struct RelevanceMap {
    pub per_sample: Array2<f64>,
    pub output_score: Array1<f64>,
}

/// Propagates relevance from the network output back to the input features.
pub fn lrp(net: &TrainedNetwork, samples: &Array2<f64>) -> Result<RelevanceMap, NetError> {
    let trace = net.forward_trace(samples)?;
    let layers = net.layers();
    let n = samples.nrows();
    let last = layers.len() - 1;

    let mut relevance = Array2::zeros((n, layers[last].output_width()));
    let mut output_score = Array1::zeros(n);
    match net.config().task {
        Task::Classification { .. } => {
            // source: the predicted class's logit (ties to the lowest index)
            let logits = &trace.pre_activations[last];
            for (i, row) in logits.outer_iter().enumerate() {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                relevance[(i, best)] = row[best];
                output_score[i] = row[best];
            }
        }
        Task::Regression => {
            let out = trace.activations.last().expect("head");
            for i in 0..n {
                relevance[(i, 0)] = out[(i, 0)];
                output_score[i] = out[(i, 0)];
            }
        }
    }

    for l in (0..layers.len()).rev() {
        relevance = redistribute(&trace.activations[l], &layers[l].weights, &relevance);
    }

    Ok(RelevanceMap {
        per_sample: relevance,
        output_score,
    })
}

/// One backward redistribution step across a dense layer.
///
/// Shares are a_j w_jk / (sum_j a_j w_jk + stabilizer); biases take no
/// relevance. The final rescale enforces conservation exactly unless the
/// layer's inflow is degenerate (all-zero or stabilizer-dominated).
fn redistribute(a_in: &Array2<f64>, w: &Array2<f64>, r_out: &Array2<f64>) -> Array2<f64> {
    let (n, d_in) = (a_in.nrows(), a_in.ncols());
    let d_out = w.ncols();
    let mut r_in = Array2::zeros((n, d_in));
    for i in 0..n {
        let a = a_in.row(i);
        let r = r_out.row(i);
        let mut row = r_in.row_mut(i);
        for k in 0..d_out {
            if r[k] == 0.0 {
                continue;
            }
            let mut denom = 0.0;
            for j in 0..d_in {
                denom += a[j] * w[(j, k)];
            }
            let stabilized = denom + STABILIZER * if denom >= 0.0 { 1.0 } else { -1.0 };
            let scale = r[k] / stabilized;
            for j in 0..d_in {
                row[j] += a[j] * w[(j, k)] * scale;
            }
        }
        let s_out: f64 = r.sum();
        let s_in: f64 = row.sum();
        if s_in.abs() > 1e-12 {
            let ratio = s_out / s_in;
            // degenerate denominators would blow the rescale up; leave the
            // raw epsilon-rule shares in that case
            if ratio.abs() < 10.0 {
                for j in 0..d_in {
                    row[j] *= ratio;
                }
            }
        }
    }
    r_in
}

/// Feature indices ordered by mean absolute relevance, descending;
/// ties break toward the lower index.
pub fn rank_features(rmap: &RelevanceMap) -> Vec<usize> {
    let n = rmap.per_sample.nrows().max(1) as f64;
    let mut scored: Vec<(usize, f64)> = rmap
        .per_sample
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| (j, col.iter().map(|v| v.abs()).sum::<f64>() / n))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(j, _)| j).collect()
}

/// Relevance scores as CSV: one column per knot, one row per input feature.
pub fn relevance_csv(rmap: &RelevanceMap, knot_ids: &[String]) -> String {
    let mut out = String::from("feature");
    for id in knot_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for j in 0..rmap.per_sample.ncols() {
        out.push_str(&j.to_string());
        for i in 0..rmap.per_sample.nrows() {
            out.push(',');
            out.push_str(&rmap.per_sample[(i, j)].to_string());
        }
        out.push('\n');
    }
    out
}

/// Companion metadata: maps each relevance row to its feature description.
pub fn relevance_metadata_csv(feature_names: &[String]) -> String {
    let mut out = String::from("row,feature\n");
    for (j, name) in feature_names.iter().enumerate() {
        out.push_str(&format!("{j},{name}\n"));
    }
    out
}
