use crate::data::AggregationMatrix;
use crate::error::{Error, Result};

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-ln softmax(z)[label]`.
pub fn softmax_ce(z: &[f64], label: usize) -> f64 {
    log_sum_exp(z) - z[label]
}

/// Mean cross-entropy over a batch and its gradient with respect to each row.
pub fn mean_softmax_ce(rows: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = rows.len();
    if m == 0 || labels.len() != m {
        return Err(Error::InvalidArgument(format!("{m} score rows for {} labels", labels.len())));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(m);
    for (z, &l) in rows.iter().zip(labels) {
        if l >= z.len() {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {} outputs", z.len())));
        }
        loss += softmax_ce(z, l);
        let mut g = softmax(z);
        g[l] -= 1.0;
        g.iter_mut().for_each(|v| *v /= m as f64);
        grads.push(g);
    }
    Ok((loss / m as f64, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HierarchicalLossOutput {
    pub total: f64,
    pub subclass_ce: f64,
    pub class_ce: f64,
    pub decay: f64,
}

#[derive(Clone, Debug)]
pub struct HierarchicalLoss {
    pub output: HierarchicalLossOutput,
    /// Gradient of `total` with respect to each row of subclass logits.
    pub grad_p: Vec<Vec<f64>>,
    /// Gradient of `total` with respect to `W` (row-major), without decay.
    pub grad_w: Vec<f64>,
}

/// Joint subclass and class cross-entropy plus weight decay.
///
/// Class scores are `W . p` on the logits; `theta_sq` is the squared norm of
/// the decayed parameters.
pub fn hierarchical_loss(
    p: &[Vec<f64>],
    subclass_labels: &[usize],
    class_labels: &[usize],
    w: &AggregationMatrix,
    alpha: f64,
    beta: f64,
    theta_sq: f64,
) -> Result<HierarchicalLoss> {
    if class_labels.len() != p.len() {
        return Err(Error::InvalidArgument(format!("{} class labels for {} rows", class_labels.len(), p.len())));
    }
    for (i, (&s, &c)) in subclass_labels.iter().zip(class_labels).enumerate() {
        if s >= w.cols() || c >= w.rows() {
            return Err(Error::InvalidArgument(format!("labels ({s}, {c}) of row {i} out of range")));
        }
        if w.parents()[s] != c {
            return Err(Error::InconsistentLabels {
                index: i,
                subclass: s,
                class: c,
            });
        }
    }
    if p.iter().any(|row| row.len() != w.cols()) {
        return Err(Error::InvalidArgument(format!("logit rows must have {} entries", w.cols())));
    }
    let (subclass_ce, mut grad_p) = mean_softmax_ce(p, subclass_labels)?;
    let class_scores: Vec<Vec<f64>> = p.iter().map(|row| w.apply(row)).collect();
    let (class_ce, grad_z) = mean_softmax_ce(&class_scores, class_labels)?;

    let cols = w.cols();
    let mut grad_w = vec![0.0; w.rows() * cols];
    for ((gp, gz), row) in grad_p.iter_mut().zip(&grad_z).zip(p) {
        for (g, back) in gp.iter_mut().zip(w.apply_transpose(gz)) {
            *g += alpha * back;
        }
        for (j, &gzj) in gz.iter().enumerate() {
            for (gw, &ps) in grad_w[j * cols..(j + 1) * cols].iter_mut().zip(row) {
                *gw += alpha * gzj * ps;
            }
        }
    }
    let decay = 0.5 * beta * theta_sq;
    Ok(HierarchicalLoss {
        output: HierarchicalLossOutput {
            total: subclass_ce + alpha * class_ce + decay,
            subclass_ce,
            class_ce,
            decay,
        },
        grad_p,
        grad_w,
    })
}
