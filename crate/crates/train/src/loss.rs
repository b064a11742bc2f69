use mcconv_core::{FeatureMap, Vec3};

use crate::error::{Result, TrainError};

fn check_normals(pred: &FeatureMap, target: &[Vec3]) -> Result<()> {
    if pred.channels() != 3 || pred.rows() != target.len() {
        return Err(TrainError::shape(format!(
            "predictions are {}x{}, targets have {} rows",
            pred.rows(),
            pred.channels(),
            target.len()
        )));
    }
    Ok(())
}

fn cosine_term(p: &[f64], n: Vec3, grad: Option<&mut [f64]>) -> f64 {
    let pn = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if pn == 0.0 || nn == 0.0 {
        return 1.0;
    }
    let d = p[0] * n[0] + p[1] * n[1] + p[2] * n[2];
    let cos = d / (pn * nn);
    if let Some(g) = grad {
        for k in 0..3 {
            g[k] = -(n[k] / (pn * nn) - cos * p[k] / (pn * pn));
        }
    }
    1.0 - cos
}

/// Mean cosine distance between predicted and target directions. Rows with
/// a zero-length prediction count as distance 1.
pub fn cosine_loss(pred: &FeatureMap, target: &[Vec3]) -> Result<f64> {
    check_normals(pred, target)?;
    if target.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = target.iter().enumerate().map(|(i, &n)| cosine_term(pred.row(i), n, None)).sum();
    Ok(total / target.len() as f64)
}

/// [`cosine_loss`] and its gradient with respect to the predictions.
pub fn cosine_loss_grad(pred: &FeatureMap, target: &[Vec3]) -> Result<(f64, FeatureMap)> {
    check_normals(pred, target)?;
    let mut grad = FeatureMap::zeros(pred.rows(), 3);
    if target.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / target.len() as f64;
    let mut total = 0.0;
    for (i, &n) in target.iter().enumerate() {
        let g = grad.row_mut(i);
        total += cosine_term(pred.row(i), n, Some(g));
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grad))
}

/// Mean negative log-softmax of the true class, with its gradient.
pub fn cross_entropy_loss(logits: &FeatureMap, labels: &[usize]) -> Result<(f64, FeatureMap)> {
    let classes = logits.channels();
    if logits.rows() != labels.len() {
        return Err(TrainError::shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(TrainError::InvalidLabel { row, label, classes });
    }
    let mut grad = FeatureMap::zeros(logits.rows(), classes);
    if labels.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let z = logits.row(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        total += log_sum - z[label];
        let g = grad.row_mut(i);
        for (k, gk) in g.iter_mut().enumerate() {
            let softmax = (z[k] - log_sum).exp();
            *gk = scale * (softmax - if k == label { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, grad))
}
