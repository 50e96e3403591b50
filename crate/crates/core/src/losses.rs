//! Softmax cross-entropy family over a classifier head.
//!
//! Four variants, each returning the batch-mean loss with its analytic
//! gradient with respect to the raw (un-normalized) features:
//!
//! | kind             | logit for class `j`                     |
//! |------------------|-----------------------------------------|
//! | `PlainCe`        | `w_j . f + b_j`                         |
//! | `FixedSoftmax`   | `w_j/|w_j| . f`                         |
//! | `NormScaled`     | `kappa * cos(theta_j)`                  |
//! | `AngularMargin`  | as above, target uses `cos(theta_y + m)`|
//!
//! The `*_rows` entry points also produce the gradient with respect to the
//! classifier rows, used when the head is trainable.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::polytope::ClassifierWeights;
use crate::{Error, Result};

/// Feature scale on the hypersphere. Fixed, never trained.
pub const DEFAULT_KAPPA: f64 = 30.0;
/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` before `acos`.
pub const COS_CLAMP: f64 = 1e-7;
/// Lower bound on `sin(theta)` in the margin derivative.
pub const SIN_FLOOR: f64 = 1e-7;
/// Features with norm at or below this are rejected by the normalized losses.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    PlainCe,
    FixedSoftmax,
    NormScaled { kappa: f64 },
    AngularMargin { kappa: f64, m: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::PlainCe | LossKind::FixedSoftmax => Ok(()),
            LossKind::NormScaled { kappa } => check_kappa(kappa),
            LossKind::AngularMargin { kappa, m } => {
                check_kappa(kappa)?;
                check_margin(m)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::PlainCe => "plain_ce",
            LossKind::FixedSoftmax => "fixed_softmax",
            LossKind::NormScaled { .. } => "norm_scaled",
            LossKind::AngularMargin { .. } => "angular_margin",
        }
    }

    fn normalizes_features(&self) -> bool {
        matches!(self, LossKind::NormScaled { .. } | LossKind::AngularMargin { .. })
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa.is_finite() && kappa > 0.0 {
        Ok(())
    } else {
        Err(Error::LossParameter(format!("kappa must be positive, got {kappa}")))
    }
}

fn check_margin(m: f64) -> Result<()> {
    if (0.0..PI).contains(&m) {
        Ok(())
    } else {
        Err(Error::Margin(m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    /// Mean of `per_sample`.
    pub value: f64,
    /// `dL/df`, same shape as the feature batch. For [`plain_ce`] this is
    /// the gradient with respect to the logits instead.
    pub grad_features: Array2<f64>,
    pub per_sample: Vec<f64>,
    /// `dL/dW` for the classifier rows, when requested.
    pub grad_weights: Option<Array2<f64>>,
}

/// Classifier scores `z[n][j] = w_j . f_n + b_j`.
pub fn logits(
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    bias: Option<ArrayView1<'_, f64>>,
) -> Result<Array2<f64>> {
    check_features(features, w.dim())?;
    let mut z = features.dot(&w.rows().t());
    if let Some(b) = bias {
        if b.len() != w.num_classes() {
            return Err(Error::Dimension(format!(
                "bias has length {}, expected {}",
                b.len(),
                w.num_classes()
            )));
        }
        z += &b;
    }
    Ok(z)
}

/// Mean cross-entropy of `softmax(logits)` against `labels`. The returned
/// gradient is with respect to the logits: `(softmax - onehot) / N`.
pub fn plain_ce(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossResult> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    let (per_sample, grad) = softmax_xent(logits, labels);
    Ok(finish(per_sample, grad, None))
}

/// Cross-entropy with unit-normalized fixed weights, zero bias and raw features.
pub fn fixed_softmax_loss(
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<LossResult> {
    evaluate(LossKind::FixedSoftmax, w, features, labels)
}

/// Cross-entropy over `kappa * cos(theta_j)`.
pub fn norm_scaled_loss(
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    kappa: f64,
) -> Result<LossResult> {
    evaluate(LossKind::NormScaled { kappa }, w, features, labels)
}

/// Additive angular margin: the target logit becomes `kappa * cos(theta_y + m)`.
/// Once `theta_y + m >= pi` it is `kappa * (cos(theta_y) + cos(m) - 1)`, which
/// meets `-kappa` at the boundary and keeps decreasing in `theta_y`.
pub fn margin_loss(
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    kappa: f64,
    m: f64,
) -> Result<LossResult> {
    evaluate(LossKind::AngularMargin { kappa, m }, w, features, labels)
}

/// The largest margin the polytope admits: its vertex angle `phi`.
pub fn maximal_margin(w: &ClassifierWeights) -> f64 {
    w.phi()
}

/// Evaluates `kind` against fixed polytope weights (no weight gradient).
pub fn evaluate(
    kind: LossKind,
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<LossResult> {
    evaluate_rows(kind, w.rows().view(), features, labels, false)
}

/// Evaluates `kind` against arbitrary classifier rows.
///
/// `PlainCe` uses the rows as given (zero bias); the other kinds normalize
/// each row first. With `weight_grad` set, [`LossResult::grad_weights`]
/// holds `dL/dW` with respect to the rows as passed in.
pub fn evaluate_rows(
    kind: LossKind,
    rows: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    weight_grad: bool,
) -> Result<LossResult> {
    kind.validate()?;
    let (k, d) = rows.dim();
    check_features(features, d)?;
    check_labels(labels, features.nrows(), k)?;

    if kind == LossKind::PlainCe {
        let z = features.dot(&rows.t());
        let (per_sample, dz) = softmax_xent(z.view(), labels);
        let grad_f = dz.dot(&rows);
        let grad_w = weight_grad.then(|| dz.t().dot(&features));
        return Ok(finish(per_sample, grad_f, grad_w));
    }

    let (unit_rows, row_norms) = normalize_rows(rows)
        .map_err(|(row, norm)| Error::Structure(format!("classifier row {row} has norm {norm:e}")))?;

    let (per_sample, grad_f, grad_unit_rows) = if kind.normalizes_features() {
        let (unit_f, f_norms) = normalize_rows(features)
            .map_err(|(row, norm)| Error::DegenerateFeature { row, norm })?;
        let cos = unit_f.dot(&unit_rows.t());
        let (per_sample, dcos) = match kind {
            LossKind::NormScaled { kappa } => {
                let (per_sample, ds) = softmax_xent((&cos * kappa).view(), labels);
                (per_sample, ds * kappa)
            }
            LossKind::AngularMargin { kappa, m } => margin_scores(cos, labels, kappa, m),
            _ => unreachable!(),
        };
        let grad_u = dcos.dot(&unit_rows);
        let grad_f = project_out_radial(&unit_f, &f_norms, grad_u);
        let grad_w = weight_grad.then(|| dcos.t().dot(&unit_f));
        (per_sample, grad_f, grad_w)
    } else {
        let z = features.dot(&unit_rows.t());
        let (per_sample, dz) = softmax_xent(z.view(), labels);
        let grad_f = dz.dot(&unit_rows);
        let grad_w = weight_grad.then(|| dz.t().dot(&features));
        (per_sample, grad_f, grad_w)
    };

    let grad_w = grad_unit_rows.map(|g| project_out_radial(&unit_rows, &row_norms, g));
    Ok(finish(per_sample, grad_f, grad_w))
}

/// Scores with the additive margin on the target cosine, and their
/// gradient with respect to the cosines.
fn margin_scores(
    cos: Array2<f64>,
    labels: &[usize],
    kappa: f64,
    m: f64,
) -> (Vec<f64>, Array2<f64>) {
    let (cos_m, sin_m) = (m.cos(), m.sin());
    let mut scores = &cos * kappa;
    // d(target score) / d(cos theta_y), per sample
    let mut target_slope = Vec::with_capacity(labels.len());
    for (n, &y) in labels.iter().enumerate() {
        let c = cos[[n, y]];
        let cc = c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
        let theta = cc.acos();
        if theta + m >= PI {
            // past pi - m, continue from -kappa along cos(theta) so the
            // target still has a gradient
            scores[[n, y]] = kappa * (c + cos_m - 1.0);
            target_slope.push(kappa);
        } else {
            // cos(theta + m) = cos(theta) cos(m) - sin(theta) sin(m)
            let sin_theta = (1.0 - c * c).max(0.0).sqrt();
            scores[[n, y]] = kappa * (c * cos_m - sin_theta * sin_m);
            let sin_clamped = (1.0 - cc * cc).sqrt().max(SIN_FLOOR);
            target_slope.push(kappa * (cos_m + sin_m * cc / sin_clamped));
        }
    }
    let (per_sample, ds) = softmax_xent(scores.view(), labels);
    let mut dcos = ds * kappa;
    for (n, &y) in labels.iter().enumerate() {
        dcos[[n, y]] *= target_slope[n] / kappa;
    }
    (per_sample, dcos)
}

/// Per-sample `-log softmax(z)[y]` and `(softmax - onehot) / N`.
///
/// Uses the max-shifted form `(z_max - z_y) + log(1 + sum_{j != argmax} e^{z_j - z_max})`
/// so tiny losses keep their precision.
fn softmax_xent(z: ArrayView2<'_, f64>, labels: &[usize]) -> (Vec<f64>, Array2<f64>) {
    let n = z.nrows();
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::<f64>::zeros(z.raw_dim());
    let mut per_sample = Vec::with_capacity(n);
    for ((row, mut g), &y) in z.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        let (arg, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let mut rest = 0.0;
        for (j, (&v, gj)) in row.iter().zip(g.iter_mut()).enumerate() {
            let e = (v - max).exp();
            *gj = e;
            if j != arg {
                rest += e;
            }
        }
        let log_norm = if rest < 0.5 { rest.ln_1p() } else { (1.0 + rest).ln() };
        per_sample.push((max - row[y]) + log_norm);
        let total = 1.0 + rest;
        g.mapv_inplace(|e| e / total * inv_n);
        g[y] -= inv_n;
    }
    (per_sample, grad)
}

fn finish(per_sample: Vec<f64>, grad_features: Array2<f64>, grad_weights: Option<Array2<f64>>) -> LossResult {
    let value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    LossResult {
        value,
        grad_features,
        per_sample,
        grad_weights,
    }
}

/// Unit-normalizes every row; on failure returns the first offending row and its norm.
fn normalize_rows(x: ArrayView2<'_, f64>) -> std::result::Result<(Array2<f64>, Array1<f64>), (usize, f64)> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some((i, &nrm)) = norms.iter().enumerate().find(|(_, &v)| v.is_nan() || v <= NORM_FLOOR) {
        return Err((i, nrm));
    }
    let unit = &x / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Chains a gradient w.r.t. `u = x/|x|` back to `x`: `(g - (g.u) u) / |x|`.
fn project_out_radial(unit: &Array2<f64>, norms: &Array1<f64>, mut grad: Array2<f64>) -> Array2<f64> {
    for ((mut g, u), &nrm) in grad.outer_iter_mut().zip(unit.outer_iter()).zip(norms) {
        let radial = g.dot(&u);
        g.scaled_add(-radial, &u);
        g /= nrm;
    }
    grad
}

fn check_features(features: ArrayView2<'_, f64>, dim: usize) -> Result<()> {
    if features.ncols() != dim {
        return Err(Error::Dimension(format!(
            "features have {} columns, classifier expects {dim}",
            features.ncols()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension(format!("{} labels for {rows} samples", labels.len())));
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(Error::Label { label, classes }),
        None => Ok(()),
    }
}

/// Central-difference check of `grad_features` on every feature coordinate.
///
/// Returns `max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(
    kind: LossKind,
    w: &ClassifierWeights,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    step: f64,
) -> Result<f64> {
    let analytic = evaluate(kind, w, features, labels)?.grad_features;
    let mut probe = features.to_owned();
    let mut worst: f64 = 0.0;
    for idx in ndarray::indices(features.dim()) {
        let orig = probe[idx];
        // row n only moves sample n, so difference its loss alone: same
        // derivative, far less cancellation than on the batch mean
        let n = idx.0;
        probe[idx] = orig + step;
        let plus = evaluate(kind, w, probe.view(), labels)?.per_sample[n];
        probe[idx] = orig - step;
        let minus = evaluate(kind, w, probe.view(), labels)?.per_sample[n];
        probe[idx] = orig;
        let numeric = (plus - minus) / (2.0 * step) / labels.len() as f64;
        let a = analytic[idx];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
    }
    Ok(worst)
}
