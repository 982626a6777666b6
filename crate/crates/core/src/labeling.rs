//! Ground-truth labeling oracles over the causal features and the hidden
//! features. These live on the simulator side: they generate clean labels
//! and relabel points after strategic movement.
//!
//! Stochastic oracles are deterministic given (input, oracle seed, draw
//! seed), so a whole experiment replays exactly.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::mat::{dot, norm2, Matrix};
use crate::models::HypothesisModel;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
}

impl Ellipse {
    pub fn contains(&self, p: &[f64]) -> bool {
        let dx = (p[0] - self.center[0]) / self.semi_axes[0];
        let dy = (p[1] - self.center[1]) / self.semi_axes[1];
        dx * dx + dy * dy <= 1.0
    }
}

/// Label oracle `h*(x_c, u)`; all kinds output labels in {-1, +1}.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelOracle {
    /// Linear score with boundary-localized label noise: the clean sign
    /// flips with probability `flip_scale * exp(-distance / noise_width)`.
    LinearNoisy { w: Vec<f64>, b: f64, noise_width: f64, flip_scale: f64, seed: u64 },
    /// Positive inside the circle, negative outside.
    Circle { center: [f64; 2], radius: f64 },
    /// Negative inside the union of three ellipses, positive outside.
    XorEllipses { ellipses: [Ellipse; 3] },
    /// MLP score sign-flipped with probability decaying in |score|.
    MlpNoisy { net: HypothesisModel, noise_width: f64, flip_scale: f64, seed: u64 },
    /// Linear score with one tricky causal feature: past the threshold
    /// the slope reverses, so "too much" of the feature turns negative.
    LinearTricky { w: Vec<f64>, b: f64, feature_index: usize, threshold: f64, slope: f64 },
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn flip_draw(oracle_seed: u64, draw_seed: u64, p: f64) -> bool {
    let mut rng = seeds::rng(seeds::derive(oracle_seed, draw_seed));
    rng.gen_range(0.0..1.0) < p
}

impl LabelOracle {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Self::LinearNoisy { w, .. } | Self::LinearTricky { w, .. } => Some(w.len()),
            Self::Circle { .. } | Self::XorEllipses { .. } => Some(2),
            Self::MlpNoisy { net, .. } => Some(net.input_dim()),
        }
    }

    /// Draws a label for the point `(x_c, u)`.
    pub fn label(&self, x_c: &[f64], u: &[f64], draw_seed: u64) -> Result<f64> {
        let point: Vec<f64> = x_c.iter().chain(u).copied().collect();
        if let Some(d) = self.input_dim() {
            if point.len() != d {
                return Err(CoreError::DimensionMismatch(format!(
                    "oracle expects dimension {d}, got {}",
                    point.len()
                )));
            }
        }
        Ok(match self {
            Self::LinearNoisy { w, b, noise_width, flip_scale, seed } => {
                let s = dot(w, &point) + b;
                let clean = sign(s);
                let dist = s.abs() / norm2(w);
                let p = flip_scale * (-dist / noise_width).exp();
                if flip_draw(*seed, draw_seed, p) {
                    -clean
                } else {
                    clean
                }
            }
            Self::Circle { center, radius } => {
                let dx = point[0] - center[0];
                let dy = point[1] - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::XorEllipses { ellipses } => {
                if ellipses.iter().any(|e| e.contains(&point)) {
                    -1.0
                } else {
                    1.0
                }
            }
            Self::MlpNoisy { net, noise_width, flip_scale, seed } => {
                let s = net.raw(&point);
                let p = flip_scale * (-s.abs() / noise_width).exp();
                let clean = sign(s);
                if flip_draw(*seed, draw_seed, p) {
                    -clean
                } else {
                    clean
                }
            }
            Self::LinearTricky { w, b, feature_index, threshold, slope } => {
                let mut s = dot(w, &point) + b;
                let xi = x_c[*feature_index];
                if xi > *threshold {
                    s -= slope * (xi - threshold);
                }
                sign(s)
            }
        })
    }

    /// Label after a response: unchanged unless the point actually moved.
    pub fn relabel_after_response(
        &self,
        x_f_c: &[f64],
        u: &[f64],
        original_y: f64,
        moved: bool,
        draw_seed: u64,
    ) -> Result<f64> {
        if moved {
            self.label(x_f_c, u, draw_seed)
        } else {
            Ok(original_y)
        }
    }

    /// Differentiable stand-in for the learned estimate when the oracle
    /// itself drives training: `tanh` of a smooth score whose sign is the
    /// noise-free label, together with its gradient in the causal block.
    pub fn smooth_eval(&self, x_c: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let point: Vec<f64> = x_c.iter().chain(u).copied().collect();
        if let Some(d) = self.input_dim() {
            if point.len() != d {
                return Err(CoreError::DimensionMismatch(format!(
                    "oracle expects dimension {d}, got {}",
                    point.len()
                )));
            }
        }
        let (raw, raw_grad): (f64, Vec<f64>) = match self {
            Self::LinearNoisy { w, b, .. } => (dot(w, &point) + b, w[..x_c.len()].to_vec()),
            Self::Circle { center, radius } => {
                let dx = point[0] - center[0];
                let dy = point[1] - center[1];
                let raw = radius * radius - dx * dx - dy * dy;
                (raw, vec![-2.0 * dx; 1][..x_c.len().min(1)].to_vec())
            }
            Self::XorEllipses { ellipses } => {
                // negative inside the union: raw = min_e q_e(x) - 1 with
                // the active ellipse's gradient (almost everywhere)
                let mut best = f64::INFINITY;
                let mut grad = vec![0.0; x_c.len()];
                for e in ellipses {
                    let qx = (point[0] - e.center[0]) / e.semi_axes[0];
                    let qy = (point[1] - e.center[1]) / e.semi_axes[1];
                    let q = qx * qx + qy * qy;
                    if q < best {
                        best = q;
                        if !x_c.is_empty() {
                            grad[0] = 2.0 * qx / e.semi_axes[0];
                        }
                    }
                }
                (best - 1.0, grad)
            }
            Self::MlpNoisy { net, .. } => {
                let eval = net.eval(&point);
                // eval already applies tanh; recover the raw gradient path
                // by dividing the squash slope back out is unnecessary --
                // return the squashed value directly below instead
                return Ok((eval.value, eval.input_grad[..x_c.len()].to_vec()));
            }
            Self::LinearTricky { w, b, feature_index, threshold, slope } => {
                let mut raw = dot(w, &point) + b;
                let mut grad = w[..x_c.len()].to_vec();
                if x_c[*feature_index] > *threshold {
                    raw -= slope * (x_c[*feature_index] - threshold);
                    grad[*feature_index] -= slope;
                }
                (raw, grad)
            }
        };
        let value = raw.tanh();
        let slope = 1.0 - value * value;
        Ok((value, raw_grad.iter().map(|g| slope * g).collect()))
    }
}

/// Which semi-synthetic oracle to fit on raw data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemiSyntheticKind {
    MlpNoisy,
    LinearTricky,
}

/// Hyperparameters for fitting a semi-synthetic oracle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OracleFitParams {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// mlp_noisy hidden layout.
    pub hidden_widths: Vec<usize>,
    pub noise_width: f64,
    pub flip_scale: f64,
    /// linear_tricky mechanism parameters.
    pub tricky_feature: usize,
    pub threshold: f64,
    pub slope: f64,
    /// When set, the threshold is calibrated so the tricky mechanism
    /// flips approximately this fraction of the original labels.
    pub calibrate_flip_rate: Option<f64>,
}

impl Default for OracleFitParams {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 100,
            batch: 64,
            hidden_widths: vec![10, 10, 10],
            noise_width: 0.5,
            flip_scale: 0.3,
            tricky_feature: 0,
            threshold: 0.05,
            slope: 20.0,
            calibrate_flip_rate: None,
        }
    }
}

fn sgd_log_loss(
    model: &mut HypothesisModel,
    features: &Matrix,
    labels: &[f64],
    lr: f64,
    epochs: usize,
    batch: usize,
    seed: u64,
) -> Result<()> {
    use rand::seq::SliceRandom;
    let n = features.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let pcount = model.param_count();
    let mut grads = vec![0.0; pcount];
    for epoch in 0..epochs {
        order.shuffle(&mut seeds::rng(seeds::derive2(seed, seeds::salt::H_TRAIN, epoch as u64)));
        for chunk in order.chunks(batch.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let x = features.row(i);
                let z = model.raw(x);
                // log loss through tanh: p = sigma(2z), target q = (1+y)/2
                let p = crate::cost::sigmoid(2.0 * z);
                let q = (1.0 + labels[i]) / 2.0;
                let upstream = 2.0 * (p - q);
                if !upstream.is_finite() {
                    return Err(CoreError::Divergence("non-finite loss gradient".into()));
                }
                model.accumulate_param_grad(x, upstream, &mut grads);
            }
            let mut params = model.params();
            let scale = lr / chunk.len() as f64;
            for (p, g) in params.iter_mut().zip(&grads) {
                *p -= scale * g;
            }
            model.set_params(&params);
        }
    }
    Ok(())
}

fn tricky_flip_rate(
    w: &[f64],
    b: f64,
    features: &Matrix,
    causal_dim: usize,
    feature_index: usize,
    threshold: f64,
    slope: f64,
) -> f64 {
    let mut flips = 0usize;
    for row in features.iter_rows() {
        let s = dot(w, row) + b;
        let xi = row[feature_index.min(causal_dim - 1)];
        let mut s2 = s;
        if xi > threshold {
            s2 -= slope * (xi - threshold);
        }
        if sign(s) != sign(s2) {
            flips += 1;
        }
    }
    flips as f64 / features.rows() as f64
}

/// Fits the labeling oracle on raw `(x_c, u)` columns against original
/// labels, then wraps it with the stochastic or tricky mechanism.
pub fn fit_semi_synthetic_oracle(
    features_cu: &Matrix,
    labels: &[f64],
    causal_dim: usize,
    kind: SemiSyntheticKind,
    params: &OracleFitParams,
    seed: u64,
) -> Result<LabelOracle> {
    if features_cu.rows() == 0 {
        return Err(CoreError::EmptyData);
    }
    if features_cu.rows() != labels.len() {
        return Err(CoreError::DimensionMismatch("labels do not match rows".into()));
    }
    match kind {
        SemiSyntheticKind::MlpNoisy => {
            let mut net = HypothesisModel::mlp(
                features_cu.cols(),
                &params.hidden_widths,
                seeds::derive(seed, seeds::salt::H_INIT),
            );
            sgd_log_loss(&mut net, features_cu, labels, params.lr, params.epochs, params.batch, seed)?;
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(CoreError::Divergence("non-finite oracle parameters".into()));
            }
            Ok(LabelOracle::MlpNoisy {
                net,
                noise_width: params.noise_width,
                flip_scale: params.flip_scale,
                seed: seeds::derive(seed, seeds::salt::ORACLE),
            })
        }
        SemiSyntheticKind::LinearTricky => {
            // degree-1 polynomial model is a linear score
            let mut g = HypothesisModel::polynomial(features_cu.cols(), 1);
            sgd_log_loss(&mut g, features_cu, labels, params.lr, params.epochs, params.batch, seed)?;
            // read the linear coefficients off the fitted score
            let b = g.raw(&vec![0.0; features_cu.cols()]);
            let w: Vec<f64> = (0..features_cu.cols())
                .map(|i| {
                    let mut e = vec![0.0; features_cu.cols()];
                    e[i] = 1.0;
                    g.raw(&e) - b
                })
                .collect();
            if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
                return Err(CoreError::Divergence("non-finite oracle parameters".into()));
            }
            let mut threshold = params.threshold;
            if let Some(rate) = params.calibrate_flip_rate {
                // flip rate decreases as the threshold grows; bisect on the
                // empirical rate over the training sample
                let (mut lo, mut hi) = (-3.0f64, 3.0f64);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let r = tricky_flip_rate(
                        &w,
                        b,
                        features_cu,
                        causal_dim,
                        params.tricky_feature,
                        mid,
                        params.slope,
                    );
                    if r > rate {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                threshold = 0.5 * (lo + hi);
            }
            Ok(LabelOracle::LinearTricky {
                w,
                b,
                feature_index: params.tricky_feature.min(causal_dim.saturating_sub(1)),
                threshold,
                slope: params.slope,
            })
        }
    }
}
