//! Proxy losses and the full strategic training objective.
//!
//! The strategic hinge absorbs the maximal purchasable score gain into
//! its margin, so it needs no explicit response computation and stays
//! differentiable. The full objective combines it with a soft updated
//! label (the label estimate gated by the soft movement indicator) and
//! an optional exploration regularizer that pushes responses toward
//! low-density regions of the accumulated data.
//!
//! Gradients are exact on each smooth branch: the hinge kink takes
//! subgradient zero, and the movement-affordability threshold is the one
//! genuine discontinuity (points switch branches there).

use crate::cost::{soft_move_from_cost, CostModel, ResponseDirection};
use crate::data::FeaturePartition;
use crate::density::DensityModel;
use crate::error::{CoreError, Result};
use crate::labeling::LabelOracle;
use crate::mat::{dot, Matrix};
use crate::models::{HypothesisModel, LinearModel};

/// Scalar loss with its gradient in the classifier parameters.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

/// Plain hinge `max(0, 1 - y (w^T x + b))`, subgradient 0 at the kink.
pub fn hinge(f: &LinearModel, x: &[f64], y: f64) -> LossEval {
    let m = y * f.score(x);
    if 1.0 - m > 0.0 {
        LossEval {
            loss: 1.0 - m,
            grad_w: x.iter().map(|xi| -y * xi).collect(),
            grad_b: -y,
        }
    } else {
        LossEval { loss: 0.0, grad_w: vec![0.0; x.len()], grad_b: 0.0 }
    }
}

/// Strategic hinge `max(0, 1 - y (w^T x + b + r(w)))` with
/// `r(w) = sqrt(2 w^T Q^{-1} w)`, the maximal score gain a user can buy
/// at cost 2. Accepts soft targets in `[-1, 1]`.
pub fn strategic_hinge(f: &LinearModel, cost: &CostModel, x: &[f64], y_target: f64) -> LossEval {
    let r = cost.score_gain(&f.w);
    let m = y_target * (f.score(x) + r);
    if 1.0 - m > 0.0 {
        let grad_r = cost.score_gain_grad(&f.w);
        LossEval {
            loss: 1.0 - m,
            grad_w: x.iter().zip(&grad_r).map(|(xi, ri)| -y_target * (xi + ri)).collect(),
            grad_b: -y_target,
        }
    } else {
        LossEval { loss: 0.0, grad_w: vec![0.0; x.len()], grad_b: 0.0 }
    }
}

/// Soft updated label `y + (h(x_c^f, x_r) - y) mu(x, x^f)`.
#[derive(Debug, Clone)]
pub struct SoftLabel {
    pub y_tilde: f64,
    pub x_f: Vec<f64>,
    pub moved: bool,
    pub mu: f64,
}

/// Forward-only soft label; the gradient path lives in [`cserm_objective`].
pub fn soft_label(
    h: &HypothesisModel,
    f: &LinearModel,
    cost: &CostModel,
    tau: f64,
    x: &[f64],
    y: f64,
    partition: &FeaturePartition,
    direction: ResponseDirection,
) -> Result<SoftLabel> {
    let sample = mover_geometry(f, cost, x, direction)?;
    match sample {
        None => Ok(SoftLabel { y_tilde: y, x_f: x.to_vec(), moved: false, mu: 0.0 }),
        Some(g) => {
            let sm = soft_move_from_cost(g.cost, tau);
            let h_in = hybrid_input(&g.x_f, x, partition);
            let h_val = h.value(&h_in);
            Ok(SoftLabel {
                y_tilde: y + (h_val - y) * sm.mu,
                x_f: g.x_f,
                moved: true,
                mu: sm.mu,
            })
        }
    }
}

/// `(x_c^f ++ x_r)`: moved causal block, original correlative block,
/// in partition order — the estimate's input convention.
pub fn hybrid_input(x_f: &[f64], x: &[f64], partition: &FeaturePartition) -> Vec<f64> {
    partition
        .causal()
        .iter()
        .map(|&j| x_f[j])
        .chain(partition.correlative().iter().map(|&j| x[j]))
        .collect()
}

/// Geometry of an affordable move, with everything the chain rule needs.
struct MoverGeometry {
    x_f: Vec<f64>,
    cost: f64,
    /// movement was x_f = x - beta * v
    v: Vec<f64>,
    beta: f64,
    dbeta_dw: Vec<f64>,
    dbeta_db: f64,
    dcost_dw: Vec<f64>,
    dcost_db: f64,
    direction: ResponseDirection,
}

/// Returns `None` for non-movers: already positive, zero weights (no
/// boundary to move to), or candidate cost >= 2.
fn mover_geometry(
    f: &LinearModel,
    cost: &CostModel,
    x: &[f64],
    direction: ResponseDirection,
) -> Result<Option<MoverGeometry>> {
    if x.len() != f.dim() || !cost.dim_matches(x.len()) {
        return Err(CoreError::DimensionMismatch(format!(
            "point of dimension {} against classifier of dimension {}",
            x.len(),
            f.dim()
        )));
    }
    let s = f.score(x);
    if s >= 0.0 {
        return Ok(None);
    }
    let (v, denom, ddenom_dw, gq, dgq_dw): (Vec<f64>, f64, Vec<f64>, f64, Vec<f64>) =
        match direction {
            ResponseDirection::EuclideanNormal => {
                let n2 = dot(&f.w, &f.w);
                if n2 == 0.0 {
                    return Ok(None);
                }
                let qw = cost.q_mul(&f.w);
                let gq = dot(&f.w, &qw);
                let dgq: Vec<f64> = qw.iter().map(|v| 2.0 * v).collect();
                (f.w.clone(), n2, f.w.iter().map(|v| 2.0 * v).collect(), gq, dgq)
            }
            ResponseDirection::QOptimal => {
                let qi = cost.q_inv_mul(&f.w);
                let g = dot(&f.w, &qi);
                if g == 0.0 {
                    return Ok(None);
                }
                let dg: Vec<f64> = qi.iter().map(|v| 2.0 * v).collect();
                (qi.clone(), g, dg.clone(), g, dg)
            }
        };
    let beta = s / denom;
    let c = beta * beta * gq;
    if c >= 2.0 {
        return Ok(None);
    }
    let x_f: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi - beta * vi).collect();
    let dbeta_dw: Vec<f64> = x
        .iter()
        .zip(&ddenom_dw)
        .map(|(xi, dd)| xi / denom - s * dd / (denom * denom))
        .collect();
    let dbeta_db = 1.0 / denom;
    let dcost_dw: Vec<f64> = dbeta_dw
        .iter()
        .zip(&dgq_dw)
        .map(|(db, dg)| 2.0 * beta * gq * db + beta * beta * dg)
        .collect();
    let dcost_db = 2.0 * beta * gq * dbeta_db;
    Ok(Some(MoverGeometry {
        x_f,
        cost: c,
        v,
        beta,
        dbeta_dw,
        dbeta_db,
        dcost_dw,
        dcost_db,
        direction,
    }))
}

impl MoverGeometry {
    /// Pulls a gradient in `x^f` (observed space) back through the
    /// movement map into `(w, b)`. The input must be zero on coordinates
    /// that do not flow through the response.
    fn pullback(&self, cost: &CostModel, g_xf: &[f64]) -> (Vec<f64>, f64) {
        let gv = dot(g_xf, &self.v);
        let m: Vec<f64> = match self.direction {
            ResponseDirection::EuclideanNormal => g_xf.to_vec(),
            ResponseDirection::QOptimal => cost.q_inv_mul(g_xf),
        };
        let grad_w: Vec<f64> = self
            .dbeta_dw
            .iter()
            .zip(&m)
            .map(|(db, mi)| -gv * db - self.beta * mi)
            .collect();
        (grad_w, -gv * self.dbeta_db)
    }
}

/// Configuration shared by the strategic objectives.
#[derive(Clone)]
pub struct ObjectiveConfig<'a> {
    pub tau: f64,
    pub lambda: f64,
    pub cost: &'a CostModel,
    pub partition: &'a FeaturePartition,
    pub l2_f: f64,
    pub direction: ResponseDirection,
}

fn add_l2(f: &LinearModel, l2: f64, eval: &mut LossEval) {
    if l2 > 0.0 {
        eval.loss += l2 * dot(&f.w, &f.w);
        for (g, w) in eval.grad_w.iter_mut().zip(&f.w) {
            *g += 2.0 * l2 * w;
        }
    }
}

/// Mean strategic hinge on clean labels plus l2 (the strategic ERM loss).
pub fn serm_objective(
    f: &LinearModel,
    cost: &CostModel,
    features: &Matrix,
    labels: &[f64],
    l2_f: f64,
) -> Result<LossEval> {
    let all: Vec<usize> = (0..features.rows()).collect();
    serm_objective_batch(f, cost, features, labels, l2_f, &all)
}

pub fn serm_objective_batch(
    f: &LinearModel,
    cost: &CostModel,
    features: &Matrix,
    labels: &[f64],
    l2_f: f64,
    idx: &[usize],
) -> Result<LossEval> {
    if idx.is_empty() {
        return Err(CoreError::EmptyData);
    }
    let mut total = LossEval { loss: 0.0, grad_w: vec![0.0; f.dim()], grad_b: 0.0 };
    for &i in idx {
        let e = strategic_hinge(f, cost, features.row(i), labels[i]);
        total.loss += e.loss;
        crate::mat::axpy(1.0, &e.grad_w, &mut total.grad_w);
        total.grad_b += e.grad_b;
    }
    let n = idx.len() as f64;
    total.loss /= n;
    total.grad_w.iter_mut().for_each(|g| *g /= n);
    total.grad_b /= n;
    add_l2(f, l2_f, &mut total);
    Ok(total)
}

/// Mean plain hinge on clean labels plus l2 (the ERM loss).
pub fn erm_objective(
    f: &LinearModel,
    features: &Matrix,
    labels: &[f64],
    l2_f: f64,
) -> Result<LossEval> {
    let all: Vec<usize> = (0..features.rows()).collect();
    erm_objective_batch(f, features, labels, l2_f, &all)
}

pub fn erm_objective_batch(
    f: &LinearModel,
    features: &Matrix,
    labels: &[f64],
    l2_f: f64,
    idx: &[usize],
) -> Result<LossEval> {
    if idx.is_empty() {
        return Err(CoreError::EmptyData);
    }
    let mut total = LossEval { loss: 0.0, grad_w: vec![0.0; f.dim()], grad_b: 0.0 };
    for &i in idx {
        let e = hinge(f, features.row(i), labels[i]);
        total.loss += e.loss;
        crate::mat::axpy(1.0, &e.grad_w, &mut total.grad_w);
        total.grad_b += e.grad_b;
    }
    let n = idx.len() as f64;
    total.loss /= n;
    total.grad_w.iter_mut().for_each(|g| *g /= n);
    total.grad_b /= n;
    add_l2(f, l2_f, &mut total);
    Ok(total)
}

/// The full strategic objective on clean data: strategic hinge against
/// the soft updated label, plus `lambda` times the mean log density of
/// the accumulated-data model at the hybrid response point, plus l2.
///
/// `h` is frozen; gradients flow through the response geometry, the soft
/// movement gate, the estimate's input, and the density query.
pub fn cserm_objective(
    f: &LinearModel,
    h: &HypothesisModel,
    q_hat: Option<&DensityModel>,
    features: &Matrix,
    labels: &[f64],
    cfg: &ObjectiveConfig,
) -> Result<LossEval> {
    let all: Vec<usize> = (0..features.rows()).collect();
    cserm_objective_batch(f, h, q_hat, features, labels, cfg, &all)
}

pub fn cserm_objective_batch(
    f: &LinearModel,
    h: &HypothesisModel,
    q_hat: Option<&DensityModel>,
    features: &Matrix,
    labels: &[f64],
    cfg: &ObjectiveConfig,
    idx: &[usize],
) -> Result<LossEval> {
    if idx.is_empty() {
        return Err(CoreError::EmptyData);
    }
    let d = f.dim();
    let use_reg = cfg.lambda != 0.0 && q_hat.is_some();
    let mut total = LossEval { loss: 0.0, grad_w: vec![0.0; d], grad_b: 0.0 };
    let mut reg_sum = 0.0;
    let mut reg_gw = vec![0.0; d];
    let mut reg_gb = 0.0;

    for &i in idx {
        let (x, y) = (features.row(i), labels[i]);
        let geometry = mover_geometry(f, cfg.cost, x, cfg.direction)?;
        let r = cfg.cost.score_gain(&f.w);
        let s = f.score(x);

        match &geometry {
            None => {
                // non-mover: target is the clean label, response is x itself
                let m = y * (s + r);
                if 1.0 - m > 0.0 {
                    total.loss += 1.0 - m;
                    let grad_r = cfg.cost.score_gain_grad(&f.w);
                    for j in 0..d {
                        total.grad_w[j] += -y * (x[j] + grad_r[j]);
                    }
                    total.grad_b += -y;
                }
                if use_reg {
                    reg_sum += q_hat.unwrap().log_density(x);
                }
            }
            Some(g) => {
                let sm = soft_move_from_cost(g.cost, cfg.tau);
                let h_in = hybrid_input(&g.x_f, x, cfg.partition);
                let h_eval = h.eval(&h_in);
                let y_tilde = y + (h_eval.value - y) * sm.mu;

                // d y_tilde / d theta: through h's causal input and mu(c)
                let mut h_grad_obs = vec![0.0; d];
                for (k, &j) in cfg.partition.causal().iter().enumerate() {
                    h_grad_obs[j] = h_eval.input_grad[k];
                }
                let (pull_w, pull_b) = g.pullback(cfg.cost, &h_grad_obs);
                let mut dyt_dw: Vec<f64> = pull_w.iter().map(|p| sm.mu * p).collect();
                let mut dyt_db = sm.mu * pull_b;
                let hm = h_eval.value - y;
                for j in 0..d {
                    dyt_dw[j] += hm * sm.dmu_dc * g.dcost_dw[j];
                }
                dyt_db += hm * sm.dmu_dc * g.dcost_db;

                let m = y_tilde * (s + r);
                if 1.0 - m > 0.0 {
                    total.loss += 1.0 - m;
                    let grad_r = cfg.cost.score_gain_grad(&f.w);
                    for j in 0..d {
                        total.grad_w[j] += -y_tilde * (x[j] + grad_r[j]) - (s + r) * dyt_dw[j];
                    }
                    total.grad_b += -y_tilde - (s + r) * dyt_db;
                }

                if use_reg {
                    let query = hybrid_observed(&g.x_f, x, cfg.partition);
                    let (lq, lq_grad) = q_hat.unwrap().log_density_grad(&query);
                    reg_sum += lq;
                    // only the causal coordinates of the query move with f
                    let mut lq_causal = vec![0.0; d];
                    for &j in cfg.partition.causal() {
                        lq_causal[j] = lq_grad[j];
                    }
                    let (rw, rb) = g.pullback(cfg.cost, &lq_causal);
                    crate::mat::axpy(1.0, &rw, &mut reg_gw);
                    reg_gb += rb;
                }
            }
        }
    }

    let n = idx.len() as f64;
    total.loss /= n;
    total.grad_w.iter_mut().for_each(|g| *g /= n);
    total.grad_b /= n;
    if use_reg {
        total.loss += cfg.lambda * reg_sum / n;
        for j in 0..d {
            total.grad_w[j] += cfg.lambda * reg_gw[j] / n;
        }
        total.grad_b += cfg.lambda * reg_gb / n;
    }
    add_l2(f, cfg.l2_f, &mut total);
    Ok(total)
}

/// The hybrid point `(x_c^f, x_r)` laid out in observed column order,
/// as the density model expects.
pub fn hybrid_observed(x_f: &[f64], x: &[f64], partition: &FeaturePartition) -> Vec<f64> {
    let mut out = x.to_vec();
    for &j in partition.causal() {
        out[j] = x_f[j];
    }
    out
}

/// The strategic objective with the labeling function itself standing in
/// for the learned estimate (the information-unlimited benchmark): the
/// soft target interpolates toward the exact post-response label,
/// `y + (y^f - y) mu`. The exact label is piecewise constant in the
/// parameters, so the target's gradient flows through the movement gate
/// only.
#[allow(clippy::too_many_arguments)]
pub fn oracle_objective(
    f: &LinearModel,
    oracle: &LabelOracle,
    hidden: &Matrix,
    q_hat: Option<&DensityModel>,
    features: &Matrix,
    labels: &[f64],
    draw_seed: u64,
    cfg: &ObjectiveConfig,
) -> Result<LossEval> {
    let all: Vec<usize> = (0..features.rows()).collect();
    oracle_objective_batch(f, oracle, hidden, q_hat, features, labels, draw_seed, cfg, &all)
}

#[allow(clippy::too_many_arguments)]
pub fn oracle_objective_batch(
    f: &LinearModel,
    oracle: &LabelOracle,
    hidden: &Matrix,
    q_hat: Option<&DensityModel>,
    features: &Matrix,
    labels: &[f64],
    draw_seed: u64,
    cfg: &ObjectiveConfig,
    idx: &[usize],
) -> Result<LossEval> {
    if idx.is_empty() {
        return Err(CoreError::EmptyData);
    }
    let d = f.dim();
    let use_reg = cfg.lambda != 0.0 && q_hat.is_some();
    let mut total = LossEval { loss: 0.0, grad_w: vec![0.0; d], grad_b: 0.0 };
    let mut reg_sum = 0.0;
    let mut reg_gw = vec![0.0; d];
    let mut reg_gb = 0.0;

    for &i in idx {
        let (x, y) = (features.row(i), labels[i]);
        let geometry = mover_geometry(f, cfg.cost, x, cfg.direction)?;
        let r = cfg.cost.score_gain(&f.w);
        let s = f.score(x);
        match &geometry {
            None => {
                let m = y * (s + r);
                if 1.0 - m > 0.0 {
                    total.loss += 1.0 - m;
                    let grad_r = cfg.cost.score_gain_grad(&f.w);
                    for j in 0..d {
                        total.grad_w[j] += -y * (x[j] + grad_r[j]);
                    }
                    total.grad_b += -y;
                }
                if use_reg {
                    reg_sum += q_hat.unwrap().log_density(x);
                }
            }
            Some(g) => {
                let x_f_c: Vec<f64> =
                    cfg.partition.causal().iter().map(|&j| g.x_f[j]).collect();
                let y_f = oracle.relabel_after_response(
                    &x_f_c,
                    hidden.row(i),
                    y,
                    true,
                    crate::seeds::derive(draw_seed, i as u64),
                )?;
                let sm = soft_move_from_cost(g.cost, cfg.tau);
                let y_tilde = y + (y_f - y) * sm.mu;
                let gate = (y_f - y) * sm.dmu_dc;
                let m = y_tilde * (s + r);
                if 1.0 - m > 0.0 {
                    total.loss += 1.0 - m;
                    let grad_r = cfg.cost.score_gain_grad(&f.w);
                    for j in 0..d {
                        total.grad_w[j] +=
                            -y_tilde * (x[j] + grad_r[j]) - (s + r) * gate * g.dcost_dw[j];
                    }
                    total.grad_b += -y_tilde - (s + r) * gate * g.dcost_db;
                }
                if use_reg {
                    let query = hybrid_observed(&g.x_f, x, cfg.partition);
                    let (lq, lq_grad) = q_hat.unwrap().log_density_grad(&query);
                    reg_sum += lq;
                    let mut lq_causal = vec![0.0; d];
                    for &j in cfg.partition.causal() {
                        lq_causal[j] = lq_grad[j];
                    }
                    let (rw, rb) = g.pullback(cfg.cost, &lq_causal);
                    crate::mat::axpy(1.0, &rw, &mut reg_gw);
                    reg_gb += rb;
                }
            }
        }
    }

    let n = idx.len() as f64;
    total.loss /= n;
    total.grad_w.iter_mut().for_each(|g| *g /= n);
    total.grad_b /= n;
    if use_reg {
        total.loss += cfg.lambda * reg_sum / n;
        for j in 0..d {
            total.grad_w[j] += cfg.lambda * reg_gw[j] / n;
        }
        total.grad_b += cfg.lambda * reg_gb / n;
    }
    add_l2(f, cfg.l2_f, &mut total);
    Ok(total)
}
