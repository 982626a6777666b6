//! Quadratic cost models, the best-response map, its inverse segment,
//! and the soft movement indicator.
//!
//! Users facing a published linear classifier move to the decision
//! boundary when the prediction gain (2, from -1 to +1) strictly exceeds
//! the quadratic cost of moving. The default movement direction is the
//! Euclidean normal of the hyperplane; an optional mode moves along the
//! cost-optimal direction `Q^{-1} w` instead.

use crate::error::{CoreError, Result};
use crate::mat::{dot, norm2, Matrix};
use crate::models::LinearModel;

/// Direction in which responding users travel to the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseDirection {
    /// Straight along the Euclidean normal `w / ||w||`.
    #[default]
    EuclideanNormal,
    /// Along `Q^{-1} w`, the true cost-minimizing direction.
    QOptimal,
}

/// Relative boundary tolerance: movers land on the hyperplane up to
/// floating-point error.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-7;

/// Quadratic movement cost `(x'-x)^T Q (x'-x)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum CostModel {
    Isotropic { alpha: f64 },
    Mahalanobis { q: Matrix, a: Matrix, q_inv: Matrix },
}

/// Cholesky factor L (lower triangular) with Q = L L^T.
fn cholesky(q: &Matrix) -> Result<Matrix> {
    let n = q.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = q.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(CoreError::NotPsd);
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solves Q v = rhs given the Cholesky factor L.
fn cholesky_solve(l: &Matrix, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut v = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * v[k];
        }
        v[i] = s / l.get(i, i);
    }
    v
}

impl CostModel {
    pub fn isotropic(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(CoreError::InvalidSpec(format!("cost scale must be positive, got {alpha}")));
        }
        Ok(Self::Isotropic { alpha })
    }

    /// Builds the Mahalanobis cost from a symmetric positive-definite Q,
    /// with A = L^T so that A^T A = Q.
    pub fn mahalanobis(q: Matrix) -> Result<Self> {
        let n = q.rows();
        if q.cols() != n {
            return Err(CoreError::DimensionMismatch("Q must be square".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if (q.get(i, j) - q.get(j, i)).abs() > 1e-10 {
                    return Err(CoreError::NotPsd);
                }
            }
        }
        let l = cholesky(&q)?;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, l.get(j, i));
            }
        }
        // A^T A must reproduce Q within 1e-10 elementwise.
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a.get(k, i) * a.get(k, j);
                }
                if (s - q.get(i, j)).abs() > 1e-10 {
                    return Err(CoreError::NotPsd);
                }
            }
        }
        let mut q_inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = cholesky_solve(&l, &e);
            for i in 0..n {
                q_inv.set(i, j, col[i]);
            }
        }
        Ok(Self::Mahalanobis { q, a, q_inv })
    }

    pub fn dim_matches(&self, d: usize) -> bool {
        match self {
            Self::Isotropic { .. } => true,
            Self::Mahalanobis { q, .. } => q.rows() == d,
        }
    }

    /// `delta^T Q delta` for a displacement.
    fn quad_form(&self, delta: &[f64]) -> f64 {
        match self {
            Self::Isotropic { alpha } => alpha * dot(delta, delta),
            Self::Mahalanobis { q, .. } => {
                let mut s = 0.0;
                for i in 0..delta.len() {
                    s += delta[i] * dot(q.row(i), delta);
                }
                s
            }
        }
    }

    pub fn q_mul(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Isotropic { alpha } => v.iter().map(|x| alpha * x).collect(),
            Self::Mahalanobis { q, .. } => (0..v.len()).map(|i| dot(q.row(i), v)).collect(),
        }
    }

    pub fn q_inv_mul(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Isotropic { alpha } => v.iter().map(|x| x / alpha).collect(),
            Self::Mahalanobis { q_inv, .. } => {
                (0..v.len()).map(|i| dot(q_inv.row(i), v)).collect()
            }
        }
    }

    /// Movement cost between two points.
    pub fn cost(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        if x.len() != x_prime.len() || !self.dim_matches(x.len()) {
            return Err(CoreError::DimensionMismatch(format!(
                "cost between points of dimension {} and {}",
                x.len(),
                x_prime.len()
            )));
        }
        let delta: Vec<f64> = x_prime.iter().zip(x).map(|(a, b)| a - b).collect();
        Ok(self.quad_form(&delta))
    }

    /// Maximal Euclidean step length purchasable at cost 2 along the
    /// response direction for classifier weights `w`.
    pub fn max_step(&self, w: &[f64], direction: ResponseDirection) -> Result<f64> {
        let n = norm2(w);
        if n == 0.0 {
            return Err(CoreError::ZeroWeights);
        }
        let unit: Vec<f64> = match direction {
            ResponseDirection::EuclideanNormal => w.iter().map(|v| v / n).collect(),
            ResponseDirection::QOptimal => {
                let qi = self.q_inv_mul(w);
                let qn = norm2(&qi);
                qi.iter().map(|v| v / qn).collect()
            }
        };
        let g = self.quad_form(&unit);
        Ok((2.0 / g).sqrt())
    }

    /// Margin absorbed by the strategic hinge: the maximal score gain
    /// purchasable at cost 2, `sqrt(2 w^T Q^{-1} w)`.
    pub fn score_gain(&self, w: &[f64]) -> f64 {
        (2.0 * dot(w, &self.q_inv_mul(w))).max(0.0).sqrt()
    }

    /// Gradient of [`CostModel::score_gain`] in `w`; zero at `w = 0`.
    pub fn score_gain_grad(&self, w: &[f64]) -> Vec<f64> {
        let g = self.score_gain(w);
        if g == 0.0 {
            return vec![0.0; w.len()];
        }
        self.q_inv_mul(w).iter().map(|v| 2.0 * v / g).collect()
    }
}

/// Result of the hard best response.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub x_f: Vec<f64>,
    pub moved: bool,
    pub paid_cost: f64,
}

/// Boundary projection a negatively classified point would buy, before
/// the affordability gate. `None` when the point is already positive.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub x_prime: Vec<f64>,
    pub cost: f64,
}

pub fn candidate_response(
    f: &LinearModel,
    cost: &CostModel,
    x: &[f64],
    direction: ResponseDirection,
) -> Result<Option<Candidate>> {
    if x.len() != f.dim() || !cost.dim_matches(x.len()) {
        return Err(CoreError::DimensionMismatch(format!(
            "point of dimension {} against classifier of dimension {}",
            x.len(),
            f.dim()
        )));
    }
    let n2 = dot(&f.w, &f.w);
    if n2 == 0.0 {
        return Err(CoreError::ZeroWeights);
    }
    let s = f.score(x);
    if s >= 0.0 {
        return Ok(None);
    }
    // Overshoot the boundary by a step far below every downstream
    // tolerance but above score-evaluation roundoff, so landed points
    // robustly score nonnegative and the response is idempotent.
    let snap = 1e-12 * (1.0 + norm2(x));
    let x_prime: Vec<f64> = match direction {
        ResponseDirection::EuclideanNormal => {
            let n = n2.sqrt();
            x.iter().zip(&f.w).map(|(xi, wi)| xi + (-s / n2 + snap / n) * wi).collect()
        }
        ResponseDirection::QOptimal => {
            let qi = cost.q_inv_mul(&f.w);
            let g = dot(&f.w, &qi);
            let qn = norm2(&qi);
            x.iter().zip(&qi).map(|(xi, vi)| xi + (-s / g + snap / qn) * vi).collect()
        }
    };
    let c = cost.cost(x, &x_prime)?;
    Ok(Some(Candidate { x_prime, cost: c }))
}

/// Hard best response: move to the boundary iff the cost is strictly
/// below 2; a cost of exactly 2 stays put.
pub fn best_respond(
    f: &LinearModel,
    cost: &CostModel,
    x: &[f64],
    direction: ResponseDirection,
) -> Result<BestResponse> {
    match candidate_response(f, cost, x, direction)? {
        Some(c) if c.cost < 2.0 => {
            Ok(BestResponse { x_f: c.x_prime, moved: true, paid_cost: c.cost })
        }
        _ => Ok(BestResponse { x_f: x.to_vec(), moved: false, paid_cost: 0.0 }),
    }
}

/// The set of points that respond to `x'`: a segment reaching from the
/// boundary into the negative half-space, or the single point itself.
#[derive(Debug, Clone)]
pub struct InverseSegment {
    pub anchor: Vec<f64>,
    /// Unit vector pointing into the negative half-space.
    pub direction: Vec<f64>,
    /// Segment length Z; zero for degenerate segments.
    pub length: f64,
    pub is_degenerate: bool,
}

impl InverseSegment {
    /// Distance from `x` to the segment, for membership checks.
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        if self.is_degenerate {
            return norm2(&crate::mat::sub(x, &self.anchor));
        }
        let rel = crate::mat::sub(x, &self.anchor);
        let t = dot(&rel, &self.direction).clamp(0.0, self.length);
        let mut residual = 0.0;
        for i in 0..x.len() {
            let r = rel[i] - t * self.direction[i];
            residual += r * r;
        }
        residual.sqrt()
    }
}

/// Inverse response set of `x'` under a linear classifier.
pub fn inverse_set(
    f: &LinearModel,
    cost: &CostModel,
    x_prime: &[f64],
    boundary_tol: f64,
    direction: ResponseDirection,
) -> Result<InverseSegment> {
    if x_prime.len() != f.dim() || !cost.dim_matches(x_prime.len()) {
        return Err(CoreError::DimensionMismatch(format!(
            "point of dimension {} against classifier of dimension {}",
            x_prime.len(),
            f.dim()
        )));
    }
    let n = norm2(&f.w);
    if n == 0.0 {
        return Err(CoreError::ZeroWeights);
    }
    let s = f.score(x_prime);
    if s.abs() > boundary_tol * n {
        return Ok(InverseSegment {
            anchor: x_prime.to_vec(),
            direction: vec![0.0; x_prime.len()],
            length: 0.0,
            is_degenerate: true,
        });
    }
    let unit: Vec<f64> = match direction {
        ResponseDirection::EuclideanNormal => f.w.iter().map(|v| -v / n).collect(),
        ResponseDirection::QOptimal => {
            let qi = cost.q_inv_mul(&f.w);
            let qn = norm2(&qi);
            qi.iter().map(|v| -v / qn).collect()
        }
    };
    let length = cost.max_step(&f.w, direction)?;
    Ok(InverseSegment { anchor: x_prime.to_vec(), direction: unit, length, is_degenerate: false })
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Soft movement indicator and its derivative in the cost.
#[derive(Debug, Clone, Copy)]
pub struct SoftMove {
    pub mu: f64,
    pub dmu_dc: f64,
}

/// `mu = 2 (sigma_tau(c) - 1/2) * sigma_tau(2 - c)` evaluated at
/// `c = cost(x, x_f)`; `sigma_tau(z) = 1 / (1 + exp(-tau z))`.
pub fn soft_move(cost: &CostModel, x: &[f64], x_f: &[f64], tau: f64) -> Result<SoftMove> {
    let c = cost.cost(x, x_f)?;
    Ok(soft_move_from_cost(c, tau))
}

pub fn soft_move_from_cost(c: f64, tau: f64) -> SoftMove {
    debug_assert!(tau > 0.0);
    let s1 = sigmoid(tau * c);
    let s2 = sigmoid(tau * (2.0 - c));
    let mu = 2.0 * (s1 - 0.5) * s2;
    let dmu_dc = 2.0 * tau * (s1 * (1.0 - s1) * s2 - (s1 - 0.5) * s2 * (1.0 - s2));
    SoftMove { mu, dmu_dc }
}
