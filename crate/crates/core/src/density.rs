//! Gaussian kernel density estimation and the conditional-expectation
//! reconstruction of correlative features for strategically moved points.
//!
//! The density is an equal-weight Gaussian mixture with a shared isotropic
//! bandwidth; bandwidth selection is a k-fold cross-validated grid search
//! maximizing held-out log-likelihood.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cost::{inverse_set, CostModel, ResponseDirection};
use crate::data::FeaturePartition;
use crate::error::{CoreError, Result};
use crate::mat::{log_sum_exp, Matrix};
use crate::models::LinearModel;
use crate::seeds;

/// Denominator integrals below this are treated as numerically zero.
const UNDERFLOW_FLOOR_LN: f64 = -690.7755278982137; // ln(1e-300)

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DensityModel {
    centers: Matrix,
    bandwidth: f64,
    dim: usize,
    log_norm: f64,
}

impl DensityModel {
    pub fn fit(data: &Matrix, bandwidth: f64) -> Result<Self> {
        if data.rows() == 0 {
            return Err(CoreError::EmptyData);
        }
        if !(bandwidth > 0.0) {
            return Err(CoreError::InvalidBandwidth(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let dim = data.cols();
        let m = data.rows() as f64;
        let log_norm =
            -m.ln() - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * bandwidth * bandwidth).ln();
        Ok(Self { centers: data.clone(), bandwidth, dim, log_norm })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    /// Log of the mixture density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let inv2h2 = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let exponents: Vec<f64> = self
            .centers
            .iter_rows()
            .map(|c| {
                let mut d2 = 0.0;
                for (a, b) in c.iter().zip(x) {
                    let t = a - b;
                    d2 += t * t;
                }
                -d2 * inv2h2
            })
            .collect();
        self.log_norm + log_sum_exp(&exponents)
    }

    /// Log density and its gradient in `x`.
    pub fn log_density_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(x.len(), self.dim);
        let h2 = self.bandwidth * self.bandwidth;
        let inv2h2 = 1.0 / (2.0 * h2);
        let exponents: Vec<f64> = self
            .centers
            .iter_rows()
            .map(|c| {
                let mut d2 = 0.0;
                for (a, b) in c.iter().zip(x) {
                    let t = a - b;
                    d2 += t * t;
                }
                -d2 * inv2h2
            })
            .collect();
        let m = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = exponents.iter().map(|e| (e - m).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let mut grad = vec![0.0; self.dim];
        for (c, w) in self.centers.iter_rows().zip(&weights) {
            for (g, (ci, xi)) in grad.iter_mut().zip(c.iter().zip(x)) {
                *g += w * (ci - xi);
            }
        }
        for g in &mut grad {
            *g /= wsum * h2;
        }
        (self.log_norm + m + wsum.ln(), grad)
    }

    /// Draws one sample: a uniformly chosen center plus isotropic noise.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let i = rng.gen_range(0..self.centers.rows());
        let center = self.centers.row(i);
        (0..self.dim)
            .map(|j| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                center[j] + self.bandwidth * z
            })
            .collect()
    }
}

/// Fits a KDE with the grid bandwidth maximizing mean held-out
/// log-likelihood over `folds` folds, then refits on all rows.
pub fn fit_kde(data: &Matrix, bandwidth_grid: &[f64], folds: usize, seed: u64) -> Result<DensityModel> {
    if data.rows() == 0 {
        return Err(CoreError::EmptyData);
    }
    if bandwidth_grid.is_empty() {
        return Err(CoreError::InvalidBandwidth("empty bandwidth grid".into()));
    }
    if let Some(bad) = bandwidth_grid.iter().find(|&&h| !(h > 0.0)) {
        return Err(CoreError::InvalidBandwidth(format!("non-positive grid entry {bad}")));
    }
    if bandwidth_grid.len() == 1 {
        return DensityModel::fit(data, bandwidth_grid[0]);
    }
    let m = data.rows();
    if folds < 2 || folds > m {
        return Err(CoreError::InvalidBandwidth(format!(
            "{folds} folds infeasible for {m} rows"
        )));
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seeds::rng(seed));

    // Per-fold blocks of squared distances (held-out x train), shared
    // across all bandwidth candidates.
    let mut fold_bounds = Vec::with_capacity(folds + 1);
    for k in 0..=folds {
        fold_bounds.push(k * m / folds);
    }
    struct FoldBlock {
        d2: Matrix,
        train_count: usize,
    }
    let mut blocks = Vec::with_capacity(folds);
    for k in 0..folds {
        let held: Vec<usize> = order[fold_bounds[k]..fold_bounds[k + 1]].to_vec();
        let train: Vec<usize> =
            order[..fold_bounds[k]].iter().chain(&order[fold_bounds[k + 1]..]).copied().collect();
        let mut d2 = Matrix::zeros(held.len(), train.len());
        for (i, &hi) in held.iter().enumerate() {
            let hr = data.row(hi);
            let row = d2.row_mut(i);
            for (j, &tj) in train.iter().enumerate() {
                let tr = data.row(tj);
                let mut s = 0.0;
                for (a, b) in hr.iter().zip(tr) {
                    let t = a - b;
                    s += t * t;
                }
                row[j] = s;
            }
        }
        blocks.push(FoldBlock { d2, train_count: train.len() });
    }

    let dim = data.cols() as f64;
    let mut best = (f64::NEG_INFINITY, bandwidth_grid[0]);
    for &h in bandwidth_grid {
        let inv2h2 = 1.0 / (2.0 * h * h);
        let log_norm_base = -0.5 * dim * (2.0 * std::f64::consts::PI * h * h).ln();
        let mut fold_means = Vec::with_capacity(folds);
        for block in &blocks {
            if block.d2.rows() == 0 {
                continue;
            }
            let log_norm = log_norm_base - (block.train_count as f64).ln();
            let mut total = 0.0;
            for i in 0..block.d2.rows() {
                let exps: Vec<f64> = block.d2.row(i).iter().map(|&d| -d * inv2h2).collect();
                total += log_norm + log_sum_exp(&exps);
            }
            fold_means.push(total / block.d2.rows() as f64);
        }
        let score = fold_means.iter().sum::<f64>() / fold_means.len() as f64;
        if score > best.0 {
            best = (score, h);
        }
    }
    DensityModel::fit(data, best.1)
}

/// Default bandwidth grid: 20 logarithmically spaced values in [1e-2, 10].
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_spaced_grid(1e-2, 10.0, 20)
}

pub fn log_spaced_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && len >= 2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..len).map(|i| (llo + (lhi - llo) * i as f64 / (len - 1) as f64).exp()).collect()
}

/// Reconstructed correlative block for a strategically moved point.
///
/// Evaluates the two one-dimensional integrals over the inverse-response
/// segment by composite trapezoid with `quad_points` nodes and returns
/// `x_r^f - wbar_r * (int z p / int p)`. Off-boundary points pass their
/// observed correlative block through unchanged.
pub fn reconstruct_xr(
    p_hat: &DensityModel,
    f: &LinearModel,
    cost: &CostModel,
    x_f: &[f64],
    partition: &FeaturePartition,
    quad_points: usize,
    boundary_tol: f64,
    direction: ResponseDirection,
) -> Result<Vec<f64>> {
    if x_f.len() != p_hat.dim() || x_f.len() != partition.total_dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "point of dimension {} against density of dimension {}",
            x_f.len(),
            p_hat.dim()
        )));
    }
    if quad_points < 2 {
        return Err(CoreError::InvalidSpec("quadrature needs at least 2 nodes".into()));
    }
    let segment = inverse_set(f, cost, x_f, boundary_tol, direction)?;
    let observed_r: Vec<f64> = partition.correlative().iter().map(|&j| x_f[j]).collect();
    if segment.is_degenerate {
        return Ok(observed_r);
    }
    let z_len = segment.length;
    let step = z_len / (quad_points - 1) as f64;
    let log_vals: Vec<f64> = (0..quad_points)
        .map(|k| {
            let z = step * k as f64;
            let point: Vec<f64> =
                (0..x_f.len()).map(|i| segment.anchor[i] + z * segment.direction[i]).collect();
            p_hat.log_density(&point)
        })
        .collect();
    let peak = log_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // trapezoid weights: 1/2 at the ends
    let mut denom = 0.0;
    let mut numer = 0.0;
    for (k, lv) in log_vals.iter().enumerate() {
        let w = if k == 0 || k == quad_points - 1 { 0.5 } else { 1.0 };
        let v = w * (lv - peak).exp();
        denom += v;
        numer += v * step * k as f64;
    }
    // denominator integral in absolute scale: exp(peak) * denom * step
    if peak + (denom * step).ln() < UNDERFLOW_FLOOR_LN {
        return Err(CoreError::DensityUnderflow);
    }
    let mean_z = numer / denom;
    // movement is anchor + z * direction with direction = -wbar, so the
    // source point's correlative block is x_r^f + mean_z * direction_r
    Ok(partition
        .correlative()
        .iter()
        .zip(&observed_r)
        .map(|(&j, &xr)| xr + mean_z * segment.direction[j])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn single_center_density_is_analytic_normal() {
        let centers = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let kde = DensityModel::fit(&centers, 1.0).unwrap();
        let log_p0 = kde.log_density(&[0.0]);
        assert!((log_p0 - (-0.9189385332046727)).abs() < 1e-12);
        let (_, grad) = kde.log_density_grad(&[0.0]);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn two_center_density_averages_kernels() {
        let centers = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let kde = DensityModel::fit(&centers, 1.0).unwrap();
        // p(0) = phi(1) with both kernels contributing equally
        let expect = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((kde.log_density(&[0.0]).exp() - expect).abs() < 1e-9);
        assert!((expect - 0.241971).abs() < 1e-6);
    }

    #[test]
    fn log_density_gradient_matches_finite_differences() {
        let mut rng = seeds::rng(21);
        let rows: Vec<Vec<f64>> =
            (0..40).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let kde = DensityModel::fit(&Matrix::from_rows(&rows).unwrap(), 0.4).unwrap();
        for _ in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.5..2.5)).collect();
            let (_, grad) = kde.log_density_grad(&x);
            for k in 0..3 {
                let eps = 1e-6;
                let mut xp = x.clone();
                xp[k] += eps;
                let mut xm = x.clone();
                xm[k] -= eps;
                let fd = (kde.log_density(&xp) - kde.log_density(&xm)) / (2.0 * eps);
                let denom = grad[k].abs().max(fd.abs()).max(1e-9);
                assert!(
                    (grad[k] - fd).abs() / denom < 1e-6,
                    "gradient mismatch: analytic {} fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn density_stays_positive_and_finite() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let kde = DensityModel::fit(&centers, 0.3).unwrap();
        for x in [[0.0, 0.0], [5.0, -5.0], [20.0, 20.0]] {
            let lp = kde.log_density(&x);
            assert!(lp.is_finite());
            assert!(lp.exp() >= 0.0);
        }
        assert!(kde.log_density(&[3.0, 3.0]).exp() > 0.0);
    }

    #[test]
    fn single_candidate_grid_is_selected() {
        let centers = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let kde = fit_kde(&centers, &[0.5], 2, 1).unwrap();
        assert_eq!(kde.bandwidth(), 0.5);
    }

    #[test]
    fn infeasible_folds_are_rejected() {
        let centers = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(fit_kde(&centers, &[0.3, 0.5], 5, 1).is_err());
        assert!(fit_kde(&centers, &[0.3, -0.5], 2, 1).is_err());
        assert!(fit_kde(&Matrix::zeros(0, 1), &[0.3], 2, 1).is_err());
    }

    #[test]
    fn cv_bandwidth_tracks_silverman_on_gaussian_data() {
        let mut rng = seeds::rng(33);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                vec![(-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()]
            })
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let grid = log_spaced_grid(1e-2, 10.0, 20);
        let kde = fit_kde(&data, &grid, 5, 17).unwrap();
        let silverman = 1.06 * 1000.0f64.powf(-0.2);
        assert!(
            kde.bandwidth() > silverman / 3.0 && kde.bandwidth() < silverman * 3.0,
            "selected {} vs silverman {silverman}",
            kde.bandwidth()
        );
    }

    #[test]
    fn reconstruction_passes_through_off_boundary_points() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5]]).unwrap();
        let kde = DensityModel::fit(&centers, 1.0).unwrap();
        let f = LinearModel::new(vec![1.0, 0.0], 0.0);
        let cost = CostModel::isotropic(1.0).unwrap();
        let part = FeaturePartition::leading_causal(1, 2).unwrap();
        let xr = reconstruct_xr(
            &kde,
            &f,
            &cost,
            &[0.7, 1.0],
            &part,
            64,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        assert_eq!(xr, vec![1.0]);
    }

    #[test]
    fn uniform_density_shifts_by_half_segment() {
        // an essentially flat density makes the segment mean Z/2
        let centers = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let kde = DensityModel::fit(&centers, 1e6).unwrap();
        // boundary along x2: w = (0,1) so movement is vertical and x_r
        // is the moved coordinate when the partition marks x2 correlative
        let f = LinearModel::new(vec![0.0, 1.0], 0.0);
        let cost = CostModel::isotropic(2.0).unwrap(); // Z = 1
        let part = FeaturePartition::leading_causal(1, 2).unwrap();
        let xr = reconstruct_xr(
            &kde,
            &f,
            &cost,
            &[0.3, 0.0],
            &part,
            128,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        // direction is -wbar = (0,-1); x_r reconstructs to 0 - 0.5
        assert!((xr[0] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_matches_dense_quadrature() {
        let mut rng = seeds::rng(44);
        let rows: Vec<Vec<f64>> =
            (0..30).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let kde = DensityModel::fit(&Matrix::from_rows(&rows).unwrap(), 0.5).unwrap();
        let f = LinearModel::new(vec![0.6, 0.8], -0.2);
        let cost = CostModel::isotropic(0.7).unwrap();
        let part = FeaturePartition::leading_causal(1, 2).unwrap();
        // a point on the boundary: x = (x1, (0.2 - 0.6 x1) / 0.8)
        let anchor = [0.5, (0.2 - 0.3) / 0.8];
        let coarse = reconstruct_xr(
            &kde,
            &f,
            &cost,
            &anchor,
            &part,
            128,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        let dense = reconstruct_xr(
            &kde,
            &f,
            &cost,
            &anchor,
            &part,
            100_000,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        assert!((coarse[0] - dense[0]).abs() < 1e-4, "coarse {} dense {}", coarse[0], dense[0]);
    }

    #[test]
    fn far_segments_underflow() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let kde = DensityModel::fit(&centers, 0.01).unwrap();
        let f = LinearModel::new(vec![1.0, 0.0], -1000.0);
        let cost = CostModel::isotropic(1.0).unwrap();
        let part = FeaturePartition::leading_causal(1, 2).unwrap();
        let err = reconstruct_xr(
            &kde,
            &f,
            &cost,
            &[1000.0, 0.0],
            &part,
            64,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        );
        assert!(matches!(err, Err(CoreError::DensityUnderflow)));
    }

    #[test]
    fn reconstruction_never_touches_causal_block() {
        let mut rng = seeds::rng(55);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let kde = DensityModel::fit(&Matrix::from_rows(&rows).unwrap(), 0.8).unwrap();
        let f = LinearModel::new(vec![0.5, -0.5, 0.7], 0.1);
        let cost = CostModel::isotropic(1.0).unwrap();
        let part = FeaturePartition::new(vec![0, 2], vec![1], 3).unwrap();
        // put a point on the boundary
        let x_f = [0.2, (0.1 + 0.5 * 0.2 + 0.7 * 0.3) / 0.5, 0.3];
        assert!(f.score(&x_f).abs() < 1e-12);
        let xr = reconstruct_xr(
            &kde,
            &f,
            &cost,
            &x_f,
            &part,
            64,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        // only the correlative coordinate came back, and it differs
        assert_eq!(xr.len(), 1);
        assert!(xr[0] != x_f[1]);
    }
}
