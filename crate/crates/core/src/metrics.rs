//! Evaluation metrics on strategically induced data and Monte-Carlo /
//! discretized validation of the induced-distribution identities: the
//! inverse-set form of the induced marginal, the covariate-shift identity
//! for independent causal and hidden features, and the multiplicative
//! deviation factor when they are dependent.

use rand_chacha::ChaCha8Rng;

use crate::cost::{best_respond, CostModel, ResponseDirection};
use crate::data::{gather, Dataset};
use crate::error::{CoreError, Result};
use crate::labeling::LabelOracle;
use crate::mat::Matrix;
use crate::models::LinearModel;
use crate::seeds;

/// Evaluation summary on an induced test set. `pct_improve` is the net
/// label improvement and may be negative; the other percentage columns
/// lie in [0, 100]. Welfare is normalized into [-1, 1] by the affine map
/// of raw prediction-minus-cost: `(prediction + 1)/2 - cost/2`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub perceived_accuracy: f64,
    pub pct_move: f64,
    pub pct_neg_to_pos: f64,
    pub pct_pos_to_neg: f64,
    pub pct_improve: f64,
    pub welfare: f64,
    pub n: usize,
}

/// Induces the test set under `f` and scores predictions against the
/// post-response labels.
pub fn evaluate(
    f: &LinearModel,
    cost: &CostModel,
    oracle: &LabelOracle,
    test: &Dataset,
    seed: u64,
    direction: ResponseDirection,
) -> Result<MetricsReport> {
    let hidden = test
        .hidden
        .as_ref()
        .ok_or_else(|| CoreError::InvalidSpec("evaluation needs hidden features".into()))?;
    if test.is_empty() {
        return Err(CoreError::EmptyData);
    }
    let n = test.len();
    let (mut acc, mut perceived, mut moved, mut n2p, mut p2n, mut welfare) =
        (0usize, 0usize, 0usize, 0usize, 0usize, 0.0f64);
    for i in 0..n {
        let x = test.features.row(i);
        let y = test.labels[i];
        let resp = best_respond(f, cost, x, direction)?;
        let x_f_c = gather(&resp.x_f, test.partition.causal());
        let y_f = oracle.relabel_after_response(
            &x_f_c,
            hidden.row(i),
            y,
            resp.moved,
            seeds::derive(seed, i as u64),
        )?;
        let pred = f.predict(&resp.x_f);
        acc += (pred == y_f) as usize;
        perceived += (pred == y) as usize;
        moved += resp.moved as usize;
        n2p += (y == -1.0 && y_f == 1.0) as usize;
        p2n += (y == 1.0 && y_f == -1.0) as usize;
        welfare += (pred + 1.0) / 2.0 - resp.paid_cost / 2.0;
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(MetricsReport {
        accuracy: pct(acc),
        perceived_accuracy: pct(perceived),
        pct_move: pct(moved),
        pct_neg_to_pos: pct(n2p),
        pct_pos_to_neg: pct(p2n),
        pct_improve: pct(n2p) - pct(p2n),
        welfare: welfare / n as f64,
        n,
    })
}

/// Scores predictions on the clean, non-responding test set (the
/// non-strategic benchmark's evaluation).
pub fn evaluate_clean(f: &LinearModel, test: &Dataset) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(CoreError::EmptyData);
    }
    let n = test.len();
    let (mut acc, mut welfare) = (0usize, 0.0f64);
    for i in 0..n {
        let pred = f.predict(test.features.row(i));
        acc += (pred == test.labels[i]) as usize;
        welfare += (pred + 1.0) / 2.0;
    }
    let accuracy = 100.0 * acc as f64 / n as f64;
    Ok(MetricsReport {
        accuracy,
        perceived_accuracy: accuracy,
        pct_move: 0.0,
        pct_neg_to_pos: 0.0,
        pct_pos_to_neg: 0.0,
        pct_improve: 0.0,
        welfare: welfare / n as f64,
        n,
    })
}

/// Comparison of the induced feature marginal estimated by Monte Carlo
/// against numeric integration of the clean density over each bin's
/// inverse-response set.
#[derive(Debug, Clone)]
pub struct ShiftEstimate {
    pub bin_edges: Vec<f64>,
    pub induced_mc: Vec<f64>,
    pub induced_quadrature: Vec<f64>,
    pub max_abs_deviation: f64,
    /// Bins that received no Monte-Carlo mass (flagged, not failed).
    pub empty_bins: Vec<usize>,
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    if x < edges[0] || x >= edges[edges.len() - 1] {
        return None;
    }
    let width = (edges[edges.len() - 1] - edges[0]) / (edges.len() - 1) as f64;
    let k = ((x - edges[0]) / width) as usize;
    Some(k.min(edges.len() - 2))
}

/// Validates the inverse-set expression for the induced one-dimensional
/// marginal: histograms of responded Monte-Carlo draws against the clean
/// density pushed through the response map by dense midpoint quadrature.
#[allow(clippy::too_many_arguments)]
pub fn validate_marginal(
    f: &LinearModel,
    cost: &CostModel,
    sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
    density: &dyn Fn(f64) -> f64,
    support: (f64, f64),
    bins: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ShiftEstimate> {
    if f.dim() != 1 {
        return Err(CoreError::InvalidSpec("marginal validation is one-dimensional".into()));
    }
    let (lo, hi) = support;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();

    // Monte-Carlo histogram of responded draws.
    let mut rng = seeds::rng(seed);
    let mut counts = vec![0usize; bins];
    for _ in 0..n_samples {
        let x = sampler(&mut rng);
        let resp = best_respond(f, cost, &[x], ResponseDirection::EuclideanNormal)?;
        if let Some(k) = bin_of(&edges, resp.x_f[0]) {
            counts[k] += 1;
        }
    }
    let induced_mc: Vec<f64> = counts.iter().map(|&c| c as f64 / n_samples as f64).collect();

    // Dense midpoint quadrature pushing clean mass through the response:
    // each source cell's mass lands in the bin of its response image,
    // which integrates the clean density over every bin's inverse set.
    let cells = 1_000_000usize;
    let dx = (hi - lo) / cells as f64;
    let mut induced_quadrature = vec![0.0; bins];
    for c in 0..cells {
        let x = lo + (c as f64 + 0.5) * dx;
        let mass = density(x) * dx;
        if mass == 0.0 {
            continue;
        }
        let resp = best_respond(f, cost, &[x], ResponseDirection::EuclideanNormal)?;
        if let Some(k) = bin_of(&edges, resp.x_f[0]) {
            induced_quadrature[k] += mass;
        }
    }

    let max_abs_deviation = induced_mc
        .iter()
        .zip(&induced_quadrature)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let empty_bins =
        counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(k, _)| k).collect();
    Ok(ShiftEstimate {
        bin_edges: edges,
        induced_mc,
        induced_quadrature,
        max_abs_deviation,
        empty_bins,
    })
}

/// Compares the induced conditional `P(y^f = 1 | x_c^f in bin)` against
/// the clean conditional `P(y = 1 | x_c in bin)` over bins with at least
/// `min_hits` draws on both sides; returns the maximal absolute
/// difference. Under independence of the causal and hidden features the
/// two conditionals agree for any classifier.
#[allow(clippy::too_many_arguments)]
pub fn validate_covariate_shift(
    h_star: &dyn Fn(f64, f64) -> f64,
    sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> (f64, f64),
    f: &LinearModel,
    cost: &CostModel,
    support: (f64, f64),
    bins: usize,
    n_samples: usize,
    min_hits: usize,
    seed: u64,
) -> Result<f64> {
    if f.dim() != 1 {
        return Err(CoreError::InvalidSpec("conditional validation is one-dimensional".into()));
    }
    let (lo, hi) = support;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();

    let mut clean_hits = vec![0usize; bins];
    let mut clean_pos = vec![0usize; bins];
    let mut rng = seeds::rng(seeds::derive(seed, 1));
    for _ in 0..n_samples {
        let (x_c, u) = sampler(&mut rng);
        if let Some(k) = bin_of(&edges, x_c) {
            clean_hits[k] += 1;
            if h_star(x_c, u) > 0.0 {
                clean_pos[k] += 1;
            }
        }
    }

    let mut ind_hits = vec![0usize; bins];
    let mut ind_pos = vec![0usize; bins];
    let mut rng = seeds::rng(seeds::derive(seed, 2));
    for _ in 0..n_samples {
        let (x_c, u) = sampler(&mut rng);
        let resp = best_respond(f, cost, &[x_c], ResponseDirection::EuclideanNormal)?;
        let x_c_f = resp.x_f[0];
        let y_f = if resp.moved { h_star(x_c_f, u) } else { h_star(x_c, u) };
        if let Some(k) = bin_of(&edges, x_c_f) {
            ind_hits[k] += 1;
            if y_f > 0.0 {
                ind_pos[k] += 1;
            }
        }
    }

    let mut max_dev: f64 = 0.0;
    for k in 0..bins {
        if clean_hits[k] >= min_hits && ind_hits[k] >= min_hits {
            let pc = clean_pos[k] as f64 / clean_hits[k] as f64;
            let pi = ind_pos[k] as f64 / ind_hits[k] as f64;
            max_dev = max_dev.max((pc - pi).abs());
        }
    }
    Ok(max_dev)
}

/// Joint density values on a uniform grid over (x, u); the x step must be
/// uniform. Conditionals and marginals are computed by trapezoid sums.
#[derive(Debug, Clone)]
pub struct NuGrid {
    pub x_points: Vec<f64>,
    pub u_points: Vec<f64>,
    /// density[i][j] = p(x_i, u_j)
    pub density: Matrix,
}

impl NuGrid {
    fn x_step(&self) -> f64 {
        self.x_points[1] - self.x_points[0]
    }

    /// Marginal density p(x_i) by trapezoid over u.
    fn x_marginal(&self, i: usize) -> f64 {
        let n = self.u_points.len();
        let mut s = 0.0;
        for j in 0..n {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            s += w * self.density.get(i, j) * (self.u_points[1] - self.u_points[0]);
        }
        s
    }

    /// Marginal density p(u_j) by trapezoid over x.
    fn u_marginal(&self, j: usize) -> f64 {
        let n = self.x_points.len();
        let mut s = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            s += w * self.density.get(i, j) * self.x_step();
        }
        s
    }

    /// Total mass of the (possibly unnormalized) grid density. The
    /// conditional p(x|u) is scale-invariant but the marginal p(x) in
    /// the denominator is not, so the estimate normalizes by this.
    fn total_mass(&self) -> f64 {
        let nu = self.u_points.len();
        let du = self.u_points[1] - self.u_points[0];
        let mut s = 0.0;
        for j in 0..nu {
            let w = if j == 0 || j == nu - 1 { 0.5 } else { 1.0 };
            s += w * self.u_marginal(j) * du;
        }
        s
    }
}

/// Discretized estimate of the multiplicative covariate-shift deviation
/// at `(u, x')`: the inverse-segment integral of `p(x|u)` over the
/// inverse-segment integral of `p(x)`. The classifier is one-dimensional
/// over x. For an off-boundary `x'` the inverse set is the point itself
/// and the estimate is the conditional-to-marginal ratio there.
pub fn estimate_nu(
    grid: &NuGrid,
    f: &LinearModel,
    cost: &CostModel,
    u_index: usize,
    x_prime_index: usize,
) -> Result<f64> {
    if f.dim() != 1 || f.w[0] == 0.0 {
        return Err(CoreError::InvalidSpec("the grid estimate needs a 1-d classifier".into()));
    }
    let x_prime = grid.x_points[x_prime_index];
    let score = f.score(&[x_prime]);
    let p_u = grid.u_marginal(u_index);
    if p_u <= 0.0 {
        return Err(CoreError::Undefined("hidden-feature marginal vanishes".into()));
    }
    let total = grid.total_mass();
    let tol = 1e-9 * f.w[0].abs() * (1.0 + x_prime.abs());

    if score.abs() > tol {
        // degenerate inverse set {x'}; if x' itself responds away, no
        // induced mass remains at x'
        let resp = best_respond(f, cost, &[x_prime], ResponseDirection::EuclideanNormal)?;
        if resp.moved {
            return Err(CoreError::Undefined(format!(
                "no induced mass at x' = {x_prime}: the point responds away"
            )));
        }
        let px = grid.x_marginal(x_prime_index) / total;
        if px <= 0.0 {
            return Err(CoreError::Undefined("marginal vanishes at x'".into()));
        }
        let p_cond = grid.density.get(x_prime_index, u_index) / p_u;
        return Ok(p_cond / px);
    }

    // On the boundary: integrate over the segment [x' - Z, x'] along the
    // grid; endpoints must align with grid points for the trapezoid.
    let z_max = cost.max_step(&f.w, ResponseDirection::EuclideanNormal)?;
    let step = grid.x_step();
    // movement comes from the negative side of the boundary
    let from = if f.w[0] > 0.0 { x_prime - z_max } else { x_prime };
    let to = if f.w[0] > 0.0 { x_prime } else { x_prime + z_max };
    let mut idx = Vec::new();
    for (i, &x) in grid.x_points.iter().enumerate() {
        if x >= from - 0.25 * step && x <= to + 0.25 * step {
            idx.push(i);
        }
    }
    if idx.len() < 2 {
        return Err(CoreError::Undefined("inverse segment covers no grid cells".into()));
    }
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let w = if k == 0 || k == idx.len() - 1 { 0.5 } else { 1.0 };
        numer += w * grid.density.get(i, u_index) / p_u * step;
        denom += w * grid.x_marginal(i) / total * step;
    }
    if denom <= 0.0 {
        return Err(CoreError::Undefined("induced marginal vanishes at x'".into()));
    }
    Ok(numer / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn improve_identity_and_welfare_range() {
        // perfect f on points that never move
        let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let hidden = Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let part = crate::data::FeaturePartition::leading_causal(1, 2).unwrap();
        let data = Dataset::new(features, Some(hidden), vec![1.0, -1.0], part).unwrap();
        let f = LinearModel::new(vec![1.0, 0.0], 0.0);
        let cost = CostModel::isotropic(1e9).unwrap(); // nobody can afford to move
        let oracle = LabelOracle::Circle { center: [0.0, 0.0], radius: 10.0 };
        let r =
            evaluate(&f, &cost, &oracle, &data, 3, ResponseDirection::EuclideanNormal).unwrap();
        // nobody moves, so labels never change and f is perfect on them
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.pct_move, 0.0);
        assert_eq!(r.pct_improve, r.pct_neg_to_pos - r.pct_pos_to_neg);
        assert!(r.welfare >= -1.0 && r.welfare <= 1.0);
    }

    #[test]
    fn everyone_predicted_positive_at_zero_cost_has_welfare_one() {
        let features = Matrix::from_rows(&[vec![2.0, 0.0], vec![3.0, 1.0]]).unwrap();
        let hidden = Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let part = crate::data::FeaturePartition::leading_causal(1, 2).unwrap();
        let data = Dataset::new(features, Some(hidden), vec![1.0, 1.0], part).unwrap();
        let f = LinearModel::new(vec![1.0, 0.0], 0.0);
        let cost = CostModel::isotropic(1.0).unwrap();
        let oracle = LabelOracle::Circle { center: [0.0, 0.0], radius: 10.0 };
        let r =
            evaluate(&f, &cost, &oracle, &data, 3, ResponseDirection::EuclideanNormal).unwrap();
        assert_eq!(r.welfare, 1.0);
        assert_eq!(r.accuracy, 100.0);
    }

    #[test]
    fn identity_response_preserves_the_marginal() {
        // a boundary far to the left of the support: every draw stays
        let f = LinearModel::new(vec![1.0], 100.0);
        let cost = CostModel::isotropic(1.0).unwrap();
        let mut sampler = |rng: &mut ChaCha8Rng| rng.gen_range(0.0..1.0);
        let density = |x: f64| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
        let est =
            validate_marginal(&f, &cost, &mut sampler, &density, (0.0, 1.0), 10, 200_000, 7)
                .unwrap();
        for (a, b) in est.induced_mc.iter().zip(&est.induced_quadrature) {
            assert!((a - 0.1).abs() < 0.01, "mc bin {a}");
            assert!((b - 0.1).abs() < 1e-9, "quadrature bin {b}");
        }
    }

    #[test]
    fn uniform_movers_concentrate_on_the_boundary_bin() {
        // uniform on [0,1], boundary at 0.6, alpha = 8 so Z = 0.5: movers
        // from [0.1, 0.6) add mass 0.5 to the boundary bin
        let f = LinearModel::new(vec![1.0], -0.6);
        let cost = CostModel::isotropic(8.0).unwrap();
        let mut sampler = |rng: &mut ChaCha8Rng| rng.gen_range(0.0..1.0);
        let density = |x: f64| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
        let est =
            validate_marginal(&f, &cost, &mut sampler, &density, (0.0, 1.0), 10, 400_000, 11)
                .unwrap();
        // the bin [0.6, 0.7) holds its own mass plus all movers
        assert!((est.induced_quadrature[6] - 0.6).abs() < 1e-6);
        assert!((est.induced_mc[6] - 0.6).abs() < 0.01);
        // vacated bins are empty and flagged
        assert!(est.induced_quadrature[2] < 1e-12);
        assert!(est.empty_bins.contains(&2));
        assert!(est.max_abs_deviation < 0.01);
    }

    #[test]
    fn covariate_shift_holds_iff_independent() {
        let f = LinearModel::new(vec![1.0], -0.8);
        let cost = CostModel::isotropic(2.0).unwrap();
        let h_star = |x_c: f64, u: f64| if x_c + u > 0.0 { 1.0 } else { -1.0 };
        let gauss = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut independent = |rng: &mut ChaCha8Rng| (gauss(rng), gauss(rng));
        let dev_ind = validate_covariate_shift(
            &h_star,
            &mut independent,
            &f,
            &cost,
            (-3.0, 3.0),
            24,
            100_000,
            500,
            21,
        )
        .unwrap();
        assert!(dev_ind < 0.05, "independent deviation {dev_ind}");

        // dependent: u tracks -x_c, labels follow u only
        let h_star_dep = |_x_c: f64, u: f64| if u > 0.0 { 1.0 } else { -1.0 };
        let mut dependent = |rng: &mut ChaCha8Rng| {
            let x = gauss(rng);
            (x, -x + 0.3 * gauss(rng))
        };
        let dev_dep = validate_covariate_shift(
            &h_star_dep,
            &mut dependent,
            &f,
            &cost,
            (-3.0, 3.0),
            24,
            100_000,
            500,
            22,
        )
        .unwrap();
        assert!(dev_dep > 0.15, "dependent deviation {dev_dep}");
    }

    fn correlated_grid(rho: f64, x_step: f64) -> NuGrid {
        // bivariate normal density on a grid aligned so the boundary
        // (0.0) and the segment length land exactly on grid points
        let nx = (6.0 / x_step).round() as usize + 1;
        let x_points: Vec<f64> = (0..nx).map(|i| -3.0 + i as f64 * x_step).collect();
        let u_points: Vec<f64> = (0..41).map(|j| -2.0 + j as f64 * 0.1).collect();
        let mut density = Matrix::zeros(x_points.len(), u_points.len());
        for (i, &x) in x_points.iter().enumerate() {
            for (j, &u) in u_points.iter().enumerate() {
                let q = (x * x - 2.0 * rho * x * u + u * u) / (1.0 - rho * rho);
                density.set(i, j, (-0.5 * q).exp());
            }
        }
        NuGrid { x_points, u_points, density }
    }

    #[test]
    fn nu_is_one_under_independence() {
        let grid = correlated_grid(0.0, 0.05);
        // boundary at x = 0 (index 60), Z = 1.0 for alpha = 2
        let f = LinearModel::new(vec![1.0], 0.0);
        let cost = CostModel::isotropic(2.0).unwrap();
        for u_index in [0, 10, 20, 30, 40] {
            let nu = estimate_nu(&grid, &f, &cost, u_index, 60).unwrap();
            assert!((nu - 1.0).abs() < 0.02, "segment nu {nu}");
            // degenerate point on the positive side
            let nu_pt = estimate_nu(&grid, &f, &cost, u_index, 80).unwrap();
            assert!((nu_pt - 1.0).abs() < 0.02, "degenerate nu {nu_pt}");
        }
    }

    #[test]
    fn nu_deviates_under_dependence_and_is_flagged_where_undefined() {
        let grid = correlated_grid(0.6, 0.05);
        let f = LinearModel::new(vec![1.0], 0.0);
        let cost = CostModel::isotropic(2.0).unwrap();
        let mut saw_deviation = false;
        for u_index in [0, 40] {
            let nu = estimate_nu(&grid, &f, &cost, u_index, 60).unwrap();
            if (nu - 1.0).abs() > 0.1 {
                saw_deviation = true;
            }
        }
        assert!(saw_deviation, "correlated grid should push nu away from 1");
        // a moved-away point has no induced mass
        let gone = estimate_nu(&grid, &f, &cost, 5, 50);
        assert!(matches!(gone, Err(CoreError::Undefined(_))));
    }

    #[test]
    fn nu_grid_refinement_agreement() {
        // same analytic density at two resolutions; the coarse estimate
        // must agree with the 10x refined oracle
        let coarse = correlated_grid(0.6, 0.05);
        let fine = correlated_grid(0.6, 0.005);
        let f = LinearModel::new(vec![1.0], 0.0);
        let cost = CostModel::isotropic(2.0).unwrap();
        for u_index in [0, 10, 20, 30, 40] {
            let a = estimate_nu(&coarse, &f, &cost, u_index, 60).unwrap();
            let b = estimate_nu(&fine, &f, &cost, u_index, 600).unwrap();
            assert!((a - b).abs() < 1e-3, "refinement disagreement: {a} vs {b}");
        }
    }
}
