//! The published linear classifier and the hypothesis class for the
//! label estimate, with exact reverse-mode gradients.
//!
//! A hypothesis maps `(x_c, x_r)` to a raw score `z`; its value is
//! `tanh(z)` in `[-1, 1]`. Training needs parameter gradients, the
//! strategic objective needs input gradients (the causal block of the
//! response depends on the classifier being trained).

use rand::Rng;

use crate::mat::{dot, Matrix};
use crate::seeds;

/// Linear classifier `sign(w^T x + b)`; score 0 counts as positive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.score(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Whether a parameter participates in l2 regularization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Polynomial score over the monomial feature map of total degree <= p.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PolyModel {
    input_dim: usize,
    degree: u32,
    exponents: Vec<Vec<u32>>,
    pub coeffs: Vec<f64>,
}

/// Enumerates exponent vectors with total degree <= `degree`, in a fixed
/// lexicographic order starting from the constant monomial.
fn monomial_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; dim];
    fn rec(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for e in 0..=remaining {
            current[pos] = e;
            rec(out, current, pos + 1, remaining - e);
        }
        current[pos] = 0;
    }
    rec(&mut out, &mut current, 0, degree);
    out
}

impl PolyModel {
    pub fn new(input_dim: usize, degree: u32) -> Self {
        let exponents = monomial_exponents(input_dim, degree);
        let coeffs = vec![0.0; exponents.len()];
        Self { input_dim, degree, exponents, coeffs }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    fn monomial(&self, m: usize, x: &[f64]) -> f64 {
        self.exponents[m]
            .iter()
            .zip(x)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }

    fn raw(&self, x: &[f64]) -> f64 {
        (0..self.coeffs.len()).map(|m| self.coeffs[m] * self.monomial(m, x)).sum()
    }

    fn raw_input_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.input_dim];
        for (m, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for k in 0..self.input_dim {
                let e = self.exponents[m][k];
                if e == 0 {
                    continue;
                }
                let mut term = c * e as f64;
                for (j, &ej) in self.exponents[m].iter().enumerate() {
                    let p = if j == k { ej - 1 } else { ej };
                    term *= x[j].powi(p as i32);
                }
                grad[k] += term;
            }
        }
        grad
    }
}

/// Dense layer; weights are row-major `(out x in)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Dense {
    w: Matrix,
    b: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.b.len()).map(|i| dot(self.w.row(i), x) + self.b[i]).collect()
    }
}

/// Small fully connected net: tanh hidden layers, scalar linear output.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpNet {
    input_dim: usize,
    layers: Vec<Dense>,
}

impl MlpNet {
    /// Symmetric-uniform fan-in initialization, seeded.
    pub fn new(input_dim: usize, hidden_widths: &[usize], seed: u64) -> Self {
        let mut rng = seeds::rng(seed);
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &width in hidden_widths.iter().chain(std::iter::once(&1usize)) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Matrix::zeros(width, fan_in);
            for i in 0..width {
                for j in 0..fan_in {
                    w.set(i, j, rng.gen_range(-bound..bound));
                }
            }
            layers.push(Dense { w, b: vec![0.0; width] });
            fan_in = width;
        }
        Self { input_dim, layers }
    }

    /// Forward pass keeping every layer's post-activation output.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&cur);
            if li + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            acts.push(z.clone());
            cur = z;
        }
        acts
    }

    fn raw(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&cur);
            if li + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            cur = z;
        }
        cur[0]
    }

    fn raw_input_grad(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.forward_cached(x);
        // delta over the current layer's outputs, starting from d raw / d raw = 1
        let mut delta = vec![1.0];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            // account for tanh on hidden outputs (not on the final layer)
            if li + 1 < self.layers.len() {
                for (d, &a) in delta.iter_mut().zip(&acts[li]) {
                    *d *= 1.0 - a * a;
                }
            }
            let in_dim = layer.w.cols();
            let mut prev = vec![0.0; in_dim];
            for (i, &d) in delta.iter().enumerate() {
                for j in 0..in_dim {
                    prev[j] += d * layer.w.get(i, j);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Backprop of `upstream * d raw / d params` into `grads`
    /// (layout matching [`HypothesisModel::params`]).
    fn accumulate_param_grad(&self, x: &[f64], upstream: f64, grads: &mut [f64]) {
        let acts = self.forward_cached(x);
        // offsets of each layer's parameter block in the flat layout
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0usize;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.w.rows() * layer.w.cols() + layer.b.len();
        }
        let mut delta = vec![upstream];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if li + 1 < self.layers.len() {
                for (d, &a) in delta.iter_mut().zip(&acts[li]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input: &[f64] = if li == 0 { x } else { &acts[li - 1] };
            let in_dim = layer.w.cols();
            let base = offsets[li];
            for (i, &d) in delta.iter().enumerate() {
                for (j, &inp) in input.iter().enumerate() {
                    grads[base + i * in_dim + j] += d * inp;
                }
                grads[base + layer.w.rows() * in_dim + i] += d;
            }
            let mut prev = vec![0.0; in_dim];
            for (i, &d) in delta.iter().enumerate() {
                for j in 0..in_dim {
                    prev[j] += d * layer.w.get(i, j);
                }
            }
            delta = prev;
        }
    }
}

/// The learnable estimate of the labeling function, valued in `[-1, 1]`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HypothesisModel {
    Polynomial(PolyModel),
    Mlp(MlpNet),
}

/// Forward value together with the gradient of the value w.r.t. the input.
#[derive(Debug, Clone)]
pub struct HEval {
    pub value: f64,
    pub input_grad: Vec<f64>,
}

impl HypothesisModel {
    pub fn polynomial(input_dim: usize, degree: u32) -> Self {
        Self::Polynomial(PolyModel::new(input_dim, degree))
    }

    pub fn mlp(input_dim: usize, hidden_widths: &[usize], seed: u64) -> Self {
        Self::Mlp(MlpNet::new(input_dim, hidden_widths, seed))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Polynomial(p) => p.input_dim,
            Self::Mlp(m) => m.input_dim,
        }
    }

    /// Pre-squash score `z`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        match self {
            Self::Polynomial(p) => p.raw(x),
            Self::Mlp(m) => m.raw(x),
        }
    }

    /// Value `tanh(z)` in `[-1, 1]`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.raw(x).tanh()
    }

    /// Value and its gradient w.r.t. the input.
    pub fn eval(&self, x: &[f64]) -> HEval {
        let z = self.raw(x);
        let value = z.tanh();
        let dtanh = 1.0 - value * value;
        let mut input_grad = match self {
            Self::Polynomial(p) => p.raw_input_grad(x),
            Self::Mlp(m) => m.raw_input_grad(x),
        };
        for g in &mut input_grad {
            *g *= dtanh;
        }
        HEval { value, input_grad }
    }

    /// Flat parameter vector (weights and biases in a fixed layout).
    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Polynomial(p) => p.coeffs.clone(),
            Self::Mlp(m) => {
                let mut out = Vec::new();
                for layer in &m.layers {
                    for i in 0..layer.w.rows() {
                        out.extend_from_slice(layer.w.row(i));
                    }
                    out.extend_from_slice(&layer.b);
                }
                out
            }
        }
    }

    pub fn set_params(&mut self, params: &[f64]) {
        match self {
            Self::Polynomial(p) => p.coeffs.copy_from_slice(params),
            Self::Mlp(m) => {
                let mut k = 0usize;
                for layer in &mut m.layers {
                    for i in 0..layer.w.rows() {
                        let cols = layer.w.cols();
                        layer.w.row_mut(i).copy_from_slice(&params[k..k + cols]);
                        k += cols;
                    }
                    let blen = layer.b.len();
                    layer.b.copy_from_slice(&params[k..k + blen]);
                    k += blen;
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::Polynomial(p) => p.coeffs.len(),
            Self::Mlp(m) => {
                m.layers.iter().map(|l| l.w.rows() * l.w.cols() + l.b.len()).sum()
            }
        }
    }

    /// Kind of each flat parameter, used to exclude biases from l2.
    /// The polynomial constant term counts as a bias.
    pub fn param_kinds(&self) -> Vec<ParamKind> {
        match self {
            Self::Polynomial(p) => p
                .exponents
                .iter()
                .map(|e| {
                    if e.iter().all(|&v| v == 0) {
                        ParamKind::Bias
                    } else {
                        ParamKind::Weight
                    }
                })
                .collect(),
            Self::Mlp(m) => {
                let mut out = Vec::new();
                for layer in &m.layers {
                    out.extend(std::iter::repeat(ParamKind::Weight).take(layer.w.rows() * layer.w.cols()));
                    out.extend(std::iter::repeat(ParamKind::Bias).take(layer.b.len()));
                }
                out
            }
        }
    }

    /// Accumulates `upstream * d raw(x) / d params` into `grads`.
    pub fn accumulate_param_grad(&self, x: &[f64], upstream: f64, grads: &mut [f64]) {
        match self {
            Self::Polynomial(p) => {
                for m in 0..p.coeffs.len() {
                    grads[m] += upstream * p.monomial(m, x);
                }
            }
            Self::Mlp(m) => m.accumulate_param_grad(x, upstream, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_sign_convention() {
        let f = LinearModel::new(vec![1.0, 0.0], 0.0);
        assert_eq!(f.score(&[0.2, 9.0]), 0.2);
        assert_eq!(f.predict(&[0.2, 9.0]), 1.0);
        assert_eq!(f.predict(&[0.0, 3.0]), 1.0); // score 0 -> +1
        let g = LinearModel::new(vec![1.0, 1.0], -1.0);
        assert_eq!(g.predict(&[0.0, 0.0]), -1.0);
    }

    #[test]
    fn scaling_never_changes_prediction() {
        let f = LinearModel::new(vec![0.4, -1.2], 0.3);
        let points = [[0.5, 0.2], [-1.0, 2.0], [3.0, 1.0], [0.0, 0.25]];
        for c in [0.1, 1.0, 17.0] {
            let g = LinearModel::new(f.w.iter().map(|w| c * w).collect(), c * f.b);
            for p in &points {
                assert_eq!(f.predict(p), g.predict(p));
            }
        }
    }

    #[test]
    fn monomial_count_matches_stars_and_bars() {
        // C(d + p, p) monomials of total degree <= p
        assert_eq!(monomial_exponents(2, 3).len(), 10);
        assert_eq!(monomial_exponents(2, 4).len(), 15);
        assert_eq!(monomial_exponents(3, 2).len(), 10);
    }

    #[test]
    fn zero_parameters_output_zero() {
        let h = HypothesisModel::polynomial(2, 3);
        assert_eq!(h.value(&[0.7, -1.3]), 0.0);
        // MLP biases are zero and tanh(0)=0 propagates through hidden layers
        // only if weights were zero too, so check a zeroed net explicitly.
        let mut m = HypothesisModel::mlp(3, &[4, 4], 1);
        let zeros = vec![0.0; m.param_count()];
        m.set_params(&zeros);
        assert_eq!(m.value(&[0.3, 0.1, -2.0]), 0.0);
    }

    #[test]
    fn degree_one_reduces_to_linear_score() {
        let mut h = HypothesisModel::polynomial(2, 1);
        // monomials in lexicographic order: (0,0), (0,1), (1,0)
        h.set_params(&[0.5, -0.3, 1.1]);
        let x = [0.8, 0.4];
        let expect = (0.5 - 0.3 * 0.4 + 1.1 * 0.8f64).tanh();
        assert!((h.value(&x) - expect).abs() < 1e-14);
    }

    fn fd_param_grad(h: &HypothesisModel, x: &[f64]) -> Vec<f64> {
        let base = h.params();
        let mut grad = vec![0.0; base.len()];
        let eps = 1e-6;
        let mut m = h.clone();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += eps;
            m.set_params(&plus);
            let up = m.value(x);
            let mut minus = base.clone();
            minus[k] -= eps;
            m.set_params(&minus);
            let down = m.value(x);
            grad[k] = (up - down) / (2.0 * eps);
        }
        grad
    }

    fn fd_input_grad(h: &HypothesisModel, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let eps = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            xp[k] += eps;
            let mut xm = x.to_vec();
            xm[k] -= eps;
            grad[k] = (h.value(&xp) - h.value(&xm)) / (2.0 * eps);
        }
        grad
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = a
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-8);
        diff / scale
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeds::rng(99);
        for trial in 0..25 {
            let mut h = if trial % 2 == 0 {
                HypothesisModel::polynomial(3, 3)
            } else {
                HypothesisModel::mlp(3, &[6, 5], trial)
            };
            let params: Vec<f64> =
                (0..h.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
            h.set_params(&params);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();

            // param gradient of value = (1 - value^2) * d raw / d params
            let value = h.value(&x);
            let mut analytic = vec![0.0; h.param_count()];
            h.accumulate_param_grad(&x, 1.0 - value * value, &mut analytic);
            assert!(
                rel_err(&analytic, &fd_param_grad(&h, &x)) < 1e-6,
                "param gradient mismatch on trial {trial}"
            );

            let eval = h.eval(&x);
            assert!(
                rel_err(&eval.input_grad, &fd_input_grad(&h, &x)) < 1e-6,
                "input gradient mismatch on trial {trial}"
            );
        }
    }

    #[test]
    fn params_roundtrip() {
        let mut h = HypothesisModel::mlp(4, &[5, 3], 7);
        let p = h.params();
        assert_eq!(p.len(), h.param_count());
        let doubled: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        h.set_params(&doubled);
        assert_eq!(h.params(), doubled);
        let kinds = h.param_kinds();
        assert_eq!(kinds.len(), p.len());
        assert_eq!(kinds.iter().filter(|k| **k == ParamKind::Bias).count(), 5 + 3 + 1);
    }
}
