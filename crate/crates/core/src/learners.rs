//! Training procedures for the published classifier and the label
//! estimate, dirty-data preparation, and the partition-error variants
//! used by the sensitivity analysis.
//!
//! All training is plain mini-batch SGD with a fixed learning rate and
//! early stopping: after each epoch the candidate is scored on the
//! method's own validation surface, the best snapshot is kept, and
//! `patience` consecutive non-improving epochs end training.

use rand::seq::SliceRandom;

use crate::cost::{CostModel, ResponseDirection};
use crate::data::FeaturePartition;
use crate::density::{reconstruct_xr, DensityModel};
use crate::error::{CoreError, Result};
use crate::labeling::LabelOracle;
use crate::mat::Matrix;
use crate::models::{HypothesisModel, LinearModel, ParamKind};
use crate::objective::{
    cserm_objective_batch, erm_objective_batch, oracle_objective_batch, serm_objective_batch,
    ObjectiveConfig,
};
use crate::seeds;

/// Training method taxonomy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Plain hinge on clean data, strategy-oblivious.
    Erm,
    /// Strategic hinge on clean data, causally oblivious.
    Serm,
    /// The causal strategic learner; `lambda0 = 0` disables exploration.
    Cserm { lambda0: f64, decay: f64 },
    /// Repeated risk minimization on the latest dirty batch only.
    Rrm,
    /// Repeated risk minimization on all data collected so far.
    RrmLeT,
    /// As `RrmLeT` but restricted to causal columns.
    RrmC,
    /// The causal strategic learner with exact post-response labels.
    Oracle { lambda0: f64, decay: f64 },
    /// ERM evaluated on a non-strategic test set.
    NsBench,
}

impl Method {
    pub fn lambda_at(&self, round: usize) -> f64 {
        match self {
            Method::Cserm { lambda0, decay } | Method::Oracle { lambda0, decay } => {
                lambda0 * decay.powi(round as i32)
            }
            _ => 0.0,
        }
    }

    /// Methods that consume dirty data across rounds.
    pub fn is_temporal(&self) -> bool {
        matches!(
            self,
            Method::Cserm { .. } | Method::Rrm | Method::RrmLeT | Method::RrmC
        ) || matches!(self, Method::Oracle { lambda0, .. } if *lambda0 > 0.0)
    }
}

/// Hypothesis class specification.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HypothesisSpec {
    Polynomial { degree: u32 },
    Mlp { hidden_widths: Vec<usize> },
}

impl HypothesisSpec {
    pub fn build(&self, input_dim: usize, seed: u64) -> HypothesisModel {
        match self {
            HypothesisSpec::Polynomial { degree } => HypothesisModel::polynomial(input_dim, *degree),
            HypothesisSpec::Mlp { hidden_widths } => {
                HypothesisModel::mlp(input_dim, hidden_widths, seed)
            }
        }
    }
}

/// Feature-type attribution errors for the sensitivity variants.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionError {
    /// Swap the causal/correlative role of the listed observed columns.
    Wrong { indices: Vec<usize> },
    /// Remove the listed observed columns from the learner's view.
    Discard { indices: Vec<usize> },
}

/// The learner's window onto observed features: which columns it sees
/// and what roles it believes they play. The simulator always works in
/// the full space; classifiers lift back with zero weights elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerView {
    pub keep: Vec<usize>,
    pub partition: FeaturePartition,
    full_dim: usize,
}

impl LearnerView {
    pub fn identity(partition: &FeaturePartition) -> Self {
        Self {
            keep: (0..partition.total_dim()).collect(),
            partition: partition.clone(),
            full_dim: partition.total_dim(),
        }
    }

    pub fn project_matrix(&self, m: &Matrix) -> Matrix {
        m.select_columns(&self.keep)
    }

    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        self.keep.iter().map(|&j| row[j]).collect()
    }

    /// Lifts a view-space classifier into the full observed space.
    pub fn lift(&self, f: &LinearModel) -> LinearModel {
        let mut w = vec![0.0; self.full_dim];
        for (k, &j) in self.keep.iter().enumerate() {
            w[j] = f.w[k];
        }
        LinearModel::new(w, f.b)
    }

    pub fn dim(&self) -> usize {
        self.keep.len()
    }
}

/// Builds the learner view implied by a feature-type attribution error.
pub fn apply_partition_error(
    error: &PartitionError,
    partition: &FeaturePartition,
) -> Result<LearnerView> {
    let d = partition.total_dim();
    match error {
        PartitionError::Wrong { indices } => Ok(LearnerView {
            keep: (0..d).collect(),
            partition: partition.swap_roles(indices)?,
            full_dim: d,
        }),
        PartitionError::Discard { indices } => {
            for &i in indices {
                if i >= d {
                    return Err(CoreError::InvalidPartition(format!(
                        "discard index {i} out of range for dimension {d}"
                    )));
                }
            }
            let keep: Vec<usize> = (0..d).filter(|i| !indices.contains(i)).collect();
            if keep.is_empty() {
                return Err(CoreError::InvalidPartition(
                    "discarding every column leaves nothing to learn from".into(),
                ));
            }
            let causal: Vec<usize> = keep
                .iter()
                .enumerate()
                .filter(|(_, j)| partition.causal().contains(j))
                .map(|(k, _)| k)
                .collect();
            let correlative: Vec<usize> = keep
                .iter()
                .enumerate()
                .filter(|(_, j)| partition.correlative().contains(j))
                .map(|(k, _)| k)
                .collect();
            Ok(LearnerView {
                keep: keep.clone(),
                partition: FeaturePartition::new(causal, correlative, keep.len())?,
                full_dim: d,
            })
        }
    }
}

/// Shared SGD hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainParams {
    pub f_lr: f64,
    pub h_lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub l2_f: f64,
    pub l2_h: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { f_lr: 0.01, h_lr: 0.01, batch: 64, epochs: 100, patience: 7, l2_f: 0.0, l2_h: 0.0 }
    }
}

/// Tracks the best snapshot and stops after `patience` flat epochs.
struct EarlyStopper<P> {
    best_score: f64,
    best: P,
    flat: usize,
    patience: usize,
}

impl<P: Clone> EarlyStopper<P> {
    fn new(initial_score: f64, initial: P, patience: usize) -> Self {
        Self { best_score: initial_score, best: initial, flat: 0, patience }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, score: f64, params: &P) -> bool {
        if score > self.best_score {
            self.best_score = score;
            self.best = params.clone();
            self.flat = 0;
        } else {
            self.flat += 1;
        }
        self.flat >= self.patience
    }
}

/// Trains the label estimate on `(h-input, target)` rows by mini-batch
/// SGD on log loss through the tanh output, with early stopping on a
/// held-out slice of the data.
pub fn train_h(
    spec: &HypothesisSpec,
    features: &Matrix,
    targets: &[f64],
    params: &TrainParams,
    seed: u64,
) -> Result<HypothesisModel> {
    if features.rows() == 0 {
        return Err(CoreError::EmptyData);
    }
    let mut model = spec.build(features.cols(), seeds::derive(seed, seeds::salt::H_INIT));
    if params.epochs == 0 {
        return Ok(model);
    }

    let n = features.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seeds::derive(seed, seeds::salt::VALIDATION)));
    let holdout = if n >= 10 { n / 10 } else { 0 };
    let (held, train): (Vec<usize>, Vec<usize>) =
        (order[..holdout].to_vec(), order[holdout..].to_vec());

    let accuracy = |m: &HypothesisModel| -> f64 {
        if held.is_empty() {
            return 0.0;
        }
        let correct = held
            .iter()
            .filter(|&&i| {
                let v = m.value(features.row(i));
                (v >= 0.0) == (targets[i] >= 0.0)
            })
            .count();
        correct as f64 / held.len() as f64
    };

    let mut stopper = EarlyStopper::new(accuracy(&model), model.params(), params.patience);
    let pcount = model.param_count();
    let kinds = model.param_kinds();
    let mut grads = vec![0.0; pcount];
    let mut shuffled = train.clone();

    for epoch in 0..params.epochs {
        shuffled
            .shuffle(&mut seeds::rng(seeds::derive2(seed, seeds::salt::H_TRAIN, epoch as u64)));
        for chunk in shuffled.chunks(params.batch.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let x = features.row(i);
                let z = model.raw(x);
                let p = crate::cost::sigmoid(2.0 * z);
                let q = (1.0 + targets[i]) / 2.0;
                let upstream = 2.0 * (p - q);
                model.accumulate_param_grad(x, upstream, &mut grads);
            }
            let mut p = model.params();
            let scale = params.h_lr / chunk.len() as f64;
            for (k, (pk, g)) in p.iter_mut().zip(&grads).enumerate() {
                let mut step = g * scale;
                if params.l2_h > 0.0 && kinds[k] == ParamKind::Weight {
                    step += params.h_lr * 2.0 * params.l2_h * *pk;
                }
                *pk -= step;
                if !pk.is_finite() {
                    return Err(CoreError::Divergence("estimate parameters left the reals".into()));
                }
            }
            model.set_params(&p);
        }
        if !held.is_empty() && stopper.observe(accuracy(&model), &model.params()) {
            break;
        }
    }
    if !held.is_empty() {
        model.set_params(&stopper.best);
    }
    Ok(model)
}

/// The classifier training objective, bound to its data.
pub enum FObjective<'a> {
    Erm {
        features: &'a Matrix,
        labels: &'a [f64],
        l2: f64,
    },
    Serm {
        cost: &'a CostModel,
        features: &'a Matrix,
        labels: &'a [f64],
        l2: f64,
    },
    Cserm {
        h: &'a HypothesisModel,
        q_hat: Option<&'a DensityModel>,
        features: &'a Matrix,
        labels: &'a [f64],
        cfg: ObjectiveConfig<'a>,
    },
    OracleExact {
        oracle: &'a LabelOracle,
        hidden: &'a Matrix,
        q_hat: Option<&'a DensityModel>,
        features: &'a Matrix,
        labels: &'a [f64],
        draw_seed: u64,
        cfg: ObjectiveConfig<'a>,
    },
}

impl<'a> FObjective<'a> {
    fn rows(&self) -> usize {
        match self {
            FObjective::Erm { features, .. }
            | FObjective::Serm { features, .. }
            | FObjective::Cserm { features, .. }
            | FObjective::OracleExact { features, .. } => features.rows(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            FObjective::Erm { features, .. }
            | FObjective::Serm { features, .. }
            | FObjective::Cserm { features, .. }
            | FObjective::OracleExact { features, .. } => features.cols(),
        }
    }

    fn eval_batch(&self, f: &LinearModel, idx: &[usize]) -> Result<crate::objective::LossEval> {
        match self {
            FObjective::Erm { features, labels, l2 } => {
                erm_objective_batch(f, features, labels, *l2, idx)
            }
            FObjective::Serm { cost, features, labels, l2 } => {
                serm_objective_batch(f, cost, features, labels, *l2, idx)
            }
            FObjective::Cserm { h, q_hat, features, labels, cfg } => {
                cserm_objective_batch(f, h, *q_hat, features, labels, cfg, idx)
            }
            FObjective::OracleExact { oracle, hidden, q_hat, features, labels, draw_seed, cfg } => {
                oracle_objective_batch(
                    f, oracle, hidden, *q_hat, features, labels, *draw_seed, cfg, idx,
                )
            }
        }
    }
}

/// Trains the linear classifier by mini-batch SGD on the given objective,
/// scoring candidates with `validator` after each epoch and returning the
/// best snapshot.
pub fn train_f(
    objective: &FObjective,
    params: &TrainParams,
    seed: u64,
    validator: &dyn Fn(&LinearModel) -> f64,
) -> Result<LinearModel> {
    let mut f = LinearModel::zeros(objective.dim());
    if params.epochs == 0 {
        return Ok(f);
    }
    let n = objective.rows();
    if n == 0 {
        return Err(CoreError::EmptyData);
    }
    let mut stopper = EarlyStopper::new(validator(&f), f.clone(), params.patience);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..params.epochs {
        order.shuffle(&mut seeds::rng(seeds::derive2(seed, seeds::salt::F_TRAIN, epoch as u64)));
        for chunk in order.chunks(params.batch.max(1)) {
            let eval = objective.eval_batch(&f, chunk)?;
            if !eval.loss.is_finite() {
                return Err(CoreError::Divergence(format!("loss became {}", eval.loss)));
            }
            for (w, g) in f.w.iter_mut().zip(&eval.grad_w) {
                *w -= params.f_lr * g;
            }
            f.b -= params.f_lr * eval.grad_b;
            if f.w.iter().any(|w| !w.is_finite()) || !f.b.is_finite() {
                return Err(CoreError::Divergence("classifier parameters left the reals".into()));
            }
        }
        if stopper.observe(validator(&f), &f) {
            break;
        }
    }
    Ok(stopper.best)
}

/// Dirty rows prepared for training: movers get their correlative block
/// reconstructed from the clean density, non-movers pass through, and
/// causal coordinates are never touched. Returns the prepared matrix and
/// the count of reconstruction underflows that fell back to the observed
/// values.
#[allow(clippy::too_many_arguments)]
pub fn prepare_dirty(
    dirty_features: &Matrix,
    f_prev: &LinearModel,
    cost: &CostModel,
    p_hat: &DensityModel,
    partition: &FeaturePartition,
    quad_points: usize,
    boundary_tol: f64,
    direction: ResponseDirection,
) -> Result<(Matrix, usize)> {
    let mut prepared = Matrix::zeros(dirty_features.rows(), dirty_features.cols());
    let mut fallbacks = 0usize;
    for i in 0..dirty_features.rows() {
        let row = dirty_features.row(i);
        let out: Vec<f64> = match reconstruct_xr(
            p_hat,
            f_prev,
            cost,
            row,
            partition,
            quad_points,
            boundary_tol,
            direction,
        ) {
            Ok(xr) => {
                let mut v = row.to_vec();
                for (k, &j) in partition.correlative().iter().enumerate() {
                    v[j] = xr[k];
                }
                v
            }
            Err(CoreError::DensityUnderflow) => {
                fallbacks += 1;
                row.to_vec()
            }
            Err(e) => return Err(e),
        };
        prepared.row_mut(i).copy_from_slice(&out);
    }
    Ok((prepared, fallbacks))
}

/// Builds the estimate's training input `(x_c ++ x_r)` from observed rows.
pub fn h_input_matrix(features: &Matrix, partition: &FeaturePartition) -> Matrix {
    let idx: Vec<usize> =
        partition.causal().iter().chain(partition.correlative()).copied().collect();
    features.select_columns(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let targets = vec![1.0, -1.0];
        let params = TrainParams { epochs: 0, ..Default::default() };
        let h = train_h(
            &HypothesisSpec::Polynomial { degree: 2 },
            &features,
            &targets,
            &params,
            3,
        )
        .unwrap();
        assert!(h.params().iter().all(|&p| p == 0.0));
        let obj = FObjective::Erm { features: &features, labels: &targets, l2: 0.0 };
        let f = train_f(&obj, &params, 3, &|_| 0.0).unwrap();
        assert!(f.w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn h_fits_separable_data() {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut rng = seeds::rng(8);
        use rand::Rng;
        for _ in 0..400 {
            let y: f64 = if rng.gen_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
            rows.push(vec![y + rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0)]);
            targets.push(y);
        }
        let features = Matrix::from_rows(&rows).unwrap();
        let h = train_h(
            &HypothesisSpec::Polynomial { degree: 1 },
            &features,
            &targets,
            &TrainParams::default(),
            5,
        )
        .unwrap();
        let correct = features
            .iter_rows()
            .zip(&targets)
            .filter(|(x, &y)| (h.value(x) >= 0.0) == (y >= 0.0))
            .count();
        assert!(correct as f64 / targets.len() as f64 >= 0.99);
    }

    #[test]
    fn f_training_is_deterministic() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut rng = seeds::rng(15);
        use rand::Rng;
        for _ in 0..120 {
            let y: f64 = if rng.gen_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
            rows.push(vec![y * 1.2 + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            labels.push(y);
        }
        let features = Matrix::from_rows(&rows).unwrap();
        let obj = FObjective::Erm { features: &features, labels: &labels, l2: 0.01 };
        let params = TrainParams { epochs: 20, ..Default::default() };
        let val = |f: &LinearModel| {
            features.iter_rows().zip(&labels).filter(|(x, &y)| f.predict(x) == y).count() as f64
        };
        let a = train_f(&obj, &params, 42, &val).unwrap();
        let b = train_f(&obj, &params, 42, &val).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_halts_after_patience() {
        // a validator that never improves stops after exactly `patience`
        // epochs; count the validator calls
        let features = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let labels = vec![1.0, -1.0];
        let obj = FObjective::Erm { features: &features, labels: &labels, l2: 0.0 };
        let params = TrainParams { epochs: 100, patience: 7, batch: 2, ..Default::default() };
        let epochs_seen = std::cell::Cell::new(0usize);
        let val = |_: &LinearModel| {
            epochs_seen.set(epochs_seen.get() + 1);
            0.0
        };
        train_f(&obj, &params, 1, &val).unwrap();
        // one initial call plus seven flat epochs
        assert_eq!(epochs_seen.get(), 8);
    }

    #[test]
    fn partition_error_wrong_swaps_roles() {
        let part = FeaturePartition::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let view = apply_partition_error(&PartitionError::Wrong { indices: vec![1, 2] }, &part)
            .unwrap();
        assert_eq!(view.keep, vec![0, 1, 2, 3]);
        assert_eq!(view.partition.causal(), &[0, 2]);
        assert_eq!(view.partition.correlative(), &[1, 3]);
        // empty set is the identity
        let id = apply_partition_error(&PartitionError::Wrong { indices: vec![] }, &part).unwrap();
        assert_eq!(id.partition, part);
        // all indices fully invert the partition
        let inv =
            apply_partition_error(&PartitionError::Wrong { indices: vec![0, 1, 2, 3] }, &part)
                .unwrap();
        assert_eq!(inv.partition.causal(), &[2, 3]);
    }

    #[test]
    fn partition_error_discard_reindexes() {
        let part = FeaturePartition::new(vec![0, 1], vec![2, 3], 4).unwrap();
        let view =
            apply_partition_error(&PartitionError::Discard { indices: vec![1] }, &part).unwrap();
        assert_eq!(view.keep, vec![0, 2, 3]);
        assert_eq!(view.partition.causal(), &[0]);
        assert_eq!(view.partition.correlative(), &[1, 2]);
        // lifting pads the dropped column with zero weight
        let f = LinearModel::new(vec![1.0, 2.0, 3.0], 0.5);
        let lifted = view.lift(&f);
        assert_eq!(lifted.w, vec![1.0, 0.0, 2.0, 3.0]);
        // out-of-range indices error
        assert!(
            apply_partition_error(&PartitionError::Discard { indices: vec![9] }, &part).is_err()
        );
    }

    #[test]
    fn prepare_dirty_keeps_non_movers_and_causal_block() {
        use rand::Rng;
        let mut rng = seeds::rng(70);
        let centers: Vec<Vec<f64>> =
            (0..20).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let p_hat = DensityModel::fit(&Matrix::from_rows(&centers).unwrap(), 0.6).unwrap();
        let f = LinearModel::new(vec![1.0, 1.0], 0.0);
        let cost = CostModel::isotropic(1.0).unwrap();
        let part = FeaturePartition::leading_causal(1, 2).unwrap();
        // row 0 is far from the boundary (non-mover), row 1 sits on it
        let dirty = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -0.5]]).unwrap();
        let (prepared, fallbacks) = prepare_dirty(
            &dirty,
            &f,
            &cost,
            &p_hat,
            &part,
            64,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        assert_eq!(fallbacks, 0);
        assert_eq!(prepared.row(0), dirty.row(0));
        // the mover keeps its causal coordinate but not its correlative one
        assert_eq!(prepared.get(1, 0), 0.5);
        assert!(prepared.get(1, 1) != -0.5);
        // determinism
        let (again, _) = prepare_dirty(
            &dirty,
            &f,
            &cost,
            &p_hat,
            &part,
            64,
            crate::cost::DEFAULT_BOUNDARY_TOL,
            ResponseDirection::EuclideanNormal,
        )
        .unwrap();
        assert_eq!(prepared, again);
    }

    #[test]
    fn lambda_schedule_decays() {
        let m = Method::Cserm { lambda0: 5.0, decay: 0.4 };
        assert_eq!(m.lambda_at(0), 5.0);
        assert!((m.lambda_at(1) - 2.0).abs() < 1e-12);
        assert!((m.lambda_at(2) - 0.8).abs() < 1e-12);
        assert_eq!(Method::Erm.lambda_at(3), 0.0);
    }
}
