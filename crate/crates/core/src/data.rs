//! Datasets, feature partitions, and deterministic splitting.
//!
//! A [`Dataset`] bundles the observed feature matrix, optional hidden
//! features (simulator-side only; never handed to learners), labels in
//! {-1,+1}, and the causal/correlative column partition.

use rand::seq::SliceRandom;

use crate::error::{CoreError, Result};
use crate::mat::Matrix;
use crate::seeds;

/// Which observed columns are causal and which are correlative.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeaturePartition {
    causal: Vec<usize>,
    correlative: Vec<usize>,
    total_dim: usize,
}

impl FeaturePartition {
    pub fn new(causal: Vec<usize>, correlative: Vec<usize>, total_dim: usize) -> Result<Self> {
        let strictly_increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !strictly_increasing(&causal) || !strictly_increasing(&correlative) {
            return Err(CoreError::InvalidPartition(
                "index lists must be strictly increasing".into(),
            ));
        }
        let mut seen = vec![false; total_dim];
        for &i in causal.iter().chain(&correlative) {
            if i >= total_dim {
                return Err(CoreError::InvalidPartition(format!(
                    "index {i} out of range for dimension {total_dim}"
                )));
            }
            if seen[i] {
                return Err(CoreError::InvalidPartition(format!("index {i} listed twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(CoreError::InvalidPartition(
                "causal and correlative indices must cover every column".into(),
            ));
        }
        Ok(Self { causal, correlative, total_dim })
    }

    /// Partition with causal columns `0..causal_dim` and the rest correlative.
    pub fn leading_causal(causal_dim: usize, total_dim: usize) -> Result<Self> {
        Self::new((0..causal_dim).collect(), (causal_dim..total_dim).collect(), total_dim)
    }

    pub fn causal(&self) -> &[usize] {
        &self.causal
    }

    pub fn correlative(&self) -> &[usize] {
        &self.correlative
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn causal_dim(&self) -> usize {
        self.causal.len()
    }

    pub fn correlative_dim(&self) -> usize {
        self.correlative.len()
    }

    /// Swaps the causal/correlative role of the listed columns.
    pub fn swap_roles(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.total_dim {
                return Err(CoreError::InvalidPartition(format!(
                    "swap index {i} out of range for dimension {}",
                    self.total_dim
                )));
            }
        }
        let flip = |v: &[usize], other: &[usize]| -> Vec<usize> {
            let mut kept: Vec<usize> = v.iter().copied().filter(|i| !indices.contains(i)).collect();
            kept.extend(other.iter().copied().filter(|i| indices.contains(i)));
            kept.sort_unstable();
            kept
        };
        Self::new(
            flip(&self.causal, &self.correlative),
            flip(&self.correlative, &self.causal),
            self.total_dim,
        )
    }
}

/// Observed features, optional hidden features, and labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub hidden: Option<Matrix>,
    pub labels: Vec<f64>,
    pub partition: FeaturePartition,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        hidden: Option<Matrix>,
        labels: Vec<f64>,
        partition: FeaturePartition,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(h) = &hidden {
            if h.rows() != features.rows() {
                return Err(CoreError::DimensionMismatch(format!(
                    "{} hidden rows for {} feature rows",
                    h.rows(),
                    features.rows()
                )));
            }
        }
        if partition.total_dim() != features.cols() {
            return Err(CoreError::InvalidPartition(format!(
                "partition over {} columns but features have {}",
                partition.total_dim(),
                features.cols()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(CoreError::InvalidLabels(format!("label {bad} is not in {{-1,+1}}")));
        }
        Ok(Self { features, hidden, labels, partition })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn take_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            hidden: self.hidden.as_ref().map(|h| h.select_rows(idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            partition: self.partition.clone(),
        }
    }
}

/// Row budget for the clean/inventory/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_clean: usize,
    pub dirty_inventory: usize,
    pub validation: usize,
    pub test: usize,
    pub rounds: usize,
}

impl SplitSpec {
    pub fn new(
        train_clean: usize,
        dirty_inventory: usize,
        validation: usize,
        test: usize,
        rounds: usize,
    ) -> Result<Self> {
        if rounds == 0 {
            return Err(CoreError::InvalidSpec("rounds must be at least 1".into()));
        }
        if dirty_inventory % rounds != 0 {
            return Err(CoreError::InvalidSpec(format!(
                "dirty inventory {dirty_inventory} is not divisible by {rounds} rounds"
            )));
        }
        Ok(Self { train_clean, dirty_inventory, validation, test, rounds })
    }

    pub fn total(&self) -> usize {
        self.train_clean + self.dirty_inventory + self.validation + self.test
    }
}

/// Output of [`split`]: disjoint row subsets drawn by a seeded shuffle.
#[derive(Debug, Clone)]
pub struct Split {
    pub clean: Dataset,
    pub inventory: Vec<Dataset>,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Splits `data` into clean / T inventory batches / validation / test.
///
/// Deterministic for a fixed seed; the inventory is consumed in `rounds`
/// equal consecutive batches of the shuffled order.
pub fn split(data: &Dataset, spec: &SplitSpec, seed: u64) -> Result<Split> {
    if spec.total() > data.len() {
        return Err(CoreError::SplitSizing(format!(
            "requested {} rows but dataset has {}",
            spec.total(),
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seeds::rng(seed));

    let mut cursor = 0usize;
    let mut take = |n: usize| {
        let slice = order[cursor..cursor + n].to_vec();
        cursor += n;
        slice
    };
    let clean_idx = take(spec.train_clean);
    let batch_size = spec.dirty_inventory / spec.rounds;
    let inventory: Vec<Dataset> =
        (0..spec.rounds).map(|_| data.take_rows(&take(batch_size))).collect();
    let validation_idx = take(spec.validation);
    let test_idx = take(spec.test);

    Ok(Split {
        clean: data.take_rows(&clean_idx),
        inventory,
        validation: data.take_rows(&validation_idx),
        test: data.take_rows(&test_idx),
    })
}

/// Column selector for [`project`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Causal,
    Correlative,
    All,
}

/// Projects the feature matrix onto the selected partition block,
/// with columns in partition order.
pub fn project(data: &Dataset, selector: Selector) -> Matrix {
    match selector {
        Selector::Causal => data.features.select_columns(data.partition.causal()),
        Selector::Correlative => data.features.select_columns(data.partition.correlative()),
        Selector::All => data.features.clone(),
    }
}

/// Gathers the listed coordinates of a single row.
pub fn gather(row: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| row[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, d: usize) -> Dataset {
        let mut features = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                features.set(i, j, (i * d + j) as f64);
            }
        }
        let labels = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let partition = FeaturePartition::leading_causal(1, d).unwrap();
        Dataset::new(features, None, labels, partition).unwrap()
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        assert!(FeaturePartition::new(vec![0, 1], vec![1, 2], 3).is_err());
        assert!(FeaturePartition::new(vec![0], vec![2], 3).is_err());
        assert!(FeaturePartition::new(vec![1, 0], vec![2], 3).is_err());
        assert!(FeaturePartition::new(vec![0], vec![1, 2], 3).is_ok());
    }

    #[test]
    fn labels_must_be_signs() {
        let features = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let partition = FeaturePartition::leading_causal(1, 1).unwrap();
        let err = Dataset::new(features, None, vec![1.0, 0.5], partition);
        assert!(matches!(err, Err(CoreError::InvalidLabels(_))));
    }

    #[test]
    fn split_batches_match_spec() {
        // 5500 rows split (1000, 2000, 500, 2000, T=10) -> batches of 200.
        let data = toy(5500, 2);
        let spec = SplitSpec::new(1000, 2000, 500, 2000, 10).unwrap();
        let s = split(&data, &spec, 3).unwrap();
        assert_eq!(s.clean.len(), 1000);
        assert_eq!(s.inventory.len(), 10);
        assert!(s.inventory.iter().all(|b| b.len() == 200));
        assert_eq!(s.validation.len(), 500);
        assert_eq!(s.test.len(), 2000);
    }

    #[test]
    fn split_degenerate_takes_whole_set() {
        let data = toy(10, 2);
        let spec = SplitSpec::new(10, 0, 0, 0, 1).unwrap();
        let s = split(&data, &spec, 0).unwrap();
        assert_eq!(s.clean.len(), 10);
        assert!(s.inventory[0].is_empty());
        assert!(s.test.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let data = toy(50, 3);
        let spec = SplitSpec::new(20, 12, 8, 10, 4).unwrap();
        let a = split(&data, &spec, 42).unwrap();
        let b = split(&data, &spec, 42).unwrap();
        assert_eq!(a.clean.features, b.clean.features);
        assert_eq!(a.test.features, b.test.features);

        // Disjointness: first columns identify the source row uniquely.
        let mut seen = std::collections::HashSet::new();
        let mut record = |m: &Matrix| {
            for r in m.iter_rows() {
                assert!(seen.insert(r[0].to_bits()), "row reused across splits");
            }
        };
        record(&a.clean.features);
        for b in &a.inventory {
            record(&b.features);
        }
        record(&a.validation.features);
        record(&a.test.features);
    }

    #[test]
    fn split_rejects_oversized_spec() {
        let data = toy(10, 2);
        let spec = SplitSpec::new(8, 2, 2, 2, 1).unwrap();
        assert!(matches!(split(&data, &spec, 0), Err(CoreError::SplitSizing(_))));
    }

    #[test]
    fn indivisible_inventory_is_a_spec_error() {
        assert!(matches!(SplitSpec::new(10, 7, 0, 0, 3), Err(CoreError::InvalidSpec(_))));
    }

    #[test]
    fn project_selects_partition_columns() {
        let features = Matrix::from_rows(&[vec![5.0, 7.0, 9.0]]).unwrap();
        let partition = FeaturePartition::new(vec![0], vec![1, 2], 3).unwrap();
        let data = Dataset::new(features, None, vec![1.0], partition).unwrap();
        assert_eq!(project(&data, Selector::Causal).row(0), &[5.0]);
        assert_eq!(project(&data, Selector::Correlative).row(0), &[7.0, 9.0]);
        assert_eq!(project(&data, Selector::All).row(0), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn projections_reassemble_rows() {
        let data = toy(6, 4);
        let causal = project(&data, Selector::Causal);
        let corr = project(&data, Selector::Correlative);
        for i in 0..data.len() {
            let mut rebuilt = vec![0.0; data.dim()];
            for (k, &j) in data.partition.causal().iter().enumerate() {
                rebuilt[j] = causal.get(i, k);
            }
            for (k, &j) in data.partition.correlative().iter().enumerate() {
                rebuilt[j] = corr.get(i, k);
            }
            assert_eq!(rebuilt.as_slice(), data.features.row(i));
        }
    }

    #[test]
    fn swap_roles_inverts_partition() {
        let p = FeaturePartition::new(vec![0, 2], vec![1, 3], 4).unwrap();
        let swapped = p.swap_roles(&[0, 1, 2, 3]).unwrap();
        assert_eq!(swapped.causal(), &[1, 3]);
        assert_eq!(swapped.correlative(), &[0, 2]);
        let identity = p.swap_roles(&[]).unwrap();
        assert_eq!(identity, p);
    }
}
