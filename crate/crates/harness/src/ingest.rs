//! Tabular pipelines: CSV ingestion with Z-score normalization, minority
//! oversampling by KDE, construction of correlative features from hidden
//! columns, and the fitted labeling oracle. When the configured CSV is
//! absent, a Gaussian stand-in with the same dimensionalities and
//! partition takes its place so every downstream experiment still runs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use cstrat_core::seeds::{self, salt};
use cstrat_core::{
    fit_semi_synthetic_oracle, CostModel, Dataset, DensityModel, FeaturePartition, LabelOracle,
    Matrix, SemiSyntheticKind,
};

use crate::config::Config;
use crate::HarnessError;

pub struct SemiSyntheticWorld {
    pub data: Dataset,
    pub oracle: LabelOracle,
    pub cost: CostModel,
    /// true when a real CSV backed the pipeline, false for the stand-in
    pub from_csv: bool,
    pub warnings: Vec<String>,
}

/// Z-scores every column in place (population moments) and then divides
/// by the square root of the column count. Constant columns map to zero
/// and are reported as warnings.
pub fn normalize(matrix: &mut Matrix) -> Vec<String> {
    let (n, d) = (matrix.rows(), matrix.cols());
    let mut warnings = Vec::new();
    let scale = (d as f64).sqrt();
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| matrix.get(i, j)).sum::<f64>() / n as f64;
        let var: f64 =
            (0..n).map(|i| (matrix.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        if var == 0.0 {
            warnings.push(format!("column {j} is constant; mapped to zeros"));
            for i in 0..n {
                matrix.set(i, j, 0.0);
            }
            continue;
        }
        let std = var.sqrt();
        for i in 0..n {
            matrix.set(i, j, (matrix.get(i, j) - mean) / std / scale);
        }
    }
    warnings
}

/// Raw rows: kept columns in `[causal..., u...]` order plus original labels.
struct RawTable {
    features: Matrix,
    labels: Vec<f64>,
}

fn load_csv(cfg: &Config, path: &std::path::Path) -> Result<RawTable, HarnessError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::Config(format!("csv header error: {e}")))?
        .clone();
    let col_index: BTreeMap<&str, usize> =
        headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let label_name = cfg
        .scenario
        .label_column
        .as_deref()
        .ok_or_else(|| HarnessError::Config("csv scenarios need a label_column".into()))?;
    let label_idx = *col_index
        .get(label_name)
        .ok_or_else(|| HarnessError::Config(format!("label column '{label_name}' not found")))?;
    let mut feature_idx = Vec::new();
    for name in cfg.scenario.causal_columns.iter().chain(&cfg.scenario.u_columns) {
        let idx = *col_index
            .get(name.as_str())
            .ok_or_else(|| HarnessError::Config(format!("column '{name}' not found")))?;
        feature_idx.push(idx);
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| HarnessError::Config(format!("csv row error: {e}")))?;
        let mut row = Vec::with_capacity(feature_idx.len());
        for &idx in &feature_idx {
            let v: f64 = record
                .get(idx)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| HarnessError::Config(format!("non-numeric feature value: {e}")))?;
            row.push(v);
        }
        rows.push(row);
        raw_labels.push(record.get(label_idx).unwrap_or("").trim().to_string());
    }
    if rows.is_empty() {
        return Err(HarnessError::Config("csv has no data rows".into()));
    }

    let mut classes: Vec<&String> = Vec::new();
    for l in &raw_labels {
        if !classes.contains(&l) {
            classes.push(l);
        }
    }
    if classes.len() != 2 {
        return Err(HarnessError::Config(format!(
            "label column must have exactly two classes, found {}",
            classes.len()
        )));
    }
    let positive = cfg
        .scenario
        .positive_label
        .clone()
        .unwrap_or_else(|| classes.iter().max().unwrap().to_string());
    if !classes.iter().any(|c| **c == positive) {
        return Err(HarnessError::Config(format!(
            "positive label '{positive}' does not occur in the data"
        )));
    }
    let labels: Vec<f64> =
        raw_labels.iter().map(|l| if *l == positive { 1.0 } else { -1.0 }).collect();
    Ok(RawTable { features: Matrix::from_rows(&rows)?, labels })
}

/// Balanced Gaussian stand-in with the configured dimensionalities: each
/// coordinate carries a seeded class separation, so the fitted oracle has
/// signal on both the causal and the hidden blocks.
fn standin_table(cfg: &Config, seed: u64) -> Result<RawTable, HarnessError> {
    let d = cfg.scenario.causal_columns.len() + cfg.scenario.u_columns.len();
    let n = cfg.scenario.pool_rows;
    let mut rng = seeds::rng(seeds::derive(seed, salt::SCENARIO));
    let separation: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..0.9)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y: f64 = if i % 2 == 0 { 1.0 } else { -1.0 };
        let row: Vec<f64> = separation
            .iter()
            .map(|&s| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                y * s + g
            })
            .collect();
        rows.push(row);
        labels.push(y);
    }
    Ok(RawTable { features: Matrix::from_rows(&rows)?, labels })
}

/// Oversamples the minority class by sampling a KDE fit on its rows,
/// then draws a balanced pool of `pool_rows` rows.
fn balanced_pool(
    table: &RawTable,
    pool_rows: usize,
    balance: bool,
    seed: u64,
) -> Result<RawTable, HarnessError> {
    let per_class = pool_rows / 2;
    let pos_idx: Vec<usize> =
        (0..table.labels.len()).filter(|&i| table.labels[i] == 1.0).collect();
    let neg_idx: Vec<usize> =
        (0..table.labels.len()).filter(|&i| table.labels[i] == -1.0).collect();
    if pos_idx.is_empty() || neg_idx.is_empty() {
        return Err(HarnessError::Config("one class is empty".into()));
    }

    let mut rng = seeds::rng(seeds::derive(seed, salt::AUGMENT));
    let mut take_class = |idx: &[usize], label: f64| -> Result<Vec<(Vec<f64>, f64)>, HarnessError> {
        let mut rows: Vec<Vec<f64>> =
            idx.iter().map(|&i| table.features.row(i).to_vec()).collect();
        if rows.len() < per_class {
            if !balance {
                return Err(HarnessError::Config(format!(
                    "class {label} has {} rows but {per_class} are needed; enable balance",
                    rows.len()
                )));
            }
            // augment with KDE draws from the minority rows
            let kde = DensityModel::fit(&Matrix::from_rows(&rows)?, kde_bandwidth(&rows))?;
            while rows.len() < per_class {
                rows.push(kde.sample(&mut rng));
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        Ok(order[..per_class].iter().map(|&k| (rows[k].clone(), label)).collect())
    };

    let mut combined = take_class(&pos_idx, 1.0)?;
    combined.extend(take_class(&neg_idx, -1.0)?);
    combined.shuffle(&mut rng);
    let rows: Vec<Vec<f64>> = combined.iter().map(|(r, _)| r.clone()).collect();
    let labels: Vec<f64> = combined.iter().map(|(_, y)| *y).collect();
    Ok(RawTable { features: Matrix::from_rows(&rows)?, labels })
}

/// Rule-of-thumb bandwidth for augmentation sampling.
fn kde_bandwidth(rows: &[Vec<f64>]) -> f64 {
    let m = rows.len() as f64;
    let d = rows.first().map_or(1, Vec::len) as f64;
    // average per-column standard deviation scaled by Scott's factor
    let mut total_var = 0.0f64;
    for j in 0..d as usize {
        let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / m;
        total_var += rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m;
    }
    let avg_std: f64 = (total_var / d).sqrt();
    (avg_std * m.powf(-1.0 / (d + 4.0))).max(1e-6)
}

/// Builds the full semi-synthetic pipeline: preprocess, fit the labeling
/// oracle on original labels, regenerate labels, and assemble observed
/// features `[x_c | x_r]` with hidden `u`.
pub fn build_semi_synthetic(cfg: &Config, seed: u64) -> Result<SemiSyntheticWorld, HarnessError> {
    let d_c = cfg.scenario.causal_columns.len();
    let d_u = cfg.scenario.u_columns.len();
    let xr_dim = cfg.scenario.xr_dim.unwrap_or(0);
    let from_csv = cfg
        .scenario
        .path
        .as_ref()
        .map(|p| p.exists())
        .unwrap_or(false);

    let mut table = if from_csv {
        load_csv(cfg, cfg.scenario.path.as_ref().unwrap())?
    } else {
        standin_table(cfg, seed)?
    };
    let mut warnings = normalize(&mut table.features);
    if !from_csv {
        warnings.push("csv absent; synthetic stand-in generated".to_string());
    }

    // The oracle is fit on a balanced subset of the original labels.
    let kind = match cfg.scenario.oracle.as_deref() {
        Some("mlp_noisy") => SemiSyntheticKind::MlpNoisy,
        Some("linear_tricky") => SemiSyntheticKind::LinearTricky,
        other => {
            return Err(HarnessError::Config(format!("unsupported oracle kind {other:?}")))
        }
    };
    let fit_table = balanced_fit_subset(&table, seeds::derive(seed, salt::SUBSET));
    let oracle = fit_semi_synthetic_oracle(
        &fit_table.features,
        &fit_table.labels,
        d_c,
        kind,
        &cfg.scenario.oracle_fit.to_params(),
        seeds::derive(seed, salt::ORACLE),
    )?;

    // Balanced experiment pool, then labels regenerated through the oracle
    // so clean and dirty examples share one labeling mechanism.
    let pool = balanced_pool(&table, cfg.scenario.pool_rows, cfg.scenario.balance, seed)?;
    let n = pool.features.rows();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = pool.features.row(i);
        labels.push(oracle.label(
            &row[..d_c],
            &row[d_c..],
            seeds::derive2(seed, salt::ORACLE, i as u64),
        )?);
    }

    // x_r: the first xr_dim hidden columns through a seeded random map.
    let map_seed = cfg.scenario.xr_map_seed.unwrap_or_else(|| seeds::derive(seed, salt::XR_MAP));
    let mut rng = seeds::rng(map_seed);
    let mut map = Matrix::zeros(xr_dim, xr_dim);
    for i in 0..xr_dim {
        for j in 0..xr_dim {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            map.set(i, j, g / (xr_dim as f64).sqrt());
        }
    }

    let observed_dim = d_c + xr_dim;
    let mut observed = Matrix::zeros(n, observed_dim);
    let mut hidden = Matrix::zeros(n, d_u);
    for i in 0..n {
        let row = pool.features.row(i);
        let (x_c, u) = row.split_at(d_c);
        for (j, &v) in x_c.iter().enumerate() {
            observed.set(i, j, v);
        }
        for j in 0..xr_dim {
            let mut v = 0.0;
            for k in 0..xr_dim {
                v += map.get(j, k) * u[k];
            }
            observed.set(i, d_c + j, v);
        }
        hidden.row_mut(i).copy_from_slice(u);
    }

    let partition = FeaturePartition::leading_causal(d_c, observed_dim)?;
    Ok(SemiSyntheticWorld {
        data: Dataset::new(observed, Some(hidden), labels, partition)?,
        oracle,
        cost: CostModel::isotropic(cfg.cost.alpha)?,
        from_csv,
        warnings,
    })
}

/// Equal-count subset of both classes for oracle fitting.
fn balanced_fit_subset(table: &RawTable, seed: u64) -> RawTable {
    let pos: Vec<usize> = (0..table.labels.len()).filter(|&i| table.labels[i] == 1.0).collect();
    let neg: Vec<usize> = (0..table.labels.len()).filter(|&i| table.labels[i] == -1.0).collect();
    let per_class = pos.len().min(neg.len());
    let mut rng = seeds::rng(seed);
    let mut pick = |idx: &[usize]| -> Vec<usize> {
        let mut v = idx.to_vec();
        v.shuffle(&mut rng);
        v.truncate(per_class);
        v
    };
    let mut rows = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for i in pick(&pos).into_iter().chain(pick(&neg)) {
        rows.push(table.features.row(i).to_vec());
        labels.push(table.labels[i]);
    }
    RawTable { features: Matrix::from_rows(&rows).unwrap(), labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standin_config(oracle: &str, d_c: usize, d_u: usize, xr: usize) -> Config {
        let causal: Vec<String> = (0..d_c).map(|i| format!("\"c{i}\"")).collect();
        let us: Vec<String> = (0..d_u).map(|i| format!("\"u{i}\"")).collect();
        let text = format!(
            r#"
[experiment]
name = "standin"
repetitions = 1
base_seed = 1
methods = ["erm"]

[scenario]
kind = "csv"
path = "does/not/exist.csv"
label_column = "y"
causal_columns = [{}]
u_columns = [{}]
xr_dim = {xr}
xr_map_seed = 99
oracle = "{oracle}"
pool_rows = 600

[split]
train_clean = 100
dirty_inventory = 200
validation = 100
test = 200
rounds = 4

[cost]
alpha = 1.0

[hypothesis]
kind = "mlp"
hidden_widths = [10, 10, 10]
"#,
            causal.join(", "),
            us.join(", "),
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn normalization_hits_unit_variance_over_dim() {
        let mut m = Matrix::from_rows(&[
            vec![1.0, 5.0],
            vec![2.0, 5.0],
            vec![3.0, 5.0],
            vec![4.0, 5.0],
        ])
        .unwrap();
        let warnings = normalize(&mut m);
        assert_eq!(warnings.len(), 1, "constant column warned");
        let d = 2.0f64;
        let mean: f64 = (0..4).map(|i| m.get(i, 0)).sum::<f64>() / 4.0;
        let var: f64 = (0..4).map(|i| (m.get(i, 0) - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0 / d).abs() < 1e-8);
        assert!((0..4).all(|i| m.get(i, 1) == 0.0));
    }

    #[test]
    fn standin_builds_fraud_like_world() {
        let cfg = standin_config("mlp_noisy", 6, 16, 6);
        let world = build_semi_synthetic(&cfg, 5).unwrap();
        assert!(!world.from_csv);
        assert_eq!(world.data.dim(), 12);
        assert_eq!(world.data.hidden.as_ref().unwrap().cols(), 16);
        assert_eq!(world.data.len(), 600);
        assert_eq!(world.data.partition.causal().len(), 6);
        // oracle-regenerated labels stay roughly balanced
        let pos = world.data.labels.iter().filter(|&&y| y == 1.0).count();
        assert!(pos > 150 && pos < 450, "positives: {pos}");
    }

    #[test]
    fn standin_spam_like_uses_tricky_oracle() {
        let mut cfg = standin_config("linear_tricky", 3, 12, 2);
        cfg.scenario.oracle_fit.calibrate_flip_rate = Some(0.05);
        let world = build_semi_synthetic(&cfg, 5).unwrap();
        assert_eq!(world.data.dim(), 5);
        assert!(matches!(world.oracle, LabelOracle::LinearTricky { .. }));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = standin_config("mlp_noisy", 4, 6, 3);
        let a = build_semi_synthetic(&cfg, 9).unwrap();
        let b = build_semi_synthetic(&cfg, 9).unwrap();
        assert_eq!(a.data.features, b.data.features);
        assert_eq!(a.data.labels, b.data.labels);
    }

    #[test]
    fn csv_roundtrip_with_augmentation() {
        // write a small imbalanced csv and ingest it
        let dir = std::env::temp_dir().join(format!("cstrat_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.csv");
        let mut w = String::from("a,b,c,y\n");
        let mut rng = seeds::rng(3);
        for i in 0..200 {
            let y = if i % 10 == 0 { "bad" } else { "good" };
            let s = if i % 10 == 0 { -1.0 } else { 1.0 };
            w.push_str(&format!(
                "{},{},{},{y}\n",
                s + rng.gen_range(-0.5..0.5),
                s + rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5)
            ));
        }
        std::fs::write(&path, w).unwrap();

        let text = format!(
            r#"
[experiment]
name = "csv"
repetitions = 1
base_seed = 1
methods = ["erm"]

[scenario]
kind = "csv"
path = "{}"
label_column = "y"
positive_label = "good"
causal_columns = ["a"]
u_columns = ["b", "c"]
xr_dim = 2
oracle = "mlp_noisy"
pool_rows = 300

[split]
train_clean = 100
dirty_inventory = 100
validation = 50
test = 50
rounds = 2

[cost]
alpha = 1.0

[hypothesis]
kind = "mlp"
"#,
            path.display()
        );
        let cfg: Config = toml::from_str(&text).unwrap();
        let world = build_semi_synthetic(&cfg, 4).unwrap();
        assert!(world.from_csv);
        assert_eq!(world.data.len(), 300);
        // balanced after augmentation
        let pos = world.data.labels.iter().filter(|&&y| y == 1.0).count();
        assert!(pos > 60 && pos < 240, "positives {pos}");
        std::fs::remove_dir_all(&dir).ok();
    }
}
