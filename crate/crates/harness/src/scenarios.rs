//! Synthetic two-dimensional worlds: Gaussian cluster mixtures with a
//! labeling oracle over `(x_c, u)`; the first coordinate is causal, the
//! second is both the correlative feature and the hidden feature.

use cstrat_core::seeds::{self, salt};
use cstrat_core::{CostModel, Dataset, Ellipse, FeaturePartition, LabelOracle, Matrix};

use crate::config::Config;
use crate::HarnessError;

pub struct ScenarioWorld {
    pub data: Dataset,
    pub oracle: LabelOracle,
    pub cost: CostModel,
}

struct Cluster {
    center: [f64; 2],
    /// per-coordinate variances
    var: [f64; 2],
    fraction: f64,
}

fn gaussian(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_clusters(clusters: &[Cluster], n: usize, seed: u64) -> Vec<[f64; 2]> {
    // exact per-cluster counts, remainder to the largest cluster
    let mut counts: Vec<usize> =
        clusters.iter().map(|c| (c.fraction * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let largest = clusters
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.fraction.partial_cmp(&b.fraction).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    counts[largest] += n - assigned;

    let mut rng = seeds::rng(seed);
    let mut points = Vec::with_capacity(n);
    for (cluster, &count) in clusters.iter().zip(&counts) {
        for _ in 0..count {
            points.push([
                cluster.center[0] + cluster.var[0].sqrt() * gaussian(&mut rng),
                cluster.center[1] + cluster.var[1].sqrt() * gaussian(&mut rng),
            ]);
        }
    }
    points
}

/// Builds one of the three synthetic worlds at the configured sizes.
/// `x1 = x_c`, `x2 = x_r = u`: the observed features are both coordinates
/// and the hidden feature pins the second coordinate's clean value.
pub fn generate_scenario(cfg: &Config, n: usize, seed: u64) -> Result<ScenarioWorld, HarnessError> {
    let (clusters, oracle, alpha): (Vec<Cluster>, LabelOracle, f64) = match cfg.scenario.kind.as_str() {
        "synthetic_a" => {
            let o = &cfg.scenario.linear_oracle;
            (
                vec![
                    Cluster { center: [2.0, 2.0], var: [0.4, 0.4], fraction: 0.15 },
                    Cluster { center: [-5.5, -5.5], var: [0.6, 0.6], fraction: 0.10 },
                    Cluster { center: [-2.0, -2.0], var: [0.6, 0.6], fraction: 0.75 },
                ],
                LabelOracle::LinearNoisy {
                    w: o.w.clone(),
                    b: o.b,
                    noise_width: o.noise_width,
                    flip_scale: o.flip_scale,
                    seed: seeds::derive(seed, salt::ORACLE),
                },
                cfg.cost.alpha,
            )
        }
        "synthetic_b" => {
            let o = &cfg.scenario.circle_oracle;
            (
                vec![
                    Cluster { center: [0.0, 0.0], var: [0.3, 0.3], fraction: 0.5 },
                    Cluster { center: [-5.5, -5.5], var: [0.3, 0.45], fraction: 0.5 },
                ],
                LabelOracle::Circle { center: o.center, radius: o.radius },
                cfg.cost.alpha,
            )
        }
        "synthetic_c" => {
            let o = &cfg.scenario.ellipse_oracle;
            (
                vec![
                    Cluster { center: [0.0, 2.5], var: [0.3, 0.3], fraction: 0.25 },
                    Cluster { center: [0.0, -2.5], var: [0.3, 0.3], fraction: 0.25 },
                    Cluster { center: [2.5, 0.0], var: [0.3, 0.3], fraction: 0.25 },
                    Cluster { center: [-2.5, 0.0], var: [0.3, 0.3], fraction: 0.25 },
                ],
                LabelOracle::XorEllipses {
                    ellipses: [
                        Ellipse {
                            center: [o.vertical_center_x, 0.0],
                            semi_axes: o.vertical_semi_axes,
                        },
                        Ellipse {
                            center: [-o.vertical_center_x, 0.0],
                            semi_axes: o.vertical_semi_axes,
                        },
                        Ellipse { center: [0.0, 0.0], semi_axes: o.horizontal_semi_axes },
                    ],
                },
                cfg.cost.alpha,
            )
        }
        other => {
            return Err(HarnessError::Config(format!("'{other}' is not a synthetic scenario")))
        }
    };

    let points = sample_clusters(&clusters, n, seeds::derive(seed, salt::SCENARIO));
    let mut features = Matrix::zeros(n, 2);
    let mut hidden = Matrix::zeros(n, 1);
    let mut labels = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        features.row_mut(i).copy_from_slice(p);
        hidden.set(i, 0, p[1]);
        labels.push(oracle.label(&p[..1], &p[1..], seeds::derive2(seed, salt::ORACLE, i as u64))?);
    }
    let partition = FeaturePartition::leading_causal(1, 2)?;
    Ok(ScenarioWorld {
        data: Dataset::new(features, Some(hidden), labels, partition)?,
        oracle,
        cost: CostModel::isotropic(alpha)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    fn base_config(kind: &str, alpha: f64) -> Config {
        let text = format!(
            r#"
[experiment]
name = "test"
repetitions = 1
base_seed = 1
methods = ["erm"]

[scenario]
kind = "{kind}"

[split]
train_clean = 500
dirty_inventory = 1500
validation = 100
test = 400
rounds = 10

[cost]
alpha = {alpha}

[hypothesis]
kind = "polynomial"
degree = 3
"#
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn scenario_sizes_and_partition() {
        let cfg = base_config("synthetic_a", 0.035);
        let world = generate_scenario(&cfg, 2500, 3).unwrap();
        assert_eq!(world.data.len(), 2500);
        assert_eq!(world.data.dim(), 2);
        assert_eq!(world.data.partition.causal(), &[0]);
        assert_eq!(world.data.partition.correlative(), &[1]);
        // x2 doubles as the hidden feature
        for i in 0..world.data.len() {
            assert_eq!(world.data.features.get(i, 1), world.data.hidden.as_ref().unwrap().get(i, 0));
        }
    }

    #[test]
    fn scenario_a_majority_classes_hold() {
        let cfg = base_config("synthetic_a", 0.035);
        let world = generate_scenario(&cfg, 4000, 7).unwrap();
        // the (2,2) cluster is solidly positive, (-5.5,-5.5) solidly negative
        let mut top_pos = 0;
        let mut top_n = 0;
        let mut bottom_neg = 0;
        let mut bottom_n = 0;
        for i in 0..world.data.len() {
            let x = world.data.features.row(i);
            if (x[0] - 2.0).abs() < 1.5 && (x[1] - 2.0).abs() < 1.5 {
                top_n += 1;
                top_pos += (world.data.labels[i] == 1.0) as usize;
            }
            if (x[0] + 5.5).abs() < 1.5 && (x[1] + 5.5).abs() < 1.5 {
                bottom_n += 1;
                bottom_neg += (world.data.labels[i] == -1.0) as usize;
            }
        }
        assert!(top_pos as f64 / top_n as f64 > 0.9);
        assert!(bottom_neg as f64 / bottom_n as f64 > 0.9);
    }

    #[test]
    fn scenario_b_clusters_match_labels() {
        let cfg = base_config("synthetic_b", 0.07);
        let world = generate_scenario(&cfg, 2000, 9).unwrap();
        let mut inside_pos = 0;
        let mut inside_n = 0;
        for i in 0..world.data.len() {
            let x = world.data.features.row(i);
            if x[0].hypot(x[1]) < 2.0 {
                inside_n += 1;
                inside_pos += (world.data.labels[i] == 1.0) as usize;
            }
        }
        assert_eq!(inside_pos, inside_n, "everything inside the circle is positive");
    }

    #[test]
    fn scenario_c_is_an_xor_layout() {
        let cfg = base_config("synthetic_c", 0.08);
        let world = generate_scenario(&cfg, 4000, 11).unwrap();
        let mut correct = 0usize;
        for i in 0..world.data.len() {
            let x = world.data.features.row(i);
            let expected = if x[1].abs() > x[0].abs() { 1.0 } else { -1.0 };
            correct += (world.data.labels[i] == expected) as usize;
        }
        // vertical clusters positive, horizontal clusters negative
        assert!(correct as f64 / world.data.len() as f64 > 0.95);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = base_config("synthetic_c", 0.08);
        let a = generate_scenario(&cfg, 1000, 5).unwrap();
        let b = generate_scenario(&cfg, 1000, 5).unwrap();
        assert_eq!(a.data.features, b.data.features);
        assert_eq!(a.data.labels, b.data.labels);
    }
}
