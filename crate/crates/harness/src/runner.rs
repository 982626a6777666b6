//! Experiment orchestration: (method x repetition) cells, deterministic
//! aggregation, result files, and the sweep protocols.
//!
//! Output contract per run directory:
//!   metrics.csv   one row per method/round/seed with every metric column
//!   summary.json  committed-model statistics per method
//!   plotdata/     per-round mean curves
//!   models/       committed classifier (and estimate) parameters

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use cstrat_core::learners::{LearnerView, Method, PartitionError};
use cstrat_core::seeds::{self, salt};
use cstrat_core::{
    apply_partition_error, run_dynamics, split, CostModel, DynamicsInputs, HypothesisModel,
    LabelOracle, LinearModel, MetricsReport, Split,
};

use crate::config::Config;
use crate::ingest::{build_semi_synthetic, SemiSyntheticWorld};
use crate::scenarios::generate_scenario;
use crate::HarnessError;

/// One (method, repetition) execution.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub method_name: String,
    pub rep: usize,
    pub rep_seed: u64,
    pub rounds: Vec<MetricsReport>,
    pub committed_round: usize,
    pub committed: MetricsReport,
    pub committed_f: LinearModel,
    pub committed_h: Option<HypothesisModel>,
    pub reconstruction_fallbacks: usize,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub cells: Vec<CellOutcome>,
    pub warnings: Vec<String>,
    pub from_csv: bool,
}

/// The data source shared by every repetition.
enum World {
    /// Regenerated per repetition (fresh sample of the whole scenario).
    Synthetic,
    /// Fixed pool with one oracle; repetitions re-split it.
    Semi(Box<SemiSyntheticWorld>),
}

struct RepWorld {
    split: Split,
    oracle: LabelOracle,
    cost: CostModel,
}

fn build_world(cfg: &Config, base_seed: u64) -> Result<(World, Vec<String>, bool), HarnessError> {
    match cfg.scenario.kind.as_str() {
        "csv" => {
            let semi = build_semi_synthetic(cfg, seeds::derive(base_seed, salt::SCENARIO))?;
            let warnings = semi.warnings.clone();
            let from_csv = semi.from_csv;
            Ok((World::Semi(Box::new(semi)), warnings, from_csv))
        }
        _ => Ok((World::Synthetic, Vec::new(), false)),
    }
}

fn build_rep_world(
    cfg: &Config,
    world: &World,
    base_seed: u64,
    rep: usize,
) -> Result<RepWorld, HarnessError> {
    let spec = cfg.split.to_spec()?;
    let split_seed = seeds::derive2(base_seed, salt::SPLIT, rep as u64);
    match world {
        World::Synthetic => {
            let scenario_seed = seeds::derive2(base_seed, salt::SCENARIO, rep as u64);
            let w = generate_scenario(cfg, spec.total(), scenario_seed)?;
            Ok(RepWorld { split: split(&w.data, &spec, split_seed)?, oracle: w.oracle, cost: w.cost })
        }
        World::Semi(semi) => Ok(RepWorld {
            split: split(&semi.data, &spec, split_seed)?,
            oracle: semi.oracle.clone(),
            cost: semi.cost.clone(),
        }),
    }
}

/// Runs one method on one repetition's split.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &Config,
    world: &World,
    method_name: &str,
    method: &Method,
    base_seed: u64,
    rep: usize,
    partition_error: Option<&PartitionError>,
) -> Result<CellOutcome, HarnessError> {
    let rep_world = build_rep_world(cfg, world, base_seed, rep)?;
    let rep_seed = seeds::derive2(base_seed, salt::REP, rep as u64);
    let view = match partition_error {
        Some(err) => apply_partition_error(err, &rep_world.split.clean.partition)?,
        None => LearnerView::identity(&rep_world.split.clean.partition),
    };
    let train = cfg.training.to_params();
    let hypothesis = cfg.hypothesis.to_spec()?;
    let density = cfg.density.to_config();
    let strategic = cfg.strategic_params();
    let inputs = DynamicsInputs {
        method,
        clean: &rep_world.split.clean,
        inventory: &rep_world.split.inventory,
        validation: &rep_world.split.validation,
        test: &rep_world.split.test,
        oracle: &rep_world.oracle,
        cost: &rep_world.cost,
        train: &train,
        hypothesis: &hypothesis,
        density: &density,
        strategic: &strategic,
        view,
        seed: rep_seed,
    };
    let trace = run_dynamics(&inputs)?;
    let committed = trace.committed();
    Ok(CellOutcome {
        method_name: method_name.to_string(),
        rep,
        rep_seed,
        rounds: trace.rounds.iter().map(|r| r.test_metrics.clone()).collect(),
        committed_round: trace.committed_round,
        committed: committed.test_metrics.clone(),
        committed_f: committed.f_full.clone(),
        committed_h: committed.h.clone(),
        reconstruction_fallbacks: trace.reconstruction_fallbacks,
    })
}

/// Executes every configured method over every repetition. Cells run in
/// parallel; results keep a fixed order so outputs are reproducible.
pub fn execute(cfg: &Config, seed_override: Option<u64>) -> Result<ExperimentResult, HarnessError> {
    let base_seed = seed_override.unwrap_or(cfg.experiment.base_seed);
    let (world, warnings, from_csv) = build_world(cfg, base_seed)?;

    let mut jobs = Vec::new();
    for name in &cfg.experiment.methods {
        let method = cfg.parse_method(name)?;
        for rep in 0..cfg.experiment.repetitions {
            jobs.push((name.clone(), method.clone(), rep));
        }
    }
    let outcomes: Vec<Result<CellOutcome, HarnessError>> = jobs
        .par_iter()
        .map(|(name, method, rep)| run_cell(cfg, &world, name, method, base_seed, *rep, None))
        .collect();
    let mut cells = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        cells.push(o?);
    }
    Ok(ExperimentResult { cells, warnings, from_csv })
}

#[derive(Debug, Clone, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

fn stat(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    if values.is_empty() {
        return Stat { mean: f64::NAN, stderr: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Stat { mean, stderr: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Stat { mean, stderr: (var / n).sqrt() }
}

#[derive(Debug, Serialize)]
pub struct MethodSummary {
    pub committed_round_mean: f64,
    pub accuracy: Stat,
    pub perceived: Stat,
    pub pct_move: Stat,
    pub pct_improve: Stat,
    pub pct_neg_to_pos: Stat,
    pub pct_pos_to_neg: Stat,
    pub welfare: Stat,
    pub reconstruction_fallbacks: usize,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub scenario: String,
    pub base_seed: u64,
    pub repetitions: usize,
    pub rounds: usize,
    pub from_csv: bool,
    pub methods: std::collections::BTreeMap<String, MethodSummary>,
    pub warnings: Vec<String>,
}

pub fn summarize(cfg: &Config, result: &ExperimentResult, base_seed: u64) -> Summary {
    let mut methods = std::collections::BTreeMap::new();
    for name in &cfg.experiment.methods {
        let cells: Vec<&CellOutcome> =
            result.cells.iter().filter(|c| &c.method_name == name).collect();
        let collect = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> {
            cells.iter().map(|c| f(&c.committed)).collect()
        };
        methods.insert(
            name.clone(),
            MethodSummary {
                committed_round_mean: cells
                    .iter()
                    .map(|c| (c.committed_round + 1) as f64)
                    .sum::<f64>()
                    / cells.len().max(1) as f64,
                accuracy: stat(&collect(&|m| m.accuracy)),
                perceived: stat(&collect(&|m| m.perceived_accuracy)),
                pct_move: stat(&collect(&|m| m.pct_move)),
                pct_improve: stat(&collect(&|m| m.pct_improve)),
                pct_neg_to_pos: stat(&collect(&|m| m.pct_neg_to_pos)),
                pct_pos_to_neg: stat(&collect(&|m| m.pct_pos_to_neg)),
                welfare: stat(&collect(&|m| m.welfare)),
                reconstruction_fallbacks: cells.iter().map(|c| c.reconstruction_fallbacks).sum(),
            },
        );
    }
    Summary {
        experiment: cfg.experiment.name.clone(),
        scenario: cfg.scenario.kind.clone(),
        base_seed,
        repetitions: cfg.experiment.repetitions,
        rounds: cfg.split.rounds,
        from_csv: result.from_csv,
        methods,
        warnings: result.warnings.clone(),
    }
}

/// Writes metrics.csv, summary.json, plotdata/ and models/ to `out_dir`.
pub fn write_outputs(
    cfg: &Config,
    result: &ExperimentResult,
    out_dir: &Path,
    base_seed: u64,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;

    // metrics.csv: method, round, seed, then all metric columns
    let mut csv = String::from(
        "method,round,seed,accuracy,perceived,pct_move,pct_improve,pct_neg_to_pos,pct_pos_to_neg,welfare\n",
    );
    for name in &cfg.experiment.methods {
        for round in 0..cfg.split.rounds {
            for cell in result.cells.iter().filter(|c| &c.method_name == name) {
                let m = &cell.rounds[round];
                csv.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    name,
                    round + 1,
                    cell.rep_seed,
                    m.accuracy,
                    m.perceived_accuracy,
                    m.pct_move,
                    m.pct_improve,
                    m.pct_neg_to_pos,
                    m.pct_pos_to_neg,
                    m.welfare
                ));
            }
        }
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;

    let summary = summarize(cfg, result, base_seed);
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    // plotdata: per-round mean accuracy curves per method
    let plot_dir = out_dir.join("plotdata");
    std::fs::create_dir_all(&plot_dir)?;
    let mut plot = String::from("method,round,mean_accuracy,stderr\n");
    for name in &cfg.experiment.methods {
        for round in 0..cfg.split.rounds {
            let values: Vec<f64> = result
                .cells
                .iter()
                .filter(|c| &c.method_name == name)
                .map(|c| c.rounds[round].accuracy)
                .collect();
            let s = stat(&values);
            plot.push_str(&format!("{},{},{:.6},{:.6}\n", name, round + 1, s.mean, s.stderr));
        }
    }
    std::fs::write(plot_dir.join("accuracy_by_round.csv"), plot)?;

    // committed model parameters
    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&models_dir)?;
    for name in &cfg.experiment.methods {
        #[derive(Serialize)]
        struct CommittedModel<'a> {
            rep: usize,
            seed: u64,
            committed_round: usize,
            f: &'a LinearModel,
            h: &'a Option<HypothesisModel>,
        }
        let entries: Vec<CommittedModel> = result
            .cells
            .iter()
            .filter(|c| &c.method_name == name)
            .map(|c| CommittedModel {
                rep: c.rep,
                seed: c.rep_seed,
                committed_round: c.committed_round + 1,
                f: &c.committed_f,
                h: &c.committed_h,
            })
            .collect();
        std::fs::write(
            models_dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(&entries).expect("models serialize"),
        )?;
    }
    Ok(())
}

/// `run` command: execute and persist.
pub fn run_command(
    cfg: &Config,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Summary, HarnessError> {
    let base_seed = seed_override.unwrap_or(cfg.experiment.base_seed);
    let result = execute(cfg, seed_override)?;
    write_outputs(cfg, &result, out_dir, base_seed)?;
    Ok(summarize(cfg, &result, base_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Cost,
    CleanRatio,
    Sensitivity,
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "cost" => Ok(Self::Cost),
            "clean_ratio" => Ok(Self::CleanRatio),
            "sensitivity" => Ok(Self::Sensitivity),
            other => Err(HarnessError::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Serialize)]
struct SweepCellSummary {
    cell: String,
    summary: Summary,
}

/// `sweep` command: one run per cell along the requested axis.
pub fn sweep_command(
    cfg: &Config,
    axis: SweepAxis,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    match axis {
        SweepAxis::Cost => {
            if cfg.sweep.cost_multipliers.is_empty() {
                return Err(HarnessError::Config("cost sweep axis is empty".into()));
            }
            let mut cells = Vec::new();
            for &m in &cfg.sweep.cost_multipliers {
                let mut cell_cfg = cfg.clone();
                cell_cfg.cost.alpha = cfg.cost.alpha * m;
                let name = format!("cost_x{m}");
                let cell_dir = out_dir.join(&name);
                match run_command(&cell_cfg, &cell_dir, seed_override) {
                    Ok(summary) => cells.push(SweepCellSummary { cell: name, summary }),
                    Err(e) => {
                        // record the failure and continue with other cells
                        std::fs::create_dir_all(&cell_dir)?;
                        std::fs::write(
                            cell_dir.join("error.json"),
                            serde_json::to_string_pretty(&serde_json::json!({
                                "cell": name,
                                "error": e.to_string(),
                            }))
                            .unwrap(),
                        )?;
                    }
                }
            }
            std::fs::write(
                out_dir.join("sweep_summary.json"),
                serde_json::to_string_pretty(&cells).unwrap(),
            )?;
        }
        SweepAxis::CleanRatio => {
            if cfg.sweep.clean_ratios.is_empty() {
                return Err(HarnessError::Config("clean-ratio sweep axis is empty".into()));
            }
            let train_total = cfg.split.train_clean + cfg.split.dirty_inventory;
            let rounds = cfg.split.rounds;
            let mut cells = Vec::new();
            for &r in &cfg.sweep.clean_ratios {
                if !(0.0..1.0).contains(&r) || r == 0.0 {
                    return Err(HarnessError::Config(format!("clean ratio {r} out of (0,1)")));
                }
                let clean = (r * train_total as f64).round() as usize;
                // the inventory must split into equal round batches
                let dirty = ((train_total - clean) / rounds) * rounds;
                let clean = train_total - dirty;
                let mut cell_cfg = cfg.clone();
                cell_cfg.split.train_clean = clean;
                cell_cfg.split.dirty_inventory = dirty;
                let name = format!("clean_{:.0}pct", r * 100.0);
                let cell_dir = out_dir.join(&name);
                match run_command(&cell_cfg, &cell_dir, seed_override) {
                    Ok(summary) => cells.push(SweepCellSummary { cell: name, summary }),
                    Err(e) => {
                        std::fs::create_dir_all(&cell_dir)?;
                        std::fs::write(
                            cell_dir.join("error.json"),
                            serde_json::to_string_pretty(&serde_json::json!({
                                "cell": name,
                                "error": e.to_string(),
                            }))
                            .unwrap(),
                        )?;
                    }
                }
            }
            std::fs::write(
                out_dir.join("sweep_summary.json"),
                serde_json::to_string_pretty(&cells).unwrap(),
            )?;
        }
        SweepAxis::Sensitivity => {
            let report = sensitivity_sweep(cfg, seed_override)?;
            let mut csv = String::from("variant,dprime,mean_accuracy,std_accuracy,runs\n");
            for row in &report {
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6},{}\n",
                    row.variant, row.dprime, row.mean_accuracy, row.std_accuracy, row.runs
                ));
            }
            std::fs::write(out_dir.join("sensitivity.csv"), csv)?;
            std::fs::write(
                out_dir.join("sweep_summary.json"),
                serde_json::to_string_pretty(&report).unwrap(),
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityRow {
    pub variant: String,
    pub dprime: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub runs: usize,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    result
}

/// min(max, C(d, k)) distinct random subsets of {0..d-1} of size k.
fn choose_subsets(d: usize, k: usize, max: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = binomial(d, k);
    if total <= max as u128 {
        // enumerate all combinations lexicographically
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            // advance
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] != i + d - k {
                    break;
                }
            }
            if idx[k - 1] == d - 1 && idx[0] == d - k {
                return out;
            }
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    let mut rng = seeds::rng(seed);
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    use rand::seq::SliceRandom;
    while seen.len() < max {
        let mut all: Vec<usize> = (0..d).collect();
        all.shuffle(&mut rng);
        let mut subset: Vec<usize> = all[..k].to_vec();
        subset.sort_unstable();
        seen.insert(subset);
    }
    seen.into_iter().collect()
}

/// The partition-robustness protocol: for each subset size, random feature
/// subsets get their causal/correlative attribution swapped (wrong) or
/// removed (discard); the strategic baseline runs per seed for reference.
pub fn sensitivity_sweep(
    cfg: &Config,
    seed_override: Option<u64>,
) -> Result<Vec<SensitivityRow>, HarnessError> {
    if cfg.sweep.sensitivity_dprimes.is_empty() {
        return Err(HarnessError::Config("sensitivity sweep axis is empty".into()));
    }
    let base_seed = seed_override.unwrap_or(cfg.experiment.base_seed);
    let (world, _, _) = build_world(cfg, base_seed)?;
    let sample = build_rep_world(cfg, &world, base_seed, 0)?;
    let d = sample.split.clean.dim();
    let seeds_n = cfg.sweep.sensitivity_seeds;
    let cserm = cfg.parse_method("cserm")?;
    let serm = cfg.parse_method("serm")?;

    let mut rows = Vec::new();

    // strategic baseline, one run per seed
    let serm_jobs: Vec<usize> = (0..seeds_n).collect();
    let serm_accs: Vec<Result<f64, HarnessError>> = serm_jobs
        .par_iter()
        .map(|&rep| {
            run_cell(cfg, &world, "serm", &serm, base_seed, rep, None)
                .map(|c| c.committed.accuracy)
        })
        .collect();
    let mut serm_values = Vec::new();
    for a in serm_accs {
        serm_values.push(a?);
    }
    let serm_stat = stat(&serm_values);
    rows.push(SensitivityRow {
        variant: "serm".into(),
        dprime: 0,
        mean_accuracy: serm_stat.mean,
        std_accuracy: std_dev(&serm_values),
        runs: serm_values.len(),
    });

    for &dprime in &cfg.sweep.sensitivity_dprimes {
        if dprime == 0 || dprime > d {
            return Err(HarnessError::Config(format!(
                "sensitivity subset size {dprime} out of range for {d} features"
            )));
        }
        let subsets = choose_subsets(
            d,
            dprime,
            cfg.sweep.sensitivity_max_subsets,
            seeds::derive2(base_seed, salt::SUBSET, dprime as u64),
        );
        for variant in ["cserm_wrong", "cserm_discard"] {
            let jobs: Vec<(usize, &Vec<usize>)> = subsets
                .iter()
                .flat_map(|s| (0..seeds_n).map(move |rep| (rep, s)))
                .collect();
            let accs: Vec<Result<f64, HarnessError>> = jobs
                .par_iter()
                .map(|(rep, subset)| {
                    let err = if variant == "cserm_wrong" {
                        PartitionError::Wrong { indices: subset.to_vec() }
                    } else {
                        PartitionError::Discard { indices: subset.to_vec() }
                    };
                    run_cell(cfg, &world, variant, &cserm, base_seed, *rep, Some(&err))
                        .map(|c| c.committed.accuracy)
                })
                .collect();
            let mut values = Vec::new();
            for a in accs {
                values.push(a?);
            }
            rows.push(SensitivityRow {
                variant: variant.to_string(),
                dprime,
                mean_accuracy: stat(&values).mean,
                std_accuracy: std_dev(&values),
                runs: values.len(),
            });
        }
    }
    Ok(rows)
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)).sqrt()
}

/// Runs one method over one repetition with an explicit partition error;
/// exposed for the sensitivity acceptance checks.
pub fn run_single_cell(
    cfg: &Config,
    method_name: &str,
    rep: usize,
    partition_error: Option<&PartitionError>,
    seed_override: Option<u64>,
) -> Result<CellOutcome, HarnessError> {
    let base_seed = seed_override.unwrap_or(cfg.experiment.base_seed);
    let (world, _, _) = build_world(cfg, base_seed)?;
    let method = cfg.parse_method(method_name)?;
    run_cell(cfg, &world, method_name, &method, base_seed, rep, partition_error)
}

/// Convenience for tests: the per-repetition split plus oracle and cost.
pub fn materialize_rep(
    cfg: &Config,
    rep: usize,
    seed_override: Option<u64>,
) -> Result<(Split, LabelOracle, CostModel), HarnessError> {
    let base_seed = seed_override.unwrap_or(cfg.experiment.base_seed);
    let (world, _, _) = build_world(cfg, base_seed)?;
    let rw = build_rep_world(cfg, &world, base_seed, rep)?;
    Ok((rw.split, rw.oracle, rw.cost))
}

/// Writes a machine-readable error record and returns the exit code.
pub fn emit_error(err: &HarnessError) -> i32 {
    let record = serde_json::json!({
        "error": err.to_string(),
        "kind": match err {
            HarnessError::Config(_) => "config",
            HarnessError::Core(_) => "core",
            HarnessError::Io(_) => "io",
        },
    });
    let mut stderr = std::io::stderr();
    let _ = writeln!(stderr, "{record}");
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(12, 2), 66);
        assert_eq!(binomial(5, 5), 1);
        assert_eq!(binomial(4, 6), 0);
    }

    #[test]
    fn subsets_are_distinct_and_capped() {
        let all = choose_subsets(4, 2, 30, 1);
        assert_eq!(all.len(), 6); // C(4,2) enumerated
        let sampled = choose_subsets(12, 4, 10, 2);
        assert_eq!(sampled.len(), 10);
        let set: BTreeSet<_> = sampled.iter().collect();
        assert_eq!(set.len(), 10);
        for s in &sampled {
            assert_eq!(s.len(), 4);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
