//! The `run` and `compare` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use capnmpc::vehicle::{Benchmark, Metrics, ViolationStats};
use capnmpc::{Aborted, Algorithm, SimulationRecord};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{mean_std, sig9, step_table, summary_table, write_atomic, SummaryRow};

/// Applied-input overshoot tolerated before a bound counts as violated, m/s² or rad.
pub const INPUT_TOLERANCE: f64 = 0.05;

#[derive(Debug)]
pub struct RunOutcome {
    pub record: SimulationRecord,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    pub files: Vec<PathBuf>,
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn violations_json(record: &SimulationRecord) -> serde_json::Value {
    let v = ViolationStats::from_record(record, INPUT_TOLERANCE);
    json!({
        "input_tolerance": INPUT_TOLERANCE,
        "input_rate": v.input_rate,
        "corridor_rate": v.corridor_rate,
        "any_rate": v.any_rate,
    })
}

fn split(result: Result<SimulationRecord, Aborted>) -> (SimulationRecord, Option<String>) {
    match result {
        Ok(r) => (r, None),
        Err(a) => {
            let msg = a.to_string();
            (a.partial, Some(msg))
        }
    }
}

/// One closed-loop run. Writes `<algorithm>_seed<seed>.csv`, `.meta.json` and
/// `.config.toml` into `out_dir`, also when the run aborts; an abort is then
/// returned as a runtime error.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let bench = cfg.benchmark()?;
    let algorithm = Algorithm::from(cfg.algorithm);
    let digest = cfg.digest();
    let start = Instant::now();
    let (mut record, error) = split(bench.run(algorithm, cfg.seed));
    let wall = start.elapsed().as_secs_f64();
    record.seed = Some(cfg.seed);
    record.config_digest = Some(digest.clone());
    let metrics = (!record.is_empty()).then(|| bench.metrics(&record));

    let stem = format!("{}_seed{}", algorithm.name(), cfg.seed);
    let table = out_dir.join(format!("{stem}.csv"));
    let meta = out_dir.join(format!("{stem}.meta.json"));
    let echo = out_dir.join(format!("{stem}.config.toml"));
    write_atomic(&table, step_table(&record).as_bytes())?;
    write_atomic(&echo, cfg.to_toml().as_bytes())?;
    write_json(
        &meta,
        &json!({
            "schema_version": cfg.schema_version,
            "algorithm": algorithm.name(),
            "seed": cfg.seed,
            "config_digest": digest,
            "status": if error.is_some() { "aborted" } else { "completed" },
            "error": error,
            "steps": record.len(),
            "rmse": metrics.map(|m| m.rmse),
            "cost": metrics.map(|m| m.cost),
            "degenerate_steps": record.degenerate_count(),
            "violations": violations_json(&record),
            "wall_time_seconds": wall,
            "config": cfg,
        }),
    )?;
    let outcome = RunOutcome {
        record,
        metrics,
        error,
        files: vec![table, meta, echo],
    };
    match &outcome.error {
        Some(e) => Err(CliError::Runtime(e.clone())),
        None => Ok(outcome),
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub record: SimulationRecord,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub summary: Vec<SummaryRow>,
    pub results: Vec<SeedResult>,
    /// Seeds where at least one algorithm aborted; excluded from the summary.
    pub failed_seeds: Vec<u64>,
    pub files: Vec<PathBuf>,
}

fn summarize(bench: &Benchmark, algorithm: Algorithm, records: &[&SimulationRecord]) -> SummaryRow {
    let metrics: Vec<Metrics> = records.iter().map(|r| bench.metrics(r)).collect();
    let (rmse_mean, rmse_std) = mean_std(&metrics.iter().map(|m| m.rmse).collect::<Vec<_>>());
    let (cost_mean, cost_std) = mean_std(&metrics.iter().map(|m| m.cost).collect::<Vec<_>>());
    let rates: Vec<f64> = records
        .iter()
        .map(|r| ViolationStats::from_record(r, INPUT_TOLERANCE).any_rate)
        .collect();
    SummaryRow {
        algorithm: algorithm.label().to_string(),
        runs: records.len(),
        rmse_mean,
        rmse_std,
        cost_mean,
        cost_std,
        violation_rate_mean: mean_std(&rates).0,
    }
}

/// Runs both algorithms on every seed and writes `summary.csv`,
/// `per_seed.csv` and `compare.meta.json` into `out_dir`.
///
/// Both algorithms get the same seed and draw layout per seed. The summary
/// covers seeds where both runs completed.
pub fn compare(cfg: &RunConfig, seeds: &[u64], out_dir: &Path) -> Result<CompareOutcome, CliError> {
    if seeds.is_empty() {
        return Err(CliError::Usage("compare needs at least one seed".into()));
    }
    let bench = cfg.benchmark()?;
    let start = Instant::now();
    let algorithms = [Algorithm::Pnmpc, Algorithm::CapNmpc];
    let results: Vec<SeedResult> = seeds
        .par_iter()
        .flat_map_iter(|&seed| {
            let bench = &bench;
            algorithms.into_iter().map(move |algorithm| {
                let (record, error) = split(bench.run(algorithm, seed));
                SeedResult {
                    seed,
                    algorithm,
                    record,
                    error,
                }
            })
        })
        .collect();
    let wall = start.elapsed().as_secs_f64();

    let mut failed_seeds: Vec<u64> = results
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.seed)
        .collect();
    failed_seeds.dedup();
    let summary: Vec<SummaryRow> = algorithms
        .iter()
        .map(|&a| {
            let records: Vec<&SimulationRecord> = results
                .iter()
                .filter(|r| r.algorithm == a && !failed_seeds.contains(&r.seed))
                .map(|r| &r.record)
                .collect();
            summarize(&bench, a, &records)
        })
        .collect();

    let mut per_seed = String::from(
        "seed,algorithm,status,steps,rmse,cost,violation_rate,input_violation_rate,corridor_violation_rate,degenerate_steps\n",
    );
    for r in &results {
        let v = ViolationStats::from_record(&r.record, INPUT_TOLERANCE);
        let (rmse, cost) = if r.record.is_empty() {
            (String::new(), String::new())
        } else {
            let m = bench.metrics(&r.record);
            (sig9(m.rmse), sig9(m.cost))
        };
        per_seed.push_str(&format!(
            "{},{},{},{},{rmse},{cost},{},{},{},{}\n",
            r.seed,
            r.algorithm.label(),
            if r.error.is_some() {
                "aborted"
            } else {
                "completed"
            },
            r.record.len(),
            sig9(v.any_rate),
            sig9(v.input_rate),
            sig9(v.corridor_rate),
            r.record.degenerate_count()
        ));
    }

    let files = vec![
        out_dir.join("summary.csv"),
        out_dir.join("per_seed.csv"),
        out_dir.join("compare.meta.json"),
    ];
    write_atomic(&files[0], summary_table(&summary).as_bytes())?;
    write_atomic(&files[1], per_seed.as_bytes())?;
    let failures: Vec<_> = results
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| json!({"seed": r.seed, "algorithm": r.algorithm.name(), "error": e}))
        })
        .collect();
    write_json(
        &files[2],
        &json!({
            "schema_version": cfg.schema_version,
            "seeds": seeds,
            "config_digest": cfg.digest(),
            "failures": failures,
            "particle_sharing": "per seed, both algorithms use the same seed and draw layout; \
                                 draws coincide until the first resampling and diverge after it",
            "input_tolerance": INPUT_TOLERANCE,
            "wall_time_seconds": wall,
            "config": cfg,
        }),
    )?;
    Ok(CompareOutcome {
        summary,
        results,
        failed_seeds,
        files,
    })
}
