//! Replicated runs, aggregation and output files.

use std::io::Write;
use std::path::Path;
use std::time::Duration;

use ambopt_core::geo::{to_secs, Time};
use ambopt_core::heuristics::PolicyKind;
use ambopt_core::model::{Call, CallRecord, Instance, Trip};
use ambopt_core::reassign::BaseRule;
use ambopt_core::scenario::{replication_rng, sample_scenario, Rollout};
use ambopt_core::simulator::{run, summarize, Env, RunOptions, Summary, WorldState};
use ambopt_core::stats::{mean, paired_difference};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Inputs, RuleName};
use crate::error::{CliError, CliResult};

/// Rollout scenario streams sit above every call-sampling stream.
const ROLLOUT_STREAM: u64 = 1 << 32;

/// Calls of replication `r`: the fixed list when one is given, otherwise a
/// sample from the demand model on stream `r` of the configured seed.
pub fn replication_calls(cfg: &ExperimentConfig, inputs: &Inputs, r: u64) -> Vec<Call> {
    if let Some(calls) = &inputs.calls {
        return calls.clone();
    }
    match &inputs.demand {
        Some(model) => {
            let mut rng = replication_rng(cfg.seed, r);
            sample_scenario(model, cfg.start, cfg.start + cfg.duration, &mut rng, 0)
        }
        None => Vec::new(),
    }
}

/// Seed of the rollout scenario sampler in replication `r`.
pub fn rollout_seed(seed: u64, r: u64) -> u64 {
    replication_rng(seed, ROLLOUT_STREAM + r).next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Heuristic(PolicyKind),
    Rollout(PolicyKind),
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Heuristic(p) => p.label().to_string(),
            Method::Rollout(p) => format!("rollout-{}", p.label()),
        }
    }
}

pub struct Replication {
    pub records: Vec<CallRecord>,
    pub trips: Vec<Trip>,
    pub decision_times: Vec<Duration>,
}

pub struct Run {
    pub method: Method,
    pub base_rule: RuleName,
    pub fleet: usize,
    pub reps: Vec<Replication>,
}

pub struct RunSpec<'a> {
    pub cfg: &'a ExperimentConfig,
    pub inputs: &'a Inputs,
    pub instance: &'a Instance,
    pub rule: &'a BaseRule,
    pub start: Time,
}

impl RunSpec<'_> {
    fn one(&self, method: Method, r: u64, calls: &[Call], record_trips: bool) -> CliResult<Replication> {
        let env = Env { inst: self.instance, rule: self.rule };
        let opts = RunOptions { horizon: None, record_trips };
        let initial = WorldState::initial(self.instance, self.start);
        Ok(match method {
            Method::Heuristic(p) => {
                let out = run(env, initial, calls, p.build().as_mut(), &opts)?;
                Replication { records: out.records, trips: out.trips, decision_times: Vec::new() }
            }
            Method::Rollout(p) => {
                let model = self
                    .inputs
                    .demand
                    .clone()
                    .ok_or_else(|| CliError::config("rollout needs a demand file to sample scenarios from"))?;
                let cfg = self.inputs.rollout_config(self.cfg, p, rollout_seed(self.cfg.seed, r));
                let mut policy = Rollout::new(cfg, model);
                let out = run(env, initial, calls, &mut policy, &opts)?;
                Replication { records: out.records, trips: out.trips, decision_times: policy.timings }
            }
        })
    }

    /// All replications of one method, in parallel, in replication order.
    pub fn replicate(&self, method: Method, calls: &[Vec<Call>]) -> CliResult<Vec<Replication>> {
        calls
            .par_iter()
            .enumerate()
            .map(|(r, cs)| self.one(method, r as u64, cs, self.cfg.record_trips && r == 0))
            .collect()
    }
}

/// Values are reported in whole seconds, halves rounded up.
fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

#[derive(Debug, Serialize)]
pub struct MetricRow {
    pub policy: String,
    pub base_rule: RuleName,
    pub fleet: usize,
    pub statistic: &'static str,
    pub mean: i64,
    pub q90: i64,
    pub max: i64,
    pub calls: usize,
    pub replications: usize,
}

#[derive(Debug, Serialize)]
pub struct DecisionTimes {
    pub count: usize,
    pub median_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub base_rule: RuleName,
    pub fleet: usize,
    pub replications: usize,
    pub calls: usize,
    pub response_s: Option<Summary>,
    pub allocation_cost: Option<Summary>,
    /// Mean allocation cost of each replication that had calls.
    pub replication_mean_cost: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision_times: Option<DecisionTimes>,
}

fn replication_means(run: &Run) -> Vec<f64> {
    run.reps
        .iter()
        .filter(|r| !r.records.is_empty())
        .map(|r| mean(&r.records.iter().map(|x| x.allocation_cost).collect::<Vec<_>>()))
        .collect()
}

impl Run {
    fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let recs = self.reps.iter().flat_map(|r| &r.records);
        let response = recs.clone().map(|x| to_secs(x.waiting_on_scene)).collect();
        let cost = recs.map(|x| x.allocation_cost).collect();
        (response, cost)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let (response, cost) = self.pooled();
        let mut rows = Vec::new();
        for (statistic, values) in [("response_time_s", &response), ("allocation_cost", &cost)] {
            let Ok(s) = summarize(values) else { continue };
            rows.push(MetricRow {
                policy: self.method.label(),
                base_rule: self.base_rule,
                fleet: self.fleet,
                statistic,
                mean: round_half_up(s.mean),
                q90: round_half_up(s.q90),
                max: round_half_up(s.max),
                calls: values.len(),
                replications: self.reps.len(),
            });
        }
        rows
    }

    pub fn summary(&self) -> RunSummary {
        let (response, cost) = self.pooled();
        let mut times: Vec<Duration> = self.reps.iter().flat_map(|r| r.decision_times.iter().copied()).collect();
        times.sort();
        let decision_times = matches!(self.method, Method::Rollout(_)).then(|| DecisionTimes {
            count: times.len(),
            median_s: median(&times).as_secs_f64(),
            max_s: times.last().copied().unwrap_or_default().as_secs_f64(),
        });
        RunSummary {
            policy: self.method.label(),
            base_rule: self.base_rule,
            fleet: self.fleet,
            replications: self.reps.len(),
            calls: cost.len(),
            response_s: summarize(&response).ok(),
            allocation_cost: summarize(&cost).ok(),
            replication_mean_cost: replication_means(self),
            decision_times,
        }
    }
}

fn median(sorted: &[Duration]) -> Duration {
    match sorted.len() {
        0 => Duration::ZERO,
        n if n % 2 == 1 => sorted[n / 2],
        n => (sorted[n / 2 - 1] + sorted[n / 2]) / 2,
    }
}

/// Rollout against its base policy over the same replications.
#[derive(Debug, Serialize)]
pub struct Comparison {
    pub policy: String,
    pub base_rule: RuleName,
    pub fleet: usize,
    pub base_mean_cost: f64,
    pub rollout_mean_cost: f64,
    /// Rollout minus base policy, per replication.
    pub delta_mean: f64,
    /// Absent with fewer than two paired replications.
    pub delta_ci95: Option<[f64; 2]>,
    pub paired_replications: usize,
}

pub fn compare(base: &Run, rolled: &Run) -> Comparison {
    let pairs: Vec<(f64, f64)> = base
        .reps
        .iter()
        .zip(&rolled.reps)
        .filter(|(a, _)| !a.records.is_empty())
        .map(|(a, b)| {
            let m = |r: &Replication| mean(&r.records.iter().map(|x| x.allocation_cost).collect::<Vec<_>>());
            (m(a), m(b))
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let ci = paired_difference(&b, &a, 0.95);
    Comparison {
        policy: base.method.label(),
        base_rule: base.base_rule,
        fleet: base.fleet,
        base_mean_cost: mean(&a),
        rollout_mean_cost: mean(&b),
        delta_mean: ci.mean,
        delta_ci95: (a.len() >= 2).then_some([ci.lo, ci.hi]),
        paired_replications: a.len(),
    }
}

pub const CSV_HEADER: [&str; 9] =
    ["policy", "base_rule", "fleet", "statistic", "mean", "q90", "max", "calls", "replications"];

pub fn write_csv(path: &Path, runs: &[Run]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::new("io", e.to_string()).in_file(path);
    // Header written by hand so that it is there even with no rows.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(err)?;
    w.write_record(CSV_HEADER).map_err(err)?;
    for row in runs.iter().flat_map(Run::rows) {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct TripLine<'a> {
    policy: String,
    base_rule: RuleName,
    fleet: usize,
    #[serde(flatten)]
    trip: &'a Trip,
}

pub fn write_trips(path: &Path, runs: &[Run]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for run in runs {
        let Some(first) = run.reps.first() else { continue };
        for trip in &first.trips {
            let line = TripLine { policy: run.method.label(), base_rule: run.base_rule, fleet: run.fleet, trip };
            serde_json::to_writer(&mut w, &line).map_err(|e| CliError::new("io", e.to_string()))?;
            w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
pub struct MetricsFile<'a> {
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "<[Comparison]>::is_empty")]
    pub comparisons: &'a [Comparison],
}

/// Runs every (method, rule, fleet) combination of the configuration over
/// a shared set of replications. With `rollout`, each policy is run both
/// plain and under rollout.
pub fn execute(cfg: &ExperimentConfig, inputs: &Inputs, rollout: bool) -> CliResult<(Vec<Run>, Vec<Comparison>)> {
    let calls: Vec<Vec<Call>> = (0..cfg.replications as u64).map(|r| replication_calls(cfg, inputs, r)).collect();
    let start = calls.iter().flatten().map(|c| c.time).min().map_or(cfg.start, |t| t.min(cfg.start));
    let fleets: Vec<usize> =
        if cfg.fleet_sizes.is_empty() { vec![inputs.instance.fleet.len()] } else { cfg.fleet_sizes.clone() };
    let mut runs = Vec::new();
    let mut comparisons = Vec::new();
    for &name in &cfg.base_rules {
        let rule = inputs.rule(name, &cfg.bbr)?;
        for &fleet in &fleets {
            let instance = inputs.instance.with_fleet_size(fleet);
            let spec = RunSpec { cfg, inputs, instance: &instance, rule: &rule, start };
            for &p in &cfg.policies {
                let base = Run {
                    method: Method::Heuristic(p),
                    base_rule: name,
                    fleet,
                    reps: spec.replicate(Method::Heuristic(p), &calls)?,
                };
                if rollout {
                    let rolled = Run {
                        method: Method::Rollout(p),
                        base_rule: name,
                        fleet,
                        reps: spec.replicate(Method::Rollout(p), &calls)?,
                    };
                    comparisons.push(compare(&base, &rolled));
                    runs.push(base);
                    runs.push(rolled);
                } else {
                    runs.push(base);
                }
            }
        }
    }
    Ok((runs, comparisons))
}

/// Writes `metrics.csv`, `metrics.json` and, when asked, `trips.jsonl`.
pub fn write_outputs(cfg: &ExperimentConfig, runs: &[Run], comparisons: &[Comparison]) -> CliResult<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_csv(&dir.join("metrics.csv"), runs)?;
    let file = MetricsFile { seed: cfg.seed, runs: runs.iter().map(Run::summary).collect(), comparisons };
    crate::config::write_json(&dir.join("metrics.json"), &file)?;
    if cfg.record_trips {
        write_trips(&dir.join("trips.jsonl"), runs)?;
    }
    Ok(())
}
