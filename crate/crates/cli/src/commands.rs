//! Subcommand bodies.

use std::path::{Path, PathBuf};

use ambopt_core::batch_opt::{solve_exact, BatchInstance, SolveOptions, build_full_model, build_simplified_model};
use ambopt_core::geo::{secs, to_secs, Location, Time};
use ambopt_core::heuristics::PolicyKind;
use ambopt_core::reassign::BaseRule;
use ambopt_core::scenario::{estimate_intensities, replication_rng, CallModel, GridSpec, HistoryEvent, ServiceProfile};
use ambopt_core::simulator::{run, Env, RunOptions, WorldState};
use ambopt_core::stats::mean;
use ambopt_core::synthetic::{city_call_model, city_instance, ten_call_batch, BurstSetup, BURST_DELTA};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{parse_grid, read_json, write_json, DemandFile, ExperimentConfig, Inputs, RuleName, HOUR};
use crate::error::{CliError, CliResult};
use crate::experiment::{execute, write_outputs};
use crate::RunFlags;

fn resolve_config(f: &RunFlags) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&f.config)?;
    cfg.apply_env()?;
    if !f.policies.is_empty() {
        cfg.policies = f.policies.clone();
    }
    if !f.base_rules.is_empty() {
        cfg.base_rules = f.base_rules.clone();
    }
    if let Some(d) = f.delta_seconds {
        cfg.bbr.delta = secs(d);
    }
    if let Some(a) = f.alpha {
        cfg.bbr.alpha = a;
    }
    if let Some(r) = f.replications {
        cfg.replications = r;
    }
    if let Some(s) = f.seed {
        cfg.seed = s;
    }
    if let Some(d) = &f.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate().map_err(|e| e.in_file(&f.config))?;
    Ok(cfg)
}

pub fn experiment(f: &RunFlags, rollout: bool) -> CliResult<()> {
    let cfg = resolve_config(f)?;
    let inputs = Inputs::load(&cfg)?;
    let (runs, comparisons) = execute(&cfg, &inputs, rollout)?;
    write_outputs(&cfg, &runs, &comparisons)?;
    for run in &runs {
        for row in run.rows().into_iter().filter(|r| r.statistic == "allocation_cost") {
            println!(
                "{:<14} {:<4} fleet {:>3}  cost mean {:>8}  q90 {:>8}  calls {}",
                row.policy, label(row.base_rule), row.fleet, row.mean, row.q90, row.calls
            );
        }
    }
    for c in &comparisons {
        let ci = c.delta_ci95.map_or("no interval".to_string(), |[lo, hi]| format!("[{lo:.1}, {hi:.1}]"));
        println!(
            "rollout vs {:<8} {:<4} fleet {:>3}  {:.1} -> {:.1}  delta {:.1} {ci} over {} replications",
            c.policy,
            label(c.base_rule),
            c.fleet,
            c.base_mean_cost,
            c.rollout_mean_cost,
            c.delta_mean,
            c.paired_replications
        );
    }
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn label(r: RuleName) -> &'static str {
    match r {
        RuleName::Hbr => "hbr",
        RuleName::Cbr => "cbr",
        RuleName::Bbr => "bbr",
    }
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// CSV with columns time_s, lat, lon, type.
    #[arg(long)]
    pub history: PathBuf,
    /// Grid as x_min,y_min,x_max,y_max,nx,ny (x is lon, y is lat).
    #[arg(long, value_parser = parse_grid)]
    pub grid: GridSpec,
    /// Number of call types.
    #[arg(long)]
    pub types: usize,
    #[arg(long, default_value_t = 3600.0)]
    pub window_seconds: f64,
    /// Windows per period; the period is their total length.
    #[arg(long, default_value_t = 24)]
    pub windows: usize,
    /// Observed span; defaults to whole periods covering the history.
    #[arg(long)]
    pub span_start_seconds: Option<f64>,
    #[arg(long)]
    pub span_end_seconds: Option<f64>,
    /// JSON list of service profiles, one per type.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Deserialize)]
struct HistoryRow {
    time_s: f64,
    lat: f64,
    lon: f64,
    #[serde(rename = "type")]
    call_type: usize,
}

fn read_history(path: &Path) -> CliResult<Vec<HistoryEvent>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: HistoryRow = row.map_err(|e| csv_error(path, e))?;
        if !(row.time_s.is_finite() && row.lat.is_finite() && row.lon.is_finite()) {
            return Err(CliError::config("non-finite value in history").in_file(path).at_line(out.len() + 2));
        }
        out.push(HistoryEvent { time: secs(row.time_s), loc: Location::new(row.lon, row.lat), call_type: row.call_type });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line() as usize);
    let kind = if matches!(e.kind(), csv::ErrorKind::Io(_)) { "io" } else { "config" };
    let err = CliError::new(kind, e.to_string()).in_file(path);
    match line {
        Some(l) => err.at_line(l),
        None => err,
    }
}

/// Profile used for every type when none are given.
const DEFAULT_ON_SCENE_S: f64 = 900.0;

pub fn calibrate(a: &CalibrateArgs) -> CliResult<()> {
    let history = read_history(&a.history)?;
    let window_len = secs(a.window_seconds);
    let period = window_len * a.windows as Time;
    if period <= 0 {
        return Err(CliError::config("windows and window length must be positive"));
    }
    let first = history.iter().map(|e| e.time).min().unwrap_or(0);
    let last = history.iter().map(|e| e.time).max().unwrap_or(0);
    let start = a.span_start_seconds.map_or(first.div_euclid(period) * period, secs);
    let end = a.span_end_seconds.map_or((last.div_euclid(period) + 1) * period, secs);
    let table = estimate_intensities(&history, &a.grid, a.types, window_len, a.windows, (start, end))
        .map_err(|e| CliError::from(e).in_file(&a.history))?;
    let profiles: Vec<ServiceProfile> = match &a.profiles {
        Some(p) => read_json(p)?,
        None => vec![ServiceProfile::constant(DEFAULT_ON_SCENE_S, None, None); a.types],
    };
    let model = CallModel { grid: a.grid.clone(), table, profiles };
    model.validate()?;
    write_json(&a.out, &DemandFile::from_model(&model))?;
    println!(
        "{} calls over {:.1} periods -> {}",
        history.len(),
        (end - start) as f64 / period as f64,
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SolveBatchArgs {
    /// Batch instance (JSON).
    #[arg(long)]
    pub instance: PathBuf,
    /// Fix each call's hospital and cleaning base instead of choosing them.
    #[arg(long)]
    pub simplified: bool,
    /// Also write the mixed-integer model in LP format.
    #[arg(long)]
    pub export_lp: Option<PathBuf>,
    #[arg(long)]
    pub node_limit: Option<u64>,
}

pub fn solve_batch(a: &SolveBatchArgs) -> CliResult<()> {
    let batch: BatchInstance = read_json(&a.instance)?;
    let in_file = |e: ambopt_core::Error| CliError::from(e).in_file(&a.instance);
    let problem = match &a.export_lp {
        Some(path) => {
            let (p, model) =
                if a.simplified { build_simplified_model(&batch) } else { build_full_model(&batch) }.map_err(in_file)?;
            std::fs::write(path, model.to_lp()).map_err(|e| CliError::io(path, e))?;
            p
        }
        None => batch.problem(!a.simplified).map_err(in_file)?,
    };
    let mut opts = SolveOptions::default();
    if let Some(n) = a.node_limit {
        opts.node_limit = n;
    }
    let sol = solve_exact(&problem, opts)?;
    println!("{}", serde_json::to_string_pretty(&sol).expect("serializable"));
    Ok(())
}

#[derive(Args, Debug)]
pub struct BbrDemoArgs {
    #[arg(long, default_value_t = 25)]
    pub replications: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = to_secs(BURST_DELTA))]
    pub delta_seconds: f64,
    /// Also write the table as JSON here.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

const DEMO_POLICIES: [PolicyKind; 5] = [PolicyKind::Ca, PolicyKind::Bm, PolicyKind::Ghp1, PolicyKind::Ghp2, PolicyKind::Nm];

#[derive(Serialize)]
struct DemoRow {
    policy: &'static str,
    hbr_s: f64,
    cbr_s: f64,
    bbr_s: f64,
}

pub fn bbr_demo(a: &BbrDemoArgs) -> CliResult<()> {
    if a.replications == 0 {
        return Err(CliError::config("replications must be at least 1"));
    }
    let setup = BurstSetup::new();
    let rules = [BaseRule::Home, BaseRule::Closest, setup.bbr(secs(a.delta_seconds))?];
    let calls: Vec<_> = (0..a.replications).map(|r| setup.calls(&mut replication_rng(a.seed, r))).collect();
    let start = calls.iter().flatten().map(|c| c.time).min().unwrap_or(0).min(0);
    let mut rows = Vec::new();
    for kind in DEMO_POLICIES {
        let mut means = [0.0; 3];
        for (m, rule) in means.iter_mut().zip(&rules) {
            let mut waits = Vec::new();
            for cs in &calls {
                let env = Env { inst: &setup.instance, rule };
                let initial = WorldState::initial(&setup.instance, start);
                let out = run(env, initial, cs, kind.build().as_mut(), &RunOptions::default())?;
                waits.extend(out.records.iter().map(|r| to_secs(r.waiting_on_scene)));
            }
            *m = mean(&waits);
        }
        rows.push(DemoRow { policy: kind.label(), hbr_s: means[0], cbr_s: means[1], bbr_s: means[2] });
    }
    println!("mean response time (s) over {} replications", a.replications);
    println!("{:<8} {:>9} {:>9} {:>9}", "policy", "hbr", "cbr", "bbr");
    for r in &rows {
        println!("{:<8} {:>9.1} {:>9.1} {:>9.1}", r.policy, r.hbr_s, r.cbr_s, r.bbr_s);
    }
    if let Some(dir) = &a.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_json(&dir.join("bbr_demo.json"), &rows)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct InitExampleArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

/// Calls per hour in the example city.
const EXAMPLE_RATE: f64 = 9.5;

pub fn init_example(a: &InitExampleArgs) -> CliResult<()> {
    let dir = &a.dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_json(&dir.join("instance.json"), &city_instance())?;
    write_json(&dir.join("demand.json"), &DemandFile::from_model(&city_call_model(EXAMPLE_RATE)))?;
    let cfg = ExperimentConfig {
        instance: "instance.json".into(),
        demand: Some("demand.json".into()),
        calls: None,
        start: 8 * HOUR,
        duration: 4 * HOUR,
        policies: vec![PolicyKind::Bm, PolicyKind::Ghp1],
        base_rules: vec![RuleName::Cbr, RuleName::Bbr],
        bbr: Default::default(),
        fleet_sizes: vec![10, 14, 20],
        replications: 5,
        seed: 1,
        rollout: Default::default(),
        output_dir: "out".into(),
        record_trips: false,
    };
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("batch.json"), &ten_call_batch())?;
    println!("wrote instance.json, demand.json, config.json and batch.json to {}", dir.display());
    Ok(())
}
