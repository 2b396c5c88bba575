use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use feeder_core::config::RunConfig;
use feeder_core::dayahead::{read_plan, write_plan, PlanTable};
use feeder_core::forecast::{read_dataset, synthesize_history, write_dataset, HistoricalDay};
use feeder_core::mpc::DecisionStatus;
use feeder_core::sim::{
    combined_report, forecast_and_plan, read_trace, read_trace_records, realized_trace, report_from_records, run_day,
    run_multi_day, slot_averages, tracking_report, write_plots, write_report, write_trace_records, DayStart,
    SimulationRun, TrackingReport,
};
use feeder_core::timegrid::N_SLOTS;

/// A missing or contradictory command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| usage(format!("--{name} is required (or set paths.{} in the config)", name.replace('-', "_"))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_history(path: &Path) -> Result<Vec<HistoricalDay>> {
    read_dataset(open(path)?).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn synth(cfg: RunConfig, a: crate::SynthArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.seed);
    let days = a.days.unwrap_or(cfg.history_days);
    let out = required(a.out, &cfg.paths.history, "out")?;
    let data = synthesize_history(seed, days, &cfg.synth)?;
    let mut w = create(&out)?;
    write_dataset(&mut w, &data).with_context(|| format!("writing {}", out.display()))?;
    w.flush()?;
    println!("wrote {} days to {}", data.len(), out.display());
    Ok(())
}

pub fn plan(mut cfg: RunConfig, a: crate::PlanArgs) -> Result<()> {
    if a.p_max.is_some() {
        cfg.dayahead.p_max = a.p_max;
    }
    if let Some(s) = a.soe0 {
        cfg.dayahead.soe0 = s;
    }
    cfg.validate()?;
    let history = load_history(&required(a.history, &cfg.paths.history, "history")?)?;
    let out = required(a.out, &cfg.paths.plan, "out")?;
    let idx = a.target_day.unwrap_or(history.len().saturating_sub(1));
    if idx >= history.len() {
        return Err(usage(format!("target day {idx} beyond the {} days of the dataset", history.len())));
    }
    let target = &history[idx];
    let started = Instant::now();
    let result = forecast_and_plan(&history[..idx], target, &cfg.dayahead, 0.0);
    let elapsed = started.elapsed().as_secs_f64();
    let plan = match result {
        Ok(p) => p,
        Err(e) => {
            println!("plan for {}/{:03}: infeasible after {elapsed:.3} s", target.year, target.day_of_year);
            return Err(e.into());
        }
    };
    let f = &plan.offset.f;
    let comments = vec![
        format!("target {}/{:03}", target.year, target.day_of_year),
        format!("soe0_kWh {}", cfg.dayahead.soe0),
        format!("p_max_kW {}", cfg.dayahead.p_max.map_or("none".into(), |p| p.to_string())),
        format!("objective {}", plan.offset.objective),
    ];
    let mut w = create(&out)?;
    write_plan(&mut w, &PlanTable::from(&plan), &comments)?;
    w.flush()?;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    println!("plan for {}/{:03}: feasible", target.year, target.day_of_year);
    println!(
        "  offset mean {:+.3} kW, range [{:.3}, {:.3}] kW",
        f.iter().sum::<f64>() / N_SLOTS as f64,
        min(f),
        max(f)
    );
    println!("  planned GCP power peak {:.3} kW", max(&plan.p_hat));
    println!("  wall time {elapsed:.3} s");
    println!("wrote {}", out.display());
    Ok(())
}

fn write_day(dir: &Path, run: &SimulationRun, cfg: &RunConfig, plots: bool) -> Result<()> {
    let d = run.day;
    let mut w = create(&dir.join(format!("plan_day{d}.csv")))?;
    write_plan(&mut w, &run.plan, &[format!("day {d}"), format!("seed {}", run.seed)])?;
    w.flush()?;
    let mut w = create(&dir.join(format!("trace_day{d}.csv")))?;
    write_trace_records(&mut w, run)?;
    w.flush()?;
    if plots {
        for p in write_plots(dir, run, &cfg.limits)? {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn print_day(run: &SimulationRun, report: &TrackingReport) {
    let (lo, hi) = run
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.soc), hi.max(r.soc)));
    println!("day {}", run.day);
    print!("{report}");
    println!(
        "  SOC {:.4} -> {:.4} (range [{lo:.4}, {hi:.4}]); MPC clipped {} failed {}",
        run.start.plant.soc,
        run.end.plant.soc,
        run.status_count(DecisionStatus::InfeasibleClipped),
        run.status_count(DecisionStatus::SolverFailure)
    );
}

fn finish(dir: &Path, runs: &[SimulationRun], cfg: &RunConfig, plots: bool) -> Result<()> {
    let mut named = Vec::new();
    for run in runs {
        write_day(dir, run, cfg, plots)?;
        let rep = tracking_report(run);
        print_day(run, &rep);
        named.push((format!("day{}", run.day), rep));
    }
    if runs.len() > 1 {
        let all = combined_report(runs);
        println!("all days");
        print!("{all}");
        named.push(("all".into(), all));
        println!("continuity");
        for pair in runs.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let ok = a.end.plant.soc == b.start.plant.soc;
            println!(
                "  day {} end SOC {:.6} -> day {} start SOC {:.6}: {}",
                a.day,
                a.end.plant.soc,
                b.day,
                b.start.plant.soc,
                if ok { "continuous" } else { "BROKEN" }
            );
        }
    }
    let path = dir.join("report.csv");
    let mut w = create(&path)?;
    write_report(&mut w, &named)?;
    w.flush()?;
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn run(mut cfg: RunConfig, a: crate::RunArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.initial_soc {
        cfg.initial_soc = s;
    }
    if let Some(b) = a.forecast_bias {
        cfg.forecast_bias = b;
    }
    if let Some(d) = a.days {
        cfg.days = d;
    }
    if a.p_max.is_some() {
        cfg.dayahead.p_max = a.p_max;
    }
    if a.history.is_some() {
        cfg.paths.history = a.history;
    }
    if a.plan.is_some() {
        cfg.paths.plan = a.plan;
    }
    if a.trace.is_some() {
        cfg.paths.trace = a.trace;
    }
    if a.out_dir.is_some() {
        cfg.paths.out_dir = a.out_dir;
    }
    cfg.validate()?;
    let params = cfg.parameters()?;
    let dir = required(None, &cfg.paths.out_dir, "out-dir")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?).context("writing config snapshot")?;

    if let Some(plan_path) = &cfg.paths.plan {
        let plan = read_plan(open(plan_path)?).with_context(|| format!("reading plan {}", plan_path.display()))?;
        let trace = match (&cfg.paths.trace, &cfg.paths.history) {
            (Some(t), _) => read_trace(open(t)?).with_context(|| format!("reading trace {}", t.display()))?,
            (None, Some(h)) => {
                let history = load_history(h)?;
                let idx = a.target_day.unwrap_or(history.len().saturating_sub(1));
                let day = history
                    .get(idx)
                    .ok_or_else(|| usage(format!("target day {idx} beyond the {} days of the dataset", history.len())))?;
                realized_trace(&day.profile, &cfg.plant, cfg.seed, 0)?
            }
            (None, None) => return Err(usage("a single-day run needs --trace or --history")),
        };
        let setup = cfg.sim_setup(params);
        let start = DayStart::rested(&cfg.plant, cfg.initial_soc, plan.l_hat[0]);
        let run = run_day(&plan, &trace, &setup, 0, &start)?;
        return finish(&dir, &[run], &cfg, a.emit_plots);
    }

    let history = load_history(&required(None, &cfg.paths.history, "history")?)?;
    if cfg.days >= history.len() {
        return Err(usage(format!("{} chained days leave no history in a {}-day dataset", cfg.days, history.len())));
    }
    let (past, realized) = history.split_at(history.len() - cfg.days);
    let out = run_multi_day(past, realized, &cfg.multi_day_setup(params))?;
    finish(&dir, &out.runs, &cfg, a.emit_plots)?;
    if let Some((day, e)) = out.stopped {
        println!("chain stopped before day {day}");
        return Err(anyhow::Error::new(e).context(format!("planning day {day}")));
    }
    Ok(())
}

pub fn report(a: crate::ReportArgs) -> Result<()> {
    let records = read_trace_records(open(&a.trace)?).with_context(|| format!("reading {}", a.trace.display()))?;
    let plan = read_plan(open(&a.plan)?).with_context(|| format!("reading {}", a.plan.display()))?;
    print!("{}", report_from_records(&records, &plan)?);
    if let Some(cap) = a.p_max {
        let over: Vec<(usize, f64)> = slot_averages(&records, |r| r.p)
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > cap + a.tolerance)
            .collect();
        println!("slots above {cap} kW (+{} kW): {}", a.tolerance, over.len());
        for (slot, p) in over {
            println!("  slot {slot:3}: {p:.3} kW");
        }
    }
    Ok(())
}
