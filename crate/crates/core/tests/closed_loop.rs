use feeder_core::dayahead::{plan_day, DayAheadConfig, PlanTable};
use feeder_core::forecast::{synthesize_history, HistoricalDay, ProsumptionForecast, SynthShape};
use feeder_core::mpc::{DecisionStatus, MpcLimits};
use feeder_core::sim::*;
use feeder_core::timegrid::{N_SLOTS, N_STEPS};

fn dataset() -> Vec<HistoricalDay> {
    synthesize_history(21, 64, &SynthShape::default()).unwrap()
}

fn exact_plan(profile: &[f64], soe0: f64) -> PlanTable {
    let cfg = DayAheadConfig {
        soe0,
        ..DayAheadConfig::default()
    };
    PlanTable::from(&plan_day(&ProsumptionForecast::exact(profile.to_vec()), &cfg).unwrap())
}

fn fake_run(p_hat: Vec<f64>, p: impl Fn(usize) -> f64) -> SimulationRun {
    let plant = PlantConfig::default();
    let records = (0..N_STEPS)
        .map(|k| StepRecord {
            k,
            l: p(k),
            b: 0.0,
            p: p(k),
            soc: 0.5,
            soc_est: 0.5,
            v: 650.0,
            i: 0.0,
            e_k: 0.0,
            b_setpoint: 0.0,
            status: Some(DecisionStatus::Solved),
        })
        .collect();
    let start = DayStart::rested(&plant, 0.5, 0.0);
    SimulationRun {
        day: 0,
        seed: 0,
        plant,
        plan: PlanTable {
            l_hat: p_hat.clone(),
            f: vec![0.0; N_SLOTS],
            env_low: vec![0.0; N_SLOTS],
            env_high: vec![0.0; N_SLOTS],
            p_hat,
        },
        records,
        start: start.clone(),
        end: start,
    }
}

#[test]
fn report_on_constructed_runs() {
    let plan: Vec<f64> = (0..N_SLOTS).map(|i| 150.0 + i as f64 * 0.25).collect();
    let exact = fake_run(plan.clone(), |k| plan[k / 30]);
    let r = tracking_report(&exact);
    assert_eq!((r.dispatch.rmse, r.dispatch.mean, r.dispatch.max_abs), (0.0, 0.0, 0.0));

    let shifted = fake_run(plan.clone(), |k| plan[k / 30] + 1.0);
    let r = tracking_report(&shifted);
    for v in [r.dispatch.rmse, r.dispatch.mean, r.dispatch.max_abs] {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn peak_check_examples() {
    let plan: Vec<f64> = (0..N_SLOTS).map(|i| if (100..110).contains(&i) { 260.0 } else { 180.0 }).collect();
    let run = fake_run(plan.clone(), |k| plan[k / 30]);
    let v = peak_shave_check(&run, 210.0, PEAK_TOLERANCE_KW);
    assert_eq!(v.iter().map(|x| x.slot).collect::<Vec<_>>(), (100..110).collect::<Vec<_>>());
    assert!(v.iter().all(|x| (x.excess_kw - 50.0).abs() < 1e-9));
    assert!(peak_shave_check(&run, 260.0, 0.0).is_empty());
}

#[test]
fn nominal_day_properties() {
    let days = dataset();
    let profile = &days[61].profile;
    let setup = SimSetup {
        seed: 5,
        ..SimSetup::default()
    };
    let plan = exact_plan(&days[60].profile, 250.0);
    let trace = {
        let mut t = ProsumptionTrace::piecewise_constant(profile).unwrap();
        for (k, l) in t.l.iter_mut().enumerate() {
            *l += ((k as f64) * 0.37).sin();
        }
        t
    };
    let start = DayStart::rested(&setup.plant, 0.5, plan.l_hat[0]);
    let runs = run_parallel(2, |_| run_day(&plan, &trace, &setup, 0, &start).unwrap());
    assert_eq!(runs[0], runs[1], "same seed and config must reproduce the run");
    let run = &runs[0];
    assert_eq!(run.records.len(), N_STEPS);

    let lim = MpcLimits::default();
    let b_cap = lim.i_max.max(-lim.i_min) * lim.v_max / 1000.0;
    let mut max_gap: f64 = 0.0;
    for r in &run.records {
        assert_eq!(r.p.to_bits(), (r.l + r.b).to_bits());
        if r.status == Some(DecisionStatus::Solved) {
            assert!(r.b.abs() <= b_cap, "step {}: {} kW", r.k, r.b);
        }
        max_gap = max_gap.max((r.soc - r.soc_est).abs());
    }
    assert!(max_gap < 0.005, "plant and controller SOC diverged by {max_gap}");

    let rep = tracking_report(run);
    assert!(rep.dispatch.max_abs >= rep.dispatch.rmse && rep.dispatch.rmse >= rep.dispatch.mean.abs());
    assert!(rep.dispatch.rmse * 10.0 < rep.no_dispatch.rmse, "{rep}");
}

#[test]
fn disabled_battery_reproduces_forecast_error() {
    let days = dataset();
    let plan = exact_plan(&days[60].profile, 250.0);
    assert!(plan.f.iter().all(|f| f.abs() < 1e-6));
    let setup = SimSetup {
        plant: PlantConfig {
            bess_enabled: false,
            ..PlantConfig::default()
        },
        ..SimSetup::default()
    };
    let trace = ProsumptionTrace::piecewise_constant(&days[61].profile).unwrap();
    let run = run_day(&plan, &trace, &setup, 0, &DayStart::rested(&setup.plant, 0.5, 0.0)).unwrap();
    assert!(run.records.iter().all(|r| r.p == r.l && r.b == 0.0 && r.status.is_none()));
    let rep = tracking_report(&run);
    assert!((rep.dispatch.rmse - rep.no_dispatch.rmse).abs() < 1e-6);
    assert!((rep.dispatch.mean - rep.no_dispatch.mean).abs() < 1e-6);
}

#[test]
fn exact_forecast_chain_keeps_soc_near_start() {
    let days = dataset();
    let setup = SimSetup {
        plant: PlantConfig::ideal(),
        ..SimSetup::default()
    };
    let mut start = DayStart::rested(&setup.plant, 0.5, days[60].profile[0]);
    for d in 0..3 {
        let profile = &days[60 + d].profile;
        let plan = exact_plan(profile, start.plant.soc * setup.plant.capacity_kwh);
        let trace = ProsumptionTrace::piecewise_constant(profile).unwrap();
        let run = run_day(&plan, &trace, &setup, d, &start).unwrap();
        assert_eq!(run.start.plant.soc, start.plant.soc);
        for r in &run.records {
            assert!((r.soc - 0.5).abs() < 0.02, "day {d} step {}: soc {}", r.k, r.soc);
        }
        start = run.end.clone();
    }
}

#[test]
fn offset_sign_follows_starting_energy() {
    let days = dataset();
    let (hist, real) = days.split_at(60);
    let mean_f = |soc: f64| {
        let cfg = DayAheadConfig {
            soe0: soc * 500.0,
            ..DayAheadConfig::default()
        };
        let p = forecast_and_plan(hist, &real[0], &cfg, 0.0).unwrap();
        p.offset.f.iter().sum::<f64>() / N_SLOTS as f64
    };
    assert!(mean_f(0.895) < 0.0);
    assert!(mean_f(0.105) > 0.0);
}

#[test]
fn multi_day_chain_is_continuous() {
    let days = dataset();
    let (hist, real) = days.split_at(60);
    let setup = MultiDaySetup {
        sim: SimSetup {
            seed: 3,
            ..SimSetup::default()
        },
        ..MultiDaySetup::default()
    };
    let out = run_multi_day(hist, &real[..2], &setup).unwrap();
    assert!(out.stopped.is_none());
    assert_eq!(out.runs.len(), 2);
    assert_eq!(out.runs[1].start, out.runs[0].end);
    assert_eq!(out.runs[1].records[0].soc, out.runs[0].end.plant.soc);
    assert!(run_multi_day(hist, &[], &setup).is_err());
}

#[test]
fn artifacts_roundtrip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let days = dataset();
    let setup = SimSetup::default();
    let plan = exact_plan(&days[60].profile, 250.0);
    let mut rng_free = ProsumptionTrace::piecewise_constant(&days[60].profile).unwrap();
    rng_free.l[17] += 0.1;
    let mut buf = Vec::new();
    write_trace(&mut buf, &rng_free).unwrap();
    assert_eq!(read_trace(buf.as_slice()).unwrap(), rng_free);

    let run = run_day(&plan, &rng_free, &setup, 0, &DayStart::rested(&setup.plant, 0.5, 0.0)).unwrap();
    let mut buf = Vec::new();
    write_trace_records(&mut buf, &run).unwrap();
    assert_eq!(read_trace_records(buf.as_slice()).unwrap(), run.records);

    let limits = MpcLimits::default();
    let paths = write_plots(dir.path(), &run, &limits).unwrap();
    assert_eq!(paths.len(), 4);
    for (kind, path) in PlotKind::ALL.iter().zip(&paths) {
        let back = read_plot(std::fs::File::open(path).unwrap(), *kind).unwrap();
        assert_eq!(back, PlotData::build(*kind, &run, &limits));
    }
    let fig_a = PlotData::build(PlotKind::Forecast, &run, &limits);
    assert_eq!(fig_a.column("p_hat_kW").unwrap(), plan.p_hat);
    assert!(read_plot(std::fs::File::open(&paths[0]).unwrap(), PlotKind::Voltage).is_err());

    let mut buf = Vec::new();
    write_report(&mut buf, &[("day0".into(), tracking_report(&run))]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# tracking-report v1\nrun,mode,"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn bad_inputs_are_rejected() {
    let setup = SimSetup::default();
    let plan = exact_plan(&[200.0; N_SLOTS], 250.0);
    let short = ProsumptionTrace { l: vec![0.0; 10] };
    assert!(matches!(
        run_day(&plan, &short, &setup, 0, &DayStart::rested(&setup.plant, 0.5, 0.0)),
        Err(SimError::Length { .. })
    ));
    let noisy = SimSetup {
        plant: PlantConfig {
            voltage_noise_sd: -1.0,
            ..PlantConfig::default()
        },
        ..SimSetup::default()
    };
    let trace = ProsumptionTrace::piecewise_constant(&[200.0; N_SLOTS]).unwrap();
    assert!(matches!(
        run_day(&plan, &trace, &noisy, 0, &DayStart::rested(&noisy.plant, 0.5, 0.0)),
        Err(SimError::Config(_))
    ));
}
