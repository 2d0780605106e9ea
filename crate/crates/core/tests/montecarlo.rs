use adn_core::dynamics::simulate;
use adn_core::fault::{check_survival, CurvePoint, FaultSpec, LimitingCurve};
use adn_core::montecarlo::{
    ci_half_width, envelope_study, min_voltage_between, run_fault_trial, sample_fault, single_node_faults,
    single_node_survivability, trial_rng, EnvelopeConfig, FaultModel, StudyConfig, TrialOutcome,
};
use adn_core::network::{Grid, LoadModel};

fn config(workers: usize) -> StudyConfig {
    let mut c = StudyConfig::new(LoadModel::ConstantPq, 7);
    c.workers = workers;
    c
}

#[test]
fn sampled_faults_match_their_distributions() {
    let m = FaultModel::default();
    let n = 100_000;
    let mut durations = Vec::with_capacity(n);
    let mut resistances = Vec::with_capacity(n);
    for i in 0..n {
        let f = sample_fault(&mut trial_rng(11, i as u64), &m, "MV-03", 0.5);
        durations.push(f.duration);
        resistances.push(f.r_on_ohm);
    }
    let mean = durations.iter().sum::<f64>() / n as f64;
    let std = (durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - 0.150).abs() < 1e-3, "mean {mean}");
    assert!((std - 0.010).abs() < 5e-4, "std {std}");

    resistances.sort_by(f64::total_cmp);
    let ks = resistances
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cdf = (r - 3.0) / 7.0;
            (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS {ks}");
    assert!(resistances[0] >= 3.0 && resistances[n - 1] <= 10.0);
}

#[test]
fn bound_for_a_thousand_trials() {
    assert!((ci_half_width(1000) - 0.015_811_388_300_841_9).abs() < 1e-12);
}

#[test]
fn worker_count_does_not_change_results() {
    let g = Grid::cigre12();
    let serial = single_node_survivability(&g, "MV-03", 8, &config(1)).unwrap();
    let parallel = single_node_survivability(&g, "MV-03", 8, &config(4)).unwrap();
    let max = single_node_survivability(&g, "MV-03", 8, &config(0)).unwrap();
    assert_eq!(serial.records, parallel.records);
    assert_eq!(serial.records, max.records);
    assert_eq!(serial.estimate, max.estimate);
}

#[test]
fn estimate_matches_per_trial_brute_force() {
    let g = Grid::cigre12();
    let c = config(2);
    let result = single_node_survivability(&g, "MV-08", 5, &c).unwrap();
    let faults = single_node_faults(&c, "MV-08", 5);
    let mut survivors = 0;
    for f in &faults {
        let mut s = c.scenario(&g, f.t_on + c.curve.horizon());
        s.faults = vec![f.clone()];
        let tr = simulate(&s).unwrap();
        survivors += usize::from(check_survival(&tr, f, &c.curve, &g.mv_bus_indices()).survived());
    }
    assert_eq!(result.estimate.survivors, survivors);
    assert_eq!(result.estimate.mu, survivors as f64 / 5.0);
    assert_eq!(result.estimate.trials, 5);
}

#[test]
fn unviolable_curve_gives_certain_survival() {
    let g = Grid::cigre12();
    let mut c = config(0);
    c.curve = LimitingCurve::new(vec![
        CurvePoint { tau_s: 0.0, v_min_pu: 0.0 },
        CurvePoint { tau_s: 3.5, v_min_pu: 0.0 },
    ])
    .unwrap();
    let r = single_node_survivability(&g, "MV-03", 4, &c).unwrap();
    assert_eq!(r.estimate.mu, 1.0);
    assert!(r.records.iter().all(|t| t.outcome == TrialOutcome::Survived));
}

#[test]
fn deeper_dips_for_lower_fault_resistance() {
    let g = Grid::cigre12();
    let c = config(1);
    let bus = g.bus_index("MV-03").unwrap();
    let mut prev = 0.0;
    for r in 3..=10 {
        let f = FaultSpec {
            bus: "MV-03".into(),
            r_on_ohm: r as f64,
            t_on: 0.5,
            duration: 0.150,
        };
        let (_, tr) = run_fault_trial(&g, &c, &f, &g.mv_bus_indices()).unwrap();
        let v = min_voltage_between(&tr, bus, f.t_on, f.t_off()).unwrap();
        assert!(v >= prev, "{r} ohm: {v} < {prev}");
        prev = v;
    }
}

#[test]
fn collapsed_box_reduces_to_single_node_study() {
    let g = Grid::cigre12();
    let c = config(0);
    let mut env = EnvelopeConfig::new("MV-03", 6);
    env.p_half_range = 0.0;
    env.q_half_range = 0.0;
    env.min_count = 1;
    let map = envelope_study(&g, &c, &env).unwrap().map;
    assert_eq!(map.cells.len(), 1);
    assert_eq!(map.included, 6);
    let node = single_node_survivability(&g, "MV-03", 6, &c).unwrap();
    assert_eq!(map.cells[0].count, 6);
    assert_eq!(map.cells[0].survivors, node.estimate.survivors);
}

#[test]
fn unreachable_set_points_are_filtered() {
    let g = Grid::cigre12();
    let c = config(0);
    let mut env = EnvelopeConfig::new("MV-03", 24);
    env.min_count = 1;
    env.cell_size = 5.0;
    env.stride = 5.0;
    let res = envelope_study(&g, &c, &env).unwrap();
    let filtered: Vec<_> = res.records.iter().filter(|r| !r.included).collect();
    assert!(!filtered.is_empty(), "expected some unreachable set points");
    assert!(filtered.iter().all(|r| r.outcome == TrialOutcome::Filtered && !r.survived));
    // DG output can only lower the import, so references well above the base flow are out of reach.
    let base = res.map.base;
    for r in &res.records {
        if r.p_ref.unwrap() > 1.1 * base.p_mw {
            assert!(!r.included);
        }
    }
    let included = res.records.iter().filter(|r| r.included).count();
    assert_eq!(res.map.included, included);
    let total: usize = res.map.cells.iter().map(|c| c.count).sum();
    assert!(total >= included);
}
