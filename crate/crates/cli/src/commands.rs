use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use adn_core::dynamics::{simulate, SimulationStatus};
use adn_core::fault::LimitingCurve;
use adn_core::montecarlo::{
    envelope_study, single_node_survivability, EnvelopeConfig, StudyConfig, StudyError, SurvivabilityEstimate,
};
use adn_core::network::{Grid, LoadModel};
use adn_core::powerflow::{solve_power_flow, transformer_mv_flow, PowerFlowError, PowerFlowOptions};
use adn_core::report::{self, ReportError};
use adn_core::scenario::Scenario;
use adn_core::svg;
use adn_core::validate::{compare_voltages, ValidateError};
use anyhow::anyhow;
use serde_json::json;

use crate::{Cli, Command, EnvelopeArgs, LoadModelsArg, PowerflowArgs, SimulateArgs, StudyArgs, SurviveAllArgs, SurviveNodeArgs, ValidateArgs};

/// Failure class; selects the exit status.
pub enum Failure {
    Analysis(anyhow::Error),
    Input(anyhow::Error),
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Input(anyhow!(e).context("writing results"))
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::UnknownBus(_) | StudyError::Invalid(_) => Failure::Input(e.into()),
            _ => Failure::Analysis(e.into()),
        }
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

type Result<T> = std::result::Result<T, Failure>;

pub fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| input(anyhow!(e).context(format!("cannot create output directory {}", cli.out_dir.display()))))?;
    let out = Output { dir: cli.out_dir.clone() };
    match &cli.command {
        Command::Powerflow(a) => powerflow(&out, a),
        Command::Simulate(a) => simulate_cmd(&out, a),
        Command::SurviveNode(a) => survive_node(&out, a),
        Command::SurviveAll(a) => survive_all(&out, a),
        Command::SurviveEnvelope(a) => survive_envelope(&out, a),
        Command::Validate(a) => validate(&out, a),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| input(anyhow!(e).context(format!("cannot create {}", path.display()))))
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        let mut f = self.create(name)?;
        f.write_all(body.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| input(anyhow!(e).context(format!("writing {name}"))))?;
        self.announce(name);
        Ok(())
    }

    fn announce(&self, name: &str) {
        eprintln!("wrote {}", self.dir.join(name).display());
    }
}

fn load_grid(path: Option<&Path>) -> Result<Grid> {
    match path {
        None => Ok(Grid::cigre12()),
        Some(p) => Grid::from_path(p).map_err(input),
    }
}

fn load_curve(path: Option<&Path>) -> Result<LimitingCurve> {
    match path {
        None => Ok(LimitingCurve::bundled()),
        Some(p) => LimitingCurve::from_path(p).map_err(input),
    }
}

fn powerflow(out: &Output, a: &PowerflowArgs) -> Result<()> {
    let grid = load_grid(a.grid.as_deref())?;
    let lm: LoadModel = a.load_model.into();
    let sol = match solve_power_flow(&grid, lm, &BTreeMap::new(), &PowerFlowOptions::default()) {
        Ok(s) => s,
        Err(e @ (PowerFlowError::NotConverged { .. } | PowerFlowError::SingularJacobian(_))) => {
            return Err(Failure::Analysis(e.into()))
        }
        Err(e) => return Err(input(e)),
    };
    let rows = report::bus_table(&grid, &sol)?;
    let name = format!("powerflow_{}.csv", lm.tag());
    report::write_bus_table(&rows, out.create(&name)?)?;
    out.announce(&name);
    let flow = transformer_mv_flow(&grid, &sol.voltages).ok();
    let summary = json!({
        "grid": grid.name(),
        "grid_file": a.grid.as_ref().map(|p| p.display().to_string()),
        "load_model": lm,
        "iterations": sol.iterations,
        "residual_pu": sol.residual_norm,
        "p_meas_mw": flow.map(|f| f.0),
        "q_meas_mvar": flow.map(|f| f.1),
    });
    let jname = format!("powerflow_{}.json", lm.tag());
    report::write_json(&summary, out.create(&jname)?)?;
    out.announce(&jname);
    println!(
        "converged in {} iterations, residual {:.2e} pu",
        sol.iterations, sol.residual_norm
    );
    if let Some((p, q)) = flow {
        println!("P_meas = {p:.3} MW, Q_meas = {q:.3} Mvar");
    }
    Ok(())
}

fn simulate_cmd(out: &Output, a: &SimulateArgs) -> Result<()> {
    let mut scenario = match &a.scenario {
        None => Scenario::bundled_fig4(),
        Some(p) => Scenario::from_path(p).map_err(input)?,
    };
    if let Some(lm) = a.load_model {
        scenario.load_model = lm.into();
    }
    let start = Instant::now();
    let tr = simulate(&scenario).map_err(|e| Failure::Analysis(e.into()))?;
    eprintln!("simulated {} samples in {:.2?}", tr.len(), start.elapsed());
    report::write_trajectory(&tr, out.create("trajectory.csv")?)?;
    out.announce("trajectory.csv");
    let status = match tr.status() {
        SimulationStatus::Completed => json!({"completed": true}),
        SimulationStatus::NumericalFailure { t, reason } => json!({"completed": false, "t": t, "reason": reason}),
    };
    let summary = json!({
        "scenario_file": a.scenario.as_ref().map(|p| p.display().to_string()),
        "grid": scenario.grid.name(),
        "load_model": scenario.load_model,
        "pq_min_voltage": scenario.pq_min_voltage,
        "control": scenario.control,
        "references": scenario.references,
        "faults": scenario.faults,
        "t_end": scenario.t_end,
        "solver": scenario.solver,
        "samples": tr.len(),
        "status": status,
    });
    report::write_json(&summary, out.create("simulation.json")?)?;
    out.announce("simulation.json");
    if a.plot {
        let g = &scenario.grid;
        let series: Vec<svg::Series> = g
            .mv_bus_indices()
            .into_iter()
            .map(|b| svg::Series {
                name: g.bus_id(b),
                points: tr.times().iter().copied().zip(tr.magnitude_series(b)).collect(),
            })
            .collect();
        let chart = svg::line_chart("Bus voltage magnitudes", "time (s)", "|u| (pu)", &series);
        out.text("voltages.svg", &chart)?;
    }
    match tr.status() {
        SimulationStatus::Completed => Ok(()),
        SimulationStatus::NumericalFailure { t, reason } => {
            Err(Failure::Analysis(anyhow!("simulation stopped at t = {t}: {reason}")))
        }
    }
}

fn study_config(s: &StudyArgs, lm: LoadModel) -> Result<StudyConfig> {
    let mut c = StudyConfig::new(lm, s.seed);
    c.curve = load_curve(s.curve.as_deref())?;
    c.workers = s.workers;
    Ok(c)
}

fn study_echo(s: &StudyArgs, c: &StudyConfig) -> serde_json::Value {
    json!({
        "grid_file": s.grid.as_ref().map(|p| p.display().to_string()),
        "curve_file": s.curve.as_ref().map(|p| p.display().to_string()),
        "samples": s.samples,
        "study": c,
    })
}

fn print_estimate(e: &SurvivabilityEstimate) {
    println!(
        "{} ({}): mu = {:.4} +- {:.4} ({} of {} survived)",
        e.bus,
        e.load_model.tag(),
        e.mu,
        e.ci_half_width,
        e.survivors,
        e.trials
    );
}

fn survive_node(out: &Output, a: &SurviveNodeArgs) -> Result<()> {
    let grid = load_grid(a.study.grid.as_deref())?;
    let lm: LoadModel = a.load_model.into();
    let c = study_config(&a.study, lm)?;
    let start = Instant::now();
    let r = single_node_survivability(&grid, &a.bus, a.study.samples, &c)?;
    eprintln!("{} trials in {:.2?}", a.study.samples, start.elapsed());
    let stem = format!("survive_node_{}_{}", a.bus, lm.tag());
    report::write_trials(&r.records, false, out.create(&format!("{stem}_trials.csv"))?)?;
    out.announce(&format!("{stem}_trials.csv"));
    let summary = json!({"estimate": r.estimate, "config": study_echo(&a.study, &c)});
    report::write_json(&summary, out.create(&format!("{stem}.json"))?)?;
    out.announce(&format!("{stem}.json"));
    print_estimate(&r.estimate);
    Ok(())
}

fn survive_all(out: &Output, a: &SurviveAllArgs) -> Result<()> {
    let grid = load_grid(a.study.grid.as_deref())?;
    let models = match a.load_model {
        LoadModelsArg::Pq => vec![LoadModel::ConstantPq],
        LoadModelsArg::Z => vec![LoadModel::ConstantImpedance],
        LoadModelsArg::Both => vec![LoadModel::ConstantPq, LoadModel::ConstantImpedance],
    };
    let buses: Vec<String> = grid.mv_bus_indices().into_iter().map(|b| grid.bus_id(b).to_string()).collect();
    let mut estimates = Vec::new();
    let mut configs = Vec::new();
    for &lm in &models {
        let c = study_config(&a.study, lm)?;
        for bus in &buses {
            let start = Instant::now();
            let r = single_node_survivability(&grid, bus, a.study.samples, &c)?;
            eprintln!("{bus} ({}): {} trials in {:.2?}", lm.tag(), a.study.samples, start.elapsed());
            let name = format!("survive_all_{}_{}_trials.csv", lm.tag(), bus);
            report::write_trials(&r.records, false, out.create(&name)?)?;
            print_estimate(&r.estimate);
            estimates.push(r.estimate);
        }
        configs.push(study_echo(&a.study, &c));
    }
    report::write_estimates(&estimates, out.create("survive_all.csv")?)?;
    out.announce("survive_all.csv");
    let names: Vec<&str> = models.iter().map(|m| m.tag()).collect();
    let groups: Vec<Vec<svg::Bar>> = models
        .iter()
        .map(|&m| {
            estimates
                .iter()
                .filter(|e| e.load_model == m)
                .map(|e| svg::Bar {
                    label: &e.bus,
                    value: e.mu,
                    error: e.ci_half_width,
                })
                .collect()
        })
        .collect();
    out.text("survive_all.svg", &svg::bar_chart("Single-node survivability", "mu", &names, &groups))?;
    report::write_json(&json!({"estimates": estimates, "config": configs}), out.create("survive_all.json")?)?;
    out.announce("survive_all.json");
    if models.contains(&LoadModel::ConstantPq) {
        let lowest = estimates
            .iter()
            .filter(|e| e.load_model == LoadModel::ConstantPq)
            .min_by(|a, b| a.mu.total_cmp(&b.mu));
        if let Some(e) = lowest {
            println!("lowest survivability with constant-power loads: {} (mu = {:.4})", e.bus, e.mu);
        }
    }
    Ok(())
}

fn survive_envelope(out: &Output, a: &EnvelopeArgs) -> Result<()> {
    let grid = load_grid(a.study.grid.as_deref())?;
    let lm: LoadModel = a.load_model.into();
    let c = study_config(&a.study, lm)?;
    let mut env = EnvelopeConfig::new(&a.bus, a.study.samples);
    env.p_half_range = a.p_range;
    env.q_half_range = a.q_range;
    env.cell_size = a.cell_size;
    env.stride = a.stride.unwrap_or(a.cell_size / 2.0);
    env.min_count = a.min_count;
    env.filter_threshold = a.threshold;
    env.filter_q = !a.p_only_filter;
    let start = Instant::now();
    let r = envelope_study(&grid, &c, &env)?;
    eprintln!("{} samples in {:.2?}", env.samples, start.elapsed());
    let stem = format!("envelope_{}_{}", a.bus, lm.tag());
    report::write_envelope(&r.map.cells, out.create(&format!("{stem}.csv"))?)?;
    out.announce(&format!("{stem}.csv"));
    report::write_trials(&r.records, true, out.create(&format!("{stem}_trials.csv"))?)?;
    out.announce(&format!("{stem}_trials.csv"));
    let tiles: Vec<svg::Tile> = r
        .map
        .cells
        .iter()
        .map(|c| svg::Tile {
            x: c.p_center,
            y: c.q_center,
            mu: c.mu,
            count: c.count,
        })
        .collect();
    let title = format!("Survivability of faults at {} ({} loads)", a.bus, lm.tag());
    out.text(
        &format!("{stem}.svg"),
        &svg::heatmap(&title, "P_ref (MW)", "Q_ref (Mvar)", &tiles, env.stride),
    )?;
    let reported = r.map.cells.iter().filter(|c| c.mu.is_some()).count();
    let summary = json!({
        "base": r.map.base,
        "lattice": r.map.lattice,
        "min_count": r.map.min_count,
        "samples": r.map.samples,
        "included": r.map.included,
        "cells": r.map.cells.len(),
        "reported_cells": reported,
        "envelope": env,
        "config": study_echo(&a.study, &c),
    });
    report::write_json(&summary, out.create(&format!("{stem}.json"))?)?;
    out.announce(&format!("{stem}.json"));
    println!(
        "{} of {} samples passed the filter; {} of {} cells have at least {} samples",
        r.map.included,
        r.map.samples,
        reported,
        r.map.cells.len(),
        r.map.min_count
    );
    Ok(())
}

fn validate(out: &Output, a: &ValidateArgs) -> Result<()> {
    let grid = load_grid(a.grid.as_deref())?;
    let lm: LoadModel = a.load_model.into();
    let file = File::open(&a.reference)
        .map_err(|e| input(anyhow!(e).context(format!("cannot read reference {}", a.reference.display()))))?;
    let sol = solve_power_flow(&grid, lm, &BTreeMap::new(), &PowerFlowOptions::default())
        .map_err(|e| Failure::Analysis(e.into()))?;
    let rep = compare_voltages(&grid, &sol, file, a.tol_mag, a.tol_ang).map_err(|e| match e {
        ValidateError::Csv(_) | ValidateError::Duplicate(_) | ValidateError::BusSetMismatch { .. } => input(e),
    })?;
    let mut f = out.create("validation.csv")?;
    rep.write_csv(&mut f).map_err(|e| Failure::from(ReportError::from(e)))?;
    out.announce("validation.csv");
    for r in rep.rows.iter().filter(|r| !(r.mag_ok && r.angle_ok)) {
        println!("{}: |du| = {:.3e} pu, dtheta = {:.3e} deg", r.bus_id, r.d_mag, r.d_angle);
    }
    println!(
        "max |du| = {:.3e} pu (tol {:.1e}), max dtheta = {:.3e} deg (tol {:.1e})",
        rep.max_mag_deviation(),
        a.tol_mag,
        rep.max_angle_deviation(),
        a.tol_ang
    );
    if rep.passed() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Analysis(anyhow!("deviations exceed tolerance")))
    }
}
