//! `grflab run`: flow, backward solves and monitors driven by one config.

use crate::config::{evaluate, BackwardSpec, ExperimentConfig, MonitorSpec};
use crate::report::{Check, RunReport};
use anyhow::{Context, Result};
use grflab::entropy::{
    ggrf_scalar_residual, harnack_check, lambda_series, nash_relations_residual, oneform_scalar_residual,
    scalar_extrema_series, scalar_monotonicity_residual, shrinker_residual, energy_density_residual,
    HarnackOptions, MonitorSeries,
};
use grflab::flow::{integrate, FlowMode, Trajectory};
use grflab::geometry::Backend;
use grflab::heat::{conjugate_dilaton_solve, conjugate_solve, HeatMode, HeatOptions};
use grflab::isoperimetric::run_corpus;
use grflab::soliton::{fixture_by_name, normalized_dilaton_flow, rigidity_experiment};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::time::Instant;

/// Report plus the files to write next to it.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub files: BTreeMap<String, String>,
    pub wall_time: f64,
}

impl RunOutcome {
    /// Writes every artifact, `report.json` and the `timing.json` sidecar.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
        }
        std::fs::write(dir.join("report.json"), self.report.to_json())?;
        let timing = serde_json::json!({ "wall_time_s": self.wall_time });
        std::fs::write(dir.join("timing.json"), format!("{timing:#}\n"))?;
        Ok(())
    }
}

/// Largest single-step decrease of a channel; zero when nondecreasing.
pub fn max_drop(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

fn channel<'a>(s: &'a MonitorSeries, name: &str) -> Result<&'a [f64]> {
    s.channel(name).with_context(|| format!("monitor channel {name} missing"))
}

pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let clock = Instant::now();
    let hash = cfg.hash();
    let mut checks = Vec::new();
    let mut files = BTreeMap::new();
    if let Some((backend, state)) = cfg.initial_state()? {
        let mode = cfg.mode.context("mode")?;
        let stepper = cfg.stepper_config().context("stepper")?;
        let mut traj = integrate(&backend, mode, &state, &stepper)?;
        traj.set_config_hash(hash.clone());
        if let Some(name) = &cfg.initial.fixture {
            let lambda = fixture_by_name(name, backend.descriptor().resolution)?.lambda;
            checks.extend(stationarity_checks(&traj, lambda));
        }
        monitor_checks(&traj, &cfg.monitors, &mut checks, &mut files)?;
        for (i, spec) in cfg.backward.iter().enumerate() {
            let label = spec.name.clone().unwrap_or_else(|| format!("backward{i}"));
            backward_checks(&traj, &backend, spec, &cfg.monitors, &label, &mut checks, &mut files)?;
        }
        if cfg.output.trajectory {
            files.insert("trajectory.json".into(), traj.to_json()?);
        }
    }
    if let Some(spec) = &cfg.iso {
        let rep = run_corpus(spec)?;
        let negative = rep.entries.iter().filter(|e| !e.pass).count();
        checks.push(Check::at_least("iso_min_relative_deficit", rep.min_relative_deficit, -spec.tolerance));
        checks.push(Check::at_most("iso_failed_pairs", negative as f64, 0.0));
        let mut csv = String::from("index,iso_bound,sobolev_constant,deficit,mass,relative_deficit,pass\n");
        for e in &rep.entries {
            csv.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{}\n",
                e.index, e.iso_bound, e.sobolev_constant, e.deficit, e.mass, e.relative_deficit, e.pass
            ));
        }
        files.insert("iso_corpus.csv".into(), csv);
    }
    if let Some(spec) = &cfg.soliton {
        let fx = fixture_by_name(&spec.fixture, spec.resolution)?;
        let bump = evaluate(&spec.perturbation, &fx.backend, 0.0)?;
        let phi0: Vec<f64> = fx.potential().iter().zip(&bump).map(|(f, b)| f + b).collect();
        let run = normalized_dilaton_flow(&fx, &phi0, &spec.options)?;
        checks.push(Check::at_most("soliton_source_residual", run.source_residual, 1e-10));
        checks.push(Check::at_most("soliton_terminal_deviation", run.terminal_deviation, spec.options.terminal_tol));
        if let (Some(mu1), Some(rate)) = (run.mu1, run.decay_rate) {
            checks.push(Check::at_most("soliton_rate_error", (rate / mu1 - 1.0).abs(), spec.options.rate_tol));
        }
        files.insert("soliton.csv".into(), run.series.to_csv());
    }
    Ok(RunOutcome {
        report: RunReport::new(hash, checks),
        files,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Metric drift and exact linear growth `φ(t) = φ(0) + λt` on a fixture.
pub fn stationarity_checks(traj: &Trajectory, lambda: f64) -> Vec<Check> {
    let first = traj.state(0);
    let g0 = first.metric_coefficients();
    let mut drift = 0.0f64;
    let mut linear = 0.0f64;
    for i in 0..traj.len() {
        let s = traj.state(i);
        for (a, b) in s.metric_coefficients().iter().zip(&g0) {
            drift = drift.max((a - b).abs());
        }
        let dt = traj.times()[i] - traj.start();
        for (p, p0) in s.phi.iter().zip(&first.phi) {
            linear = linear.max((p - p0 - lambda * dt).abs());
        }
    }
    let span = traj.end() - traj.start();
    let last = traj.state(traj.len() - 1);
    let slope = (last.phi[0] - first.phi[0]) / span;
    vec![
        Check::at_most("fixture_metric_drift", drift, 1e-10),
        Check::at_most("fixture_dilaton_linearity", linear, 1e-10),
        Check::at_most("fixture_dilaton_slope_error", (slope - lambda).abs(), 1e-10),
    ]
}

/// Residual of the scalar evolution identity appropriate to the mode.
pub fn mode_scalar_residual(traj: &Trajectory, t: f64) -> grflab::Result<f64> {
    match traj.mode() {
        FlowMode::OneForm => oneform_scalar_residual(traj, t, 1),
        FlowMode::Ggrf => ggrf_scalar_residual(traj, t, 1),
        _ => scalar_monotonicity_residual(traj, t, 1),
    }
}

fn monitor_checks(
    traj: &Trajectory,
    m: &MonitorSpec,
    checks: &mut Vec<Check>,
    files: &mut BTreeMap<String, String>,
) -> Result<()> {
    if m.scalar_residual {
        let t = traj.times()[traj.len() / 2];
        checks.push(Check::at_most("scalar_residual", mode_scalar_residual(traj, t)?, m.residual_tolerance));
    }
    if m.extrema {
        let s = scalar_extrema_series(traj, None, m.stride)?;
        checks.push(Check::at_most("min_scalar_drop", max_drop(channel(&s, "min_scalar")?), m.monotone_tolerance));
        files.insert("extrema.csv".into(), s.to_csv());
    }
    if m.lambda {
        let s = lambda_series(traj, m.stride, m.monotone_tolerance)?;
        checks.push(Check::at_most("lambda_drop", max_drop(channel(&s, "lambda")?), m.monotone_tolerance));
        files.insert("lambda.csv".into(), s.to_csv());
    }
    if m.rigidity {
        let s = rigidity_experiment(traj, m.stride, m.residual_tolerance)?;
        let flag = |k: &str| s.flags.get(k).copied().unwrap_or(false);
        // Nonnegative initial scalar curvature either stays a soliton or turns positive.
        let dichotomy = !flag("initially_nonnegative") || flag("soliton_branch") || flag("positivity_onset");
        checks.push(Check::flag("rigidity_dichotomy", dichotomy));
        checks.push(Check::at_most("rigidity_min_scalar_drop", max_drop(channel(&s, "min_scalar")?), m.monotone_tolerance));
        files.insert("rigidity.csv".into(), s.to_csv());
    }
    Ok(())
}

/// Periodic distance on `[0, 2π)`.
fn wrap(d: f64) -> f64 {
    (d + PI).rem_euclid(TAU) - PI
}

/// Terminal density: a periodic Gaussian bump over a floor, or a constant.
pub fn terminal_density(backend: &Backend, spec: &BackwardSpec) -> Vec<f64> {
    let n = backend.nodes();
    let Some(sigma) = spec.sigma else {
        return vec![1.0; n];
    };
    let axes: Vec<Vec<f64>> = match (backend.grid().is_some(), backend.dim()) {
        (false, _) => Vec::new(),
        (true, 2) => vec![backend.coordinate(0), backend.coordinate(1)],
        (true, _) => vec![backend.coordinate(0)],
    };
    (0..n)
        .map(|p| {
            let r2: f64 = axes
                .iter()
                .enumerate()
                .map(|(k, x)| wrap(x[p] - spec.center.get(k).copied().unwrap_or(PI)).powi(2))
                .sum();
            spec.floor + (-r2 / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

fn backward_checks(
    traj: &Trajectory,
    backend: &Backend,
    spec: &BackwardSpec,
    monitors: &MonitorSpec,
    label: &str,
    checks: &mut Vec<Check>,
    files: &mut BTreeMap<String, String>,
) -> Result<()> {
    let start = spec.start.unwrap_or(traj.start());
    let end = spec.end.unwrap_or(traj.end());
    let mut u = terminal_density(backend, spec);
    let snap = traj.snapshot_at(end)?;
    let mass = match spec.heat_mode {
        HeatMode::Weighted => snap.geo.weighted_integral(&u, &snap.phi),
        HeatMode::Plain => snap.geo.integral(&u),
    };
    u.iter_mut().for_each(|v| *v /= mass);
    // Drift is reported as a check rather than aborting the solve.
    let opts = HeatOptions {
        max_step: spec.max_step,
        mass_tol: f64::MAX,
        normalization: spec.normalization,
    };
    let mut sol = conjugate_solve(traj, &u, start, end, spec.heat_mode, &opts)?;
    sol.terminal_time = end + spec.terminal_offset;
    let name = |s: &str| format!("{label}_{s}");
    checks.push(Check::at_most(name("mass_drift"), sol.max_mass_drift, spec.mass_tolerance));
    let tm = sol.path.times[sol.path.len() / 2];
    if spec.energy {
        let r = energy_density_residual(traj, &sol, tm, 1)?;
        checks.push(Check::at_most(name("energy_residual"), r, spec.residual_tolerance));
    }
    if spec.shrinker || spec.entropy {
        let psi = conjugate_dilaton_solve(traj, &sol, &vec![spec.psi_terminal; backend.nodes()])?;
        if spec.shrinker {
            let r = shrinker_residual(traj, &sol, &psi, tm, 1)?;
            checks.push(Check::at_most(name("shrinker_residual"), r, spec.residual_tolerance));
        }
        if spec.entropy {
            let opts = HarnackOptions {
                monotone_tol: monitors.monotone_tolerance,
                ..HarnackOptions::default()
            };
            let s = harnack_check(traj, &sol, &psi, &opts)?;
            let drop = s.channel("entropy_integral").map(max_drop).unwrap_or(0.0);
            checks.push(Check::at_most(name("entropy_drop"), drop, monitors.monotone_tolerance));
            files.insert(format!("{label}_entropy.csv"), s.to_csv());
        }
    }
    if monitors.extrema && spec.heat_mode == HeatMode::Weighted {
        let s = scalar_extrema_series(traj, Some(&sol), monitors.stride)?;
        let drop = max_drop(channel(&s, "sup_shifted_scalar")?);
        checks.push(Check::at_most(name("sup_shifted_scalar_drop"), drop, monitors.monotone_tolerance));
        files.insert(format!("{label}_extrema.csv"), s.to_csv());
    }
    if let Some(n) = &spec.nash {
        let rep = nash_relations_residual(traj, &sol, n.tau_min, n.tau_max, n.samples, 1)?;
        checks.push(Check::at_most(name("nash_residual"), rep.nash_residual, spec.residual_tolerance));
        checks.push(Check::at_most(name("perelman_residual"), rep.perelman_residual, spec.residual_tolerance));
        checks.push(Check::at_most(name("perelman_rate_max"), rep.max_perelman_rate, monitors.monotone_tolerance));
    }
    Ok(())
}
