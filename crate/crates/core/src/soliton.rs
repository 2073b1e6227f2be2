//! Steady soliton fixtures, convergence of the normalized dilaton flow on
//! them, and the scalar-curvature rigidity monitor.

use crate::entropy::{bakry_emery, drift_laplacian_gap, generalized_scalar, MonitorSeries};
use crate::error::{LabError, Result};
use crate::flow::{FlowMode, FlowState, Snapshot, Trajectory};
use crate::geometry::{Backend, BackendDescriptor, BackendKind, FormField, MetricState};
use serde::{Deserialize, Serialize};

const FIXTURE_TOL: f64 = 1e-10;

/// A steady soliton `Rc^{H,f} = 0` with `R^{H,f} = λ`. The potential is
/// stored as the state's dilaton.
#[derive(Clone, Debug)]
pub struct SolitonFixture {
    pub name: String,
    pub backend: Backend,
    pub state: FlowState,
    pub lambda: f64,
}

impl SolitonFixture {
    pub fn snapshot(&self) -> Result<Snapshot> {
        Snapshot::new(&self.backend, &self.state, FlowMode::Grf)
    }

    pub fn potential(&self) -> &[f64] {
        &self.state.phi
    }

    /// Re-verifies the soliton identities.
    pub fn check(&self) -> Result<()> {
        let snap = self.snapshot()?;
        let f = self.potential();
        let rc = bakry_emery(&snap, f)?.norm_sq(&snap);
        let rc_max = rc.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
        if rc_max > FIXTURE_TOL {
            return Err(LabError::FixtureBroken(format!("{}: |Rc^(H,f)| = {rc_max:e}", self.name)));
        }
        let trace = max_abs(&soliton_trace(&snap, f));
        if trace > FIXTURE_TOL {
            return Err(LabError::FixtureBroken(format!("{}: R - |H|²/4 + Δf = {trace:e}", self.name)));
        }
        let r = generalized_scalar(&snap, f);
        let dev = r.iter().fold(0.0f64, |m, v| m.max((v - self.lambda).abs()));
        if dev > FIXTURE_TOL {
            return Err(LabError::FixtureBroken(format!(
                "{}: R^(H,f) deviates from λ = {} by {dev:e}",
                self.name, self.lambda
            )));
        }
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `R - ¼Σ|H_k|² + Δf`.
fn soliton_trace(snap: &Snapshot, f: &[f64]) -> Vec<f64> {
    let r = snap.geo.scalar_curvature();
    let h = snap.torsion_norm_sq();
    let lap = snap.geo.laplacian(f);
    (0..r.len()).map(|p| r[p] - 0.25 * h[p] + lap[p]).collect()
}

/// Bismut-flat `S³`: structure constants `(2,2,2)`, unit frame, `H = 2 dV`,
/// `f = 0`, `λ = 4`.
pub fn bismut_flat_fixture() -> Result<SolitonFixture> {
    let backend = Backend::new(BackendDescriptor::homogeneous3([2.0; 3]))?;
    let mut h0 = FormField::zeros(3, 3, 1);
    h0.comps[0][0] = 2.0;
    let state = FlowState::new(MetricState::Homogeneous3 { x: [1.0; 3] }, 1)
        .with_background(h0)
        .with_potential(FormField::zeros(3, 2, 1));
    let fx = SolitonFixture {
        name: "bismut-flat".into(),
        backend,
        state,
        lambda: 4.0,
    };
    fx.check()?;
    Ok(fx)
}

/// Flat `T³` in the cohomogeneity-one ansatz, `H = 0`, `f = 0`, `λ = 0`.
pub fn flat_torus_fixture(resolution: usize) -> Result<SolitonFixture> {
    let backend = Backend::new(BackendDescriptor::cohom1_torus3(resolution))?;
    let state = FlowState::new(backend.flat_metric(), resolution);
    let fx = SolitonFixture {
        name: "flat-torus".into(),
        backend,
        state,
        lambda: 0.0,
    };
    fx.check()?;
    Ok(fx)
}

/// Fixture registry: `bismut-flat` or `flat-torus`.
pub fn fixture_by_name(name: &str, resolution: usize) -> Result<SolitonFixture> {
    match name {
        "bismut-flat" => bismut_flat_fixture(),
        "flat-torus" => flat_torus_fixture(resolution),
        other => Err(LabError::Unsupported(format!("unknown fixture '{other}'"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DilatonFlowOptions {
    /// Horizon; defaults to `15/μ₁` (or 1 without a spectral gap).
    pub t_end: Option<f64>,
    /// `Δt = cfl · h² · min g_ii` on grids.
    pub cfl: f64,
    pub samples: usize,
    pub terminal_tol: f64,
    pub rate_tol: f64,
}

impl Default for DilatonFlowOptions {
    fn default() -> Self {
        Self {
            t_end: None,
            cfl: 0.1,
            samples: 200,
            terminal_tol: 1e-6,
            rate_tol: 0.05,
        }
    }
}

/// Result of [`normalized_dilaton_flow`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilatonConvergence {
    /// Channels `deviation = ‖φ - f - c‖∞` and `offset = c`.
    pub series: MonitorSeries,
    pub mu1: Option<f64>,
    /// Measured exponential decay rate of the deviation.
    pub decay_rate: Option<f64>,
    pub terminal_deviation: f64,
    pub terminal_offset: f64,
    /// `max |(1/6)|H|² - λ + Δf - |∇f|²|`.
    pub source_residual: f64,
    /// `max |R - ¼|H|² + Δf|`.
    pub trace_residual: f64,
}

/// Gauge-fixed normalized dilaton flow `(□ + ∇f)φ = (1/6)|H|² - λ` on the
/// static fixture, by classical RK4.
pub fn normalized_dilaton_flow(
    fx: &SolitonFixture,
    phi0: &[f64],
    opts: &DilatonFlowOptions,
) -> Result<DilatonConvergence> {
    let snap = fx.snapshot()?;
    let geo = &snap.geo;
    let f = fx.potential().to_vec();
    let nodes = geo.nodes();
    if phi0.len() != nodes {
        return Err(LabError::Unsupported(format!(
            "initial dilaton has {} values, backend has {nodes} nodes",
            phi0.len()
        )));
    }
    let source: Vec<f64> = snap.dilaton_source().iter().map(|s| s - fx.lambda).collect();
    let lap_f = geo.laplacian(&f);
    let grad_f = geo.gradient_norm_sq(&f);
    let source_residual = max_abs(&(0..nodes).map(|p| source[p] + lap_f[p] - grad_f[p]).collect::<Vec<_>>());
    let trace_residual = max_abs(&soliton_trace(&snap, &f));
    let mu1 = match fx.backend.kind() {
        BackendKind::Homogeneous3 => None,
        _ => Some(drift_laplacian_gap(&snap, &f)?.lambda),
    };
    let t_end = opts.t_end.unwrap_or(mu1.map_or(1.0, |m| 15.0 / m));
    let rhs = |phi: &[f64]| -> Vec<f64> {
        let lap = geo.laplacian(phi);
        let drift = geo.gradient_dot(&f, phi);
        (0..nodes).map(|p| lap[p] - drift[p] + source[p]).collect()
    };
    let dt_max = match fx.backend.spacing() {
        Some(h) => {
            let gmin = geo
                .metric_diagonal()
                .iter()
                .flat_map(|c| c.iter().copied())
                .fold(f64::INFINITY, f64::min);
            opts.cfl * h * h * gmin
        }
        None => t_end / opts.samples.max(1) as f64,
    };
    let samples = opts.samples.max(1);
    let per_sample = ((t_end / samples as f64) / dt_max).ceil().max(1.0) as usize;
    let dt = t_end / (samples * per_sample) as f64;
    let measure = |phi: &[f64]| -> (f64, f64) {
        let diff: Vec<f64> = (0..nodes).map(|p| phi[p] - f[p]).collect();
        let c = geo.weighted_integral(&diff, &f) / geo.weighted_integral(&vec![1.0; nodes], &f);
        (diff.iter().fold(0.0f64, |m, v| m.max((v - c).abs())), c)
    };
    let mut series = MonitorSeries::new()
        .with_meta("monitor", "normalized_dilaton")
        .with_meta("fixture", fx.name.clone());
    let mut phi = phi0.to_vec();
    let (dev0, c0) = measure(&phi);
    series.push(0.0, &[("deviation", dev0), ("offset", c0)]);
    for k in 1..=samples {
        for _ in 0..per_sample {
            let k1 = rhs(&phi);
            let y2: Vec<f64> = (0..nodes).map(|p| phi[p] + 0.5 * dt * k1[p]).collect();
            let k2 = rhs(&y2);
            let y3: Vec<f64> = (0..nodes).map(|p| phi[p] + 0.5 * dt * k2[p]).collect();
            let k3 = rhs(&y3);
            let y4: Vec<f64> = (0..nodes).map(|p| phi[p] + dt * k3[p]).collect();
            let k4 = rhs(&y4);
            for p in 0..nodes {
                phi[p] += dt / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
            }
        }
        let t = k as f64 * per_sample as f64 * dt;
        let (dev, c) = measure(&phi);
        if !dev.is_finite() || dev > 1e6 * (1.0 + dev0) {
            return Err(LabError::NoConvergence(format!("deviation {dev:e} at t = {t}")));
        }
        series.push(t, &[("deviation", dev), ("offset", c)]);
    }
    let devs = series.channel("deviation").expect("pushed").to_vec();
    let terminal_deviation = *devs.last().expect("non-empty");
    let terminal_offset = *series.channel("offset").and_then(|c| c.last()).expect("non-empty");
    let decay_rate = fit_decay(&series.times, &devs, t_end);
    let monotone = series.nonincreasing("deviation", 1e-12);
    series.set_flag("monotone_decay", monotone);
    series.set_flag("converged", terminal_deviation <= opts.terminal_tol);
    if let (Some(m), Some(r)) = (mu1, decay_rate) {
        series.set_flag("rate_matches_gap", (r / m - 1.0).abs() <= opts.rate_tol);
        series.metadata.insert("mu1".into(), format!("{m:e}"));
        series.metadata.insert("decay_rate".into(), format!("{r:e}"));
    }
    Ok(DilatonConvergence {
        series,
        mu1,
        decay_rate,
        terminal_deviation,
        terminal_offset,
        source_residual,
        trace_residual,
    })
}

/// Least-squares slope of `-log(deviation)` over `[0.2T, 0.6T]`, skipping
/// samples at round-off level.
fn fit_decay(times: &[f64], devs: &[f64], t_end: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(devs)
        .filter(|(t, d)| **t >= 0.2 * t_end && **t <= 0.6 * t_end && **d > 1e-13)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|(t, l)| (t - mt) * (l - ml)).sum();
    let var: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    Some(-cov / var)
}

/// `min R^{H,φ}` and `‖Rc^{H,φ}‖∞` along a trajectory, with flags for the
/// soliton branch and for the onset of strict positivity.
pub fn rigidity_experiment(traj: &Trajectory, stride: usize, tol: f64) -> Result<MonitorSeries> {
    let mut series = MonitorSeries::new()
        .with_meta("config_hash", traj.config_hash())
        .with_meta("monitor", "rigidity");
    let mut idx: Vec<usize> = (0..traj.len()).step_by(stride.max(1)).collect();
    if idx.last() != Some(&(traj.len() - 1)) {
        idx.push(traj.len() - 1);
    }
    let mut onset = None;
    for i in idx {
        let snap = traj.snapshot(i)?;
        let r = generalized_scalar(&snap, &snap.phi);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        let rc = bakry_emery(&snap, &snap.phi)?.norm_sq(&snap);
        let norm = rc.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt();
        let t = traj.times()[i];
        if onset.is_none() && series.times.first().is_some() && min > tol {
            onset = Some(t);
        }
        series.push(t, &[("min_scalar", min), ("bakry_emery_norm", norm)]);
    }
    let mins = series.channel("min_scalar").expect("pushed").to_vec();
    let first = mins[0];
    let spread = mins.iter().fold(0.0f64, |m, v| m.max((v - first).abs()));
    let rc_max = series
        .channel("bakry_emery_norm")
        .expect("pushed")
        .iter()
        .fold(0.0f64, |m, v| m.max(*v));
    series.set_flag("initially_nonnegative", first >= -tol);
    series.set_flag("soliton_branch", rc_max <= tol && spread <= tol);
    let onset_flag = first <= tol && *mins.last().expect("non-empty") > tol;
    series.set_flag("positivity_onset", onset_flag);
    if let (true, Some(t)) = (onset_flag, onset) {
        series.metadata.insert("onset_time".into(), format!("{t:e}"));
    }
    Ok(series)
}
