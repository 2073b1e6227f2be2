//! Explicit time stepping and checkpointed trajectories with Hermite dense
//! output.

use super::{flow_rhs, FlowMode, FlowState, Snapshot};
use crate::error::{LabError, Result};
use crate::geometry::{Backend, BackendDescriptor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Explicit RK4 is stable for `Δt·λ_max` below about 2.78 on the negative
/// real axis; leave a little margin.
const RK4_STABILITY_LIMIT: f64 = 2.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rk4,
    Dp45,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub scheme: Scheme,
    /// Fixed step for RK4; defaults to `cfl·h²` on grid backends.
    pub dt: Option<f64>,
    pub cfl: f64,
    /// Absolute and relative tolerance of the adaptive pair.
    pub tol: f64,
    pub t_end: f64,
    pub spd_floor: f64,
    pub max_step: Option<f64>,
}

impl StepperConfig {
    pub fn rk4(t_end: f64) -> Self {
        Self {
            scheme: Scheme::Rk4,
            dt: None,
            cfl: 0.1,
            tol: 1e-10,
            t_end,
            spd_floor: 1e-8,
            max_step: None,
        }
    }

    pub fn adaptive(t_end: f64) -> Self {
        Self {
            scheme: Scheme::Dp45,
            ..Self::rk4(t_end)
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = Some(h);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(LabError::Unsupported(format!("stepper: {what}")));
        if self.dt.is_some_and(|d| !(d > 0.0)) {
            return bad("dt must be positive");
        }
        if !(self.cfl > 0.0) || !(self.tol > 0.0) || !(self.spd_floor > 0.0) {
            return bad("cfl, tol and spd_floor must be positive");
        }
        if self.max_step.is_some_and(|d| !(d > 0.0)) {
            return bad("max_step must be positive");
        }
        if !self.t_end.is_finite() {
            return bad("t_end must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub error_estimate: f64,
    pub rejected: usize,
}

/// Every accepted step of a run, with the flow rate stored at each node.
#[derive(Clone, Debug)]
pub struct Trajectory {
    backend: Backend,
    mode: FlowMode,
    template: FlowState,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    rates: Vec<Vec<f64>>,
    steps: Vec<StepRecord>,
    config_hash: String,
}

/// On-disk form of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryContainer {
    pub version: u32,
    pub config_hash: String,
    pub backend: BackendDescriptor,
    pub mode: FlowMode,
    pub template: FlowState,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn combine(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            for (o, v) in out.iter_mut().zip(k.iter()) {
                *o += h * c * v;
            }
        }
    }
    out
}

struct Stepper<'a> {
    backend: &'a Backend,
    mode: FlowMode,
    template: &'a FlowState,
    cfg: &'a StepperConfig,
}

impl Stepper<'_> {
    fn rate(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LabError::StiffnessAbort {
                t,
                reason: "non-finite state".into(),
            });
        }
        let s = self.template.unpack(y, t);
        let r = flow_rhs(self.backend, self.mode, &s)
            .map_err(|e| match e {
                LabError::DegenerateMetric { node, value } => LabError::MetricDegenerate { t, node, value },
                other => other,
            })?
            .pack();
        if r.iter().any(|v| !v.is_finite()) {
            return Err(LabError::StiffnessAbort {
                t,
                reason: "non-finite rate".into(),
            });
        }
        Ok(r)
    }

    fn check_floor(&self, y: &[f64], t: f64) -> Result<()> {
        let s = self.template.unpack(y, t);
        let coeffs = s.metric_coefficients();
        let nodes = self.backend.nodes();
        for (i, v) in coeffs.iter().enumerate() {
            if !(*v >= self.cfg.spd_floor) {
                return Err(LabError::MetricDegenerate {
                    t,
                    node: i % nodes,
                    value: *v,
                });
            }
        }
        Ok(())
    }

    /// Largest diffusion eigenvalue of the current metric on the grid.
    fn spectral_radius(&self, y: &[f64], t: f64) -> f64 {
        let Some(grid) = self.backend.grid() else {
            return 0.0;
        };
        let kmax = (grid.points_per_axis() / 2 - 1) as f64;
        let s = self.template.unpack(y, t);
        let Ok(diag) = self.backend.metric_diagonal(&s.metric) else {
            return f64::INFINITY;
        };
        (0..self.backend.dim())
            .filter(|&i| self.backend.active_direction(i))
            .map(|i| kmax * kmax * diag[i].iter().fold(0.0_f64, |m, g| m.max(1.0 / g)))
            .sum()
    }

    fn rk4_step(&self, y: &[f64], k1: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
        let rho = self.spectral_radius(y, t);
        if h * rho > RK4_STABILITY_LIMIT {
            return Err(LabError::StiffnessAbort {
                t,
                reason: format!(
                    "dt = {h:e} exceeds the explicit stability bound {:e}",
                    RK4_STABILITY_LIMIT / rho
                ),
            });
        }
        let k2 = self.rate(&axpy(y, 0.5 * h, k1), t + 0.5 * h)?;
        let k3 = self.rate(&axpy(y, 0.5 * h, &k2), t + 0.5 * h)?;
        let k4 = self.rate(&axpy(y, h, &k3), t + h)?;
        Ok(combine(
            y,
            h,
            &[(1.0 / 6.0, k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
        ))
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate from `s0.t` to `cfg.t_end`, keeping every accepted step.
pub fn integrate(backend: &Backend, mode: FlowMode, s0: &FlowState, cfg: &StepperConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if !(cfg.t_end > s0.t) {
        return Err(LabError::RangeError {
            t: cfg.t_end,
            start: s0.t,
            end: f64::INFINITY,
        });
    }
    let hash = config_hash(backend.descriptor(), mode, cfg, s0);
    let stepper = Stepper {
        backend,
        mode,
        template: s0,
        cfg,
    };
    let mut y = s0.pack();
    stepper.check_floor(&y, s0.t)?;
    let mut t = s0.t;
    let mut k = stepper.rate(&y, t)?;
    let mut times = vec![t];
    let mut states = vec![y.clone()];
    let mut rates = vec![k.clone()];
    let mut steps = Vec::new();
    match cfg.scheme {
        Scheme::Rk4 => {
            let nominal = match (cfg.dt, backend.spacing()) {
                (Some(dt), _) => dt,
                (None, Some(h)) => cfg.cfl * h * h,
                (None, None) => cfg.max_step.unwrap_or(1e-2),
            };
            let span = cfg.t_end - s0.t;
            let count = (span / nominal - 1e-9).ceil().max(1.0) as usize;
            let h = span / count as f64;
            for i in 0..count {
                y = stepper.rk4_step(&y, &k, t, h)?;
                t = if i + 1 == count { cfg.t_end } else { s0.t + (i + 1) as f64 * h };
                stepper.check_floor(&y, t)?;
                k = stepper.rate(&y, t)?;
                times.push(t);
                states.push(y.clone());
                rates.push(k.clone());
                steps.push(StepRecord {
                    t,
                    dt: h,
                    error_estimate: 0.0,
                    rejected: 0,
                });
            }
        }
        Scheme::Dp45 => {
            let h_max = cfg.max_step.unwrap_or((cfg.t_end - s0.t) / 10.0);
            let mut h = 0.1 * h_max;
            let mut rejected = 0;
            while t < cfg.t_end {
                let last = cfg.t_end - t <= h * (1.0 + 1e-12);
                if last {
                    h = cfg.t_end - t;
                }
                if h < 1e-12 * (1.0 + t.abs()) {
                    return Err(LabError::StiffnessAbort {
                        t,
                        reason: format!("step size underflow (h = {h:e})"),
                    });
                }
                let mut ks: Vec<Vec<f64>> = vec![k.clone()];
                for stage in 1..7 {
                    let terms: Vec<(f64, &[f64])> =
                        (0..stage).map(|j| (DP_A[stage][j], ks[j].as_slice())).collect();
                    let ys = combine(&y, h, &terms);
                    ks.push(stepper.rate(&ys, t + DP_C[stage] * h)?);
                }
                let terms: Vec<(f64, &[f64])> = (0..6).map(|j| (DP_A[6][j], ks[j].as_slice())).collect();
                let y_new = combine(&y, h, &terms);
                let err = (0..y.len())
                    .map(|c| {
                        let e: f64 = (0..7).map(|j| DP_E[j] * ks[j][c]).sum::<f64>() * h;
                        e.abs() / (cfg.tol + cfg.tol * y[c].abs().max(y_new[c].abs()))
                    })
                    .fold(0.0, f64::max);
                if err <= 1.0 {
                    t = if last { cfg.t_end } else { t + h };
                    y = y_new;
                    stepper.check_floor(&y, t)?;
                    k = ks.pop().expect("seven stages");
                    times.push(t);
                    states.push(y.clone());
                    rates.push(k.clone());
                    steps.push(StepRecord {
                        t,
                        dt: h,
                        error_estimate: err,
                        rejected,
                    });
                    rejected = 0;
                } else {
                    rejected += 1;
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * factor).min(h_max);
            }
        }
    }
    Ok(Trajectory {
        backend: backend.clone(),
        mode,
        template: s0.clone(),
        times,
        states,
        rates,
        steps,
        config_hash: hash,
    })
}

fn config_hash(desc: &BackendDescriptor, mode: FlowMode, cfg: &StepperConfig, s0: &FlowState) -> String {
    let payload = serde_json::to_string(&(desc, mode, cfg, s0)).expect("serializable config");
    hex::encode(Sha256::digest(payload.as_bytes()))
}

/// Weights `w_j` with `Σ w_j f(t_j) ≈ f'(at)` from the Lagrange interpolant.
pub fn lagrange_derivative_weights(nodes: &[f64], at: f64) -> Vec<f64> {
    let m = nodes.len();
    (0..m)
        .map(|j| {
            let mut total = 0.0;
            for k in 0..m {
                if k == j {
                    continue;
                }
                let mut prod = 1.0 / (nodes[j] - nodes[k]);
                for l in 0..m {
                    if l != j && l != k {
                        prod *= (at - nodes[l]) / (nodes[j] - nodes[l]);
                    }
                }
                total += prod;
            }
            total
        })
        .collect()
}

impl Trajectory {
    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn set_config_hash(&mut self, hash: String) {
        self.config_hash = hash;
    }

    pub fn template(&self) -> &FlowState {
        &self.template
    }

    /// Stored state at node `i`.
    pub fn state(&self, i: usize) -> FlowState {
        self.template.unpack(&self.states[i], self.times[i])
    }

    /// Stored flow rate at node `i`.
    pub fn rate(&self, i: usize) -> FlowState {
        self.template.unpack(&self.rates[i], self.times[i])
    }

    pub fn packed_state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn snapshot(&self, i: usize) -> Result<Snapshot> {
        Snapshot::new(&self.backend, &self.state(i), self.mode)
    }

    pub fn snapshot_at(&self, t: f64) -> Result<Snapshot> {
        Snapshot::new(&self.backend, &self.state_at(t)?, self.mode)
    }

    /// Index of a node within `1e-9` relative of `t`, if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * (1.0 + t.abs()).max(self.end() - self.start());
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let (a, b) = (self.start(), self.end());
        let slack = 1e-12 * (1.0 + b.abs());
        if !(t >= a - slack && t <= b + slack) {
            return Err(LabError::RangeError { t, start: a, end: b });
        }
        let i = self.times.partition_point(|&s| s <= t);
        Ok(i.clamp(1, self.len() - 1) - 1)
    }

    /// Packed state by cubic Hermite interpolation of stored states and rates.
    pub fn packed_at(&self, t: f64) -> Result<Vec<f64>> {
        if let Some(i) = self.node_index(t) {
            if self.times[i] == t || self.len() == 1 {
                return Ok(self.states[i].clone());
            }
        }
        let i = self.locate(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (y0, y1, f0, f1) = (&self.states[i], &self.states[i + 1], &self.rates[i], &self.rates[i + 1]);
        Ok((0..y0.len())
            .map(|c| h00 * y0[c] + h * h10 * f0[c] + h01 * y1[c] + h * h11 * f1[c])
            .collect())
    }

    /// Dense-output state at `t`.
    pub fn state_at(&self, t: f64) -> Result<FlowState> {
        Ok(self.template.unpack(&self.packed_at(t)?, t))
    }

    pub fn to_container(&self) -> TrajectoryContainer {
        TrajectoryContainer {
            version: TRAJECTORY_FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            backend: self.backend.descriptor().clone(),
            mode: self.mode,
            template: self.template.clone(),
            times: self.times.clone(),
            states: self.states.clone(),
            rates: self.rates.clone(),
            steps: self.steps.clone(),
        }
    }

    pub fn from_container(c: TrajectoryContainer) -> Result<Self> {
        if c.version != TRAJECTORY_FORMAT_VERSION {
            return Err(LabError::Serialization(format!(
                "unsupported trajectory format version {}",
                c.version
            )));
        }
        if c.times.is_empty() || c.times.len() != c.states.len() || c.states.len() != c.rates.len() {
            return Err(LabError::Serialization("inconsistent trajectory arrays".into()));
        }
        if c.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Serialization("times are not strictly increasing".into()));
        }
        Ok(Self {
            backend: Backend::new(c.backend)?,
            mode: c.mode,
            template: c.template,
            times: c.times,
            states: c.states,
            rates: c.rates,
            steps: c.steps,
            config_hash: c.config_hash,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&self.to_container()).map_err(|e| LabError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: TrajectoryContainer =
            serde_json::from_str(s).map_err(|e| LabError::Serialization(e.to_string()))?;
        Self::from_container(c)
    }
}
