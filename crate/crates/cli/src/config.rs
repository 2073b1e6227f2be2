//! TOML experiment configuration and its translation to solver inputs.

use anyhow::{ensure, Context, Result};
use grflab::flow::{FlowMode, FlowState, Scheme, StepperConfig};
use grflab::geometry::{Backend, BackendDescriptor, FormField, MetricState};
use grflab::heat::{HeatMode, Normalization};
use grflab::isoperimetric::CorpusSpec;
use grflab::soliton::{fixture_by_name, DilatonFlowOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

/// A schema violation, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

macro_rules! reject {
    ($($arg:tt)*) => {
        return Err(ConfigError(format!($($arg)*)).into())
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Drives seeded perturbations and nothing else.
    #[serde(default)]
    pub seed: u64,
    pub backend: Option<BackendSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    pub mode: Option<FlowMode>,
    pub stepper: Option<StepperSpec>,
    #[serde(default)]
    pub monitors: MonitorSpec,
    #[serde(default)]
    pub backward: Vec<BackwardSpec>,
    pub iso: Option<CorpusSpec>,
    pub soliton: Option<SolitonSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    Homogeneous3,
    Cohom1Torus3,
    ConformalTorus2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendChoice,
    pub resolution: Option<usize>,
    pub structure_constants: Option<[f64; 3]>,
}

/// `mean + Σ amp·cos(k·x + phase)` over the grid coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    pub mean: Option<f64>,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    /// One wavenumber per periodic axis.
    pub k: Vec<f64>,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub a: Option<Series>,
    pub b: Option<Series>,
    pub c: Option<Series>,
    pub u: Option<Series>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneFormSpec {
    pub x: Series,
    pub y: Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub amplitude: f64,
    #[serde(default = "default_modes")]
    pub modes: usize,
}

fn default_modes() -> usize {
    3
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// `bismut-flat` or `flat-torus`; fixes the backend and the state.
    pub fixture: Option<String>,
    /// Homogeneous frame coefficients.
    pub frame: Option<[f64; 3]>,
    /// Constant coefficient of the background 3-form on 3D backends.
    pub torsion: Option<f64>,
    #[serde(default)]
    pub metric: MetricSpec,
    /// The `b_xy` component of the 2-form potential.
    pub potential: Option<Series>,
    pub dilaton: Option<Series>,
    pub alpha: Option<OneFormSpec>,
    /// Area-form coefficient of a closed 2-form on the 2D backend.
    pub h2: Option<Series>,
    pub perturbation: Option<PerturbationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSpec {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub t_end: f64,
    pub dt: Option<f64>,
    pub cfl: Option<f64>,
    pub tol: Option<f64>,
    pub spd_floor: Option<f64>,
    pub max_step: Option<f64>,
}

fn default_scheme() -> Scheme {
    Scheme::Rk4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSpec {
    pub stride: usize,
    pub scalar_residual: bool,
    pub extrema: bool,
    pub lambda: bool,
    pub rigidity: bool,
    pub monotone_tolerance: f64,
    pub residual_tolerance: f64,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            scalar_residual: false,
            extrema: true,
            lambda: false,
            rigidity: false,
            monotone_tolerance: 1e-6,
            residual_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackwardSpec {
    pub name: Option<String>,
    /// Solve window; defaults to the whole trajectory.
    pub start: Option<f64>,
    pub end: Option<f64>,
    /// `τ` is measured from `end + terminal_offset`.
    pub terminal_offset: f64,
    /// Bump width of the terminal density; `None` gives a uniform density.
    pub sigma: Option<f64>,
    pub center: Vec<f64>,
    /// Constant added to the bump to keep it positive.
    pub floor: f64,
    pub psi_terminal: f64,
    pub heat_mode: HeatMode,
    pub normalization: Normalization,
    pub max_step: Option<f64>,
    pub mass_tolerance: f64,
    pub residual_tolerance: f64,
    pub energy: bool,
    pub shrinker: bool,
    pub entropy: bool,
    /// `τ` window and sample count of the Nash relations (Ricci flow only).
    pub nash: Option<NashSpec>,
}

impl Default for BackwardSpec {
    fn default() -> Self {
        Self {
            name: None,
            start: None,
            end: None,
            terminal_offset: 0.0,
            sigma: None,
            center: Vec::new(),
            floor: 0.05,
            psi_terminal: 0.0,
            heat_mode: HeatMode::Weighted,
            normalization: Normalization::Shrinker,
            max_step: None,
            mass_tolerance: 1e-8,
            residual_tolerance: 1e-6,
            energy: false,
            shrinker: false,
            entropy: false,
            nash: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NashSpec {
    pub tau_min: f64,
    pub tau_max: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonSpec {
    pub fixture: String,
    #[serde(default = "default_soliton_resolution")]
    pub resolution: usize,
    /// Added to the soliton potential to form the initial dilaton.
    #[serde(default)]
    pub perturbation: Series,
    #[serde(default)]
    pub options: DilatonFlowOptions,
}

fn default_soliton_resolution() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub trajectory: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("grflab-out"),
            trajectory: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                reject!("{what} must be positive, got {v}");
            }
            Ok(())
        };
        let flow = self.backend.is_some() || self.initial.fixture.is_some();
        if flow {
            if self.mode.is_none() {
                reject!("a flow needs `mode`");
            }
            if self.stepper.is_none() {
                reject!("a flow needs a [stepper] table");
            }
        } else if !self.backward.is_empty() || self.monitors.lambda || self.monitors.rigidity || self.monitors.scalar_residual {
            reject!("monitors and backward solves need a flow (`backend` or `initial.fixture`)");
        }
        if !flow && self.iso.is_none() && self.soliton.is_none() {
            reject!("nothing to run: give a flow, [iso] or [soliton]");
        }
        if let Some(s) = &self.stepper {
            for (what, v) in [("stepper.dt", s.dt), ("stepper.cfl", s.cfl), ("stepper.tol", s.tol), ("stepper.spd_floor", s.spd_floor), ("stepper.max_step", s.max_step)] {
                if let Some(v) = v {
                    positive(what, v)?;
                }
            }
            if !s.t_end.is_finite() {
                reject!("stepper.t_end must be finite");
            }
        }
        positive("monitors.monotone_tolerance", self.monitors.monotone_tolerance)?;
        positive("monitors.residual_tolerance", self.monitors.residual_tolerance)?;
        if self.monitors.stride == 0 {
            reject!("monitors.stride must be at least 1");
        }
        for b in &self.backward {
            positive("backward.mass_tolerance", b.mass_tolerance)?;
            positive("backward.residual_tolerance", b.residual_tolerance)?;
            if let Some(s) = b.sigma {
                positive("backward.sigma", s)?;
            }
            if b.floor < 0.0 {
                reject!("backward.floor must be nonnegative");
            }
            if b.sigma.is_none() && b.floor != BackwardSpec::default().floor {
                reject!("backward.floor only applies to a bump (`sigma`)");
            }
            if let Some(n) = &b.nash {
                positive("backward.nash.tau_min", n.tau_min)?;
                positive("backward.nash.tau_max", n.tau_max)?;
            }
        }
        if let Some(iso) = &self.iso {
            positive("iso.tolerance", iso.tolerance)?;
            positive("iso.half_width", iso.half_width)?;
        }
        if let Some(s) = &self.soliton {
            positive("soliton.options.cfl", s.options.cfl)?;
            positive("soliton.options.terminal_tol", s.options.terminal_tol)?;
            positive("soliton.options.rate_tol", s.options.rate_tol)?;
        }
        Ok(())
    }

    pub fn stepper_config(&self) -> Option<StepperConfig> {
        let s = self.stepper.as_ref()?;
        let mut cfg = match s.scheme {
            Scheme::Rk4 => StepperConfig::rk4(s.t_end),
            Scheme::Dp45 => StepperConfig::adaptive(s.t_end),
        };
        cfg.dt = s.dt;
        cfg.max_step = s.max_step;
        if let Some(v) = s.cfl {
            cfg.cfl = v;
        }
        if let Some(v) = s.tol {
            cfg.tol = v;
        }
        if let Some(v) = s.spd_floor {
            cfg.spd_floor = v;
        }
        Some(cfg)
    }

    /// Backend and initial state of the flow, if the config has one.
    pub fn initial_state(&self) -> Result<Option<(Backend, FlowState)>> {
        let mode = self.mode.unwrap_or(FlowMode::Grf);
        if let Some(name) = &self.initial.fixture {
            let res = self.backend.as_ref().and_then(|b| b.resolution).unwrap_or(32);
            let fx = fixture_by_name(name, res)?;
            if let Some(b) = &self.backend {
                if descriptor(b)?.kind != fx.backend.kind() {
                    reject!("fixture '{name}' lives on {:?}", fx.backend.kind());
                }
            }
            let mut state = fx.state.clone();
            // A fixture's soliton potential is a dilaton only as a choice of data.
            state.phi = vec![0.0; state.phi.len()];
            if let Some(d) = &self.initial.dilaton {
                state.phi = evaluate(d, &fx.backend, 0.0)?;
            }
            let dim = fx.backend.dim();
            return Ok(Some((fx.backend, adapt_to_mode(state, mode, dim))));
        }
        let Some(spec) = &self.backend else {
            return Ok(None);
        };
        let backend = Backend::new(descriptor(spec)?)?;
        let state = build_state(&self.initial, &backend, mode, self.seed)?;
        Ok(Some((backend, state)))
    }
}

pub fn descriptor(spec: &BackendSpec) -> Result<BackendDescriptor> {
    let mut d = match spec.kind {
        BackendChoice::Homogeneous3 => {
            if spec.resolution.is_some() {
                reject!("homogeneous3 has no grid resolution");
            }
            BackendDescriptor::homogeneous3(spec.structure_constants.unwrap_or([2.0; 3]))
        }
        BackendChoice::Cohom1Torus3 => BackendDescriptor::cohom1_torus3(spec.resolution.unwrap_or(64)),
        BackendChoice::ConformalTorus2 => BackendDescriptor::conformal_torus2(spec.resolution.unwrap_or(32)),
    };
    if spec.kind != BackendChoice::Homogeneous3 {
        if spec.structure_constants.is_some() {
            reject!("structure_constants only apply to homogeneous3");
        }
        d.structure_constants = [0.0; 3];
    }
    d.validate()?;
    Ok(d)
}

/// Periodic coordinates of every node, one vector per active axis.
fn axes(backend: &Backend) -> Vec<Vec<f64>> {
    match backend.dim() {
        _ if backend.grid().is_none() => Vec::new(),
        2 => vec![backend.coordinate(0), backend.coordinate(1)],
        _ => vec![backend.coordinate(0)],
    }
}

pub fn evaluate(series: &Series, backend: &Backend, default_mean: f64) -> Result<Vec<f64>> {
    let x = axes(backend);
    let n = backend.nodes();
    let mut out = vec![series.mean.unwrap_or(default_mean); n];
    for m in &series.modes {
        if m.k.len() != x.len() {
            reject!("mode wavenumber {:?} needs {} component(s) on this backend", m.k, x.len());
        }
        for (p, o) in out.iter_mut().enumerate() {
            let arg: f64 = m.k.iter().zip(&x).map(|(k, c)| k * c[p]).sum();
            *o += m.amp * (arg + m.phase).cos();
        }
    }
    Ok(out)
}

/// Random low modes `Σ amp·r·cos(k·x + phase)`, `|r| ≤ 1`.
fn random_series(rng: &mut ChaCha8Rng, axes: usize, spec: &PerturbationSpec) -> Series {
    let modes = (0..spec.modes)
        .map(|_| Mode {
            k: (0..axes).map(|_| rng.random_range(-(spec.modes as i32)..=spec.modes as i32) as f64).collect(),
            amp: spec.amplitude * rng.random_range(-1.0..1.0) / spec.modes as f64,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    Series { mean: None, modes }
}

fn plus(a: Option<&Series>, b: Series) -> Series {
    let mut s = a.cloned().unwrap_or_default();
    s.modes.extend(b.modes);
    s
}

fn build_state(init: &InitialSpec, backend: &Backend, mode: FlowMode, seed: u64) -> Result<FlowState> {
    let n = backend.nodes();
    let dim = backend.dim();
    let grid = backend.grid().is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut metric_spec = init.metric.clone();
    let mut dilaton = init.dilaton.clone();
    let mut frame = init.frame.unwrap_or([1.0; 3]);
    if let Some(p) = &init.perturbation {
        if !(p.amplitude.is_finite() && p.amplitude >= 0.0) || p.modes == 0 {
            reject!("perturbation needs a nonnegative amplitude and at least one mode");
        }
        let ax = axes(backend).len();
        if !grid {
            for f in frame.iter_mut() {
                *f *= 1.0 + p.amplitude * rng.random_range(-1.0..1.0);
            }
        } else if dim == 3 {
            metric_spec.b = Some(plus(metric_spec.b.as_ref(), random_series(&mut rng, ax, p)));
            metric_spec.c = Some(plus(metric_spec.c.as_ref(), random_series(&mut rng, ax, p)));
        } else {
            metric_spec.u = Some(plus(metric_spec.u.as_ref(), random_series(&mut rng, ax, p)));
        }
        if grid {
            dilaton = Some(plus(dilaton.as_ref(), random_series(&mut rng, ax, p)));
        }
    }
    let metric = match backend.flat_metric() {
        MetricState::Homogeneous3 { .. } => {
            if metric_spec != MetricSpec::default() {
                reject!("homogeneous3 takes `initial.frame`, not metric series");
            }
            MetricState::Homogeneous3 { x: frame }
        }
        MetricState::Cohom1Torus3 { .. } => {
            if metric_spec.u.is_some() || init.frame.is_some() {
                reject!("cohom1-torus3 takes metric series a, b, c");
            }
            let field = |s: &Option<Series>| s.as_ref().map(|s| evaluate(s, backend, 1.0)).unwrap_or(Ok(vec![1.0; n]));
            MetricState::Cohom1Torus3 {
                a: field(&metric_spec.a)?,
                b: field(&metric_spec.b)?,
                c: field(&metric_spec.c)?,
            }
        }
        MetricState::ConformalTorus2 { .. } => {
            if metric_spec.a.is_some() || metric_spec.b.is_some() || metric_spec.c.is_some() || init.frame.is_some() {
                reject!("conformal-torus2 takes the metric series u");
            }
            let u = metric_spec.u.as_ref().map(|s| evaluate(s, backend, 0.0)).unwrap_or(Ok(vec![0.0; n]))?;
            MetricState::ConformalTorus2 { u }
        }
    };
    let mut state = FlowState::new(metric, n);
    if let Some(d) = &dilaton {
        if !grid && !d.modes.is_empty() {
            reject!("homogeneous3 fields are constants");
        }
        state = state.with_dilaton(evaluate(d, backend, 0.0)?);
    }
    if init.h2.is_some() && dim != 2 {
        reject!("initial.h2 needs the 2D backend");
    }
    if init.torsion.is_some() && dim != 3 {
        reject!("initial.torsion needs a 3D backend");
    }
    if init.potential.is_some() && (dim != 3 || !grid) {
        reject!("initial.potential needs cohom1-torus3");
    }
    match mode {
        FlowMode::Ricci => {
            if init.torsion.is_some() || init.potential.is_some() || init.h2.is_some() || init.alpha.is_some() {
                reject!("ricci mode takes no forms");
            }
        }
        FlowMode::Grf | FlowMode::OneForm => {
            if init.h2.is_some() {
                reject!("initial.h2 belongs to ggrf mode");
            }
            if dim == 3 {
                let mut h0 = FormField::zeros(3, 3, n);
                h0.comps[0] = vec![init.torsion.unwrap_or(0.0); n];
                let mut pot = FormField::zeros(3, 2, n);
                if let Some(p) = &init.potential {
                    let xy = pot.index_of(0b110).context("xy component")?;
                    pot.comps[xy] = evaluate(p, backend, 0.0)?;
                }
                state = state.with_background(h0).with_potential(pot);
            }
            if mode == FlowMode::OneForm {
                let mut alpha = FormField::zeros(dim, 1, n);
                if let Some(a) = &init.alpha {
                    if dim != 2 {
                        reject!("initial.alpha is given by x and y components on the 2D backend");
                    }
                    alpha.comps[0] = evaluate(&a.x, backend, 0.0)?;
                    alpha.comps[1] = evaluate(&a.y, backend, 0.0)?;
                }
                state = state.with_one_form(alpha);
            } else if init.alpha.is_some() {
                reject!("initial.alpha belongs to oneform mode");
            }
        }
        FlowMode::Ggrf => {
            if init.alpha.is_some() || init.potential.is_some() {
                reject!("ggrf mode takes closed forms only");
            }
            let mut forms = Vec::new();
            if let Some(h) = init.torsion {
                let mut f = FormField::zeros(3, 3, n);
                f.comps[0] = vec![h; n];
                forms.push(f);
            }
            if let Some(h2) = &init.h2 {
                let mut f = FormField::zeros(2, 2, n);
                f.comps[0] = evaluate(h2, backend, 0.0)?;
                forms.push(f);
            }
            state = state.with_forms(forms);
        }
    }
    Ok(state)
}

/// Fixture states carry `H₀ + db`; other modes need the matching fields.
fn adapt_to_mode(state: FlowState, mode: FlowMode, dim: usize) -> FlowState {
    let n = state.phi.len();
    match mode {
        FlowMode::OneForm => state.with_one_form(FormField::zeros(dim, 1, n)),
        FlowMode::Ggrf => {
            let forms = state.h0.iter().cloned().collect();
            let mut s = state;
            s.h0 = None;
            s.b = None;
            s.with_forms(forms)
        }
        _ => state,
    }
}

/// Parses an env var capping rayon threads.
pub fn thread_cap(value: Option<String>) -> Result<Option<usize>> {
    match value {
        None => Ok(None),
        Some(v) => {
            let n: usize = v.trim().parse().map_err(|_| ConfigError(format!("GRFLAB_THREADS must be a positive integer, got '{v}'")))?;
            ensure!(n > 0, ConfigError("GRFLAB_THREADS must be at least 1".into()));
            Ok(Some(n))
        }
    }
}

pub fn read_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}

/// Seeded low-mode perturbation of flat (or unit-frame) data on `spec`,
/// with torsion `h` on 3D backends.
pub fn random_state(spec: &BackendSpec, mode: FlowMode, h: f64, amplitude: f64, seed: u64) -> Result<(Backend, FlowState)> {
    let backend = Backend::new(descriptor(spec)?)?;
    let init = InitialSpec {
        torsion: (backend.dim() == 3 && mode != FlowMode::Ricci).then_some(h),
        perturbation: Some(PerturbationSpec { amplitude, modes: 3 }),
        ..InitialSpec::default()
    };
    let state = build_state(&init, &backend, mode, seed)?;
    Ok((backend, state))
}
