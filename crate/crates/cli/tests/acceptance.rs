//! Acceptance criteria 1-10, one PASS/FAIL line each. Exits nonzero if any
//! criterion fails.

use grflab::entropy::lambda_eig;
use grflab::flow::{integrate, FlowMode, FlowState, Snapshot, StepperConfig};
use grflab::geometry::{Backend, BackendDescriptor};
use grflab::soliton::bismut_flat_fixture;
use grflab_cli::run::stationarity_checks;
use grflab_cli::{verify, Check, RunReport, Suite};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn judge(checks: &[&Check], extra: Option<(bool, String)>) -> Outcome {
    let mut pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    let mut parts: Vec<String> = checks
        .iter()
        .map(|c| {
            let order = c.order.map(|o| format!(", order {o:.2}")).unwrap_or_default();
            format!("{}{} {:.3e}{order}", if c.pass { "" } else { "FAILED " }, c.name, c.value)
        })
        .collect();
    if let Some((ok, text)) = extra {
        pass &= ok;
        parts.push(text);
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn pick<'a>(r: &'a RunReport, names: &[&str]) -> Vec<&'a Check> {
    names
        .iter()
        .map(|n| r.checks.iter().find(|c| c.name == *n).unwrap_or_else(|| panic!("check {n} missing")))
        .collect()
}

/// Dense `-4e^{φ}∂(e^{-φ}∂·) + R^{0,φ}` on the flat circle, φ = 0.3 cos θ.
fn dense_lambda(n: usize, phi: &[f64]) -> f64 {
    let h = 2.0 * PI / n as f64;
    let d = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (-1.0f64).powi((i + j) as i32) / (0.5 * (i as f64 - j as f64) * h).tan()
        }
    });
    let theta: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let pot: Vec<f64> = theta.iter().map(|x| -0.6 * x.cos() - 0.09 * x.sin().powi(2)).collect();
    let diag = |g: &dyn Fn(f64) -> f64| DMatrix::from_diagonal(&DVector::from_iterator(n, phi.iter().map(|v| g(*v))));
    let l = diag(&|v| v.exp()) * &d * diag(&|v| (-v).exp()) * &d * -4.0 + DMatrix::from_diagonal(&DVector::from_vec(pot));
    let s = diag(&|v| (-0.5 * v).exp()) * l * diag(&|v| (0.5 * v).exp());
    let s = (&s + s.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn main() {
    let mut reports = BTreeMap::new();
    let mut elapsed = BTreeMap::new();
    for suite in Suite::ALL {
        let clock = Instant::now();
        let rep = verify(suite, None).unwrap_or_else(|e| panic!("{} suite aborted: {e:#}", suite.name()));
        elapsed.insert(suite.name(), clock.elapsed().as_secs_f64());
        reports.insert(suite.name(), rep);
    }
    let r = |s: &str| &reports[s];
    let mut lines: Vec<(u32, &str, Outcome)> = Vec::new();

    let clock = Instant::now();
    let fx = bismut_flat_fixture().unwrap();
    let traj = integrate(&fx.backend, FlowMode::Grf, &fx.state, &StepperConfig::adaptive(1.0).with_max_step(0.05)).unwrap();
    let stat = stationarity_checks(&traj, 4.0);
    let secs = clock.elapsed().as_secs_f64();
    let refs: Vec<&Check> = stat.iter().collect();
    lines.push((1, "fixture stationarity", judge(&refs, Some((secs < 1.0, format!("runtime {secs:.3}s < 1s"))))));

    let secs = elapsed["scalar"];
    lines.push((
        2,
        "scalar monotonicity identity refines (N=128)",
        judge(&pick(r("scalar"), &["grf_scalar_refinement"]), Some((secs < 60.0, format!("suite runtime {secs:.1}s < 60s")))),
    ));
    lines.push((
        3,
        "one-form and general-degree identities refine",
        judge(&pick(r("scalar"), &["oneform_scalar_refinement", "ggrf_scalar_refinement"]), None),
    ));
    lines.push((
        4,
        "conjugate heat contracts",
        judge(
            &pick(r("heat-duality"), &["weighted_mass_drift", "plain_mass_drift", "conjugation_refinement", "flat_duality_residual"]),
            None,
        ),
    ));
    let mut five = pick(r("energy"), &["flat_energy_residual", "energy_refinement"]);
    five.extend(pick(r("shrinker"), &["flat_shrinker_residual", "shrinker_refinement", "entropy_integral_drop"]));
    lines.push((5, "energy and shrinker identities", judge(&five, None)));
    lines.push((
        6,
        "Nash relations",
        judge(
            &pick(
                r("nash"),
                &["flat_nash_residual", "flat_perelman_residual", "nash_refinement", "perelman_refinement", "perelman_rate_max"],
            ),
            None,
        ),
    ));

    let n = 32;
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n)).unwrap();
    let phi: Vec<f64> = b.coordinate(0).iter().map(|x| 0.3 * x.cos()).collect();
    let state = FlowState::new(b.flat_metric(), n).with_dilaton(phi.clone());
    let lam = lambda_eig(&Snapshot::new(&b, &state, FlowMode::Ricci).unwrap()).unwrap().lambda;
    let gap = (lam - dense_lambda(n, &phi)).abs();
    lines.push((
        7,
        "lambda nondecreasing, fixture value, dense oracle",
        judge(
            &pick(
                r("lambda"),
                &["homogeneous3_lambda_drop", "cohom1torus3_lambda_drop", "conformaltorus2_lambda_drop", "fixture_lambda_error"],
            ),
            Some((gap <= 1e-8, format!("dense oracle gap {gap:.3e}"))),
        ),
    ));

    let extrema: Vec<&Check> = reports
        .values()
        .flat_map(|rep| rep.checks.iter())
        .filter(|c| c.name.ends_with("min_scalar_drop") || c.name.ends_with("sup_shifted_scalar_drop"))
        .collect();
    let worst = extrema.iter().map(|c| c.value).fold(0.0f64, f64::max);
    let all = extrema.iter().all(|c| c.pass) && !extrema.is_empty();
    lines.push((
        8,
        "min/max scalar channels monotone",
        Outcome {
            pass: all,
            detail: format!("{} channels, largest drop {worst:.3e}", extrema.len()),
        },
    ));

    let secs = elapsed["iso"];
    lines.push((
        9,
        "log-Sobolev corpus, Gaussian equality, weight scaling",
        judge(
            &pick(r("iso"), &["corpus_pairs", "corpus_min_relative_deficit", "corpus_failed_pairs", "gaussian_deficit", "weight_shift_error"]),
            Some((secs < 300.0, format!("runtime {secs:.1}s < 300s"))),
        ),
    ));
    lines.push((
        10,
        "soliton dilaton convergence",
        judge(
            &pick(r("soliton"), &["flat_rate_error", "flat_terminal_deviation", "flat_offset_error", "fixture_source_residual"]),
            None,
        ),
    ));

    let mut failed = 0;
    for (id, title, o) in &lines {
        println!("criterion {id:>2} {}  {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria pass", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
