use super::{euclidean_iso_constant, level_set_iso_bound, log_sobolev_deficit, ChartDomain};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Randomized `(ψ, φ)` pairs on a flat chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub pairs: usize,
    pub resolution: usize,
    pub half_width: f64,
    pub seed: u64,
    /// Allowed negative deficit relative to `∫ψ² e^{-φ}`.
    pub tolerance: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            pairs: 100,
            resolution: 256,
            half_width: 4.0,
            seed: 7,
            tolerance: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub index: usize,
    pub iso_bound: f64,
    pub sobolev_constant: f64,
    pub deficit: f64,
    pub mass: f64,
    pub relative_deficit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub spec: CorpusSpec,
    pub entries: Vec<CorpusEntry>,
    pub min_relative_deficit: f64,
    pub all_pass: bool,
}

/// Smooth radial cutoff, 1 near the origin and 0 for `|x| ≥ radius`.
fn cutoff(r: f64, radius: f64) -> f64 {
    let t = r / radius;
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// Pair `index` of the corpus: a sum of one to three rotated anisotropic
/// Gaussians under a compact cutoff, and a low-frequency weight with a
/// random offset.
pub(crate) fn corpus_pair(spec: &CorpusSpec, index: usize) -> Result<(ChartDomain, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let l = spec.half_width;
    let bumps: Vec<[f64; 6]> = (0..rng.random_range(1..=3))
        .map(|_| {
            [
                rng.random_range(0.5..1.5),
                rng.random_range(-0.3 * l..0.3 * l),
                rng.random_range(-0.3 * l..0.3 * l),
                rng.random_range(0.1 * l..0.3 * l),
                rng.random_range(0.1 * l..0.3 * l),
                rng.random_range(0.0..PI),
            ]
        })
        .collect();
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(-0.3..0.3),
                rng.random_range(-2.0..2.0) * PI / l,
                rng.random_range(-2.0..2.0) * PI / l,
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let offset = rng.random_range(-0.5..0.5);
    let flat = ChartDomain::flat(l, spec.resolution)?;
    let psi = flat.sample(|x, y| {
        let g: f64 = bumps
            .iter()
            .map(|&[a, cx, cy, sx, sy, th]| {
                let (dx, dy) = (x - cx, y - cy);
                let u = th.cos() * dx + th.sin() * dy;
                let v = -th.sin() * dx + th.cos() * dy;
                a * (-0.5 * (u * u / (sx * sx) + v * v / (sy * sy))).exp()
            })
            .sum();
        g * cutoff((x * x + y * y).sqrt(), 0.9 * l)
    });
    let phi = flat.sample(|x, y| {
        offset + waves.iter().map(|&[b, kx, ky, th]| b * (kx * x + ky * y + th).cos()).sum::<f64>()
    });
    Ok((flat.with_weight(phi)?, psi))
}

/// Deficits with `Λ = log(Î/c_n)` over the corpus, in parallel.
pub fn run_corpus(spec: &CorpusSpec) -> Result<CorpusReport> {
    let cn = euclidean_iso_constant(2);
    let entries = (0..spec.pairs)
        .into_par_iter()
        .map(|index| {
            let (domain, psi) = corpus_pair(spec, index)?;
            let iso = level_set_iso_bound(&domain, &psi, None)?;
            let lambda = (iso / cn).ln();
            let deficit = log_sobolev_deficit(&domain, &psi, lambda)?;
            let mass = domain.integral(&psi.iter().map(|v| v * v).collect::<Vec<_>>());
            let relative = deficit / mass;
            Ok(CorpusEntry {
                index,
                iso_bound: iso,
                sobolev_constant: lambda,
                deficit,
                mass,
                relative_deficit: relative,
                pass: relative >= -spec.tolerance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min = entries.iter().map(|e| e.relative_deficit).fold(f64::INFINITY, f64::min);
    Ok(CorpusReport {
        spec: spec.clone(),
        all_pass: entries.iter().all(|e| e.pass),
        min_relative_deficit: min,
        entries,
    })
}
