//! Weighted isoperimetric ratios of level sets on planar charts, radial
//! rearrangement and the weighted log-Sobolev deficit.

mod corpus;

pub use corpus::{run_corpus, CorpusEntry, CorpusReport, CorpusSpec};

use crate::error::{LabError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Width in cells of the boundary strip on which test functions must vanish.
pub const COLLAR: usize = 2;
/// Smallest admissible region, in coordinate cells.
const MIN_CELLS: f64 = 4.0;
/// Test functions count as zero on the collar below this fraction of their
/// maximum.
const COLLAR_TOL: f64 = 1e-9;

/// Volume of the Euclidean unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Euclidean isoperimetric constant `nⁿ ω_n`.
pub fn euclidean_iso_constant(n: usize) -> f64 {
    (n as f64).powi(n as i32) * unit_ball_volume(n)
}

/// Square chart `[-L, L]²` with nodes `x_i = -L + i h`, `h = 2L/N`, an
/// optional conformal factor (`g = e^{2u} δ`) and a weight `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartDomain {
    pub half_width: f64,
    pub resolution: usize,
    pub conformal: Option<Vec<f64>>,
    pub phi: Vec<f64>,
}

/// The superlevel set `{field ≥ level}`.
#[derive(Clone, Copy, Debug)]
pub struct Region<'a> {
    pub field: &'a [f64],
    pub level: f64,
}

impl<'a> Region<'a> {
    pub fn superlevel(field: &'a [f64], level: f64) -> Self {
        Self { field, level }
    }
}

/// Per-cell pieces of a region boundary and interior.
struct CellPiece {
    area: f64,
    centroid: (f64, f64),
    segments: Vec<((f64, f64), (f64, f64))>,
}

impl ChartDomain {
    pub fn flat(half_width: f64, resolution: usize) -> Result<Self> {
        if resolution < 16 || !(half_width > 0.0) {
            return Err(LabError::Unsupported(format!(
                "chart needs N ≥ 16 and L > 0, got N = {resolution}, L = {half_width}"
            )));
        }
        Ok(Self {
            half_width,
            resolution,
            conformal: None,
            phi: vec![0.0; resolution * resolution],
        })
    }

    pub fn with_conformal(mut self, u: Vec<f64>) -> Result<Self> {
        self.check_len(&u)?;
        self.conformal = Some(u);
        Ok(self)
    }

    pub fn with_weight(mut self, phi: Vec<f64>) -> Result<Self> {
        self.check_len(&phi)?;
        self.phi = phi;
        Ok(self)
    }

    /// The same chart with weight `φ + λ`.
    pub fn shifted(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.phi.iter_mut().for_each(|p| *p += lambda);
        out
    }

    /// Dimension of the inequality.
    pub fn dim(&self) -> usize {
        2
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.resolution as f64
    }

    pub fn nodes(&self) -> usize {
        self.resolution * self.resolution
    }

    /// Coordinates of node `p = j N + i`.
    pub fn point(&self, p: usize) -> (f64, f64) {
        let n = self.resolution;
        let h = self.spacing();
        (-self.half_width + (p % n) as f64 * h, -self.half_width + (p / n) as f64 * h)
    }

    /// Samples `f(x, y)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.nodes())
            .map(|p| {
                let (x, y) = self.point(p);
                f(x, y)
            })
            .collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.nodes() {
            return Err(LabError::Unsupported(format!(
                "field has {} values, chart has {} nodes",
                v.len(),
                self.nodes()
            )));
        }
        Ok(())
    }

    fn conf(&self, p: usize) -> f64 {
        self.conformal.as_ref().map_or(0.0, |u| u[p])
    }

    /// `e^{-φ} dV / dx` at node `p`.
    fn volume_density(&self, p: usize) -> f64 {
        (2.0 * self.conf(p) - self.phi[p]).exp()
    }

    /// `e^{-φ} dA / ds` at node `p`.
    fn length_density(&self, p: usize) -> f64 {
        (self.conf(p) - self.phi[p]).exp()
    }

    /// Bilinear interpolation of nodal values inside cell `(i, j)` at local
    /// coordinates in `[0, 1]²`.
    fn bilinear(&self, vals: &[f64; 4], (s, t): (f64, f64)) -> f64 {
        vals[0] * (1.0 - s) * (1.0 - t) + vals[1] * s * (1.0 - t) + vals[2] * s * t + vals[3] * (1.0 - s) * t
    }

    fn corners(&self, i: usize, j: usize) -> [usize; 4] {
        let n = self.resolution;
        [j * n + i, j * n + i + 1, (j + 1) * n + i + 1, (j + 1) * n + i]
    }

    /// Linear interface reconstruction of `{field ≥ level}` in one cell, in
    /// local unit-square coordinates.
    fn cell_piece(&self, region: &Region, c: &[usize; 4]) -> Option<CellPiece> {
        const LOCAL: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let v: [f64; 4] = std::array::from_fn(|k| region.field[c[k]] - region.level);
        let inside: [bool; 4] = std::array::from_fn(|k| v[k] >= 0.0);
        let count = inside.iter().filter(|b| **b).count();
        if count == 0 {
            return None;
        }
        if count == 4 {
            return Some(CellPiece {
                area: 1.0,
                centroid: (0.5, 0.5),
                segments: Vec::new(),
            });
        }
        let cross = |k: usize| -> (f64, f64) {
            let l = (k + 1) % 4;
            let t = v[k] / (v[k] - v[l]);
            let (a, b) = (LOCAL[k], LOCAL[l]);
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        let edge_cross: Vec<Option<(f64, f64)>> =
            (0..4).map(|k| (inside[k] != inside[(k + 1) % 4]).then(|| cross(k))).collect();
        let saddle = count == 2 && inside[0] == inside[2];
        let (polys, segments): (Vec<Vec<(f64, f64)>>, Vec<((f64, f64), (f64, f64))>) = if saddle {
            let q: Vec<(f64, f64)> = edge_cross.iter().map(|e| e.expect("saddle crosses every edge")).collect();
            let centre = 0.25 * v.iter().sum::<f64>();
            let around = |k: usize| vec![q[(k + 3) % 4], LOCAL[k], q[k]];
            let ins: Vec<usize> = (0..4).filter(|&k| inside[k]).collect();
            let outs: Vec<usize> = (0..4).filter(|&k| !inside[k]).collect();
            if centre >= 0.0 {
                // Connected through the centre: cut off the two outside corners.
                let mut poly = Vec::new();
                for k in 0..4 {
                    if inside[k] {
                        poly.push(LOCAL[k]);
                    }
                    poly.push(q[k]);
                }
                (vec![poly], outs.iter().map(|&k| (q[(k + 3) % 4], q[k])).collect())
            } else {
                (
                    ins.iter().map(|&k| around(k)).collect(),
                    ins.iter().map(|&k| (q[(k + 3) % 4], q[k])).collect(),
                )
            }
        } else {
            let mut poly = Vec::new();
            let mut pts = Vec::new();
            for k in 0..4 {
                if inside[k] {
                    poly.push(LOCAL[k]);
                }
                if let Some(p) = edge_cross[k] {
                    poly.push(p);
                    pts.push(p);
                }
            }
            (vec![poly], vec![(pts[0], pts[1])])
        };
        let mut area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for poly in &polys {
            let (a, x, y) = shoelace(poly);
            area += a;
            cx += x * a;
            cy += y * a;
        }
        let centroid = if area > 0.0 { (cx / area, cy / area) } else { (0.5, 0.5) };
        Some(CellPiece { area, centroid, segments })
    }

    fn for_each_piece(&self, region: &Region, mut f: impl FnMut(&[usize; 4], &CellPiece)) -> Result<()> {
        self.check_len(region.field)?;
        let n = self.resolution;
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let c = self.corners(i, j);
                if let Some(piece) = self.cell_piece(region, &c) {
                    f(&c, &piece);
                }
            }
        }
        Ok(())
    }

    /// Coordinate area of the region in cells.
    fn cell_count(&self, region: &Region) -> Result<f64> {
        let mut total = 0.0;
        self.for_each_piece(region, |_, piece| total += piece.area)?;
        Ok(total)
    }

    fn check_size(&self, region: &Region) -> Result<()> {
        let cells = self.cell_count(region)?;
        if cells < MIN_CELLS {
            return Err(LabError::TooSmall(format!(
                "region {{f ≥ {}}} covers {cells:.2} cells",
                region.level
            )));
        }
        Ok(())
    }

    /// `Vol_{e^{-φ}dV}(Ω)` and `Area_{e^{-φ}dA}(∂Ω)` without size checks.
    fn measure(&self, region: &Region) -> Result<(f64, f64)> {
        let h = self.spacing();
        let mut vol = 0.0;
        let mut per = 0.0;
        self.for_each_piece(region, |c, piece| {
            let dens: [f64; 4] = std::array::from_fn(|k| self.volume_density(c[k]));
            vol += piece.area * self.bilinear(&dens, piece.centroid);
            if !piece.segments.is_empty() {
                let len: [f64; 4] = std::array::from_fn(|k| self.length_density(c[k]));
                for (a, b) in &piece.segments {
                    let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
                    per += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() * self.bilinear(&len, mid);
                }
            }
        })?;
        Ok((vol * h * h, per * h))
    }

    pub fn weighted_volume(&self, region: &Region) -> Result<f64> {
        self.check_size(region)?;
        Ok(self.measure(region)?.0)
    }

    pub fn weighted_perimeter(&self, region: &Region) -> Result<f64> {
        self.check_size(region)?;
        Ok(self.measure(region)?.1)
    }

    /// `Perimeterⁿ / Volume^{n-1}` in the weighted measures.
    pub fn iso_ratio(&self, region: &Region) -> Result<f64> {
        self.check_size(region)?;
        let (vol, per) = self.measure(region)?;
        let n = self.dim() as i32;
        Ok(per.powi(n) / vol.powi(n - 1))
    }

    /// `∫_{ψ=s} |∇ψ|^{-1} e^{-φ} dA`, the co-area density of the volume
    /// distribution at level `s`.
    pub fn coarea_density(&self, psi: &[f64], s: f64) -> Result<f64> {
        let (gx, gy) = self.gradient(psi)?;
        let region = Region::superlevel(psi, s);
        let h = self.spacing();
        let mut total = 0.0;
        self.for_each_piece(&region, |c, piece| {
            if piece.segments.is_empty() {
                return;
            }
            let len: [f64; 4] = std::array::from_fn(|k| self.length_density(c[k]));
            let dx: [f64; 4] = std::array::from_fn(|k| gx[c[k]]);
            let dy: [f64; 4] = std::array::from_fn(|k| gy[c[k]]);
            for (a, b) in &piece.segments {
                let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
                let gxm = self.bilinear(&dx, mid);
                let gym = self.bilinear(&dy, mid);
                // |∇ψ|_g = e^{-u} |∂ψ| in a conformal chart.
                let grad = (gxm * gxm + gym * gym).sqrt();
                let seg = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() * h;
                total += seg * self.bilinear(&len, mid) * self.conformal_factor_at(c, mid) / grad;
            }
        })?;
        Ok(total)
    }

    /// `e^{u}` at a local point of a cell.
    fn conformal_factor_at(&self, c: &[usize; 4], at: (f64, f64)) -> f64 {
        let e: [f64; 4] = std::array::from_fn(|k| self.conf(c[k]).exp());
        self.bilinear(&e, at)
    }

    /// Coordinate partial derivatives: fourth-order centered differences,
    /// second-order one-sided in the two outermost node layers.
    pub fn gradient(&self, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(f)?;
        let n = self.resolution;
        let h = self.spacing();
        let diff = |line: &dyn Fn(usize) -> f64, k: usize| -> f64 {
            if k >= 2 && k + 2 < n {
                (line(k - 2) - 8.0 * line(k - 1) + 8.0 * line(k + 1) - line(k + 2)) / (12.0 * h)
            } else if k < 2 {
                (-3.0 * line(k) + 4.0 * line(k + 1) - line(k + 2)) / (2.0 * h)
            } else {
                (3.0 * line(k) - 4.0 * line(k - 1) + line(k - 2)) / (2.0 * h)
            }
        };
        let mut gx = vec![0.0; n * n];
        let mut gy = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                gx[j * n + i] = diff(&|k| f[j * n + k], i);
                gy[j * n + i] = diff(&|k| f[k * n + i], j);
            }
        }
        Ok((gx, gy))
    }

    /// `∫ v e^{-φ} dV` by the nodal rule.
    pub fn integral(&self, v: &[f64]) -> f64 {
        let h = self.spacing();
        v.iter().enumerate().map(|(p, x)| x * self.volume_density(p)).sum::<f64>() * h * h
    }

    /// `∫ |∇ψ|² e^{-φ} dV`.
    pub fn dirichlet(&self, psi: &[f64]) -> Result<f64> {
        let (gx, gy) = self.gradient(psi)?;
        let h = self.spacing();
        // |∇ψ|²_g dV_g = |∂ψ|² dx in two dimensions.
        Ok((0..psi.len())
            .map(|p| (gx[p] * gx[p] + gy[p] * gy[p]) * (-self.phi[p]).exp())
            .sum::<f64>()
            * h
            * h)
    }

    fn on_collar(&self, p: usize) -> bool {
        let n = self.resolution;
        let (i, j) = (p % n, p / n);
        i < COLLAR || j < COLLAR || i >= n - COLLAR || j >= n - COLLAR
    }

    fn collar_max(&self, psi: &[f64]) -> f64 {
        (0..psi.len()).filter(|&p| self.on_collar(p)).map(|p| psi[p]).fold(0.0, f64::max)
    }

    /// Checks `ψ ≥ 0`, `ψ ≢ 0` and vanishing on the boundary collar.
    pub fn check_test_function(&self, psi: &[f64]) -> Result<f64> {
        self.check_len(psi)?;
        let max = psi.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(LabError::ZeroFunction);
        }
        if let Some(v) = psi.iter().copied().find(|v| *v < -COLLAR_TOL * max || !v.is_finite()) {
            return Err(LabError::Unsupported(format!("test function must be nonnegative, found {v:e}")));
        }
        for p in 0..psi.len() {
            if self.on_collar(p) && psi[p].abs() > COLLAR_TOL * max {
                return Err(LabError::Unsupported(format!(
                    "test function is {:e} on the boundary collar at node {p}",
                    psi[p]
                )));
            }
        }
        Ok(max)
    }
}

/// Area and centroid of a simple polygon.
fn shoelace(poly: &[(f64, f64)]) -> (f64, f64, f64) {
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 0..poly.len() {
        let (x0, y0) = poly[k];
        let (x1, y1) = poly[(k + 1) % poly.len()];
        let cr = x0 * y1 - x1 * y0;
        a += cr;
        cx += (x0 + x1) * cr;
        cy += (y0 + y1) * cr;
    }
    if a.abs() < 1e-300 {
        return (0.0, 0.5, 0.5);
    }
    (0.5 * a, cx / (3.0 * a), cy / (3.0 * a))
}

/// `count` thresholds at the quantiles `(j + ½)/count` of the values of `ψ`
/// above the collar tolerance.
pub fn quantile_thresholds(psi: &[f64], count: usize) -> Vec<f64> {
    let floor = COLLAR_TOL * psi.iter().copied().fold(0.0, f64::max);
    let mut pos: Vec<f64> = psi.iter().copied().filter(|v| *v > floor).collect();
    pos.sort_by(f64::total_cmp);
    if pos.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|j| {
            let q = (j as f64 + 0.5) / count as f64;
            pos[((q * pos.len() as f64) as usize).min(pos.len() - 1)]
        })
        .collect()
}

/// Level sets `M_s = {ψ ≥ s}` with their weighted measures; thresholds whose
/// region is too small carry `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetFamily {
    pub thresholds: Vec<f64>,
    pub volumes: Vec<Option<f64>>,
    pub perimeters: Vec<Option<f64>>,
    pub ratios: Vec<Option<f64>>,
}

impl LevelSetFamily {
    pub fn new(domain: &ChartDomain, psi: &[f64], thresholds: &[f64]) -> Result<Self> {
        let mut t = thresholds.to_vec();
        t.sort_by(f64::total_cmp);
        let n = domain.dim() as i32;
        let edge = domain.collar_max(psi);
        if let Some(&low) = t.iter().find(|s| **s <= edge) {
            return Err(LabError::Unsupported(format!(
                "level {low:e} reaches the chart boundary (collar maximum {edge:e})"
            )));
        }
        let mut fam = Self {
            thresholds: t.clone(),
            volumes: Vec::with_capacity(t.len()),
            perimeters: Vec::with_capacity(t.len()),
            ratios: Vec::with_capacity(t.len()),
        };
        for s in t {
            let region = Region::superlevel(psi, s);
            match domain.check_size(&region) {
                Ok(()) => {
                    let (v, p) = domain.measure(&region)?;
                    fam.volumes.push(Some(v));
                    fam.perimeters.push(Some(p));
                    fam.ratios.push(Some(p.powi(n) / v.powi(n - 1)));
                }
                Err(LabError::TooSmall(_)) => {
                    fam.volumes.push(None);
                    fam.perimeters.push(None);
                    fam.ratios.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(fam)
    }

    pub fn min_ratio(&self) -> Option<f64> {
        self.ratios.iter().flatten().copied().reduce(f64::min)
    }
}

/// Smallest isoperimetric ratio among the level sets of `ψ` at `thresholds`
/// (64 quantiles when `None`).
pub fn level_set_iso_bound(domain: &ChartDomain, psi: &[f64], thresholds: Option<&[f64]>) -> Result<f64> {
    domain.check_test_function(psi)?;
    let own;
    let t = match thresholds {
        Some(t) => t,
        None => {
            own = quantile_thresholds(psi, 64);
            &own
        }
    };
    LevelSetFamily::new(domain, psi, t)?
        .min_ratio()
        .ok_or_else(|| LabError::TooSmall("every level set is degenerate".into()))
}

/// Rotationally symmetric decreasing profile on `ℝⁿ`, piecewise linear in
/// the enclosed volume `V = ω_n rⁿ` between knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub dim: usize,
    /// Enclosed volumes, increasing from 0 to the support volume.
    pub volumes: Vec<f64>,
    /// Profile values at those volumes, nonincreasing.
    pub values: Vec<f64>,
}

impl RadialProfile {
    /// Profile of a given radial function `h(r)` on `[0, r0]` at `knots`
    /// equally spaced radii.
    pub fn from_radial(dim: usize, r0: f64, knots: usize, h: impl Fn(f64) -> f64) -> Self {
        let w = unit_ball_volume(dim);
        let radii: Vec<f64> = (0..=knots).map(|k| r0 * k as f64 / knots as f64).collect();
        Self {
            dim,
            volumes: radii.iter().map(|r| w * r.powi(dim as i32)).collect(),
            values: radii.iter().map(|r| h(*r)).collect(),
        }
    }

    pub fn support_radius(&self) -> f64 {
        self.radius_of(*self.volumes.last().unwrap_or(&0.0))
    }

    fn radius_of(&self, vol: f64) -> f64 {
        (vol / unit_ball_volume(self.dim)).powf(1.0 / self.dim as f64)
    }

    /// `h` at radius `r`.
    pub fn value_at(&self, r: f64) -> f64 {
        let v = unit_ball_volume(self.dim) * r.powi(self.dim as i32);
        let k = self.volumes.partition_point(|x| *x <= v);
        if k == 0 {
            return self.values[0];
        }
        if k >= self.volumes.len() {
            return 0.0;
        }
        let (v0, v1) = (self.volumes[k - 1], self.volumes[k]);
        let t = (v - v0) / (v1 - v0);
        self.values[k - 1] + t * (self.values[k] - self.values[k - 1])
    }

    /// `Vol{h ≥ s}`.
    pub fn volume_above(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return *self.volumes.last().unwrap_or(&0.0);
        }
        for k in 1..self.values.len() {
            if self.values[k] < s {
                let (a, b) = (self.values[k - 1], self.values[k]);
                if a < s {
                    return self.volumes[k - 1];
                }
                let t = (a - s) / (a - b);
                return self.volumes[k - 1] + t * (self.volumes[k] - self.volumes[k - 1]);
            }
        }
        *self.volumes.last().unwrap_or(&0.0)
    }

    /// `∫ λ(h) dV`, Simpson on each linear piece.
    pub fn integrate(&self, lambda: impl Fn(f64) -> f64) -> f64 {
        self.volumes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(v, h)| {
                let mid = 0.5 * (h[0] + h[1]);
                (v[1] - v[0]) * (lambda(h[0]) + 4.0 * lambda(mid) + lambda(h[1])) / 6.0
            })
            .sum()
    }

    /// `∫ |∇h|² dV`: on each piece `|∇h| = |dh/dV| · A(V)` with the ball area
    /// `A(V) = n ω_n^{1/n} V^{(n-1)/n}`.
    pub fn dirichlet(&self) -> f64 {
        let n = self.dim as f64;
        let a = 2.0 * (n - 1.0) / n;
        let c = n * n * unit_ball_volume(self.dim).powf(2.0 / n);
        self.volumes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(v, h)| {
                let slope = (h[1] - h[0]) / (v[1] - v[0]);
                slope * slope * c * (v[1].powf(a + 1.0) - v[0].powf(a + 1.0)) / (a + 1.0)
            })
            .sum()
    }

    /// Isoperimetric ratio of the ball `{h ≥ s}`.
    pub fn level_iso_ratio(&self, s: f64) -> Result<f64> {
        let v = self.volume_above(s);
        if !(v > 0.0) {
            return Err(LabError::TooSmall(format!("level {s} encloses no volume")));
        }
        let n = self.dim;
        let r = self.radius_of(v);
        let area = n as f64 * unit_ball_volume(n) * r.powi(n as i32 - 1);
        Ok(area.powi(n as i32) / v.powi(n as i32 - 1))
    }
}

/// Knots of [`symmetrize`]: this many levels equally spaced in `s`, and as
/// many at equally spaced enclosed volumes.
const REARRANGE_LEVELS: usize = 512;

/// Volume-matched radial rearrangement of `ψ ≥ 0`: the profile `h` on `ℝⁿ`
/// with `Vol{h ≥ s} = Vol_{e^{-φ}}{ψ ≥ s}` at every knot, linear in the
/// enclosed volume between knots.
pub fn symmetrize(domain: &ChartDomain, psi: &[f64]) -> Result<RadialProfile> {
    let max = domain.check_test_function(psi)?;
    // The last knot is the support {ψ > 0}; a tail left on the collar is cut
    // at the collar tolerance instead.
    let edge = domain.collar_max(psi);
    let floor = if edge > 0.0 { (COLLAR_TOL * max).max(edge) } else { f64::MIN_POSITIVE };
    let mut levels: Vec<f64> = (1..REARRANGE_LEVELS)
        .map(|k| max * k as f64 / REARRANGE_LEVELS as f64)
        .collect();
    // Volume quantiles from the nodal measure, descending in ψ.
    let mut order: Vec<usize> = (0..psi.len()).filter(|&p| psi[p] > floor).collect();
    order.sort_by(|&a, &b| psi[b].total_cmp(&psi[a]));
    let weights: Vec<f64> = order.iter().map(|&p| domain.volume_density(p)).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut next = 1;
    for (&p, w) in order.iter().zip(&weights) {
        acc += w;
        if acc >= total * next as f64 / REARRANGE_LEVELS as f64 {
            levels.push(psi[p]);
            next += 1;
        }
    }
    levels.retain(|s| *s > floor && *s < max);
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    levels.push(floor);
    let mut volumes = vec![0.0];
    let mut values = vec![max];
    for s in levels {
        let vol = domain.measure(&Region::superlevel(psi, s))?.0;
        if vol > *volumes.last().expect("non-empty") {
            volumes.push(vol);
            values.push(s);
        }
    }
    *values.last_mut().expect("non-empty") = 0.0;
    Ok(RadialProfile {
        dim: domain.dim(),
        volumes,
        values,
    })
}

/// `n/2 log 2π + n + Λ`.
fn sobolev_rhs(n: usize, lambda: f64) -> f64 {
    0.5 * n as f64 * (2.0 * PI).ln() + n as f64 + lambda
}

fn x_log_x2(v: f64) -> f64 {
    let q = v * v;
    if q == 0.0 {
        0.0
    } else {
        q * q.ln()
    }
}

/// LHS − RHS of the weighted log-Sobolev inequality in `ψ²` form:
/// `∫(2|∇ψ|² − ψ² log ψ²)e^{-φ} + m log m − (n/2 log 2π + n + Λ) m`,
/// `m = ∫ψ² e^{-φ}`.
pub fn log_sobolev_deficit(domain: &ChartDomain, psi: &[f64], lambda: f64) -> Result<f64> {
    domain.check_test_function(psi)?;
    let m = domain.integral(&psi.iter().map(|v| v * v).collect::<Vec<_>>());
    let ent = domain.integral(&psi.iter().map(|v| x_log_x2(*v)).collect::<Vec<_>>());
    let grad = domain.dirichlet(psi)?;
    Ok(2.0 * grad - ent + m * m.ln() - sobolev_rhs(domain.dim(), lambda) * m)
}

/// The same inequality for `u = (2π)^{-n/2} e^{-f}` with `∫u e^{-φ} = 1`:
/// `∫(½|∇f|² + f − n) u e^{-φ} − Λ`.
pub fn log_sobolev_deficit_f(domain: &ChartDomain, f: &[f64], lambda: f64) -> Result<f64> {
    domain.check_len(f)?;
    let n = domain.dim() as f64;
    let norm = (2.0 * PI).powf(-0.5 * n);
    let u: Vec<f64> = f.iter().map(|v| norm * (-v).exp()).collect();
    let mass = domain.integral(&u);
    if (mass - 1.0).abs() > 1e-8 {
        return Err(LabError::NormalizationError { mass });
    }
    let (gx, gy) = domain.gradient(f)?;
    let integrand: Vec<f64> = (0..f.len())
        .map(|p| {
            let grad = (gx[p] * gx[p] + gy[p] * gy[p]) * (-2.0 * domain.conf(p)).exp();
            (0.5 * grad + f[p] - n) * u[p]
        })
        .collect();
    Ok(domain.integral(&integrand) - lambda)
}

/// `Λ = log(Î / c_n)` from the level sets of `ψ`.
pub fn sobolev_constant(domain: &ChartDomain, psi: &[f64]) -> Result<f64> {
    Ok((level_set_iso_bound(domain, psi, None)? / euclidean_iso_constant(domain.dim())).ln())
}

/// Euclidean log-Sobolev deficit of a radial profile (Λ = 0).
pub fn profile_deficit(profile: &RadialProfile) -> f64 {
    let m = profile.integrate(|h| h * h);
    let ent = profile.integrate(x_log_x2);
    2.0 * profile.dirichlet() - ent + m * m.ln() - sobolev_rhs(profile.dim, 0.0) * m
}
