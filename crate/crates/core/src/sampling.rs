//! Linear sampling for a one-dimensional conductor `Omega = (0, L)` with an
//! inclusion `D` of conductivity `k`.
//!
//! Boundary data live on the two endpoints at the time levels `t_1..t_N` and
//! are stored time-major: index `2 (m - 1) + side`, `side = 0` at `x = 0`.
//! Neumann data are `d_nu u` with the outward normal, continuous piecewise
//! linear in time with `g(0) = 0`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ItpError, Result};
use crate::geometry::Contrast;
use crate::linalg::{BandedLu, BandedMatrix};
use crate::refsolver::{green_column, mollifier, ItpSolver, Mesh, Scheme, TimeStepping};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inclusion {
    pub a: f64,
    pub b: f64,
}

/// Heat conduction in `Omega` with conductivity `1 + (k - 1) chi_D`,
/// discretized by flux-conservative finite volumes on the mesh nodes.
pub struct Conductor {
    mesh: Mesh,
    /// Conductivity on each cell `(x_i, x_{i+1})`.
    gamma: Vec<f64>,
    cache: HashMap<(u64, u64), BandedLu>,
}

impl Conductor {
    pub fn new(mesh: Mesh, k: f64, inclusion: Option<Inclusion>) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(ItpError::Config(format!("conductivity {k} must be positive")));
        }
        let mut gamma = vec![1.0; mesh.n];
        if let Some(Inclusion { a, b }) = inclusion {
            if !(a < b) {
                return Err(ItpError::Geometry(format!("empty inclusion ({a}, {b})")));
            }
            if a < mesh.h || b > mesh.length - mesh.h {
                return Err(ItpError::Geometry(format!(
                    "inclusion ({a}, {b}) touches the boundary of (0, {})",
                    mesh.length
                )));
            }
            for (i, g) in gamma.iter_mut().enumerate() {
                let mid = (i as f64 + 0.5) * mesh.h;
                if mid > a && mid < b {
                    *g = k;
                }
            }
        }
        Ok(Self {
            mesh,
            gamma,
            cache: HashMap::new(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn mass(&self, i: usize) -> f64 {
        if i == 0 || i == self.mesh.n {
            0.5 * self.mesh.h
        } else {
            self.mesh.h
        }
    }

    /// `-(d/dx) gamma (d/dx) u` integrated over each control volume.
    fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        let h = self.mesh.h;
        let mut out = vec![0.0; u.len()];
        for (c, g) in self.gamma.iter().enumerate() {
            let flux = g * (u[c + 1] - u[c]) / h;
            out[c] -= flux;
            out[c + 1] += flux;
        }
        out
    }

    fn factor(&mut self, theta: f64, dt: f64) -> Result<&BandedLu> {
        let key = (theta.to_bits(), dt.to_bits());
        if !self.cache.contains_key(&key) {
            let n = self.mesh.n;
            let h = self.mesh.h;
            let mut a = BandedMatrix::zeros(n + 1, 1, 1);
            for i in 0..=n {
                a.add(i, i, self.mass(i) / dt);
            }
            for (c, g) in self.gamma.iter().enumerate() {
                let s = theta * g / h;
                a.add(c, c, s);
                a.add(c + 1, c + 1, s);
                a.add(c, c + 1, -s);
                a.add(c + 1, c, -s);
            }
            self.cache.insert(key, a.factor()?);
        }
        Ok(&self.cache[&key])
    }

    fn step(&mut self, u: &[f64], flux: ([f64; 2], [f64; 2]), dt: f64, theta: f64) -> Result<Vec<f64>> {
        let n = self.mesh.n;
        let au = self.apply_stiffness(u);
        let mut rhs: Vec<f64> = (0..=n)
            .map(|i| self.mass(i) / dt * u[i] - (1.0 - theta) * au[i])
            .collect();
        let (old, new) = flux;
        rhs[0] += theta * new[0] + (1.0 - theta) * old[0];
        rhs[n] += theta * new[1] + (1.0 - theta) * old[1];
        self.factor(theta, dt)?.solve_in_place(&mut rhs);
        Ok(rhs)
    }

    /// States at the levels `start..=N`, beginning with `init` at `start`.
    /// `flux(m)` is the Neumann data at level `m`.
    pub fn run(
        &mut self,
        init: Vec<f64>,
        start: usize,
        flux: &dyn Fn(usize) -> [f64; 2],
        stepping: TimeStepping,
    ) -> Result<Vec<Vec<f64>>> {
        if init.len() != self.mesh.n + 1 {
            return Err(ItpError::GridMismatch(format!(
                "initial state has {} values for {} nodes",
                init.len(),
                self.mesh.n + 1
            )));
        }
        let dt = self.mesh.dt;
        let total = self.mesh.n_steps();
        let mut out = Vec::with_capacity(total + 1 - start.min(total));
        out.push(init);
        for m in start..total {
            let cur = out.last().unwrap();
            let (f0, f1) = (flux(m), flux(m + 1));
            let next = match stepping {
                TimeStepping::Rannacher if m == start => {
                    let mid = [0.5 * (f0[0] + f1[0]), 0.5 * (f0[1] + f1[1])];
                    let half = self.step(cur, (f0, mid), 0.5 * dt, 1.0)?;
                    self.step(&half, (mid, f1), 0.5 * dt, 1.0)?
                }
                TimeStepping::Rannacher | TimeStepping::Pure(Scheme::CrankNicolson) => {
                    self.step(cur, (f0, f1), dt, 0.5)?
                }
                TimeStepping::Pure(Scheme::ImplicitEuler) => self.step(cur, (f0, f1), dt, 1.0)?,
            };
            out.push(next);
        }
        Ok(out)
    }
}

fn boundary_len(mesh: &Mesh) -> usize {
    2 * mesh.n_steps()
}

/// Dirichlet trace of the conductor for Neumann data `g`.
pub fn forward_nd(conductor: &mut Conductor, g: &[f64]) -> Result<Vec<f64>> {
    let mesh = *conductor.mesh();
    if g.len() != boundary_len(&mesh) {
        return Err(ItpError::GridMismatch(format!(
            "boundary data has {} values, expected {}",
            g.len(),
            boundary_len(&mesh)
        )));
    }
    let flux = |m: usize| {
        if m == 0 {
            [0.0; 2]
        } else {
            [g[2 * (m - 1)], g[2 * (m - 1) + 1]]
        }
    };
    let states = conductor.run(
        vec![0.0; mesh.n + 1],
        0,
        &flux,
        TimeStepping::Pure(Scheme::CrankNicolson),
    )?;
    Ok(trace(&mesh, &states[1..]))
}

fn trace(mesh: &Mesh, levels: &[Vec<f64>]) -> Vec<f64> {
    levels.iter().flat_map(|u| [u[0], u[mesh.n]]).collect()
}

/// Neumann-to-Dirichlet map as a matrix on boundary-time data.
#[derive(Debug, Clone, PartialEq)]
pub struct NdMap {
    pub mesh: Mesh,
    pub matrix: DMatrix<f64>,
}

impl NdMap {
    /// The map is lower block-triangular and Toeplitz in time, so two
    /// responses (one per boundary node) determine it.
    pub fn assemble(conductor: &mut Conductor) -> Result<Self> {
        let mesh = *conductor.mesh();
        let nt = mesh.n_steps();
        let len = boundary_len(&mesh);
        let mut matrix = DMatrix::zeros(len, len);
        for side in 0..2 {
            let mut g = vec![0.0; len];
            g[side] = 1.0;
            let resp = forward_nd(conductor, &g)?;
            for j in 0..nt {
                for m in j..nt {
                    for out in 0..2 {
                        matrix[(2 * m + out, 2 * j + side)] = resp[2 * (m - j) + out];
                    }
                }
            }
        }
        Ok(Self { mesh, matrix })
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(g)).iter().cloned().collect()
    }
}

/// Setup shared by the sampling experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingSetup {
    pub mesh: Mesh,
    pub k: f64,
    /// `None` means no inclusion.
    pub inclusion: Option<Inclusion>,
    /// Mollifier width for point sources.
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TikhonovSolution {
    pub alpha: f64,
    pub g: Vec<f64>,
    /// `L^2` norms on boundary-time data.
    pub norm: f64,
    pub residual: f64,
}

/// `Lambda_D - Lambda_empty` with its singular value decomposition.
pub struct GapOperator {
    pub setup: SamplingSetup,
    pub matrix: DMatrix<f64>,
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl GapOperator {
    pub fn new(setup: SamplingSetup) -> Result<Self> {
        let mut with = Conductor::new(setup.mesh, setup.k, setup.inclusion)?;
        let mut without = Conductor::new(setup.mesh, 1.0, None)?;
        let (d, e) = (NdMap::assemble(&mut with)?, NdMap::assemble(&mut without)?);
        let matrix = d.matrix - e.matrix;
        let svd = matrix.clone().svd(true, true);
        Ok(Self { setup, matrix, svd })
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.svd.singular_values
    }

    fn norm(&self, v: &[f64]) -> f64 {
        (self.setup.mesh.dt * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    /// Minimizes `|A g - rhs|^2 + alpha |g|^2`.
    pub fn solve(&self, rhs: &[f64], alpha: f64) -> Result<TikhonovSolution> {
        if !(alpha >= 0.0) {
            return Err(ItpError::Config(format!(
                "regularisation parameter {alpha} must be >= 0"
            )));
        }
        if rhs.len() != self.matrix.nrows() {
            return Err(ItpError::GridMismatch("right-hand side length".into()));
        }
        let sv = &self.svd.singular_values;
        let smax = sv.max();
        if alpha == 0.0 && (smax == 0.0 || sv.min() <= 1e-14 * smax) {
            return Err(ItpError::RankDeficient);
        }
        let u = self.svd.u.as_ref().unwrap();
        let vt = self.svd.v_t.as_ref().unwrap();
        let b = DVector::from_column_slice(rhs);
        let coeff = u.tr_mul(&b);
        let filtered = DVector::from_iterator(
            sv.len(),
            sv.iter()
                .zip(coeff.iter())
                .map(|(s, c)| if *s == 0.0 { 0.0 } else { s * c / (s * s + alpha) }),
        );
        let g = vt.tr_mul(&filtered);
        let r = &self.matrix * &g - &b;
        let g: Vec<f64> = g.iter().cloned().collect();
        let r: Vec<f64> = r.iter().cloned().collect();
        Ok(TikhonovSolution {
            alpha,
            norm: self.norm(&g),
            residual: self.norm(&r),
            g,
        })
    }
}

/// Neumann Green function of `d_t - d_xx` in `Omega` for a mollified source
/// at `(y, s)`, on every time level (zero before `s`).
pub fn green_omega_field(mesh: &Mesh, y: f64, s: f64, eps: f64) -> Result<Vec<Vec<f64>>> {
    let start = (s / mesh.dt).round();
    if s < 0.0 || (start * mesh.dt - s).abs() > 1e-9 * mesh.dt.max(s) || start as usize >= mesh.n_steps() {
        return Err(ItpError::Config(format!(
            "source time {s} is not an interior time level"
        )));
    }
    let start = start as usize;
    let f = mollifier(mesh, y, eps)?;
    let mut c = Conductor::new(*mesh, 1.0, None)?;
    let states = c.run(f, start, &|_| [0.0; 2], TimeStepping::Rannacher)?;
    let mut out = vec![vec![0.0; mesh.n + 1]; start];
    out.extend(states);
    Ok(out)
}

/// Boundary trace of the Neumann Green function at `t_1..t_N`.
pub fn green_omega(mesh: &Mesh, y: f64, s: f64, eps: f64) -> Result<Vec<f64>> {
    let field = green_omega_field(mesh, y, s, eps)?;
    Ok(trace(mesh, &field[1..]))
}

pub fn gap_solve(op: &GapOperator, y: f64, s: f64, alpha: f64) -> Result<TikhonovSolution> {
    let rhs = green_omega(&op.setup.mesh, y, s, op.setup.eps)?;
    op.solve(&rhs, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicatorRecord {
    pub y: f64,
    pub s: f64,
    pub alpha: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorField {
    pub s: f64,
    pub probes: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `values[a][p]` is `|g|` for `alphas[a]` at `probes[p]`.
    pub values: Vec<Vec<f64>>,
}

impl IndicatorField {
    pub fn records(&self) -> Vec<IndicatorRecord> {
        self.alphas
            .iter()
            .zip(&self.values)
            .flat_map(|(alpha, row)| {
                self.probes.iter().zip(row).map(move |(y, v)| IndicatorRecord {
                    y: *y,
                    s: self.s,
                    alpha: *alpha,
                    value: *v,
                })
            })
            .collect()
    }

    /// Indicator at the smallest regularisation parameter.
    pub fn finest(&self) -> &[f64] {
        let i = (0..self.alphas.len())
            .min_by(|a, b| self.alphas[*a].total_cmp(&self.alphas[*b]))
            .unwrap_or(0);
        &self.values[i]
    }

    /// Steepest growth of `log |g|` on each side of its minimum, at the
    /// smallest regularisation parameter.
    pub fn estimate(&self) -> Option<Inclusion> {
        let v = self.finest();
        if v.len() < 3 || v.iter().any(|x| !(*x > 0.0)) {
            return None;
        }
        let l: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let (lo, hi) = l
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        if hi - lo < 1e-8 {
            return None;
        }
        let imin = (0..l.len()).min_by(|a, b| l[*a].total_cmp(&l[*b])).unwrap();
        let rate = |i: usize| (l[i + 1] - l[i]) / (self.probes[i + 1] - self.probes[i]);
        let mid = |i: usize| 0.5 * (self.probes[i] + self.probes[i + 1]);
        let left = (0..imin).min_by(|a, b| rate(*a).total_cmp(&rate(*b)))?;
        let right = (imin..l.len() - 1).max_by(|a, b| rate(*a).total_cmp(&rate(*b)))?;
        Some(Inclusion {
            a: mid(left),
            b: mid(right),
        })
    }

    /// Median outside `d` over median inside, at the smallest parameter.
    pub fn contrast(&self, d: Inclusion) -> f64 {
        let v = self.finest();
        let (mut inside, mut outside): (Vec<f64>, Vec<f64>) = (vec![], vec![]);
        for (y, x) in self.probes.iter().zip(v) {
            if *y > d.a && *y < d.b {
                inside.push(*x);
            } else {
                outside.push(*x);
            }
        }
        median(&mut outside) / median(&mut inside)
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `alphas` geometric from `hi` down to `lo` with `count` values.
pub fn alpha_schedule(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let r = (lo / hi).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| hi * r.powi(i as i32)).collect()
}

pub fn indicator_scan(op: &GapOperator, probes: &[f64], s: f64, alphas: &[f64]) -> Result<IndicatorField> {
    if probes.is_empty() || alphas.is_empty() {
        return Err(ItpError::EmptyGrid);
    }
    let per_probe: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|y| {
            let rhs = green_omega(&op.setup.mesh, *y, s, op.setup.eps)?;
            alphas.iter().map(|a| op.solve(&rhs, *a).map(|t| t.norm)).collect()
        })
        .collect::<Result<_>>()?;
    let values = (0..alphas.len())
        .map(|a| per_probe.iter().map(|p| p[a]).collect())
        .collect();
    Ok(IndicatorField {
        s,
        probes: probes.to_vec(),
        alphas: alphas.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reconstruction {
    pub truth: Inclusion,
    pub estimate: Option<Inclusion>,
    /// `(|a - a_est|, |b - b_est|)`.
    pub endpoint_errors: Option<(f64, f64)>,
    pub h: f64,
    pub median_contrast: f64,
}

pub fn reconstruct(field: &IndicatorField, truth: Inclusion, h: f64) -> Reconstruction {
    let estimate = field.estimate();
    Reconstruction {
        truth,
        estimate,
        endpoint_errors: estimate.map(|e| ((e.a - truth.a).abs(), (e.b - truth.b).abs())),
        h,
        median_contrast: field.contrast(truth),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsolReport {
    /// `sup |v - (G^D - G^Omega)|` over the inner half of `D` after `s`.
    pub deviation: f64,
    /// Deviation relative to `sup |G^D - G^Omega|` on the same set.
    pub relative: f64,
}

/// Compares the Neumann solution driven by `g` with `G^D - G^Omega` in `D`.
pub fn psol_identity_check(setup: &SamplingSetup, y: f64, s: f64, g: &[f64]) -> Result<PsolReport> {
    let mesh = setup.mesh;
    let d = setup
        .inclusion
        .ok_or_else(|| ItpError::Config("identity check needs an inclusion".into()))?;
    let mut free = Conductor::new(mesh, 1.0, None)?;
    let flux = |m: usize| {
        if m == 0 {
            [0.0; 2]
        } else {
            [g[2 * (m - 1)], g[2 * (m - 1) + 1]]
        }
    };
    if g.len() != boundary_len(&mesh) {
        return Err(ItpError::GridMismatch("boundary data length".into()));
    }
    let v = free.run(
        vec![0.0; mesh.n + 1],
        0,
        &flux,
        TimeStepping::Pure(Scheme::CrankNicolson),
    )?;
    let go = green_omega_field(&mesh, y, s, setup.eps)?;

    let i0 = (d.a / mesh.h).round() as usize;
    let i1 = (d.b / mesh.h).round() as usize;
    if (i0 as f64 * mesh.h - d.a).abs() > 1e-9 || (i1 as f64 * mesh.h - d.b).abs() > 1e-9 {
        return Err(ItpError::GridMismatch("inclusion endpoints must be mesh nodes".into()));
    }
    let sub = Mesh::new(d.b - d.a, i1 - i0, mesh.dt, mesh.horizon)?;
    // A source outside D leaves G^D = 0 in D.
    let gd = if y - 6.0 * setup.eps > d.a && y + 6.0 * setup.eps < d.b {
        let mut itp = ItpSolver::forward(sub, Contrast::new(setup.k)?);
        green_column(&mut itp, 1, y - d.a, s, setup.eps, TimeStepping::Rannacher)?.g
    } else if y < d.a || y > d.b {
        vec![vec![0.0; sub.n + 1]; v.len()]
    } else {
        return Err(ItpError::Geometry(format!(
            "source at {y} straddles the inclusion boundary"
        )));
    };

    let quarter = (i1 - i0) / 4;
    let start = (s / mesh.dt).round() as usize + 1;
    let (mut dev, mut scale): (f64, f64) = (0.0, 0.0);
    for m in start..v.len() {
        for i in (i0 + quarter)..=(i1 - quarter) {
            let target = gd[m][i - i0] - go[m][i];
            dev = dev.max((v[m][i] - target).abs());
            scale = scale.max(target.abs());
        }
    }
    Ok(PsolReport {
        deviation: dev,
        relative: if scale > 0.0 { dev / scale } else { dev },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, dt: f64, horizon: f64, inclusion: Option<Inclusion>) -> SamplingSetup {
        let mesh = Mesh::new(1.0, n, dt, horizon).unwrap();
        SamplingSetup {
            mesh,
            k: 4.0,
            inclusion,
            eps: 2.0 * mesh.h,
        }
    }

    const D: Inclusion = Inclusion { a: 0.4, b: 0.7 };

    #[test]
    fn zero_flux_gives_zero_trace() {
        let mesh = Mesh::new(1.0, 40, 1e-3, 0.05).unwrap();
        let mut c = Conductor::new(mesh, 4.0, Some(D)).unwrap();
        let out = forward_nd(&mut c, &vec![0.0; 100]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inclusion_touching_boundary_is_rejected() {
        let mesh = Mesh::new(1.0, 40, 1e-3, 0.05).unwrap();
        let bad = Inclusion { a: 0.0, b: 0.5 };
        assert!(matches!(
            Conductor::new(mesh, 4.0, Some(bad)),
            Err(ItpError::Geometry(_))
        ));
    }

    #[test]
    fn constant_flux_converges_under_refinement() {
        // Unit inflow at both ends: the trace grows like 2 sqrt(t / pi) at short times.
        let run = |n: usize| {
            let mesh = Mesh::new(1.0, n, 0.01 / n as f64, 0.1).unwrap();
            let mut c = Conductor::new(mesh, 1.0, None).unwrap();
            let nt = mesh.n_steps();
            let g = vec![1.0; 2 * nt];
            let out = forward_nd(&mut c, &g).unwrap();
            out[2 * (nt - 1)]
        };
        let (a, b) = (run(100), run(400));
        assert!((a - b).abs() < 1e-3, "{a} {b}");
        // Images of both boundary sources at distances j >= 0 (twice for j > 0).
        let t: f64 = 0.1;
        let ierfc = |x: f64| (-x * x).exp() / std::f64::consts::PI.sqrt() - x * libm::erfc(x);
        let exact: f64 = (0..40)
            .map(|j| {
                let w = if j == 0 { 1.0 } else { 2.0 };
                w * 2.0 * t.sqrt() * ierfc(j as f64 / (2.0 * t.sqrt()))
            })
            .sum();
        assert!((b - exact).abs() < 1e-4, "{b} {exact}");
    }

    #[test]
    fn map_matches_time_stepping() {
        let mesh = Mesh::new(1.0, 40, 2e-3, 0.06).unwrap();
        let mut c = Conductor::new(mesh, 4.0, Some(D)).unwrap();
        let map = NdMap::assemble(&mut c).unwrap();
        let g: Vec<f64> = (0..60).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let direct = forward_nd(&mut c, &g).unwrap();
        let via = map.apply(&g);
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
        // Causality: the map is block lower triangular.
        for r in 0..60 {
            for col in 0..60 {
                if col / 2 > r / 2 {
                    assert_eq!(map.matrix[(r, col)], 0.0);
                }
            }
        }
    }

    #[test]
    fn contrast_limit_recovers_empty_map() {
        let mesh = Mesh::new(1.0, 40, 2e-3, 0.04).unwrap();
        let empty = NdMap::assemble(&mut Conductor::new(mesh, 1.0, None).unwrap()).unwrap();
        let gaps: Vec<f64> = [1.5, 1.1, 1.01]
            .iter()
            .map(|k| {
                let m = NdMap::assemble(&mut Conductor::new(mesh, *k, Some(D)).unwrap()).unwrap();
                (m.matrix - &empty.matrix).amax()
            })
            .collect();
        assert!(
            gaps[1] < gaps[0] && gaps[2] < gaps[1] && gaps[2] < 0.05 * gaps[0],
            "{gaps:?}"
        );
    }

    #[test]
    fn neumann_green_conserves_mass_and_is_causal() {
        let mesh = Mesh::new(1.0, 200, 1e-4, 0.02).unwrap();
        let field = green_omega_field(&mesh, 0.5, 0.005, 0.01).unwrap();
        let w = mesh.weights();
        for (m, u) in field.iter().enumerate() {
            let mass: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
            if m < 50 {
                assert_eq!(mass, 0.0);
            } else {
                assert!((mass - 1.0).abs() < 1e-10, "{m} {mass}");
            }
        }
        // Short times: close to the free heat kernel at the source point.
        let lag = 0.01;
        let free = 1.0 / (4.0 * std::f64::consts::PI * (lag + 0.01f64.powi(2) / 2.0)).sqrt();
        let got = field[150][100];
        assert!((got - free).abs() < 0.05 * free, "{got} {free}");
    }

    #[test]
    fn empty_gap_gives_zero_solution() {
        let op = GapOperator::new(setup(40, 2e-3, 0.04, None)).unwrap();
        let rhs = green_omega(&op.setup.mesh, 0.5, 0.004, op.setup.eps).unwrap();
        let sol = op.solve(&rhs, 1e-4).unwrap();
        assert!(sol.g.iter().all(|v| *v == 0.0));
        assert!((sol.residual - op.norm(&rhs)).abs() < 1e-14);
        assert_eq!(op.solve(&rhs, 0.0).unwrap_err(), ItpError::RankDeficient);
        let zero = op.solve(&vec![0.0; rhs.len()], 1e-3).unwrap();
        assert_eq!(zero.norm, 0.0);
    }

    #[test]
    fn regularisation_path_for_centered_probe() {
        let op = GapOperator::new(setup(100, 2e-3, 0.1, Some(D))).unwrap();
        let path: Vec<TikhonovSolution> = alpha_schedule(1e-2, 1e-8, 7)
            .iter()
            .map(|a| gap_solve(&op, 0.55, 0.02, *a).unwrap())
            .collect();
        for w in path.windows(2) {
            assert!(w[1].residual <= w[0].residual * (1.0 + 1e-9));
        }
        let n = path.len();
        assert!(
            path[n - 1].norm / path[n - 2].norm < 1.2,
            "{:?}",
            path.iter().map(|p| p.norm).collect::<Vec<_>>()
        );
    }

    #[test]
    fn gap_solution_reproduces_inclusion_field() {
        let set = setup(200, 5e-4, 0.05, Some(D));
        let op = GapOperator::new(set).unwrap();
        let devs: Vec<f64> = [1e-10, 1e-12, 1e-14]
            .iter()
            .map(|a| {
                let sol = gap_solve(&op, 0.55, 0.01, *a).unwrap();
                psol_identity_check(&set, 0.55, 0.01, &sol.g).unwrap().relative
            })
            .collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        assert!(devs[2] < 0.05, "{devs:?}");
        let outside = gap_solve(&op, 0.25, 0.01, 1e-14).unwrap();
        let control = psol_identity_check(&set, 0.25, 0.01, &outside.g).unwrap();
        assert!(control.relative > 0.3, "{control:?}");
    }

    #[test]
    fn empty_inclusion_gives_uniform_indicator() {
        let op = GapOperator::new(setup(80, 2e-3, 0.04, None)).unwrap();
        let probes = [0.3, 0.4, 0.5, 0.6, 0.7];
        let f = indicator_scan(&op, &probes, 0.004, &[1e-3, 1e-6]).unwrap();
        assert!(f.values.iter().flatten().all(|v| *v == 0.0));
        assert!(f.estimate().is_none());
        assert_eq!(f.records().len(), 10);
    }

    #[test]
    fn scan_separates_inside_from_outside() {
        let set = setup(100, 1e-3, 0.05, Some(D));
        let op = GapOperator::new(set).unwrap();
        let probes: Vec<f64> = (0..=30).map(|i| 0.15 + 0.02 * i as f64).collect();
        let f = indicator_scan(&op, &probes, 0.01, &alpha_schedule(1e-6, 1e-12, 4)).unwrap();
        assert!(f.values.iter().flatten().all(|v| v.is_finite() && *v > 0.0));
        // Median contrast holds along the whole schedule.
        for row in &f.values {
            let one = IndicatorField {
                values: vec![row.clone()],
                alphas: vec![1.0],
                ..f.clone()
            };
            assert!(one.contrast(D) > 1.0, "{} {}", one.contrast(D), row.len());
        }
        assert!(f.contrast(D) > 5.0, "{}", f.contrast(D));
    }
}
