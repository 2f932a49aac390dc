//! Finite-difference reference solver for the coupled transmission system on
//! an interval `(0, L)`:
//!
//! `v_t - v'' = N1`, `u_t - k u'' = N2`, with `v + sigma u = 0` and
//! `v_nu + kappa u_nu = 0` at both endpoints. The forward problem has
//! `(sigma, kappa) = (-1, -k)`, the adjoint `(1, k)`.
//!
//! Unknowns are interleaved per node, `(v_i, u_i)`. Boundary rows are
//! algebraic: the trace condition, then the difference of the two half-cell
//! balances (which eliminates the unknown boundary flux).

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{ItpError, Result};
use crate::geometry::Contrast;
use crate::linalg::{BandedLu, BandedMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mesh {
    pub length: f64,
    /// Number of intervals; nodes are `0..=n`.
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl Mesh {
    pub fn new(length: f64, n: usize, dt: f64, horizon: f64) -> Result<Self> {
        if !(length > 0.0 && dt > 0.0 && horizon > 0.0) {
            return Err(ItpError::Config(format!(
                "mesh extents must be positive (length {length}, dt {dt}, horizon {horizon})"
            )));
        }
        if n < 8 {
            return Err(ItpError::Config(format!("mesh needs n >= 8 intervals, got {n}")));
        }
        Ok(Self {
            length,
            n,
            h: length / n as f64,
            dt,
            horizon,
        })
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| i as f64 * self.h).collect()
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Trapezoid weights on the nodes.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.n + 1];
        w[0] *= 0.5;
        w[self.n] *= 0.5;
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::ImplicitEuler => 1.0,
            Scheme::CrankNicolson => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeStepping {
    Pure(Scheme),
    /// Crank-Nicolson after two implicit Euler half steps.
    Rannacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coupling {
    pub trace_sign: f64,
    pub flux_factor: f64,
}

impl Coupling {
    pub fn forward(k: f64) -> Self {
        Self {
            trace_sign: -1.0,
            flux_factor: -k,
        }
    }

    pub fn adjoint(k: f64) -> Self {
        Self {
            trace_sign: 1.0,
            flux_factor: k,
        }
    }

    /// Coupling of the adjoint of this problem.
    pub fn dual(self) -> Self {
        Self {
            trace_sign: -self.trace_sign,
            flux_factor: -self.flux_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItpState {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub t: f64,
}

impl ItpState {
    pub fn zeros(mesh: &Mesh, t: f64) -> Self {
        Self {
            v: vec![0.0; mesh.n + 1],
            u: vec![0.0; mesh.n + 1],
            t,
        }
    }
}

/// Source densities `(N1, N2)` at a time level.
pub type SourceFn<'a> = &'a (dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Sync);

pub struct ItpSolver {
    mesh: Mesh,
    k: f64,
    coupling: Coupling,
    cache: HashMap<(u64, u64), BandedLu>,
}

impl ItpSolver {
    pub fn forward(mesh: Mesh, k: Contrast) -> Self {
        Self::with_coupling(mesh, k.k(), Coupling::forward(k.k()))
    }

    pub fn adjoint(mesh: Mesh, k: Contrast) -> Self {
        Self::with_coupling(mesh, k.k(), Coupling::adjoint(k.k()))
    }

    pub fn with_coupling(mesh: Mesh, k: f64, coupling: Coupling) -> Self {
        Self {
            mesh,
            k,
            coupling,
            cache: HashMap::new(),
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    fn factor(&mut self, theta: f64, dt: f64) -> Result<&BandedLu> {
        let key = (theta.to_bits(), dt.to_bits());
        if !self.cache.contains_key(&key) {
            let lu = self.assemble(theta, dt).factor()?;
            self.cache.insert(key, lu);
        }
        Ok(&self.cache[&key])
    }

    fn assemble(&self, theta: f64, dt: f64) -> BandedMatrix {
        let n = self.mesh.n;
        let h2 = self.mesh.h * self.mesh.h;
        let mut a = BandedMatrix::zeros(2 * (n + 1), 3, 3);
        for i in 1..n {
            for (c, kappa) in [(0, 1.0), (1, self.k)] {
                let r = 2 * i + c;
                a.add(r, r, 1.0 / dt + 2.0 * theta * kappa / h2);
                a.add(r, r - 2, -theta * kappa / h2);
                a.add(r, r + 2, -theta * kappa / h2);
            }
        }
        let Coupling {
            trace_sign: sigma,
            flux_factor: kappa,
        } = self.coupling;
        for (b, inner) in [(0usize, 1usize), (n, n - 1)] {
            let (rv, ru) = (2 * b, 2 * b + 1);
            a.add(rv, rv, 1.0);
            a.add(rv, ru, sigma);
            a.add(ru, rv, 1.0);
            a.add(ru, 2 * inner, -1.0);
            a.add(ru, ru, kappa);
            a.add(ru, 2 * inner + 1, -kappa);
        }
        a
    }

    fn explicit_part(&self, x: &[f64], i: usize, c: usize) -> f64 {
        let kappa = if c == 0 { 1.0 } else { self.k };
        let h2 = self.mesh.h * self.mesh.h;
        kappa * (x[2 * (i - 1) + c] - 2.0 * x[2 * i + c] + x[2 * (i + 1) + c]) / h2
    }

    /// One step of length `dt` from `state`. Sources are sampled at the old
    /// and new time levels.
    pub fn step(&mut self, state: &ItpState, sources: Option<SourceFn>, dt: f64, scheme: Scheme) -> Result<ItpState> {
        let n = self.mesh.n;
        let theta = scheme.theta();
        let h2 = self.mesh.h * self.mesh.h;
        let mut x = vec![0.0; 2 * (n + 1)];
        for i in 0..=n {
            x[2 * i] = state.v[i];
            x[2 * i + 1] = state.u[i];
        }
        let t_new = state.t + dt;
        let (old, new) = match sources {
            Some(f) => (Some(f(state.t)), Some(f(t_new))),
            None => (None, None),
        };
        let mut rhs = vec![0.0; 2 * (n + 1)];
        for i in 1..n {
            for c in 0..2 {
                let r = 2 * i + c;
                let mut val = x[r] / dt + (1.0 - theta) * self.explicit_part(&x, i, c);
                if let (Some(o), Some(nw)) = (&old, &new) {
                    let (so, sn) = if c == 0 { (&o.0, &nw.0) } else { (&o.1, &nw.1) };
                    val += theta * sn[i] + (1.0 - theta) * so[i];
                }
                rhs[r] = val;
            }
        }
        if let Some(nw) = &new {
            let sigma = self.coupling.trace_sign;
            for b in [0, n] {
                rhs[2 * b + 1] = 0.5 * h2 * (nw.0[b] + sigma * nw.1[b]);
            }
        }
        let lu = self.factor(theta, dt)?;
        lu.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(ItpError::Singular("non-finite step".into()));
        }
        Ok(ItpState {
            v: (0..=n).map(|i| rhs[2 * i]).collect(),
            u: (0..=n).map(|i| rhs[2 * i + 1]).collect(),
            t: t_new,
        })
    }

    /// Advances `n_steps` steps of the mesh time step and returns every state,
    /// starting with `init`.
    pub fn run(
        &mut self,
        init: ItpState,
        n_steps: usize,
        stepping: TimeStepping,
        sources: Option<SourceFn>,
    ) -> Result<Vec<ItpState>> {
        let dt = self.mesh.dt;
        let mut out = Vec::with_capacity(n_steps + 1);
        out.push(init);
        for j in 0..n_steps {
            let cur = out.last().unwrap();
            let next = match stepping {
                TimeStepping::Pure(s) => self.step(cur, sources, dt, s)?,
                TimeStepping::Rannacher if j == 0 => {
                    let half = self.step(cur, sources, 0.5 * dt, Scheme::ImplicitEuler)?;
                    let mut full = self.step(&half, sources, 0.5 * dt, Scheme::ImplicitEuler)?;
                    full.t = cur.t + dt;
                    full
                }
                TimeStepping::Rannacher => self.step(cur, sources, dt, Scheme::CrankNicolson)?,
            };
            out.push(next);
        }
        Ok(out)
    }

    /// Largest trace and flux-balance residuals at the two endpoints.
    pub fn coupling_residuals(&self, s: &ItpState, sources: Option<&(Vec<f64>, Vec<f64>)>) -> (f64, f64) {
        let n = self.mesh.n;
        let Coupling {
            trace_sign: sigma,
            flux_factor: kappa,
        } = self.coupling;
        let h2 = self.mesh.h * self.mesh.h;
        let mut tr: f64 = 0.0;
        let mut fl: f64 = 0.0;
        for (b, inner) in [(0usize, 1usize), (n, n - 1)] {
            tr = tr.max((s.v[b] + sigma * s.u[b]).abs());
            let src = sources.map_or(0.0, |(n1, n2)| 0.5 * h2 * (n1[b] + sigma * n2[b]));
            fl = fl.max(((s.v[b] - s.v[inner]) + kappa * (s.u[b] - s.u[inner]) - src).abs());
        }
        (tr, fl)
    }
}

/// Normalized Gaussian of width `eps` centered at `y`, clipped at `6 eps`
/// and renormalized to unit trapezoid mass.
pub fn mollifier(mesh: &Mesh, y: f64, eps: f64) -> Result<Vec<f64>> {
    if eps < 2.0 * mesh.h * (1.0 - 1e-12) {
        return Err(ItpError::UnderResolved { eps, h: mesh.h });
    }
    if y - 6.0 * eps < 0.0 || y + 6.0 * eps > mesh.length {
        return Err(ItpError::Geometry(format!(
            "mollified source at {y} with width {eps} leaves the interval"
        )));
    }
    let f: Vec<f64> = mesh
        .nodes()
        .iter()
        .map(|x| {
            let d = x - y;
            if d.abs() > 6.0 * eps {
                0.0
            } else {
                (-d * d / (2.0 * eps * eps)).exp()
            }
        })
        .collect();
    let mass: f64 = f.iter().zip(mesh.weights()).map(|(a, w)| a * w).sum();
    Ok(f.into_iter().map(|v| v / mass).collect())
}

/// Column of the discrete Green matrix for a source in equation `ell`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenColumn {
    pub ell: u8,
    pub y: f64,
    pub s: f64,
    pub eps: f64,
    pub times: Vec<f64>,
    /// First-field samples per time level (zero before `s`).
    pub g: Vec<Vec<f64>>,
    /// Second-field samples per time level.
    pub h: Vec<Vec<f64>>,
}

/// Both columns for one mollified source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteGreenMatrix {
    pub columns: [GreenColumn; 2],
}

fn time_index(mesh: &Mesh, s: f64) -> Result<usize> {
    let m = (s / mesh.dt).round();
    if (m * mesh.dt - s).abs() > 1e-9 * mesh.dt.max(s.abs()) || s < 0.0 || s >= mesh.horizon {
        return Err(ItpError::Config(format!(
            "source time {s} is not an interior time level"
        )));
    }
    Ok(m as usize)
}

pub fn green_column(
    solver: &mut ItpSolver,
    ell: u8,
    y: f64,
    s: f64,
    eps: f64,
    stepping: TimeStepping,
) -> Result<GreenColumn> {
    if ell != 1 && ell != 2 {
        return Err(ItpError::Config(format!("source index {ell} must be 1 or 2")));
    }
    let mesh = *solver.mesh();
    let f = mollifier(&mesh, y, eps)?;
    let i0 = time_index(&mesh, s)?;
    let total = mesh.n_steps();
    let mut init = ItpState::zeros(&mesh, i0 as f64 * mesh.dt);
    if ell == 1 {
        init.v = f;
    } else {
        init.u = f;
    }
    let traj = solver.run(init, total - i0, stepping, None)?;
    let zeros = vec![0.0; mesh.n + 1];
    let mut g = vec![zeros.clone(); i0];
    let mut h = vec![zeros; i0];
    for st in traj {
        g.push(st.v);
        h.push(st.u);
    }
    Ok(GreenColumn {
        ell,
        y,
        s,
        eps,
        times: (0..=total).map(|i| i as f64 * mesh.dt).collect(),
        g,
        h,
    })
}

pub fn green_matrix(
    solver: &mut ItpSolver,
    y: f64,
    s: f64,
    eps: f64,
    stepping: TimeStepping,
) -> Result<DiscreteGreenMatrix> {
    Ok(DiscreteGreenMatrix {
        columns: [
            green_column(solver, 1, y, s, eps, stepping)?,
            green_column(solver, 2, y, s, eps, stepping)?,
        ],
    })
}

/// Evolves terminal data `(w, z)` given at `s = t` backward to `s = 0`.
/// The returned states are ordered by increasing `s`, with `state.t = s`.
pub fn adjoint_solve(
    solver: &mut ItpSolver,
    terminal: (Vec<f64>, Vec<f64>),
    t: f64,
    stepping: TimeStepping,
) -> Result<Vec<ItpState>> {
    let mesh = *solver.mesh();
    let steps = (t / mesh.dt).round() as usize;
    let init = ItpState {
        v: terminal.0,
        u: terminal.1,
        t: 0.0,
    };
    let mut traj = solver.run(init, steps, stepping, None)?;
    traj.reverse();
    for (i, st) in traj.iter_mut().enumerate() {
        st.t = i as f64 * mesh.dt;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Serialize)]
pub struct PairingReport {
    pub values: Vec<f64>,
    /// `(max - min) / |mean|`.
    pub deviation: f64,
}

/// `int (v w + u z) dx` at every shared time level.
pub fn duality_pairing(forward: &[ItpState], adjoint: &[ItpState], weights: &[f64]) -> PairingReport {
    let values: Vec<f64> = forward
        .iter()
        .zip(adjoint)
        .map(|(a, b)| {
            (0..weights.len())
                .map(|i| weights[i] * (a.v[i] * b.v[i] + a.u[i] * b.u[i]))
                .sum()
        })
        .collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let deviation = if values.is_empty() || mean == 0.0 {
        if max == min || values.is_empty() {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (max - min) / mean.abs()
    };
    PairingReport { values, deviation }
}

fn interpolate(mesh: &Mesh, f: &[f64], x: f64) -> f64 {
    let p = (x / mesh.h).clamp(0.0, mesh.n as f64);
    let i = (p.floor() as usize).min(mesh.n - 1);
    let a = p - i as f64;
    (1.0 - a) * f[i] + a * f[i + 1]
}

#[derive(Debug, Clone, Serialize)]
pub struct ReciprocityReport {
    pub h: f64,
    pub max_deviation: f64,
    pub scale: f64,
}

/// Compares forward Green columns read at `(x, t)` with adjoint Green columns
/// (terminal source at `(x, t)`) read at `(y, s)`, for all field pairs.
pub fn reciprocity_check(
    mesh: Mesh,
    k: Contrast,
    xs: &[f64],
    ys: &[f64],
    t: f64,
    s: f64,
    eps: f64,
    stepping: TimeStepping,
) -> Result<ReciprocityReport> {
    if t <= s {
        return Ok(ReciprocityReport {
            h: mesh.h,
            max_deviation: 0.0,
            scale: 0.0,
        });
    }
    let it = (t / mesh.dt).round() as usize;
    let is = time_index(&mesh, s)?;
    let mut fwd = ItpSolver::forward(mesh, k);
    let mut adj = ItpSolver::adjoint(mesh, k);
    let mut forward = Vec::new();
    for &y in ys {
        forward.push(green_matrix(&mut fwd, y, s, eps, stepping)?);
    }
    let mut dev: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &x in xs {
        for c in 0..2 {
            let f = mollifier(&mesh, x, eps)?;
            let zero = vec![0.0; mesh.n + 1];
            let terminal = if c == 0 { (f, zero) } else { (zero, f) };
            let traj = adjoint_solve(&mut adj, terminal, t, stepping)?;
            let st = &traj[is];
            for (y, gm) in ys.iter().zip(&forward) {
                for (l, col) in gm.columns.iter().enumerate() {
                    let g = if c == 0 { &col.g[it] } else { &col.h[it] };
                    let lhs = interpolate(&mesh, g, x);
                    let rhs = interpolate(&mesh, if l == 0 { &st.v } else { &st.u }, *y);
                    dev = dev.max((lhs - rhs).abs());
                    scale = scale.max(lhs.abs());
                }
            }
        }
    }
    Ok(ReciprocityReport {
        h: mesh.h,
        max_deviation: dev,
        scale,
    })
}

/// Manufactured coupled solution `v = phi(t) p(x)`, `u = phi(t) q(x)` on
/// `(0, 1)` with `p - q` and `p' - k q'` vanishing at both ends.
pub struct Manufactured {
    pub k: f64,
    a: f64,
    b: f64,
}

impl Manufactured {
    pub fn new(k: f64) -> Self {
        let e = 1f64.exp();
        Self {
            k,
            a: k - 1.0,
            b: -(k - 1.0) * (1.0 + e),
        }
    }

    fn phi(t: f64) -> (f64, f64) {
        ((3.0 * t).sin(), 3.0 * (3.0 * t).cos())
    }

    /// `q = e^x`, `p = q + x (1 - x)(a + b x)`; returns values and second derivatives.
    fn profiles(&self, x: f64) -> (f64, f64, f64, f64) {
        let q = x.exp();
        let g = x * (1.0 - x) * (self.a + self.b * x);
        // g = a x + (b - a) x^2 - b x^3
        let g2 = 2.0 * (self.b - self.a) - 6.0 * self.b * x;
        (q + g, q + g2, q, q)
    }

    pub fn exact(&self, x: f64, t: f64) -> (f64, f64) {
        let (p, _, q, _) = self.profiles(x);
        let (ph, _) = Self::phi(t);
        (ph * p, ph * q)
    }

    pub fn sources(&self, x: f64, t: f64) -> (f64, f64) {
        let (p, p2, q, q2) = self.profiles(x);
        let (ph, dph) = Self::phi(t);
        (dph * p - ph * p2, dph * q - self.k * ph * q2)
    }
}

/// Max nodal error at the horizon for the manufactured solution.
pub fn manufactured_error(k: Contrast, n: usize, dt: f64, horizon: f64, stepping: TimeStepping) -> Result<f64> {
    let mesh = Mesh::new(1.0, n, dt, horizon)?;
    let ms = Manufactured::new(k.k());
    let nodes = mesh.nodes();
    let src = |t: f64| -> (Vec<f64>, Vec<f64>) {
        let (a, b): (Vec<f64>, Vec<f64>) = nodes.iter().map(|x| ms.sources(*x, t)).unzip();
        (a, b)
    };
    let mut solver = ItpSolver::forward(mesh, k);
    let traj = solver.run(ItpState::zeros(&mesh, 0.0), mesh.n_steps(), stepping, Some(&src))?;
    let last = traj.last().unwrap();
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (v, u) = ms.exact(*x, last.t);
            (last.v[i] - v).abs().max((last.u[i] - u).abs())
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k4() -> Contrast {
        Contrast::new(4.0).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let mesh = Mesh::new(1.0, 16, 0.01, 0.1).unwrap();
        let mut s = ItpSolver::forward(mesh, k4());
        let out = s
            .run(ItpState::zeros(&mesh, 0.0), 10, TimeStepping::Rannacher, None)
            .unwrap();
        assert!(out.iter().all(|st| st.v.iter().chain(&st.u).all(|v| *v == 0.0)));
    }

    #[test]
    fn constant_source_exact() {
        let mesh = Mesh::new(1.0, 20, 0.01, 0.5).unwrap();
        let c = 1.7;
        let src = move |_t: f64| (vec![c; 21], vec![c; 21]);
        for stepping in [TimeStepping::Rannacher, TimeStepping::Pure(Scheme::ImplicitEuler)] {
            let mut s = ItpSolver::forward(mesh, k4());
            let out = s.run(ItpState::zeros(&mesh, 0.0), 50, stepping, Some(&src)).unwrap();
            for st in &out {
                for i in 0..=20 {
                    assert_abs_diff_eq!(st.v[i], c * st.t, epsilon = 1e-10);
                    assert_abs_diff_eq!(st.u[i], c * st.t, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn manufactured_orders() {
        let space: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|n| manufactured_error(k4(), *n, 2e-4, 0.2, TimeStepping::Rannacher).unwrap())
            .collect();
        for w in space.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "space order {order}: {space:?}");
        }
        let time: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|dt| manufactured_error(k4(), 1024, *dt, 0.8, TimeStepping::Pure(Scheme::CrankNicolson)).unwrap())
            .collect();
        for w in time.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "time order {order}: {time:?}");
        }
    }

    #[test]
    fn coupling_holds_after_each_step() {
        let mesh = Mesh::new(1.0, 40, 1e-3, 0.05).unwrap();
        let mut s = ItpSolver::forward(mesh, k4());
        let col = green_column(&mut s, 1, 0.5, 0.0, 0.05, TimeStepping::Rannacher).unwrap();
        for (g, h) in col.g.iter().zip(&col.h) {
            let st = ItpState {
                v: g.clone(),
                u: h.clone(),
                t: 0.0,
            };
            let (tr, fl) = s.coupling_residuals(&st, None);
            assert!(tr < 1e-10 && fl < 1e-10);
        }
    }

    #[test]
    fn green_column_basics() {
        let mesh = Mesh::new(1.0, 200, 2e-5, 0.02).unwrap();
        let mut s = ItpSolver::forward(mesh, k4());
        let eps = 2.0 * mesh.h;
        let col = green_column(&mut s, 1, 0.5, 0.01, eps, TimeStepping::Rannacher).unwrap();
        assert!(col.g[..500].iter().all(|r| r.iter().all(|v| *v == 0.0)));
        // Short time after the source: free heat kernel (smoothed by the
        // mollifier, which adds eps^2 / 2 to the time).
        let lag = 0.002;
        let it = 500 + (lag / mesh.dt).round() as usize;
        let te = lag + eps * eps / 2.0;
        for i in 95..=105 {
            let x = i as f64 * mesh.h;
            let want = (-(x - 0.5).powi(2) / (4.0 * te)).exp() / (4.0 * std::f64::consts::PI * te).sqrt();
            assert!((col.g[it][i] - want).abs() < 0.05 * want, "{} vs {want}", col.g[it][i]);
        }
        let peak = col.g[it].iter().cloned().fold(0.0, f64::max);
        for i in 0..=200 {
            assert_abs_diff_eq!(col.g[it][i], col.g[it][200 - i], epsilon = 1e-8 * peak);
        }
        assert!(matches!(
            green_column(&mut s, 1, 0.5, 0.01, mesh.h, TimeStepping::Rannacher),
            Err(ItpError::UnderResolved { .. })
        ));
    }

    #[test]
    fn adjoint_coupling_and_duality() {
        let mesh = Mesh::new(1.0, 128, 1e-3, 0.2).unwrap();
        let stepping = TimeStepping::Pure(Scheme::CrankNicolson);
        let bump = |c: f64| mollifier(&mesh, c, 0.04).unwrap();
        let zero = vec![0.0; 129];
        let mut adj = ItpSolver::adjoint(mesh, k4());
        let z = adjoint_solve(&mut adj, (bump(0.3), zero.clone()), 0.2, stepping).unwrap();
        assert!(z[0].u.iter().any(|v| v.abs() > 1e-6));
        for st in &z {
            let (tr, fl) = adj.coupling_residuals(st, None);
            assert!(tr < 1e-8 && fl < 1e-8);
        }
        let zz = adjoint_solve(&mut adj, (zero.clone(), zero.clone()), 0.2, stepping).unwrap();
        assert!(zz.iter().all(|s| s.v.iter().all(|v| *v == 0.0)));

        let mut fwd = ItpSolver::forward(mesh, k4());
        let init = ItpState {
            v: bump(0.6),
            u: zero.clone(),
            t: 0.0,
        };
        let u = fwd.run(init, 200, stepping, None).unwrap();
        let rep = duality_pairing(&u, &z, &mesh.weights());
        assert!(rep.deviation < 1e-10, "{}", rep.deviation);

        let mut wrong = ItpSolver::with_coupling(
            mesh,
            4.0,
            Coupling {
                trace_sign: -1.0,
                flux_factor: 4.0,
            },
        );
        let zw = adjoint_solve(&mut wrong, (bump(0.3), zero.clone()), 0.2, stepping).unwrap();
        let bad = duality_pairing(&u, &zw, &mesh.weights());
        assert!(bad.deviation > 1e-2, "{}", bad.deviation);

        let zero_rep = duality_pairing(&u, &zz, &mesh.weights());
        assert!(zero_rep.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn double_dual_is_forward() {
        let c = Coupling::forward(4.0);
        assert_eq!(c.dual().dual(), c);
        assert_eq!(c.dual(), Coupling::adjoint(4.0));
    }

    #[test]
    fn deterministic_runs() {
        let mesh = Mesh::new(1.0, 32, 1e-3, 0.05).unwrap();
        let mut a = ItpSolver::forward(mesh, k4());
        let mut b = ItpSolver::forward(mesh, k4());
        let ca = green_column(&mut a, 2, 0.5, 0.0, 0.07, TimeStepping::Rannacher).unwrap();
        let cb = green_column(&mut b, 2, 0.5, 0.0, 0.07, TimeStepping::Rannacher).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn mollifier_width_effect_is_second_order() {
        let mesh = Mesh::new(1.0, 400, 1e-4, 0.05).unwrap();
        let mut s = ItpSolver::forward(mesh, k4());
        let read = |c: &GreenColumn| c.g[500][80];
        let a = read(&green_column(&mut s, 1, 0.5, 0.0, 0.04, TimeStepping::Rannacher).unwrap());
        let b = read(&green_column(&mut s, 1, 0.5, 0.0, 0.02, TimeStepping::Rannacher).unwrap());
        let c = read(&green_column(&mut s, 1, 0.5, 0.0, 0.01, TimeStepping::Rannacher).unwrap());
        let ratio = (a - b) / (b - c);
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn reciprocity_converges() {
        let k = k4();
        let devs: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let h = 1.0 / n as f64;
                let mesh = Mesh::new(1.0, n, 0.1 * h, 0.05).unwrap();
                reciprocity_check(
                    mesh,
                    k,
                    &[0.4],
                    &[0.5, 0.6],
                    0.05,
                    0.0,
                    2.0 * h,
                    TimeStepping::Rannacher,
                )
                .unwrap()
                .max_deviation
            })
            .collect();
        for w in devs.windows(2) {
            let r = w[0] / w[1];
            assert!(r > 3.0 && r < 5.5, "{devs:?}");
        }
        let mesh = Mesh::new(1.0, 32, 1e-3, 0.05).unwrap();
        let rep = reciprocity_check(mesh, k, &[0.4], &[0.5], 0.0, 0.01, 0.0625, TimeStepping::Rannacher).unwrap();
        assert_eq!(rep.max_deviation, 0.0);
    }
}
