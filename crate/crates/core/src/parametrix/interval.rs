//! Transmission problem on an interval `(a, b)`: patched parametrix from
//! exact half-line kernels, its commutator residual, and the Green column
//! obtained by Levi compensation.
//!
//! Half-line kernels live on `z <= 0` with `v = u`, `v_z = k u_z` at `z = 0`.
//! With `c_r = (sqrt k + 1) / (sqrt k - 1)` and `h_kappa` the 1-D heat kernel,
//!
//! `G_1 = h_1(z - w) - c_r h_1(|z| + |w|)`,
//! `H_1 = -2 / (sqrt k - 1) h_1(|w| + |z| / sqrt k)`,
//! `H_2 = h_k(z - w) + c_r h_k(|z| + |w|)`,
//! `G_2 = 2 / (sqrt k - 1) h_1(|z| + |w| / sqrt k)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::partition::{Chart, PartitionOfUnity, PartitionSpec};
use crate::error::{ItpError, Result};
use crate::geometry::Contrast;
use crate::kernels::Field;
use crate::levi::log_log_slope;
use crate::refsolver::{green_column, mollifier, ItpSolver, Mesh, TimeStepping};

/// 1-D heat kernel and its derivative in `d`.
fn heat_1d(kappa: f64, d: f64, t: f64) -> (f64, f64) {
    let v = (-d * d / (4.0 * kappa * t)).exp() / (4.0 * PI * kappa * t).sqrt();
    (v, -d / (2.0 * kappa * t) * v)
}

/// Exact half-line kernel and its `z`-derivative for `z, w <= 0`.
pub fn half_line_kernel(k: f64, ell: u8, field: Field, z: f64, w: f64, t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    let sk = k.sqrt();
    let cr = (sk + 1.0) / (sk - 1.0);
    let tr = 2.0 / (sk - 1.0);
    match (ell, field) {
        (1, Field::First) => {
            let (f, df) = heat_1d(1.0, z - w, t);
            let (r, dr) = heat_1d(1.0, -z - w, t);
            (f - cr * r, df + cr * dr)
        }
        (1, Field::Second) => {
            let (v, dv) = heat_1d(1.0, -w - z / sk, t);
            (-tr * v, tr * dv / sk)
        }
        (2, Field::Second) => {
            let (f, df) = heat_1d(k, z - w, t);
            let (r, dr) = heat_1d(k, -z - w, t);
            (f + cr * r, df - cr * dr)
        }
        _ => {
            let (v, dv) = heat_1d(1.0, -z - w / sk, t);
            (tr * v, -tr * dv)
        }
    }
}

/// `c h_kappa(d)` with `d` affine in `x` (slope `dx`).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    c: f64,
    kappa: f64,
    d: f64,
    dx: f64,
}

/// `int_0^T h_1(d, tau) dtau` and `int_0^T tau h_1(d, tau) dtau`, with the
/// `d`-derivative of the first.
fn heat_primitives(d: f64, t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let ad = d.abs();
    let g = (-d * d / (4.0 * t)).exp();
    let erfc = libm::erfc(ad / (2.0 * t.sqrt()));
    let i0 = (t / PI).sqrt() * g - 0.5 * ad * erfc;
    let i1 = t.powf(1.5) * g / (3.0 * PI.sqrt()) - d * d / 6.0 * i0;
    let di0 = -0.5 * d.signum() * erfc * if d == 0.0 { 0.0 } else { 1.0 };
    (i0, i1, di0)
}

impl Term {
    fn value(&self, t: f64) -> (f64, f64) {
        let (v, dv) = heat_1d(self.kappa, self.d, t);
        (self.c * v, self.c * self.dx * dv)
    }

    /// Time primitives `(int K, int tau K, int d_x K, int tau d_x K)` on `[0, T]`.
    fn primitives(&self, t: f64) -> [f64; 4] {
        let sk = self.kappa.sqrt();
        let (i0, i1, di0) = heat_primitives(self.d / sk, t);
        let (i0, i1, di0) = (i0 / sk, i1 / sk, di0 / self.kappa);
        let dm = -self.d / (2.0 * self.kappa) * i0;
        [self.c * i0, self.c * i1, self.c * self.dx * di0, self.c * self.dx * dm]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalParametrix {
    pub k: f64,
    pub partition: PartitionOfUnity,
}

impl IntervalParametrix {
    pub fn new(k: Contrast, a: f64, b: f64, spec: PartitionSpec) -> Result<Self> {
        Ok(Self {
            k: k.k(),
            partition: PartitionOfUnity::new(a, b, 3, spec)?,
        })
    }

    /// The chart kernel as a sum of heat kernels in interval coordinates.
    fn terms(&self, chart: Chart, ell: u8, field: Field, x: f64, y: f64) -> ([Term; 2], usize) {
        let k = self.k;
        let sk = k.sqrt();
        let cr = (sk + 1.0) / (sk - 1.0);
        let tr = 2.0 / (sk - 1.0);
        let t = |c: f64, kappa: f64, d: f64, dx: f64| Term { c, kappa, d, dx };
        let none = t(0.0, 1.0, 0.0, 0.0);
        let (a, b) = (self.partition.a, self.partition.b);
        match (chart, ell, field) {
            (Chart::Interior, 1, Field::First) => ([t(1.0, 1.0, x - y, 1.0), none], 1),
            (Chart::Interior, 2, Field::Second) => ([t(1.0, k, x - y, 1.0), none], 1),
            (Chart::Interior, _, _) => ([none, none], 0),
            (Chart::Lower, 1, Field::First) => ([t(1.0, 1.0, x - y, 1.0), t(-cr, 1.0, x + y - 2.0 * a, 1.0)], 2),
            (Chart::Lower, 1, Field::Second) => ([t(-tr, 1.0, (y - a) + (x - a) / sk, 1.0 / sk), none], 1),
            (Chart::Lower, _, Field::Second) => ([t(1.0, k, x - y, 1.0), t(cr, k, x + y - 2.0 * a, 1.0)], 2),
            (Chart::Lower, _, Field::First) => ([t(tr, 1.0, (x - a) + (y - a) / sk, 1.0), none], 1),
            (Chart::Upper, 1, Field::First) => ([t(1.0, 1.0, x - y, 1.0), t(-cr, 1.0, 2.0 * b - x - y, -1.0)], 2),
            (Chart::Upper, 1, Field::Second) => ([t(-tr, 1.0, (b - y) + (b - x) / sk, -1.0 / sk), none], 1),
            (Chart::Upper, _, Field::Second) => ([t(1.0, k, x - y, 1.0), t(cr, k, 2.0 * b - x - y, -1.0)], 2),
            (Chart::Upper, _, Field::First) => ([t(tr, 1.0, (b - x) + (b - y) / sk, -1.0), none], 1),
        }
    }

    /// Chart kernel and its `x`-derivative.
    fn chart_kernel(&self, chart: Chart, ell: u8, field: Field, x: f64, lag: f64, y: f64) -> (f64, f64) {
        let (terms, n) = self.terms(chart, ell, field, x, y);
        terms[..n].iter().fold((0.0, 0.0), |acc, t| {
            let (v, d) = t.value(lag);
            (acc.0 + v, acc.1 + d)
        })
    }

    /// Parametrix entry `(field, ell)` at lag `t - s > 0`.
    pub fn value(&self, ell: u8, field: Field, x: f64, lag: f64, y: f64) -> f64 {
        if lag <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (j, chart) in self.partition.charts.iter().enumerate() {
            let phi = self.partition.phi(j, y);
            let psi = self.partition.psi(j, x).v;
            if phi != 0.0 && psi != 0.0 {
                acc += phi * psi * self.chart_kernel(*chart, ell, field, x, lag, y).0;
            }
        }
        acc
    }

    /// `(d_t - kappa d_xx)` applied to the entry, away from the diagonal.
    pub fn residual(&self, ell: u8, field: Field, x: f64, lag: f64, y: f64) -> f64 {
        if lag <= 0.0 {
            return 0.0;
        }
        let kappa = if field == Field::First { 1.0 } else { self.k };
        let mut acc = 0.0;
        for (j, chart) in self.partition.charts.iter().enumerate() {
            let phi = self.partition.phi(j, y);
            let psi = self.partition.psi(j, x);
            if phi == 0.0 || (psi.d1 == 0.0 && psi.d2 == 0.0) {
                continue;
            }
            let (v, dv) = self.chart_kernel(*chart, ell, field, x, lag, y);
            acc += phi * (psi.d2 * v + 2.0 * psi.d1 * dv);
        }
        -kappa * acc
    }

    /// `(int_0^T K, int_0^T tau K)` for the entry (`residual = false`) or
    /// for its residual.
    fn time_primitives(&self, residual: bool, ell: u8, field: Field, x: f64, y: f64, t: f64) -> (f64, f64) {
        let kappa = if field == Field::First { 1.0 } else { self.k };
        let mut acc = (0.0, 0.0);
        for (j, chart) in self.partition.charts.iter().enumerate() {
            let phi = self.partition.phi(j, y);
            let psi = self.partition.psi(j, x);
            if phi == 0.0 {
                continue;
            }
            let (terms, n) = self.terms(*chart, ell, field, x, y);
            for term in &terms[..n] {
                let [i0, i1, d0, d1] = term.primitives(t);
                if residual {
                    acc.0 -= kappa * phi * (psi.d2 * i0 + 2.0 * psi.d1 * d0);
                    acc.1 -= kappa * phi * (psi.d2 * i1 + 2.0 * psi.d1 * d1);
                } else {
                    acc.0 += phi * psi.v * i0;
                    acc.1 += phi * psi.v * i1;
                }
            }
        }
        acc
    }

    /// Rows where some companion cutoff varies.
    fn collar_nodes(&self, xs: &[f64]) -> Vec<usize> {
        (0..xs.len())
            .filter(|i| {
                (0..self.partition.len()).any(|j| {
                    let p = self.partition.psi(j, xs[*i]);
                    p.d1 != 0.0 || p.d2 != 0.0
                })
            })
            .collect()
    }
}

/// Partition with long ramps, so the collar residual is resolved on coarse meshes.
pub const SMOOTH_PARTITION: PartitionSpec = PartitionSpec {
    chart_width: 0.22,
    ramp: 0.15,
    gap: 0.05,
};

const FIELDS: [Field; 2] = [Field::First, Field::Second];

/// Green column from the parametrix with Levi compensation, on the nodes of `mesh`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeviGreenColumn {
    pub ell: u8,
    pub times: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    /// `sup |W|` of the correction density.
    pub correction_norm: f64,
}

/// Product-integration weights of a lag kernel against piecewise-linear
/// densities: `A_l = int K(tau) hat_l(tau) dtau`, from time primitives at
/// `tau = (l-1) dt, l dt, (l+1) dt`.
fn hat_weights(f: [(f64, f64); 3], l: usize, dt: f64) -> f64 {
    let [(a0, a1), (b0, b1), (c0, c1)] = f;
    let l = l as f64;
    if l == 0.0 {
        return c0 - c1 / dt;
    }
    (b1 - a1) / dt - (l - 1.0) * (b0 - a0) + (l + 1.0) * (c0 - b0) - (c1 - b1) / dt
}

/// `G = P f + P o W` with `W = -R f - R o W`, for the mollified source
/// `f` of width `eps` at `y` in equation `ell`, released at `s = 0`.
/// Both time convolutions treat `W` as piecewise linear and integrate the
/// kernels exactly in time.
pub fn levi_green_column(p: &IntervalParametrix, mesh: &Mesh, ell: u8, y: f64, eps: f64) -> Result<LeviGreenColumn> {
    if ell != 1 && ell != 2 {
        return Err(ItpError::Config(format!("source index {ell} must be 1 or 2")));
    }
    if (mesh.length - (p.partition.b - p.partition.a)).abs() > 1e-12 || p.partition.a != 0.0 {
        return Err(ItpError::GridMismatch("mesh must cover the parametrix interval".into()));
    }
    let xs = mesh.nodes();
    let wq = mesh.weights();
    let n = xs.len();
    let nt = mesh.n_steps();
    let dt = mesh.dt;
    let f = mollifier(mesh, y, eps)?;
    let fw: Vec<f64> = f.iter().zip(&wq).map(|(a, b)| a * b).collect();

    let collar = p.collar_nodes(&xs);
    // Unknowns of W: (field, collar node).
    let rows: Vec<(usize, usize)> = (0..2).flat_map(|c| collar.iter().map(move |i| (c, *i))).collect();
    let nr = rows.len();
    let wr = DVector::from_iterator(nr, rows.iter().map(|(_, i)| wq[*i]));

    // Product-integration weights for a block of (target, source) pairs.
    let (xr, rr) = (&xs, &rows);
    let weights_for = |residual: bool, targets: &[(usize, usize)], l: usize| -> DMatrix<f64> {
        let vals: Vec<f64> = targets
            .par_iter()
            .flat_map_iter(|(c, i)| {
                rr.iter().map(move |(cs, j)| {
                    let prim = |m: usize| {
                        if m == 0 {
                            (0.0, 0.0)
                        } else {
                            p.time_primitives(residual, *cs as u8 + 1, FIELDS[*c], xr[*i], xr[*j], m as f64 * dt)
                        }
                    };
                    let f3 = [if l == 0 { (0.0, 0.0) } else { prim(l - 1) }, prim(l), prim(l + 1)];
                    hat_weights(f3, l, dt)
                })
            })
            .collect();
        DMatrix::from_row_slice(targets.len(), nr, &vals)
    };

    // W on the collar rows.
    let b: Vec<DMatrix<f64>> = (0..nt).map(|l| weights_for(true, rr, l)).collect();
    let mut lhs = DMatrix::identity(nr, nr);
    for (ri, _) in rows.iter().enumerate() {
        for cj in 0..nr {
            lhs[(ri, cj)] += b[0][(ri, cj)] * wr[cj];
        }
    }
    let lu = lhs.lu();
    let mut w: Vec<DVector<f64>> = vec![DVector::zeros(nr)];
    for m in 1..=nt {
        let t = m as f64 * dt;
        let mut rhs = DVector::from_iterator(
            nr,
            rows.iter().map(|(c, i)| {
                -(0..n)
                    .map(|j| p.residual(ell, FIELDS[*c], xs[*i], t, xs[j]) * fw[j])
                    .sum::<f64>()
            }),
        );
        for l in 1..m {
            let ww = w[m - l].component_mul(&wr);
            rhs.gemv(-1.0, &b[l], &ww, 1.0);
        }
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| ItpError::Singular("Levi step matrix".into()))?;
        w.push(sol);
    }
    let correction_norm = w.iter().map(|v| v.amax()).fold(0.0, f64::max);

    // G = P f + P o W.
    let all: Vec<(usize, usize)> = (0..2).flat_map(|c| (0..n).map(move |i| (c, i))).collect();
    let mut cols: Vec<DVector<f64>> = (0..=nt)
        .into_par_iter()
        .map(|m| {
            let mut out = DVector::zeros(2 * n);
            if m == 0 {
                for i in 0..n {
                    out[(ell as usize - 1) * n + i] = f[i];
                }
                return out;
            }
            let lag = m as f64 * dt;
            for (c, i) in &all {
                out[c * n + i] = (0..n)
                    .map(|j| p.value(ell, FIELDS[*c], xs[*i], lag, xs[j]) * fw[j])
                    .sum();
            }
            out
        })
        .collect();
    for l in 0..nt {
        let a = weights_for(false, &all, l);
        for m in (l + 1)..=nt {
            let ww = w[m - l].component_mul(&wr);
            cols[m].gemv(1.0, &a, &ww, 1.0);
        }
    }
    let g = cols.iter().map(|c| c.rows(0, n).iter().cloned().collect()).collect();
    let h = cols.iter().map(|c| c.rows(n, n).iter().cloned().collect()).collect();
    Ok(LeviGreenColumn {
        ell,
        times: (0..=nt).map(|m| m as f64 * dt).collect(),
        g,
        h,
        correction_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceLevel {
    pub n: usize,
    pub dt: f64,
    pub error: f64,
    pub correction_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub levels: Vec<EquivalenceLevel>,
    /// Fitted order in `h`.
    pub order: f64,
    pub final_error: f64,
}

/// Max-norm distance between the Levi-compensated column and the
/// reference-solver column over a ladder of `(n, dt)` pairs.
pub fn green_equivalence(
    k: Contrast,
    ladder: &[(usize, f64)],
    ell: u8,
    y: f64,
    eps: f64,
    horizon: f64,
    spec: PartitionSpec,
) -> Result<EquivalenceReport> {
    if ladder.is_empty() {
        return Err(ItpError::EmptyGrid);
    }
    let p = IntervalParametrix::new(k, 0.0, 1.0, spec)?;
    let mut levels = Vec::with_capacity(ladder.len());
    for &(n, dt) in ladder {
        let mesh = Mesh::new(1.0, n, dt, horizon)?;
        let levi = levi_green_column(&p, &mesh, ell, y, eps)?;
        let mut solver = ItpSolver::forward(mesh, k);
        let reference = green_column(&mut solver, ell, y, 0.0, eps, TimeStepping::Rannacher)?;
        let mut error: f64 = 0.0;
        for m in 1..levi.times.len() {
            for i in 0..=n {
                error = error
                    .max((levi.g[m][i] - reference.g[m][i]).abs())
                    .max((levi.h[m][i] - reference.h[m][i]).abs());
            }
        }
        levels.push(EquivalenceLevel {
            n,
            dt,
            error,
            correction_norm: levi.correction_norm,
        });
    }
    let hs: Vec<f64> = levels.iter().map(|l| 1.0 / l.n as f64).collect();
    let errs: Vec<f64> = levels.iter().map(|l| l.error).collect();
    Ok(EquivalenceReport {
        order: log_log_slope(&hs, &errs),
        final_error: *errs.last().unwrap(),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_line_kernels_satisfy_transmission() {
        let k = 4.0;
        for ell in [1u8, 2] {
            for (w, t) in [(-0.1, 0.01), (-0.3, 0.2), (0.0, 0.05)] {
                let (g, dg) = half_line_kernel(k, ell, Field::First, 0.0, w, t);
                let (h, dh) = half_line_kernel(k, ell, Field::Second, 0.0, w, t);
                assert!((g - h).abs() < 1e-12 * g.abs().max(1.0), "{ell} trace");
                assert!((dg - k * dh).abs() < 1e-12 * dg.abs().max(1.0), "{ell} flux");
            }
        }
    }

    #[test]
    fn chart_terms_match_half_line_kernels() {
        let p = IntervalParametrix::new(Contrast::new(4.0).unwrap(), 0.0, 1.0, PartitionSpec::default()).unwrap();
        for ell in [1u8, 2] {
            for field in FIELDS {
                let (x, y, t) = (0.13, 0.07, 0.01);
                let (v, d) = p.chart_kernel(Chart::Lower, ell, field, x, t, y);
                let (hv, hd) = half_line_kernel(4.0, ell, field, -x, -y, t);
                assert!((v - hv).abs() < 1e-12 && (d + hd).abs() < 1e-10);
                let (v, d) = p.chart_kernel(Chart::Upper, ell, field, 1.0 - x, t, 1.0 - y);
                assert!((v - hv).abs() < 1e-12 && (d - hd).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn time_primitives_match_quadrature() {
        let term = Term {
            c: 1.3,
            kappa: 4.0,
            d: 0.11,
            dx: -1.0,
        };
        let t = 0.02;
        let m = 20000;
        let mut acc = [0.0; 4];
        for q in 0..m {
            let tau = (q as f64 + 0.5) * t / m as f64;
            let (v, d) = term.value(tau);
            for (a, x) in acc.iter_mut().zip([v, tau * v, d, tau * d]) {
                *a += x * t / m as f64;
            }
        }
        let pr = term.primitives(t);
        for (a, b) in acc.iter().zip(pr) {
            assert!((a - b).abs() < 1e-7 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn half_line_kernels_solve_heat_equations() {
        let k = 4.0;
        let (z, w, t, e) = (-0.2, -0.15, 0.03, 1e-4);
        for ell in [1u8, 2] {
            for (field, kappa) in [(Field::First, 1.0), (Field::Second, k)] {
                let f = |z: f64, t: f64| half_line_kernel(k, ell, field, z, w, t).0;
                let et = 1e-6;
                let ft = (f(z, t + et) - f(z, t - et)) / (2.0 * et);
                let fzz = (f(z + e, t) - 2.0 * f(z, t) + f(z - e, t)) / (e * e);
                let (_, dz) = half_line_kernel(k, ell, field, z, w, t);
                assert!(
                    (ft - kappa * fzz).abs() < 1e-4 * ft.abs().max(1.0),
                    "{ell} {kappa}: {ft} vs {}",
                    kappa * fzz
                );
                assert!((dz - (f(z + e, t) - f(z - e, t)) / (2.0 * e)).abs() < 1e-5 * dz.abs().max(1.0));
            }
        }
    }

    #[test]
    fn residual_vanishes_at_small_lags() {
        let p = IntervalParametrix::new(Contrast::new(4.0).unwrap(), 0.0, 1.0, PartitionSpec::default()).unwrap();
        let lags = [1e-5, 1e-4, 1e-3, 4e-3];
        let sups: Vec<f64> = lags
            .iter()
            .map(|lag| {
                let mut s: f64 = 0.0;
                for i in 0..=100 {
                    for j in 0..=100 {
                        let (x, y) = (i as f64 / 100.0, j as f64 / 100.0);
                        s = s.max(p.residual(1, Field::First, x, *lag, y).abs());
                    }
                }
                s
            })
            .collect();
        // the nearest collar sits 0.05 from supp phi
        assert!(sups[0] < 1e-20, "{sups:?}");
        assert!(sups.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn levi_column_converges_to_reference() {
        let k = Contrast::new(4.0).unwrap();
        let rep = green_equivalence(k, &[(32, 8e-4), (64, 4e-4)], 1, 0.5, 0.08, 0.02, SMOOTH_PARTITION).unwrap();
        assert!(rep.levels[1].error < rep.levels[0].error / 3.0, "{rep:?}");
        assert!(rep.levels.iter().all(|l| l.correction_norm > 0.0));
    }
}
