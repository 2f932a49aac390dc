//! Volterra kernel algebra and Levi compensation.
//!
//! All kernels here come from problems with time-independent coefficients,
//! so they depend on `t - s` only and are stored by lag on a uniform grid.
//! A spatial kernel on `n` nodes is an `n x n` matrix per lag, composed with
//! the quadrature weights of the shared spatial grid. A point mass on the
//! grid (the identity operator) is `diag(1 / w)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ItpError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VolterraKernel {
    dt: f64,
    weights: Vec<f64>,
    /// `data[m]` is the kernel at lag `m dt`.
    data: Vec<DMatrix<f64>>,
}

impl VolterraKernel {
    pub fn new(dt: f64, weights: Vec<f64>, data: Vec<DMatrix<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(ItpError::Config(format!("time step {dt} must be positive")));
        }
        if data.is_empty() || weights.is_empty() {
            return Err(ItpError::EmptyGrid);
        }
        let n = weights.len();
        if data.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(ItpError::GridMismatch(format!("kernel blocks must be {n} x {n}")));
        }
        if data.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(ItpError::Evaluation("non-finite kernel sample".into()));
        }
        Ok(Self { dt, weights, data })
    }

    /// Samples `f(lag)` for lags `0, dt, ..., n_lags dt`.
    pub fn from_fn<F>(dt: f64, n_lags: usize, weights: Vec<f64>, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DMatrix<f64>,
    {
        let data = (0..=n_lags).map(|m| f(m as f64 * dt)).collect();
        Self::new(dt, weights, data)
    }

    /// Scalar multiplication kernel `f(t - s)`.
    pub fn scalar<F: Fn(f64) -> f64>(dt: f64, n_lags: usize, f: F) -> Result<Self> {
        Self::from_fn(dt, n_lags, vec![1.0], |t| DMatrix::from_element(1, 1, f(t)))
    }

    pub fn zeros_like(other: &Self) -> Self {
        let n = other.dim();
        Self {
            dt: other.dt,
            weights: other.weights.clone(),
            data: vec![DMatrix::zeros(n, n); other.data.len()],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn n_lags(&self) -> usize {
        self.data.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lag(&self, m: usize) -> &DMatrix<f64> {
        &self.data[m]
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.data
    }

    /// Value at `t - s`; zero for `t < s`. Scalar kernels only.
    pub fn scalar_at(&self, t_minus_s: f64) -> f64 {
        if t_minus_s < 0.0 {
            return 0.0;
        }
        let m = (t_minus_s / self.dt).round() as usize;
        self.data.get(m).map_or(0.0, |d| d[(0, 0)])
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if (self.dt - other.dt).abs() > 1e-12 * self.dt
            || self.data.len() != other.data.len()
            || self.weights != other.weights
        {
            return Err(ItpError::GridMismatch(format!(
                "dt {} vs {}, {} vs {} lags, {} vs {} nodes",
                self.dt,
                other.dt,
                self.n_lags(),
                other.n_lags(),
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, ..self.clone() })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|a| a * c).collect(),
            ..self.clone()
        }
    }

    /// Weighted spectral norm per lag.
    pub fn lag_norms(&self) -> Vec<f64> {
        let sw: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        self.data
            .iter()
            .map(|a| {
                if a.nrows() == 1 {
                    return (a[(0, 0)] * self.weights[0]).abs();
                }
                let b = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| sw[i] * a[(i, j)] * sw[j]);
                b.singular_values().max()
            })
            .collect()
    }

    /// Discrete L2-in-space operator norm, sup over lags.
    pub fn norm(&self) -> f64 {
        self.lag_norms().into_iter().fold(0.0, f64::max)
    }
}

/// `C(t,s) = int_s^t A(t,s') B(s',s) ds'` by the trapezoid rule in time and
/// the grid quadrature in space.
pub fn volterra_compose(a: &VolterraKernel, b: &VolterraKernel) -> Result<VolterraKernel> {
    a.check_compatible(b)?;
    let n = a.dim();
    let w = DVector::from_column_slice(&a.weights);
    let bw: Vec<DMatrix<f64>> = b
        .data
        .iter()
        .map(|m| {
            let mut m = m.clone();
            for (i, mut row) in m.row_iter_mut().enumerate() {
                row *= w[i];
            }
            m
        })
        .collect();
    let mut data = vec![DMatrix::zeros(n, n); a.data.len()];
    for (m, out) in data.iter_mut().enumerate().skip(1) {
        for l in 0..=m {
            let theta = if l == 0 || l == m { 0.5 } else { 1.0 };
            out.gemm(theta * a.dt, &a.data[m - l], &bw[l], 1.0);
        }
    }
    VolterraKernel::new(a.dt, a.weights.clone(), data)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeviSeries {
    /// `sup ||W_j||` for j = 1, 2, ...
    pub term_norms: Vec<f64>,
    /// Measured `||W_1||`.
    pub c0: f64,
    /// Smallest relative margin of the factorial majorant over all j and lags.
    pub bound_margin: f64,
    /// `||W + R + R o W||`.
    pub resolvent_residual: f64,
    pub converged: bool,
    #[serde(skip)]
    pub terms: Vec<VolterraKernel>,
    #[serde(skip)]
    pub sum: VolterraKernel,
}

/// Trapezoid iterates of the constant kernel 1: the discrete counterpart of
/// `(t - s)^(j-1) / (j-1)!`, to which it converges at second order.
pub fn discrete_factorial(dt: f64, n_lags: usize, j: usize) -> Vec<f64> {
    let mut cur = vec![1.0; n_lags + 1];
    for _ in 1..j {
        let mut next = vec![0.0; n_lags + 1];
        for (m, v) in next.iter_mut().enumerate().skip(1) {
            let mut acc = 0.0;
            for (l, c) in cur.iter().enumerate().take(m + 1) {
                let theta = if l == 0 || l == m { 0.5 } else { 1.0 };
                acc += theta * c;
            }
            *v = acc * dt;
        }
        cur = next;
    }
    cur
}

/// Builds `W = sum_j W_j` with `W_1 = -R`, `W_j = W_1 o W_(j-1)`.
pub fn levi_series(r: &VolterraKernel, jmax: usize, tol: f64) -> Result<LeviSeries> {
    let w1 = r.scale(-1.0);
    let c0 = w1.norm();
    let horizon = r.dt * r.n_lags() as f64;
    let mut terms = vec![w1.clone()];
    let mut term_norms = vec![c0];
    let mut sum = w1.clone();
    let mut growth = 0;
    let mut converged = c0 < tol;
    while !converged && terms.len() < jmax {
        let next = volterra_compose(&w1, terms.last().unwrap())?;
        let nrm = next.norm();
        if !nrm.is_finite() {
            return Err(ItpError::Divergence(terms.len() + 1));
        }
        sum = sum.add(&next)?;
        let prev = *term_norms.last().unwrap();
        growth = if nrm > prev { growth + 1 } else { 0 };
        term_norms.push(nrm);
        terms.push(next);
        // A factorial series only decreases once j exceeds C0 T.
        if growth >= 3 && terms.len() as f64 > c0 * horizon {
            return Err(ItpError::Divergence(terms.len()));
        }
        converged = nrm < tol;
    }

    let mut bound_margin = f64::INFINITY;
    for (j, term) in terms.iter().enumerate() {
        let fact = discrete_factorial(r.dt, r.n_lags(), j + 1);
        for (m, nrm) in term.lag_norms().iter().enumerate() {
            let bound = c0.powi(j as i32 + 1) * fact[m];
            if bound > 0.0 {
                bound_margin = bound_margin.min((bound - nrm) / bound);
            } else if *nrm > 0.0 {
                bound_margin = bound_margin.min(-1.0);
            }
        }
    }

    let rw = volterra_compose(r, &sum)?;
    let resolvent_residual = sum.add(r)?.add(&rw)?.norm();
    Ok(LeviSeries {
        term_norms,
        c0,
        bound_margin,
        resolvent_residual,
        converged,
        terms,
        sum,
    })
}

/// The Green kernel `P + P o W`.
pub fn compensate(p: &VolterraKernel, w: &VolterraKernel) -> Result<VolterraKernel> {
    p.add(&volterra_compose(p, w)?)
}

/// Solves the column Volterra equation `w(t) = -r(t) - int_s^t R(t - s') w(s') ds'`
/// for a single source column when `R` vanishes at lag 0. Rows of `R` may be
/// restricted to the support of the residual: `kernel_rows[m]` maps the full
/// column (weighted) to the values on `rows`.
pub fn solve_column(
    dt: f64,
    weights: &[f64],
    rows: &[usize],
    kernel_rows: &[DMatrix<f64>],
    source: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let n = weights.len();
    let nt = source.len();
    if kernel_rows.len() < nt {
        return Err(ItpError::GridMismatch("residual kernel has too few lags".into()));
    }
    let w = DVector::from_column_slice(weights);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(nt);
    let mut weighted: Vec<DVector<f64>> = Vec::with_capacity(nt);
    for i in 0..nt {
        let mut col = -&source[i];
        if i > 0 {
            let mut acc = DVector::zeros(rows.len());
            for (l, wl) in weighted.iter().enumerate() {
                let theta = if l == 0 { 0.5 } else { 1.0 };
                acc.gemv(theta * dt, &kernel_rows[i - l], wl, 1.0);
            }
            for (r, v) in rows.iter().zip(acc.iter()) {
                col[*r] -= v;
            }
        }
        if col.len() != n {
            return Err(ItpError::GridMismatch("column length".into()));
        }
        weighted.push(col.component_mul(&w));
        out.push(col);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialConditionReport {
    pub deltas: Vec<f64>,
    pub errors: Vec<f64>,
    /// Fitted exponent of `error ~ delta^rate`.
    pub rate: f64,
}

/// `sup |K(s + delta, s) f - f|` for a decreasing sequence of `delta`.
pub fn initial_condition_check<F>(apply: F, f: &[f64], deltas: &[f64]) -> InitialConditionReport
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let errors: Vec<f64> = deltas
        .iter()
        .map(|&d| {
            apply(d, f)
                .iter()
                .zip(f)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let rate = log_log_slope(deltas, &errors);
    InitialConditionReport {
        deltas: deltas.to_vec(),
        errors,
        rate,
    }
}

/// Least-squares slope of `log y` against `log x`, ignoring nonpositive values.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchurReport {
    /// `sup_x2 int |K| dx1`.
    pub m1: f64,
    /// `sup_x1 int |K| dx2`.
    pub m2: f64,
    pub bound: f64,
    /// `||K f|| / ||f||` per probe.
    pub ratios: Vec<f64>,
    /// Weighted spectral norm of the discretized operator.
    pub operator_norm: f64,
    pub violated: bool,
}

/// Schur test for the integral operator `(K f)(x1) = int K(x1, x2) f(x2) dx2`
/// with `K` sampled on the product of two quadrature grids.
pub fn schur_bound(k: &DMatrix<f64>, w1: &[f64], w2: &[f64], probes: &[Vec<f64>]) -> Result<SchurReport> {
    if k.nrows() != w1.len() || k.ncols() != w2.len() {
        return Err(ItpError::GridMismatch("kernel shape vs weights".into()));
    }
    let m1 = (0..k.ncols())
        .map(|j| (0..k.nrows()).map(|i| k[(i, j)].abs() * w1[i]).sum::<f64>())
        .fold(0.0, f64::max);
    let m2 = (0..k.nrows())
        .map(|i| (0..k.ncols()).map(|j| k[(i, j)].abs() * w2[j]).sum::<f64>())
        .fold(0.0, f64::max);
    let bound = (m1 * m2).sqrt();
    let l2 = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();
    let mut ratios = Vec::with_capacity(probes.len());
    for f in probes {
        if f.len() != w2.len() {
            return Err(ItpError::GridMismatch("probe length".into()));
        }
        let fw: Vec<f64> = f.iter().zip(w2).map(|(a, b)| a * b).collect();
        let kf = k * DVector::from_vec(fw);
        let nf = l2(f, w2);
        ratios.push(if nf > 0.0 { l2(kf.as_slice(), w1) / nf } else { 0.0 });
    }
    let scaled = DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| w1[i].sqrt() * k[(i, j)] * w2[j].sqrt());
    let operator_norm = scaled.singular_values().max();
    let violated = ratios.iter().any(|r| *r > bound * (1.0 + 1e-12));
    Ok(SchurReport {
        m1,
        m2,
        bound,
        ratios,
        operator_norm,
        violated,
    })
}

/// Max error of the Levi series against `-c exp(-c (t-s))` for `R = c`.
pub fn scalar_levi_error(c: f64, dt: f64, horizon: f64) -> Result<(f64, LeviSeries)> {
    let n = (horizon / dt).round() as usize;
    let r = VolterraKernel::scalar(dt, n, |_| c)?;
    let series = levi_series(&r, 60, 1e-13)?;
    let err = (0..=n)
        .map(|m| {
            let t = m as f64 * dt;
            (series.sum.lag(m)[(0, 0)] + c * (-c * t).exp()).abs()
        })
        .fold(0.0, f64::max);
    Ok((err, series))
}
