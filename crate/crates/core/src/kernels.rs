//! Numerical inverse Laplace-Fourier transform of boundary-parametrix symbols
//! and the checks built on it: Gaussian bounds, causality, and the scaling
//! of the truncation residual.
//!
//! The Laplace variable runs over a wedge `tau = q + i g - c |g|` (opening
//! to the left for `t > 0`, to the right for `t < 0`), with `c` below the
//! cone parameter so that the contour stays in the analyticity region.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::Matrix3;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ItpError, Result};
use crate::geometry::source_derivatives;
use crate::geometry::{restrict, HalfSpacePoint, MetricField, Restricted};
use crate::symbols::{first_order_amplitudes, in_l2mu, second_order_amplitudes, AmplitudeSet, Branch, Part};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourSpec {
    /// `q |t|`: the shift of the contour scaled by the time lag.
    pub q_offset: f64,
    /// Opening slope `c` of the wedge.
    pub wedge_slope: f64,
    /// Cone parameter of the analyticity region.
    pub mu: f64,
    /// Target size of the neglected tails.
    pub tol: f64,
    pub gl_order: usize,
    /// `Xi^2 t kappa_min` at the frequency cutoff.
    pub xi_cutoff: f64,
    /// Multiplies every panel count.
    pub refine: usize,
    /// Smallest decay rate of `exp(-kappa |xi'|^2 t)` among the symbols.
    pub min_diffusivity: f64,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self {
            q_offset: 1.0,
            wedge_slope: 0.5,
            mu: 1.0,
            tol: 1e-12,
            gl_order: 16,
            xi_cutoff: 40.0,
            refine: 1,
            min_diffusivity: 1.0,
        }
    }
}

impl ContourSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_offset > 0.0 && self.wedge_slope > 0.0 && self.mu > 0.0) {
            return Err(ItpError::Config("contour parameters must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0 && self.xi_cutoff > 0.0 && self.min_diffusivity > 0.0) {
            return Err(ItpError::Config("contour tolerances out of range".into()));
        }
        if self.gl_order == 0 || self.refine == 0 {
            return Err(ItpError::Config("node counts must be positive".into()));
        }
        // eta = -i tau on the forward wedge, checked with real xi'.
        for g in [0.0, 0.5, 3.0, 50.0, 1e4] {
            for t in [1e-3, 1.0] {
                let q = self.q_offset / t;
                let eta = C64::new(g, self.wedge_slope * g - q);
                if !in_l2mu([C64::new(0.0, 0.0); 2], eta, self.mu) {
                    return Err(ItpError::Config(format!(
                        "contour leaves the analyticity region (slope {} vs cone {})",
                        self.wedge_slope, self.mu
                    )));
                }
            }
        }
        Ok(())
    }

    fn rule(&self) -> Vec<(f64, f64)> {
        let n = NonZeroUsize::new(self.gl_order).unwrap();
        GaussLegendre::new(n).as_node_weight_pairs().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformResult {
    pub value: C64,
    /// Size of the integrand at the truncation radii times their decay length.
    pub tail_estimate: f64,
}

fn panels(a: f64, b: f64, count: usize, rule: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let w = (b - a) / count as f64;
    let mut out = Vec::with_capacity(count * rule.len());
    for p in 0..count {
        let lo = a + p as f64 * w;
        for (x, wt) in rule {
            out.push((lo + 0.5 * w * (x + 1.0), 0.5 * w * wt));
        }
    }
    out
}

/// `(1 / 2 pi i) int exp(tau t) g(tau) dtau` along the wedge.
fn laplace_inverse<F: Fn(C64) -> C64>(g: F, t: f64, spec: &ContourSpec, rule: &[(f64, f64)]) -> Result<(C64, f64)> {
    if t == 0.0 || !t.is_finite() {
        return Err(ItpError::Evaluation(format!("time lag {t} must be nonzero")));
    }
    let a = t.abs();
    let sgn = t.signum();
    let c = spec.wedge_slope;
    let q = spec.q_offset / a;
    let gmax = (1.0 / spec.tol).ln() / (c * a);
    let count = ((gmax * a / PI).ceil() as usize).max(8) * spec.refine;
    let nodes = panels(0.0, gmax, count, rule);
    let mut acc = C64::new(0.0, 0.0);
    for side in [1.0, -1.0] {
        let dtau = C64::new(-sgn * c, side);
        for (gam, w) in &nodes {
            let tau = C64::new(q - sgn * c * gam, side * gam);
            let v = (tau * t).exp() * g(tau) * dtau;
            acc += v * (*w * side);
        }
    }
    let tau_end = C64::new(q - sgn * c * gmax, gmax);
    let tail = ((tau_end * t).exp() * g(tau_end)).norm() / (c * a);
    let value = acc / (2.0 * PI * I);
    if !value.is_finite() {
        return Err(ItpError::Evaluation("non-finite symbol sample on the contour".into()));
    }
    Ok((value, tail / (2.0 * PI)))
}

/// `J_n(z)` for n = 0, 1 from the Bessel integral, by the trapezoid rule
/// (spectrally accurate for the periodic integrand).
pub fn bessel_j(n: u32, z: f64) -> f64 {
    let m = 32 + 2 * z.abs().ceil() as usize;
    let h = PI / m as f64;
    let mut acc = 0.0;
    for j in 0..=m {
        let th = j as f64 * h;
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        acc += w * (n as f64 * th - z * th.sin()).cos();
    }
    acc * h / PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lateral {
    /// The symbol depends on `|xi'|` only: one-dimensional Hankel transform.
    Radial,
    /// Full two-dimensional quadrature in `xi'`.
    Tensor,
}

/// What the lateral integral returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateralOutput {
    Value,
    /// Derivative in `x_j` (j = 0, 1).
    Gradient(usize),
}

/// `(2 pi)^-2 int e^{i x'.xi'} (1/2 pi i) int e^{tau t} g(xi', tau) dtau dxi'`.
pub fn inverse_lf_transform<G>(
    g: G,
    spec: &ContourSpec,
    x_t: [f64; 2],
    t: f64,
    lateral: Lateral,
) -> Result<TransformResult>
where
    G: Fn([f64; 2], C64) -> C64 + Sync,
{
    transform_with_output(g, spec, x_t, t, lateral, LateralOutput::Value)
}

pub fn transform_with_output<G>(
    g: G,
    spec: &ContourSpec,
    x_t: [f64; 2],
    t: f64,
    lateral: Lateral,
    output: LateralOutput,
) -> Result<TransformResult>
where
    G: Fn([f64; 2], C64) -> C64 + Sync,
{
    spec.validate()?;
    let rule = spec.rule();
    let a = t.abs();
    if a == 0.0 {
        return Err(ItpError::Evaluation("time lag must be nonzero".into()));
    }
    let xi_max = (spec.xi_cutoff / (a * spec.min_diffusivity)).sqrt();
    match lateral {
        Lateral::Radial => {
            let rx = (x_t[0] * x_t[0] + x_t[1] * x_t[1]).sqrt();
            let count = ((xi_max * rx / PI).ceil() as usize).max(8) * spec.refine;
            let nodes = panels(0.0, xi_max, count, &rule);
            let inner: Vec<Result<(C64, f64)>> = nodes
                .par_iter()
                .map(|(r, _)| laplace_inverse(|tau| g([*r, 0.0], tau), t, spec, &rule))
                .collect();
            let mut acc = C64::new(0.0, 0.0);
            let mut tail: f64 = 0.0;
            for ((r, w), res) in nodes.iter().zip(inner) {
                let (v, tl) = res?;
                let f = match output {
                    LateralOutput::Value => bessel_j(0, r * rx) * r,
                    LateralOutput::Gradient(j) => {
                        if rx == 0.0 {
                            0.0
                        } else {
                            -bessel_j(1, r * rx) * r * r * x_t[j] / rx
                        }
                    }
                };
                acc += v * (f * w);
                tail = tail.max(tl);
            }
            let (end, _) = laplace_inverse(|tau| g([xi_max, 0.0], tau), t, spec, &rule)?;
            Ok(TransformResult {
                value: acc / (2.0 * PI),
                tail_estimate: tail * xi_max + end.norm() * xi_max / (2.0 * PI * a * xi_max),
            })
        }
        Lateral::Tensor => {
            let axis = |x: f64| {
                let count = ((xi_max * x.abs() / PI).ceil() as usize).max(8) * spec.refine;
                panels(-xi_max, xi_max, count, &rule)
            };
            let n1 = axis(x_t[0]);
            let n2 = axis(x_t[1]);
            let pts: Vec<(f64, f64, f64)> = n1
                .iter()
                .flat_map(|(a1, w1)| n2.iter().map(move |(a2, w2)| (*a1, *a2, w1 * w2)))
                .collect();
            let inner: Vec<Result<(C64, f64)>> = pts
                .par_iter()
                .map(|(a1, a2, _)| laplace_inverse(|tau| g([*a1, *a2], tau), t, spec, &rule))
                .collect();
            let mut acc = C64::new(0.0, 0.0);
            let mut tail: f64 = 0.0;
            for ((a1, a2, w), res) in pts.iter().zip(inner) {
                let (v, tl) = res?;
                let phase = C64::new(0.0, x_t[0] * a1 + x_t[1] * a2).exp();
                let factor = match output {
                    LateralOutput::Value => C64::new(1.0, 0.0),
                    LateralOutput::Gradient(j) => I * [*a1, *a2][j],
                };
                acc += v * phase * factor * *w;
                tail = tail.max(tl);
            }
            Ok(TransformResult {
                value: acc / (4.0 * PI * PI),
                tail_estimate: tail * 4.0 * xi_max * xi_max / (4.0 * PI * PI),
            })
        }
    }
}

/// Which of the two fields of a source column is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    /// Diffusivity-1 field.
    First,
    /// Diffusivity-k field.
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchSelection {
    All,
    /// The free-space branches only.
    Free,
    /// Everything except the free-space branches.
    Boundary,
    Only(Vec<Branch>),
}

impl BranchSelection {
    fn contains(&self, b: Branch) -> bool {
        let free = matches!(
            b,
            Branch::FreeAbove1 | Branch::FreeBelow1 | Branch::FreeAbove2 | Branch::FreeBelow2
        );
        match self {
            BranchSelection::All => true,
            BranchSelection::Free => free,
            BranchSelection::Boundary => !free,
            BranchSelection::Only(list) => list.contains(&b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Derivative {
    None,
    /// `d/dx3`.
    Normal,
    /// `d/dx_j`, j = 0, 1.
    Lateral(usize),
}

/// Leading (order -1) boundary kernel with coefficients frozen at the source.
#[derive(Debug, Clone)]
pub struct LeadingKernel {
    pub ell: u8,
    pub field: Field,
    pub selection: BranchSelection,
    pub frozen: Restricted,
    pub k: f64,
    pub spec: ContourSpec,
}

fn lateral_mode(m: &Matrix3<f64>) -> Lateral {
    let iso = (m[(0, 0)] - m[(1, 1)]).abs() < 1e-14 && m[(0, 1)].abs() < 1e-14;
    let decoupled = m[(0, 2)].abs() < 1e-14 && m[(1, 2)].abs() < 1e-14;
    if iso && decoupled {
        Lateral::Radial
    } else {
        Lateral::Tensor
    }
}

fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

impl LeadingKernel {
    pub fn flat(ell: u8, field: Field, selection: BranchSelection, k: f64) -> Self {
        Self {
            ell,
            field,
            selection,
            frozen: Restricted {
                m1: Matrix3::identity(),
                m0: Matrix3::identity(),
                j_y: 1.0,
            },
            k,
            spec: ContourSpec::default(),
        }
    }

    fn part(&self, x3: f64, y3: f64) -> Part {
        Part::for_position(self.field == Field::Second, x3, y3)
    }

    /// Kernel value (or derivative) at `(x, t; y, s)`.
    pub fn eval(&self, x: HalfSpacePoint, t: f64, y: HalfSpacePoint, s: f64, deriv: Derivative) -> Result<C64> {
        let lag = t - s;
        let part = self.part(x.x3, y.x3);
        let branches: Vec<Branch> = part
            .branches()
            .into_iter()
            .filter(|b| self.selection.contains(*b))
            .collect();
        if branches.is_empty() {
            return Ok(C64::new(0.0, 0.0));
        }
        let mut spec = self.spec;
        let floor = self.k.min(1.0) * min_eigenvalue(&self.frozen.m1).min(min_eigenvalue(&self.frozen.m0));
        spec.min_diffusivity = spec.min_diffusivity.min(floor);
        let mode = lateral_mode(&self.frozen.m1).max_with(lateral_mode(&self.frozen.m0));
        let (n_deriv, output) = match deriv {
            Derivative::None => (0, LateralOutput::Value),
            Derivative::Normal => (1, LateralOutput::Value),
            Derivative::Lateral(j) => (0, LateralOutput::Gradient(j)),
        };
        let (x3, y3) = (x.x3, y.x3);
        let g = |xi: [f64; 2], tau: C64| -> C64 {
            let xi = [C64::new(xi[0], 0.0), C64::new(xi[1], 0.0)];
            match first_order_amplitudes(self.ell, &self.frozen, xi, tau, self.k, y3, 0.0, [0.0, 0.0]) {
                Ok(amp) => branches.iter().map(|b| amp.branch_derivative(*b, x3, n_deriv)).sum(),
                Err(_) => C64::new(f64::NAN, f64::NAN),
            }
        };
        let off = [x.x_t[0] - y.x_t[0], x.x_t[1] - y.x_t[1]];
        Ok(transform_with_output(g, &spec, off, lag, mode, output)?.value)
    }
}

trait LateralMax {
    fn max_with(self, other: Lateral) -> Lateral;
}

impl LateralMax for Lateral {
    fn max_with(self, other: Lateral) -> Lateral {
        if self == Lateral::Radial && other == Lateral::Radial {
            Lateral::Radial
        } else {
            Lateral::Tensor
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSample {
    pub x: [f64; 3],
    pub t: f64,
    pub y: [f64; 3],
    pub s: f64,
    pub re: f64,
    pub im: f64,
}

impl KernelSample {
    pub fn magnitude(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Kernel samples on a space-time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeKernel {
    pub samples: Vec<KernelSample>,
    /// Samples at `t < s` are expected to vanish.
    pub causal: bool,
}

impl SpaceTimeKernel {
    /// `sup_{t < s} |K| / sup_{t > s} |K|`.
    pub fn causality_ratio(&self) -> f64 {
        let before = self
            .samples
            .iter()
            .filter(|s| s.t < s.s)
            .map(|s| s.magnitude())
            .fold(0.0, f64::max);
        let after = self
            .samples
            .iter()
            .filter(|s| s.t > s.s)
            .map(|s| s.magnitude())
            .fold(0.0, f64::max);
        if after == 0.0 {
            if before == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            before / after
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMode {
    /// `|x - y|`.
    Direct,
    /// `|x' - y'|^2 + (x3 + y3)^2`.
    Reflected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianFit {
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    /// `max log(|K| / bound)` over the grid; `<= 0` means the bound holds.
    pub max_violation: f64,
    pub violations: usize,
    pub points: usize,
}

fn distance2(s: &KernelSample, mode: DistanceMode) -> f64 {
    let lat = (s.x[0] - s.y[0]).powi(2) + (s.x[1] - s.y[1]).powi(2);
    match mode {
        DistanceMode::Direct => lat + (s.x[2] - s.y[2]).powi(2),
        DistanceMode::Reflected => lat + (s.x[2] + s.y[2]).powi(2),
    }
}

/// Fits `|K| <= c1 (t-s)^-p exp(-c2 d^2 / (t-s))`: `c2` by least squares on
/// `log |K| + p log(t-s)` against `d^2 / (t-s)`, `c1` as the tightest
/// envelope. A nonpositive or non-finite `c2` counts every point as a
/// violation.
pub fn gaussian_bound_fit(kernel: &SpaceTimeKernel, p: f64, mode: DistanceMode) -> Result<GaussianFit> {
    let pts: Vec<(f64, f64)> = kernel
        .samples
        .iter()
        .filter(|s| s.t > s.s)
        .map(|s| {
            let lag = s.t - s.s;
            (distance2(s, mode) / lag, s.magnitude(), lag)
        })
        .filter(|(_, m, _)| *m > 0.0)
        .map(|(x, m, lag)| (x, m.ln() + p * lag.ln()))
        .collect();
    if kernel.samples.iter().all(|s| s.t <= s.s) {
        return Err(ItpError::EmptyGrid);
    }
    if pts.is_empty() {
        return Ok(GaussianFit {
            c1: 0.0,
            c2: 0.0,
            p,
            max_violation: 0.0,
            violations: 0,
            points: 0,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let c2 = if sxx > 0.0 { -sxy / sxx } else { 0.0 };
    if !(c2 > 0.0) || !c2.is_finite() {
        return Ok(GaussianFit {
            c1: f64::INFINITY,
            c2,
            p,
            max_violation: f64::INFINITY,
            violations: pts.len(),
            points: pts.len(),
        });
    }
    let log_c1 = pts.iter().map(|(x, y)| y + c2 * x).fold(f64::NEG_INFINITY, f64::max);
    let resid: Vec<f64> = pts.iter().map(|(x, y)| y - (log_c1 - c2 * x)).collect();
    let max_violation = resid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(GaussianFit {
        c1: log_c1.exp(),
        c2,
        p,
        max_violation,
        violations: resid.iter().filter(|r| **r > 1e-12).count(),
        points: pts.len(),
    })
}

/// Checks a fitted bound against additional samples.
pub fn check_gaussian_bound(fit: &GaussianFit, kernel: &SpaceTimeKernel, mode: DistanceMode) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for s in kernel.samples.iter().filter(|s| s.t > s.s && s.magnitude() > 0.0) {
        let lag = s.t - s.s;
        let bound = fit.c1.ln() - fit.p * lag.ln() - fit.c2 * distance2(s, mode) / lag;
        let v = s.magnitude().ln() - bound;
        worst = worst.max(v);
        if v > 1e-12 {
            count += 1;
        }
    }
    (worst, count)
}

/// Samples a kernel on the product of the given points and lags.
pub fn sample_kernel<F>(f: F, points: &[(HalfSpacePoint, HalfSpacePoint)], lags: &[f64]) -> Result<SpaceTimeKernel>
where
    F: Fn(HalfSpacePoint, f64, HalfSpacePoint, f64) -> Result<C64>,
{
    let mut samples = Vec::with_capacity(points.len() * lags.len());
    for (x, y) in points {
        for lag in lags {
            let v = f(*x, *lag, *y, 0.0)?;
            if !v.is_finite() {
                return Err(ItpError::Evaluation("non-finite kernel sample".into()));
            }
            samples.push(KernelSample {
                x: x.as_array(),
                t: *lag,
                y: y.as_array(),
                s: 0.0,
                re: v.re,
                im: v.im,
            });
        }
    }
    let causal = lags.iter().any(|l| *l < 0.0);
    Ok(SpaceTimeKernel { samples, causal })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    /// Vacuous when the metric has constant coefficients.
    pub vacuous: bool,
    pub lags: Vec<f64>,
    /// Residual magnitudes for N = 1 and N = 2 per lag.
    pub residual_n1: Vec<f64>,
    pub residual_n2: Vec<f64>,
    pub slope_n1: f64,
    pub slope_n2: f64,
    pub gap: f64,
}

/// Applies the exact layered operator at `x3` to an amplitude part.
fn layered_operator(metric: &MetricField, amps: &[&AmplitudeSet], part: Part, x3: f64, first_field: bool) -> C64 {
    let f = &amps[0].frozen;
    let p = [0.0, 0.0, x3];
    let m = metric.m(&p);
    let dm = metric.dm3(&p).unwrap_or_else(Matrix3::zeros);
    let j = metric.jdet(&p);
    let dj = metric.djdet3(&p).unwrap_or(0.0);
    let xi = f.xi;
    let r = xi[0] * m[(2, 0)] + xi[1] * m[(2, 1)];
    let dr = xi[0] * dm[(2, 0)] + xi[1] * dm[(2, 1)];
    let mut q = C64::new(0.0, 0.0);
    for a in 0..2 {
        for b in 0..2 {
            q += xi[a] * xi[b] * m[(a, b)];
        }
    }
    let lj = dj / j;
    let (m33, dm33) = (m[(2, 2)], dm[(2, 2)]);
    let kappa = if first_field { 1.0 } else { f.k };
    let mut out = C64::new(0.0, 0.0);
    for amp in amps {
        let u0 = amp.derivative(part, x3, 0);
        let u1 = amp.derivative(part, x3, 1);
        let u2 = amp.derivative(part, x3, 2);
        let spatial = q * u0 - 2.0 * I * r * u1 - I * (dr + lj * r) * u0 - m33 * u2 - (dm33 + lj * m33) * u1;
        out += f.tau * u0 + kappa * spatial;
    }
    out
}

/// Residual kernel of the `N`-term boundary parametrix for a layered
/// metric, evaluated along the parabolic ray `x3 - y3 = sqrt(t - s)`,
/// `x' = y'`, and its power-law exponent in `t - s`.
pub fn truncation_error_probe(
    metric: &MetricField,
    k: f64,
    y3: f64,
    lags: &[f64],
    spec: &ContourSpec,
) -> Result<TruncationReport> {
    if lags.iter().all(|l| *l <= 0.0) || lags.is_empty() {
        return Err(ItpError::EmptyGrid);
    }
    let lags: Vec<f64> = lags.iter().cloned().filter(|l| *l > 0.0).collect();
    if metric.is_flat() || !metric.has_derivatives() {
        return Ok(TruncationReport {
            vacuous: true,
            residual_n1: vec![0.0; lags.len()],
            residual_n2: vec![0.0; lags.len()],
            lags,
            slope_n1: 0.0,
            slope_n2: 0.0,
            gap: 0.0,
        });
    }
    let r = restrict(metric, y3, [0.0, 0.0])?;
    let d = source_derivatives(metric, y3, [0.0, 0.0])?;
    let mode = lateral_mode(&r.m1);
    let mut res = [Vec::new(), Vec::new()];
    for &lag in &lags {
        let x3 = (y3 + lag.sqrt()).min(0.0);
        for n in 1..=2usize {
            let g = |xi: [f64; 2], tau: C64| -> C64 {
                let xi = [C64::new(xi[0], 0.0), C64::new(xi[1], 0.0)];
                let a1 = match first_order_amplitudes(1, &r, xi, tau, k, y3, 0.0, [0.0; 2]) {
                    Ok(a) => a,
                    Err(_) => return C64::new(f64::NAN, 0.0),
                };
                if n == 1 {
                    layered_operator(metric, &[&a1], Part::A, x3, true)
                } else {
                    match second_order_amplitudes(1, &r, &d, xi, tau, k, y3, 0.0, [0.0; 2]) {
                        Ok((a2, _)) => layered_operator(metric, &[&a1, &a2], Part::A, x3, true),
                        Err(_) => C64::new(f64::NAN, 0.0),
                    }
                }
            };
            let v = inverse_lf_transform(g, spec, [0.0, 0.0], lag, mode)?;
            res[n - 1].push(v.value.norm());
        }
    }
    let slope_n1 = crate::levi::log_log_slope(&lags, &res[0]);
    let slope_n2 = crate::levi::log_log_slope(&lags, &res[1]);
    let [residual_n1, residual_n2] = res;
    Ok(TruncationReport {
        vacuous: false,
        lags,
        residual_n1,
        residual_n2,
        slope_n1,
        slope_n2,
        gap: slope_n2 - slope_n1,
    })
}

/// 3-D heat kernel with diffusivity `kappa` at squared distance `d2` and lag `t`.
pub fn heat_kernel_3d(d2: f64, t: f64, kappa: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (4.0 * PI * kappa * t).powf(-1.5) * (-d2 / (4.0 * kappa * t)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LayeredProfile;
    use approx::assert_abs_diff_eq;

    fn pt(x: [f64; 2], x3: f64) -> HalfSpacePoint {
        HalfSpacePoint::new(x, x3).unwrap()
    }

    #[test]
    fn bessel_values() {
        assert_abs_diff_eq!(bessel_j(0, 0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bessel_j(0, 2.404825557695773), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(bessel_j(1, 1.0), 0.44005058574493355, epsilon = 1e-14);
        assert_abs_diff_eq!(bessel_j(0, 50.0), 0.05581232766925181, epsilon = 1e-13);
    }

    #[test]
    fn laplace_pair() {
        let spec = ContourSpec::default();
        let rule = spec.rule();
        // 1 / (tau + 2)  ->  exp(-2 t)
        let (v, _) = laplace_inverse(|tau| 1.0 / (tau + 2.0), 0.7, &spec, &rule).unwrap();
        assert_abs_diff_eq!(v.re, (-1.4f64).exp(), epsilon = 1e-9);
        // exp(-sqrt(tau) a) / sqrt(tau)  ->  exp(-a^2/4t) / sqrt(pi t)
        let (v, _) = laplace_inverse(|tau| (-(tau.sqrt()) * 0.3).exp() / tau.sqrt(), 0.05, &spec, &rule).unwrap();
        let want = (-0.09f64 / 0.2).exp() / (PI * 0.05).sqrt();
        assert!((v.re - want).abs() < 1e-8 * want, "{} vs {want}", v.re);
        let (v, _) = laplace_inverse(|tau| 1.0 / (tau + 2.0), -0.3, &spec, &rule).unwrap();
        assert!(v.norm() < 1e-10);
    }

    #[test]
    fn contour_outside_region_rejected() {
        let spec = ContourSpec {
            wedge_slope: 2.0,
            mu: 1.0,
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(ItpError::Config(_))));
    }

    #[test]
    fn zero_symbol() {
        let r = inverse_lf_transform(
            |_, _| C64::new(0.0, 0.0),
            &ContourSpec::default(),
            [0.2, 0.1],
            0.3,
            Lateral::Radial,
        )
        .unwrap();
        assert_eq!(r.value.norm(), 0.0);
    }

    #[test]
    fn free_branch_is_heat_kernel() {
        let kern = LeadingKernel::flat(1, Field::First, BranchSelection::Free, 4.0);
        let t = 1.0 / (4.0 * PI);
        let v = kern
            .eval(pt([0.0, 0.0], -0.5), t, pt([0.0, 0.0], -0.5), 0.0, Derivative::None)
            .unwrap();
        assert!((v.re - 1.0).abs() < 1e-6, "{v}");
        let x = pt([0.1, -0.2], -0.3);
        let y = pt([0.0, 0.05], -0.5);
        for lag in [0.01, 0.1, 1.0] {
            let v = kern.eval(x, lag, y, 0.0, Derivative::None).unwrap();
            let d2 = 0.01 + 0.0625 + 0.04;
            let want = heat_kernel_3d(d2, lag, 1.0);
            assert!((v.re - want).abs() < 1e-6 * want, "{lag}: {v} vs {want}");
            assert!(v.im.abs() < 1e-8 * want);
        }
        let v = kern.eval(x, -0.05, y, 0.0, Derivative::None).unwrap();
        assert!(v.norm() < 1e-6);
    }

    #[test]
    fn second_field_free_branch_has_diffusivity_k() {
        let kern = LeadingKernel::flat(2, Field::Second, BranchSelection::Free, 4.0);
        let x = pt([0.3, 0.0], -0.9);
        let y = pt([0.0, 0.1], -0.5);
        let d2 = 0.09 + 0.01 + 0.16;
        for lag in [0.02, 0.3] {
            let v = kern.eval(x, lag, y, 0.0, Derivative::None).unwrap();
            let want = heat_kernel_3d(d2, lag, 4.0);
            assert!((v.re - want).abs() < 1e-6 * want, "{v} vs {want}");
        }
    }

    #[test]
    fn gradients_match_heat_kernel() {
        let kern = LeadingKernel::flat(1, Field::First, BranchSelection::Free, 4.0);
        let x = pt([0.1, -0.2], -0.3);
        let y = pt([0.0, 0.05], -0.5);
        let lag = 0.05;
        let d2 = 0.01 + 0.0625 + 0.04;
        let k0 = heat_kernel_3d(d2, lag, 1.0);
        let dn = kern.eval(x, lag, y, 0.0, Derivative::Normal).unwrap();
        assert!((dn.re - (-0.2 / (2.0 * lag)) * k0).abs() < 1e-6 * k0 / lag);
        let dl = kern.eval(x, lag, y, 0.0, Derivative::Lateral(1)).unwrap();
        assert!((dl.re - (0.25 / (2.0 * lag)) * k0).abs() < 1e-6 * k0 / lag);
    }

    #[test]
    fn tensor_mode_agrees_with_radial() {
        let spec = ContourSpec::default();
        let g = |xi: [f64; 2], tau: C64| {
            let lam = (xi[0] * xi[0] + xi[1] * xi[1] + tau).sqrt();
            (-lam * 0.2).exp() / (2.0 * lam)
        };
        let a = inverse_lf_transform(g, &spec, [0.15, 0.1], 0.1, Lateral::Radial).unwrap();
        let b = inverse_lf_transform(g, &spec, [0.15, 0.1], 0.1, Lateral::Tensor).unwrap();
        assert!((a.value - b.value).norm() < 1e-7 * a.value.norm());
    }

    #[test]
    fn gaussian_fit_of_heat_kernel() {
        let kern = |x: HalfSpacePoint, t: f64, y: HalfSpacePoint, s: f64| -> Result<C64> {
            let d2: f64 = x
                .as_array()
                .iter()
                .zip(y.as_array())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            Ok(C64::new(heat_kernel_3d(d2, t - s, 1.0), 0.0))
        };
        let pts: Vec<_> = [0.0, 0.1, 0.3]
            .iter()
            .map(|d| (pt([*d, 0.0], -0.5), pt([0.0, 0.0], -0.5)))
            .collect();
        let k = sample_kernel(kern, &pts, &[0.01, 0.05, 0.2, -0.1]).unwrap();
        let fit = gaussian_bound_fit(&k, 1.5, DistanceMode::Direct).unwrap();
        assert_abs_diff_eq!(fit.c2, 0.25, epsilon = 1e-10);
        assert_eq!(fit.violations, 0);
        assert_eq!(k.causality_ratio(), 0.0);
        let zero = sample_kernel(|_, _, _, _| Ok(C64::new(0.0, 0.0)), &pts, &[0.1]).unwrap();
        let f0 = gaussian_bound_fit(&zero, 1.5, DistanceMode::Direct).unwrap();
        assert_eq!((f0.c1, f0.c2, f0.max_violation), (0.0, 0.0, 0.0));
        let past = sample_kernel(kern, &pts, &[-0.1]).unwrap();
        assert!(gaussian_bound_fit(&past, 1.5, DistanceMode::Direct).is_err());
    }

    #[test]
    fn truncation_probe() {
        let spec = ContourSpec::default();
        let lags = [1e-3, 2e-3, 4e-3, 8e-3];
        let flat = truncation_error_probe(&MetricField::flat(), 4.0, -0.5, &lags, &spec).unwrap();
        assert!(flat.vacuous);
        assert!(truncation_error_probe(&MetricField::flat(), 4.0, -0.5, &[-0.1], &spec).is_err());
        let metric = LayeredProfile::Quadratic { a: 0.5 }.into_metric();
        let rep = truncation_error_probe(&metric, 4.0, -0.5, &lags, &spec).unwrap();
        assert!(
            (rep.slope_n1 + 2.0).abs() < 0.15 && (rep.slope_n2 + 1.5).abs() < 0.15,
            "{rep:?}"
        );
        assert!(rep.gap >= 0.4, "{rep:?}");
    }
}
