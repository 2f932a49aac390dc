//! Large-parameter symbol calculus for the flattened transmission problem:
//! characteristic roots, the boundary denominator, and the amplitudes of
//! the boundary parametrix at orders -1 and -2.

use nalgebra::Matrix3;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ItpError, Result};
use crate::geometry::{Restricted, SourceDerivatives};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// `<xi', tau>` with `<xi',tau>^2 = 1 + |xi'|^2 + |tau|`.
pub fn bracket(xi: [C64; 2], tau: C64) -> f64 {
    (1.0 + xi[0].norm_sqr() + xi[1].norm_sqr() + tau.norm()).sqrt()
}

/// Principal square root with the sign chosen so that the real part is
/// positive. A purely imaginary result has no admissible sign.
pub fn contract_sqrt(z: C64) -> Result<C64> {
    let s = z.sqrt();
    if s.re == 0.0 {
        return Err(ItpError::BranchFailure(format!("{z}")));
    }
    Ok(if s.re < 0.0 { -s } else { s })
}

/// Normal-direction coefficients of `M` contracted with `xi'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contracted {
    pub m33: f64,
    /// `sum_j m_3j xi_j`.
    pub r: C64,
    /// `sum_jl m_jl xi_j xi_l`.
    pub q: C64,
}

pub fn contract(m: &Matrix3<f64>, xi: [C64; 2]) -> Contracted {
    let r = xi[0] * m[(2, 0)] + xi[1] * m[(2, 1)];
    let mut q = C64::new(0.0, 0.0);
    for j in 0..2 {
        for l in 0..2 {
            q += xi[j] * xi[l] * m[(j, l)];
        }
    }
    Contracted { m33: m[(2, 2)], r, q }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharRoots {
    pub lambda_plus: C64,
    pub lambda_minus: C64,
    pub mu_plus: C64,
    pub mu_minus: C64,
}

pub fn char_roots(m1: &Matrix3<f64>, xi: [C64; 2], tau: C64, k: f64) -> Result<CharRoots> {
    if !(k > 0.0) {
        return Err(ItpError::InvalidContrast(k));
    }
    let c = contract(m1, xi);
    if !(c.m33 > 0.0) {
        return Err(ItpError::InvalidMetric(format!("m33 = {} <= 0", c.m33)));
    }
    let sl = contract_sqrt(c.m33 * (c.q + tau) - c.r * c.r)?;
    let sm = contract_sqrt(c.m33 * (c.q + tau / k) - c.r * c.r)?;
    let base = -I * c.r;
    Ok(CharRoots {
        lambda_plus: (base + sl) / c.m33,
        lambda_minus: (base - sl) / c.m33,
        mu_plus: (base + sm) / c.m33,
        mu_minus: (base - sm) / c.m33,
    })
}

/// `k (i R0 + mu+ m33^0) - (i R0 + lambda+ m33^0)`, or a degeneracy signal
/// when it is below `1e-10 <xi',tau>`.
pub fn lopatinskii_denominator(m0: &Matrix3<f64>, m1: &Matrix3<f64>, xi: [C64; 2], tau: C64, k: f64) -> Result<C64> {
    let roots = char_roots(m1, xi, tau, k)?;
    denominator_from_roots(m0, &roots, xi, tau, k)
}

fn denominator_from_roots(m0: &Matrix3<f64>, roots: &CharRoots, xi: [C64; 2], tau: C64, k: f64) -> Result<C64> {
    let c0 = contract(m0, xi);
    let den = k * (I * c0.r + roots.mu_plus * c0.m33) - (I * c0.r + roots.lambda_plus * c0.m33);
    let threshold = 1e-10 * bracket(xi, tau);
    if den.norm() < threshold {
        return Err(ItpError::Degenerate {
            value: den.norm(),
            threshold,
        });
    }
    Ok(den)
}

/// The eight exponential branches of the amplitudes, by the rates of their
/// `x3` and `y3` exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
pub enum Branch {
    /// `lambda+ x3 - lambda- y3`: reflection of the first field.
    Reflected1,
    /// `lambda+ x3 - mu- y3`: second-field source seen by the first field.
    Cross21,
    /// `lambda- x3 - lambda- y3`: free part above the source.
    FreeAbove1,
    /// `lambda+ x3 - lambda+ y3`: free part below the source.
    FreeBelow1,
    /// `mu+ x3 - lambda- y3`: first-field source seen by the second field.
    Cross12,
    /// `mu+ x3 - mu- y3`: reflection of the second field.
    Reflected2,
    /// `mu- x3 - mu- y3`.
    FreeAbove2,
    /// `mu+ x3 - mu+ y3`.
    FreeBelow2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rate {
    LambdaPlus,
    LambdaMinus,
    MuPlus,
    MuMinus,
}

impl Rate {
    fn value(self, r: &CharRoots) -> C64 {
        match self {
            Rate::LambdaPlus => r.lambda_plus,
            Rate::LambdaMinus => r.lambda_minus,
            Rate::MuPlus => r.mu_plus,
            Rate::MuMinus => r.mu_minus,
        }
    }
}

impl Branch {
    pub const ALL: [Branch; 8] = [
        Branch::Reflected1,
        Branch::Cross21,
        Branch::FreeAbove1,
        Branch::FreeBelow1,
        Branch::Cross12,
        Branch::Reflected2,
        Branch::FreeAbove2,
        Branch::FreeBelow2,
    ];

    /// 1-based position in the canonical ordering.
    pub fn index(self) -> usize {
        Branch::ALL.iter().position(|b| *b == self).unwrap() + 1
    }

    pub fn from_index(j: usize) -> Option<Branch> {
        Branch::ALL.get(j.wrapping_sub(1)).copied()
    }

    fn rates(self) -> (Rate, Rate) {
        use Rate::*;
        match self {
            Branch::Reflected1 => (LambdaPlus, LambdaMinus),
            Branch::Cross21 => (LambdaPlus, MuMinus),
            Branch::FreeAbove1 => (LambdaMinus, LambdaMinus),
            Branch::FreeBelow1 => (LambdaPlus, LambdaPlus),
            Branch::Cross12 => (MuPlus, LambdaMinus),
            Branch::Reflected2 => (MuPlus, MuMinus),
            Branch::FreeAbove2 => (MuMinus, MuMinus),
            Branch::FreeBelow2 => (MuPlus, MuPlus),
        }
    }

    /// Coefficient of `x3` in the exponent.
    pub fn x3_rate(self, r: &CharRoots) -> C64 {
        self.rates().0.value(r)
    }

    /// Coefficient of `-y3` in the exponent.
    pub fn y3_rate(self, r: &CharRoots) -> C64 {
        self.rates().1.value(r)
    }

    /// Branches carrying the `(2 - ell)` prefactor.
    pub fn first_source(self) -> bool {
        matches!(
            self,
            Branch::Reflected1 | Branch::FreeAbove1 | Branch::FreeBelow1 | Branch::Cross12
        )
    }

    /// Equation the branch belongs to: 1 for the first field, `k` scaling for the second.
    pub fn second_field(self) -> bool {
        self.index() >= 5
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::Reflected1 => "lp*x3-lm*y3",
            Branch::Cross21 => "lp*x3-mm*y3",
            Branch::FreeAbove1 => "lm*x3-lm*y3",
            Branch::FreeBelow1 => "lp*x3-lp*y3",
            Branch::Cross12 => "mp*x3-lm*y3",
            Branch::Reflected2 => "mp*x3-mm*y3",
            Branch::FreeAbove2 => "mm*x3-mm*y3",
            Branch::FreeBelow2 => "mp*x3-mp*y3",
        }
    }
}

/// The four amplitude families: first field above/below the source, second
/// field above/below the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Part {
    /// First field, `y3 < x3 <= 0`.
    A,
    /// First field, `x3 < y3`.
    B,
    /// Second field, `y3 < x3 <= 0`.
    D,
    /// Second field, `x3 < y3`.
    E,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::A, Part::B, Part::D, Part::E];

    pub fn branches(self) -> [Branch; 3] {
        use Branch::*;
        match self {
            Part::A => [Reflected1, Cross21, FreeAbove1],
            Part::B => [Reflected1, Cross21, FreeBelow1],
            Part::D => [Cross12, Reflected2, FreeAbove2],
            Part::E => [Cross12, Reflected2, FreeBelow2],
        }
    }

    /// The part valid at depth `x3` for source depth `y3`.
    pub fn for_position(second_field: bool, x3: f64, y3: f64) -> Part {
        match (second_field, x3 >= y3) {
            (false, true) => Part::A,
            (false, false) => Part::B,
            (true, true) => Part::D,
            (true, false) => Part::E,
        }
    }
}

/// Frozen data shared by all amplitudes at one frequency point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrozenData {
    pub xi: [C64; 2],
    pub tau: C64,
    pub k: f64,
    /// Coefficients at the source depth.
    pub at_source: Contracted,
    /// Coefficients at the boundary.
    pub at_boundary: Contracted,
    pub j_y: f64,
    pub y3: f64,
    /// `exp(-tau s - i y'.xi')`.
    pub phase: C64,
}

/// Exponential-polynomial amplitudes of one order for one source column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeSet {
    pub ell: u8,
    /// `L`: the amplitudes have order `-L`.
    pub order: u8,
    /// Polynomial coefficients in powers of `x3 - y3`, by branch index - 1.
    /// Inactive branches are empty.
    pub coeffs: [Vec<C64>; 8],
    pub roots: CharRoots,
    pub frozen: FrozenData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplitudeRow {
    pub branch: &'static str,
    pub l: usize,
    pub re: f64,
    pub im: f64,
    pub order: i32,
}

impl AmplitudeSet {
    pub fn coeffs_of(&self, b: Branch) -> &[C64] {
        &self.coeffs[b.index() - 1]
    }

    /// Symbol order carried by coefficient `f_l`.
    pub fn order_label(&self, l: usize) -> i32 {
        l as i32 - self.order as i32
    }

    /// `n`-th x3-derivative (n <= 2) of one branch term.
    pub fn branch_derivative(&self, b: Branch, x3: f64, n: usize) -> C64 {
        let c = self.coeffs_of(b);
        if c.is_empty() {
            return C64::new(0.0, 0.0);
        }
        let beta = b.x3_rate(&self.roots);
        let delta = b.y3_rate(&self.roots);
        let y3 = self.frozen.y3;
        let rho = x3 - y3;
        let mut p = [C64::new(0.0, 0.0); 3];
        let mut pow = 1.0;
        for (l, cl) in c.iter().enumerate() {
            p[0] += cl * pow;
            if l >= 1 {
                p[1] += cl * (l as f64) * rho.powi(l as i32 - 1);
            }
            if l >= 2 {
                p[2] += cl * (l * (l - 1)) as f64 * rho.powi(l as i32 - 2);
            }
            pow *= rho;
        }
        let e = (beta * x3 - delta * y3).exp() * self.frozen.phase;
        let v = match n {
            0 => p[0],
            1 => p[1] + beta * p[0],
            2 => p[2] + 2.0 * beta * p[1] + beta * beta * p[0],
            _ => panic!("derivative order {n} not supported"),
        };
        v * e
    }

    pub fn eval(&self, part: Part, x3: f64) -> C64 {
        self.derivative(part, x3, 0)
    }

    pub fn derivative(&self, part: Part, x3: f64, n: usize) -> C64 {
        part.branches().iter().map(|b| self.branch_derivative(*b, x3, n)).sum()
    }

    pub fn rows(&self) -> Vec<AmplitudeRow> {
        let mut out = Vec::new();
        for b in Branch::ALL {
            for (l, c) in self.coeffs_of(b).iter().enumerate() {
                out.push(AmplitudeRow {
                    branch: b.label(),
                    l,
                    re: c.re,
                    im: c.im,
                    order: self.order_label(l),
                });
            }
        }
        out
    }
}

/// The order -1 coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstOrderCoefficients {
    pub a1: C64,
    pub b1: C64,
    pub a2: C64,
    pub b2: C64,
    pub den: C64,
}

fn frozen_data(r: &Restricted, xi: [C64; 2], tau: C64, k: f64, y3: f64, s: f64, y_t: [f64; 2]) -> FrozenData {
    let phase = (-tau * s - I * (xi[0] * y_t[0] + xi[1] * y_t[1])).exp();
    FrozenData {
        xi,
        tau,
        k,
        at_source: contract(&r.m1, xi),
        at_boundary: contract(&r.m0, xi),
        j_y: r.j_y,
        y3,
        phase,
    }
}

pub fn first_order_coefficients(
    r: &Restricted,
    xi: [C64; 2],
    tau: C64,
    k: f64,
) -> Result<(CharRoots, FirstOrderCoefficients)> {
    let roots = char_roots(&r.m1, xi, tau, k)?;
    if (roots.lambda_plus - roots.lambda_minus).norm() == 0.0 || (roots.mu_plus - roots.mu_minus).norm() == 0.0 {
        return Err(ItpError::CoincidentRoots);
    }
    let den = denominator_from_roots(&r.m0, &roots, xi, tau, k)?;
    let m33 = r.m1[(2, 2)];
    let c0 = contract(&r.m0, xi);
    let a1 = 1.0 / (r.j_y * m33 * (roots.lambda_plus - roots.lambda_minus));
    let b1 = 1.0 / (r.j_y * k * m33 * (roots.mu_plus - roots.mu_minus));
    let a2 = (roots.lambda_minus - roots.lambda_plus) * c0.m33 * a1 / den;
    let b2 = ((I * c0.r + roots.lambda_plus * c0.m33) - k * (I * c0.r + roots.mu_minus * c0.m33)) * b1 / den;
    Ok((roots, FirstOrderCoefficients { a1, b1, a2, b2, den }))
}

/// Raw (prefactor-free) order -1 coefficient of each branch.
fn branch_constants(c: &FirstOrderCoefficients) -> [C64; 8] {
    [-c.a1 + c.a2, c.b1 + c.b2, c.a1, c.a1, c.a2, c.b2, c.b1, c.b1]
}

fn prefactor(ell: u8, b: Branch) -> f64 {
    let ell = ell as f64;
    if b.first_source() {
        2.0 - ell
    } else {
        ell - 1.0
    }
}

fn check_ell(ell: u8) -> Result<()> {
    if ell == 1 || ell == 2 {
        Ok(())
    } else {
        Err(ItpError::Config(format!("source index ell = {ell} must be 1 or 2")))
    }
}

/// Amplitudes of order -1 for the source column `ell`.
#[allow(clippy::too_many_arguments)]
pub fn first_order_amplitudes(
    ell: u8,
    r: &Restricted,
    xi: [C64; 2],
    tau: C64,
    k: f64,
    y3: f64,
    s: f64,
    y_t: [f64; 2],
) -> Result<AmplitudeSet> {
    check_ell(ell)?;
    let (roots, c) = first_order_coefficients(r, xi, tau, k)?;
    Ok(amplitudes_from_coefficients(
        ell,
        roots,
        &c,
        frozen_data(r, xi, tau, k, y3, s, y_t),
    ))
}

/// Builds order -1 amplitudes from explicit coefficients. Useful for
/// perturbation studies of the transmission system.
pub fn amplitudes_from_coefficients(
    ell: u8,
    roots: CharRoots,
    c: &FirstOrderCoefficients,
    frozen: FrozenData,
) -> AmplitudeSet {
    let raw = branch_constants(c);
    let coeffs = std::array::from_fn(|i| {
        let b = Branch::ALL[i];
        let p = prefactor(ell, b);
        if p == 0.0 {
            Vec::new()
        } else {
            vec![raw[i] * p]
        }
    });
    AmplitudeSet {
        ell,
        order: 1,
        coeffs,
        roots,
        frozen,
    }
}

fn rel_residual(terms: &[C64]) -> f64 {
    let sum: C64 = terms.iter().sum();
    let scale = terms.iter().map(|t| t.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        sum.norm() / scale
    }
}

/// Relative residuals of the six transmission and boundary equations:
/// continuity and flux jump of each field across `x3 = y3`, then trace and
/// flux coupling at `x3 = 0`. The source terms are present at order -1 only.
pub fn verify_transmission_system(amp: &AmplitudeSet, y3: f64) -> [f64; 6] {
    let f = &amp.frozen;
    let k = f.k;
    let ell = amp.ell as f64;
    let src = if amp.order == 1 {
        f.phase / f.j_y
    } else {
        C64::new(0.0, 0.0)
    };
    let (m1, r1) = (f.at_source.m33, f.at_source.r);
    let (m0, r0) = (f.at_boundary.m33, f.at_boundary.r);
    let v = |p: Part, x: f64| amp.eval(p, x);
    let dv = |p: Part, x: f64| amp.derivative(p, x, 1);

    let res1 = rel_residual(&[v(Part::A, y3), -v(Part::B, y3)]);
    let res2 = rel_residual(&[
        I * r1 * v(Part::A, y3),
        -I * r1 * v(Part::B, y3),
        m1 * dv(Part::A, y3),
        -m1 * dv(Part::B, y3),
        (2.0 - ell) * src,
    ]);
    let res3 = rel_residual(&[v(Part::D, y3), -v(Part::E, y3)]);
    let res4 = rel_residual(&[
        k * I * r1 * v(Part::D, y3),
        -k * I * r1 * v(Part::E, y3),
        k * m1 * dv(Part::D, y3),
        -k * m1 * dv(Part::E, y3),
        (ell - 1.0) * src,
    ]);
    let res5 = rel_residual(&[v(Part::A, 0.0), -v(Part::D, 0.0)]);
    let res6 = rel_residual(&[
        I * r0 * v(Part::A, 0.0),
        m0 * dv(Part::A, 0.0),
        -k * I * r0 * v(Part::D, 0.0),
        -k * m0 * dv(Part::D, 0.0),
    ]);
    [res1, res2, res3, res4, res5, res6]
}

/// Intermediate quantities of the order -2 system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2SystemSolution {
    /// `E[l][j-1]`, l = 0, 1: right-hand sides of the normal ODEs.
    pub e: [[C64; 8]; 2],
    /// `F[l-1][j-1]`, l = 1, 2: particular-solution coefficients.
    pub f: [[C64; 8]; 2],
    pub c3: C64,
    pub c9: C64,
    pub a: [C64; 5],
    pub b: [C64; 5],
    /// The twelve constants of the order -2 amplitudes (continuity choices
    /// made where the system leaves them free).
    pub c: [C64; 12],
}

/// Normal derivatives of the contracted coefficients at the source depth.
#[derive(Debug, Clone, Copy)]
struct DerivedTerms {
    dm33: C64,
    dr: C64,
    dq: C64,
    w3: C64,
    w_xi: C64,
}

fn derived_terms(d: &SourceDerivatives, m1: &Matrix3<f64>, xi: [C64; 2]) -> DerivedTerms {
    let dc = contract(&d.dm1, xi);
    let w = |j: usize| m1[(j, 2)] * d.dlog_j;
    DerivedTerms {
        dm33: C64::new(dc.m33, 0.0),
        dr: dc.r,
        dq: dc.q,
        w3: C64::new(w(2), 0.0),
        w_xi: xi[0] * w(0) + xi[1] * w(1),
    }
}

/// Amplitudes of order -2 together with the solved system.
#[allow(clippy::too_many_arguments)]
pub fn second_order_amplitudes(
    ell: u8,
    r: &Restricted,
    d: &SourceDerivatives,
    xi: [C64; 2],
    tau: C64,
    k: f64,
    y3: f64,
    s: f64,
    y_t: [f64; 2],
) -> Result<(AmplitudeSet, L2SystemSolution)> {
    check_ell(ell)?;
    let (roots, c1) = first_order_coefficients(r, xi, tau, k)?;
    let frozen = frozen_data(r, xi, tau, k, y3, s, y_t);
    let raw = branch_constants(&c1);
    let dt = derived_terms(d, &r.m1, xi);
    let m1 = frozen.at_source;
    let (m0, r0) = (frozen.at_boundary.m33, frozen.at_boundary.r);

    let mut e = [[C64::new(0.0, 0.0); 8]; 2];
    let mut f = [[C64::new(0.0, 0.0); 8]; 2];
    for (i, b) in Branch::ALL.iter().enumerate() {
        let beta = b.x3_rate(&roots);
        let gamma = if b.second_field() { k } else { 1.0 };
        let cj = raw[i] * gamma;
        e[1][i] = cj * (-dt.dm33 * beta * beta - 2.0 * I * dt.dr * beta + dt.dq);
        e[0][i] = cj * (-(dt.dm33 + dt.w3) * beta - I * (dt.dr + dt.w_xi));
        let lin = beta * m1.m33 + I * m1.r;
        f[1][i] = e[1][i] / (4.0 * gamma * lin);
        f[0][i] = (e[0][i] - 2.0 * gamma * m1.m33 * f[1][i]) / (2.0 * gamma * lin);
    }
    let fl = |l: usize, j: usize| f[l - 1][j - 1];
    let lp = roots.lambda_plus;
    let lm = roots.lambda_minus;
    let mp = roots.mu_plus;
    let mm = roots.mu_minus;
    let c3 = (fl(1, 3) - fl(1, 4)) / (lp - lm);
    let c9 = (fl(1, 7) - fl(1, 8)) / (mp - mm);

    // Polynomial parts and their derivatives at x3 = 0, i.e. rho = -y3.
    let z = -y3;
    let poly = |j: usize| fl(1, j) * z + fl(2, j) * z * z;
    let dpoly = |j: usize| fl(1, j) + 2.0 * fl(2, j) * z;
    let den = c1.den;
    let lam_p0 = I * r0 + lp * m0;

    let a3 = -(poly(1) + poly(3) - poly(5));
    let a4 = -I * r0 * (poly(1) + poly(3)) - m0 * (dpoly(1) + dpoly(3) + lp * poly(1) + lm * poly(3))
        + I * k * r0 * poly(5)
        + k * m0 * (dpoly(5) + mp * poly(5));
    let a5 = a3 - c3;
    let a6 = a4 - (I * r0 + lm * m0) * c3;
    let a7 = (lam_p0 * a5 - a6) / den;

    let b3 = -(poly(2) - poly(6) - poly(7));
    let b4 = -I * r0 * poly(2) - m0 * (dpoly(2) + lp * poly(2))
        + I * k * r0 * (poly(6) + poly(7))
        + k * m0 * (dpoly(6) + dpoly(7) + mp * poly(6) + mm * poly(7));
    let b5 = b3 + c9;
    let b6 = b4 + k * (I * r0 + mm * m0) * c9;
    let b7 = (lam_p0 * b5 - b6) / den;

    // Constant terms per branch.
    let consts = [a5 + a7, b5 + b7, c3, c3, a7, b7, c9, c9];
    let c = [a5 + a7, b5 + b7, c3, a5 + a7, b5 + b7, c3, a7, b7, c9, a7, b7, c9];
    let coeffs = std::array::from_fn(|i| {
        let p = prefactor(ell, Branch::ALL[i]);
        if p == 0.0 {
            Vec::new()
        } else {
            vec![consts[i] * p, f[0][i] * p, f[1][i] * p]
        }
    });
    let amp = AmplitudeSet {
        ell,
        order: 2,
        coeffs,
        roots,
        frozen,
    };
    let sol = L2SystemSolution {
        e,
        f,
        c3,
        c9,
        a: [a3, a4, a5, a6, a7],
        b: [b3, b4, b5, b6, b7],
        c,
    };
    Ok((amp, sol))
}

/// Relative residual of the order -2 normal ODEs at depth `x3`. The right-hand
/// side is rebuilt from the operator form acting on the order -1 amplitude,
/// independent of the `E` coefficients used in the construction.
pub fn second_order_ode_residual(
    first: &AmplitudeSet,
    second: &AmplitudeSet,
    d: &SourceDerivatives,
    m1: &Matrix3<f64>,
    x3: f64,
) -> f64 {
    let f = &first.frozen;
    let dt = derived_terms(d, m1, f.xi);
    let c = f.at_source;
    let rho = x3 - f.y3;
    let mut worst: f64 = 0.0;
    for part in Part::ALL {
        let gamma = if matches!(part, Part::D | Part::E) { f.k } else { 1.0 };
        let u0 = first.derivative(part, x3, 0);
        let u1 = first.derivative(part, x3, 1);
        let u2 = first.derivative(part, x3, 2);
        let theta = gamma
            * (rho * (-dt.dm33 * u2 - 2.0 * I * dt.dr * u1 + dt.dq * u0)
                - (dt.dm33 + dt.w3) * u1
                - I * (dt.dr + dt.w_xi) * u0);
        let v0 = second.derivative(part, x3, 0);
        let v1 = second.derivative(part, x3, 1);
        let v2 = second.derivative(part, x3, 2);
        let lhs = gamma * c.m33 * v2 + 2.0 * I * gamma * c.r * v1 - (gamma * c.q + f.tau) * v0;
        let scale = lhs.norm().max(theta.norm()).max(
            (gamma * c.m33 * v2)
                .norm()
                .max((gamma * c.q + f.tau).norm() * v0.norm()),
        );
        if scale > 0.0 {
            worst = worst.max((lhs - theta).norm() / scale);
        }
    }
    worst
}

/// Membership test for the analyticity region `L^2_mu`.
pub fn in_l2mu(xi: [C64; 2], eta: C64, mu: f64) -> bool {
    let re2 = xi[0].re * xi[0].re + xi[1].re * xi[1].re;
    let im2 = xi[0].im * xi[0].im + xi[1].im * xi[1].im;
    eta.im < mu * (eta.re.abs() + re2) - im2 / mu
}

/// `p1^2 - 4 p0 p2 + 4 p0 i eta` for the frozen normal-direction quadratic.
pub fn discriminant_value(m: &Matrix3<f64>, xi: [C64; 2], eta: C64) -> C64 {
    let c = contract(m, xi);
    4.0 * c.r * c.r - 4.0 * c.m33 * c.q - 4.0 * c.m33 * I * eta
}

/// Distance from `z` to the closed ray `[0, inf)`.
pub fn distance_to_ray(z: C64) -> f64 {
    if z.re >= 0.0 {
        z.im.abs()
    } else {
        z.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscriminantReport {
    pub samples: usize,
    pub min_distance: Option<f64>,
    /// Minimum of distance / |value|, a scale-free margin.
    pub min_relative_distance: Option<f64>,
    pub violations: usize,
}

/// Samples `(xi', eta)` in `L^2_mu` by rejection and checks that the
/// discriminant value stays off the nonnegative real ray.
pub fn discriminant_ray_check(m: &Matrix3<f64>, mu: f64, samples: usize, seed: u64) -> DiscriminantReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_d: Option<f64> = None;
    let mut min_rel: Option<f64> = None;
    let mut violations = 0;
    let mut accepted = 0;
    while accepted < samples {
        let xi = [
            C64::new(rng.gen_range(-6.0..6.0), rng.gen_range(-2.0..2.0) * mu),
            C64::new(rng.gen_range(-6.0..6.0), rng.gen_range(-2.0..2.0) * mu),
        ];
        let eta = C64::new(rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..20.0));
        if !in_l2mu(xi, eta, mu) {
            continue;
        }
        accepted += 1;
        let v = discriminant_value(m, xi, eta);
        let d = distance_to_ray(v);
        if d <= 0.0 {
            violations += 1;
        }
        min_d = Some(min_d.map_or(d, |x: f64| x.min(d)));
        if v.norm() > 0.0 {
            let rel = d / v.norm();
            min_rel = Some(min_rel.map_or(rel, |x: f64| x.min(rel)));
        }
    }
    DiscriminantReport {
        samples,
        min_distance: min_d,
        min_relative_distance: min_rel,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderProbeReport {
    pub claimed_order: f64,
    pub sup_ratio: f64,
    /// Ratio at the largest bracket value on the grid.
    pub tail_ratio: f64,
    /// Fitted log-log slope of the ratio over the top decade of brackets.
    pub tail_slope: f64,
    pub bounded: bool,
}

/// Real-regime grid: `tau` log-spaced in `[tau_min, tau_max]`, `|xi'|` in a
/// few magnitudes along a fixed direction.
pub fn real_regime_grid(tau_min: f64, tau_max: f64, n_tau: usize) -> Vec<([C64; 2], C64)> {
    let mut out = Vec::new();
    let ltmin = tau_min.ln();
    let ltmax = tau_max.ln();
    for i in 0..n_tau {
        let tau = (ltmin + (ltmax - ltmin) * i as f64 / (n_tau.max(2) - 1) as f64).exp();
        for scale in [0.0, 0.3, 1.0, 3.0] {
            let r = scale * tau.sqrt();
            out.push(([C64::new(0.6 * r, 0.0), C64::new(0.8 * r, 0.0)], C64::new(tau, 0.0)));
        }
    }
    out
}

/// Empirical check of `|a| <= C <xi',tau>^m` on a grid.
pub fn symbol_order_probe<F>(term: F, m: f64, grid: &[([C64; 2], C64)]) -> OrderProbeReport
where
    F: Fn([C64; 2], C64) -> C64,
{
    let mut pts: Vec<(f64, f64)> = grid
        .iter()
        .filter(|(_, tau)| tau.norm() > 1.0 - 1e-12)
        .map(|(xi, tau)| {
            let b = bracket(*xi, *tau);
            (b, term(*xi, *tau).norm() * b.powf(-m))
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sup = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let bmax = pts.last().map(|p| p.0).unwrap_or(1.0);
    let tail: Vec<&(f64, f64)> = pts.iter().filter(|p| p.0 >= bmax / 10.0).collect();
    let slope = if tail.len() >= 2 {
        let n = tail.len() as f64;
        let xs: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = tail.iter().map(|p| p.1.max(1e-300).ln()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    let tail_ratio = pts.last().map(|p| p.1).unwrap_or(0.0);
    OrderProbeReport {
        claimed_order: m,
        sup_ratio: sup,
        tail_ratio,
        tail_slope: slope,
        bounded: sup.is_finite() && slope < 0.05,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{restrict, source_derivatives, LayeredProfile, MetricField};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn flat() -> Restricted {
        restrict(&MetricField::flat(), -0.3, [0.0, 0.0]).unwrap()
    }

    #[test]
    fn flat_roots_at_reference_point() {
        let r = char_roots(&Matrix3::identity(), [c(0.0), c(0.0)], c(4.0), 4.0).unwrap();
        assert_abs_diff_eq!(r.lambda_plus.re, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.lambda_minus.re, -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.mu_plus.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.mu_minus.re, -1.0, epsilon = 1e-15);
        let r = char_roots(&Matrix3::identity(), [c(3.0), c(4.0)], c(11.0), 4.0).unwrap();
        assert_abs_diff_eq!(r.lambda_plus.re, 6.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_normal_coefficient_rejected() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(
            char_roots(&m, [c(0.0), c(0.0)], c(4.0), 4.0),
            Err(ItpError::InvalidMetric(_))
        ));
    }

    #[test]
    fn branch_cut_is_an_error() {
        assert!(contract_sqrt(c(-4.0)).is_err());
        assert_eq!(contract_sqrt(C64::new(-4.0, -1e-30)).unwrap().re > 0.0, true);
    }

    #[test]
    fn denominator_reference_values() {
        let id = Matrix3::identity();
        let d = lopatinskii_denominator(&id, &id, [c(0.0), c(0.0)], c(4.0), 4.0).unwrap();
        assert_abs_diff_eq!(d.re, 2.0, epsilon = 1e-14);
        let d = lopatinskii_denominator(&id, &id, [c(0.0), c(0.0)], c(1.0), 4.0).unwrap();
        assert_abs_diff_eq!(d.re, 1.0, epsilon = 1e-14);
        assert!(matches!(
            lopatinskii_denominator(&id, &id, [c(0.3), c(0.0)], c(2.0), 1.0),
            Err(ItpError::Degenerate { .. })
        ));
    }

    #[test]
    fn first_order_reference_coefficients() {
        let (_, k) = first_order_coefficients(&flat(), [c(0.0), c(0.0)], c(4.0), 4.0).unwrap();
        assert_abs_diff_eq!(k.a1.re, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(k.b1.re, 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(k.a2.re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(k.b2.re, 0.375, epsilon = 1e-15);

        let amp = first_order_amplitudes(1, &flat(), [c(0.0), c(0.0)], c(4.0), 4.0, -0.3, 0.0, [0.0; 2]).unwrap();
        assert_abs_diff_eq!(amp.coeffs_of(Branch::Reflected1)[0].re, -0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(amp.coeffs_of(Branch::FreeAbove1)[0].re, 0.25, epsilon = 1e-15);
        assert!(amp.coeffs_of(Branch::Reflected2).is_empty());

        let amp = first_order_amplitudes(2, &flat(), [c(0.0), c(0.0)], c(4.0), 4.0, -0.3, 0.0, [0.0; 2]).unwrap();
        assert_abs_diff_eq!(amp.coeffs_of(Branch::Reflected2)[0].re, 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(amp.coeffs_of(Branch::FreeAbove2)[0].re, 0.125, epsilon = 1e-15);
        assert!(amp.coeffs_of(Branch::Reflected1).is_empty());
    }

    #[test]
    fn transmission_residuals_vanish_and_detect_perturbation() {
        let r = flat();
        let xi = [c(0.7), c(-0.2)];
        let tau = C64::new(3.0, 2.0);
        let amp = first_order_amplitudes(1, &r, xi, tau, 4.0, -0.3, 0.2, [0.1, 0.4]).unwrap();
        for v in verify_transmission_system(&amp, -0.3) {
            assert!(v < 1e-13, "{v}");
        }
        let (roots, mut k) = first_order_coefficients(&r, xi, tau, 4.0).unwrap();
        k.a2 *= 1.1;
        let bad = amplitudes_from_coefficients(1, roots, &k, amp.frozen);
        let res = verify_transmission_system(&bad, -0.3);
        assert!(res[0] < 1e-13 && res[1] < 1e-13);
        // A2 multiplies both boundary-trace terms with the same exponential,
        // so only the flux coupling sees it.
        assert!(res[4] < 1e-13);
        assert!(res[5] > 1e-3, "{res:?}");
    }

    #[test]
    fn free_branches_are_the_fundamental_solution_parts() {
        let r = flat();
        let xi = [c(1.0), c(0.5)];
        let tau = c(2.0);
        let amp = first_order_amplitudes(1, &r, xi, tau, 4.0, -0.3, 0.0, [0.0; 2]).unwrap();
        let (_, k) = first_order_coefficients(&r, xi, tau, 4.0).unwrap();
        assert_eq!(amp.coeffs_of(Branch::FreeAbove1)[0], k.a1);
        let amp = first_order_amplitudes(2, &r, xi, tau, 4.0, -0.3, 0.0, [0.0; 2]).unwrap();
        assert_eq!(amp.coeffs_of(Branch::FreeBelow2)[0], k.b1);
        // Flat free symbol 1 / (2 sqrt(|xi|^2 + tau)).
        let want = 1.0 / (2.0 * (1.25f64 + 2.0).sqrt());
        assert_abs_diff_eq!(k.a1.re, want, epsilon = 1e-15);
    }

    #[test]
    fn flat_metric_has_no_second_order_terms() {
        let g = MetricField::flat();
        let r = restrict(&g, -0.4, [0.0, 0.0]).unwrap();
        let d = source_derivatives(&g, -0.4, [0.0, 0.0]).unwrap();
        for ell in [1, 2] {
            let (amp, sol) =
                second_order_amplitudes(ell, &r, &d, [c(0.4), c(0.1)], c(3.0), 4.0, -0.4, 0.0, [0.0; 2]).unwrap();
            assert!(sol.e.iter().flatten().all(|v| v.norm() == 0.0));
            assert!(amp.coeffs.iter().flatten().all(|v| v.norm() == 0.0));
        }
    }

    fn layered_amps(eps: f64, ell: u8) -> (AmplitudeSet, AmplitudeSet, SourceDerivatives, Matrix3<f64>) {
        let g = LayeredProfile::Linear { eps }.into_metric();
        let y3 = -0.35;
        let r = restrict(&g, y3, [0.0, 0.0]).unwrap();
        let d = source_derivatives(&g, y3, [0.0, 0.0]).unwrap();
        let xi = [c(0.8), c(-0.3)];
        let tau = C64::new(5.0, 1.5);
        let a1 = first_order_amplitudes(ell, &r, xi, tau, 3.0, y3, 0.1, [0.2, 0.0]).unwrap();
        let (a2, _) = second_order_amplitudes(ell, &r, &d, xi, tau, 3.0, y3, 0.1, [0.2, 0.0]).unwrap();
        (a1, a2, d, r.m1)
    }

    #[test]
    fn second_order_scales_linearly_with_perturbation() {
        for ell in [1, 2] {
            let (_, big, _, _) = layered_amps(1e-3, ell);
            let (_, small, _, _) = layered_amps(1e-4, ell);
            for b in Branch::ALL {
                for (x, y) in big.coeffs_of(b).iter().zip(small.coeffs_of(b)) {
                    if x.norm() > 1e-14 {
                        let ratio = (x / y).norm();
                        assert!((ratio - 10.0).abs() < 0.05, "{b:?}: {ratio}");
                    }
                }
            }
        }
    }

    #[test]
    fn second_order_solves_ode_and_boundary_system() {
        for ell in [1, 2] {
            let (a1, a2, d, m1) = layered_amps(0.2, ell);
            for v in verify_transmission_system(&a2, a2.frozen.y3) {
                assert!(v < 1e-10, "{v}");
            }
            for x3 in [-0.9, -0.35, -0.2, 0.0] {
                let res = second_order_ode_residual(&a1, &a2, &d, &m1, x3);
                assert!(res < 1e-10, "ell {ell} x3 {x3}: {res}");
            }
            for l in 0..3 {
                assert_eq!(a2.order_label(l), l as i32 - 2);
            }
        }
    }

    #[test]
    fn l2mu_membership() {
        for mu in [0.1, 1.0, 7.0] {
            assert!(in_l2mu([c(0.3), c(-1.0)], C64::new(1.0, -1.0), mu));
        }
        let xi = [c(1.0), c(0.5)];
        let eta_re: f64 = 2.0;
        let mu = 0.5;
        let on_edge = C64::new(eta_re, mu * (eta_re.abs() + 1.25));
        assert!(!in_l2mu(xi, on_edge, mu));
        assert!(!in_l2mu([C64::new(0.0, 1.0), c(0.0)], c(0.0), 1.0));
    }

    #[test]
    fn discriminant_ray_examples() {
        let id = Matrix3::identity();
        let v = discriminant_value(&id, [c(1.0), c(2.0)], c(0.0));
        assert_abs_diff_eq!(v.re, -20.0, epsilon = 1e-14);
        assert!(distance_to_ray(v) > 0.0);
        let v = discriminant_value(&id, [c(1.0), c(0.0)], c(3.0));
        assert!(v.im.abs() > 0.0);
        let rep = discriminant_ray_check(&id, 0.25, 0, 1);
        assert_eq!(rep.samples, 0);
        assert!(rep.min_distance.is_none());
        let rep = discriminant_ray_check(&id, 0.25, 2000, 7);
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn order_probe_examples() {
        let grid = real_regime_grid(1.0, 1e6, 40);
        let r = flat();
        let a1 = |xi: [C64; 2], tau: C64| first_order_coefficients(&r, xi, tau, 4.0).unwrap().1.a1;
        let rep = symbol_order_probe(a1, -1.0, &grid);
        assert!(rep.bounded);
        // sup is attained at tau = 1, xi = 0: sqrt(2) / 2; the limit is 1/2.
        assert_abs_diff_eq!(rep.sup_ratio, 0.5f64.sqrt(), epsilon = 1e-12);
        assert!((rep.tail_ratio - 0.5).abs() < 1e-3);

        let rep = symbol_order_probe(|_, _| c(1.0), -1.0, &grid);
        assert!(!rep.bounded);

        let prod = |xi: [C64; 2], tau: C64| {
            let k = first_order_coefficients(&r, xi, tau, 4.0).unwrap().1;
            k.a2 * k.b1
        };
        assert!(symbol_order_probe(prod, -2.0, &grid).bounded);
        for pick in 0..4 {
            let f = move |xi: [C64; 2], tau: C64| {
                let k = first_order_coefficients(&r, xi, tau, 4.0).unwrap().1;
                [k.a1, k.b1, k.a2, k.b2][pick]
            };
            assert!(symbol_order_probe(f, -1.0, &grid).bounded);
        }
    }

    fn random_restricted(seed: [f64; 6]) -> (Restricted, SourceDerivatives) {
        let g = LayeredProfile::Affine {
            base: [
                [1.0 + 0.3 * seed[0], 0.1 * seed[1], 0.2 * seed[2]],
                [0.1 * seed[1], 1.1, -0.15 * seed[3]],
                [0.2 * seed[2], -0.15 * seed[3], 1.2 + 0.2 * seed[4]],
            ],
            slope: [
                [0.05, 0.01, 0.03 * seed[5]],
                [0.01, -0.04, 0.02],
                [0.03 * seed[5], 0.02, 0.1 * seed[0]],
            ],
            log_j_slope: 0.2 * seed[1],
        }
        .into_metric();
        let y3 = -0.1 - 0.3 * seed[2].abs();
        (
            restrict(&g, y3, [0.0, 0.0]).unwrap(),
            source_derivatives(&g, y3, [0.0, 0.0]).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn vieta_identities(s in proptest::array::uniform6(-1.0..1.0f64), x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, tr in 0.1..50.0f64, ti in -50.0..50.0f64, k in 0.2..8.0f64) {
            let (r, _) = random_restricted(s);
            let xi = [c(x1), c(x2)];
            let tau = C64::new(tr, ti);
            let roots = char_roots(&r.m1, xi, tau, k).unwrap();
            let cc = contract(&r.m1, xi);
            let want = -2.0 * I * cc.r / cc.m33;
            let scale = roots.lambda_plus.norm().max(1.0);
            prop_assert!((roots.lambda_plus + roots.lambda_minus - want).norm() < 1e-12 * scale);
            prop_assert!((roots.mu_plus + roots.mu_minus - want).norm() < 1e-12 * scale);
            let prod = -(cc.q + tau) / cc.m33;
            prop_assert!((roots.lambda_plus * roots.lambda_minus - prod).norm() < 1e-12 * prod.norm().max(1.0));
            prop_assert!((roots.lambda_plus - roots.lambda_minus).re > 0.0);
            prop_assert!((roots.mu_plus - roots.mu_minus).re > 0.0);
        }

        #[test]
        fn transmission_residuals_random(s in proptest::array::uniform6(-1.0..1.0f64), x1 in -4.0..4.0f64, x2 in -4.0..4.0f64, tr in 0.1..40.0f64, ti in -40.0..40.0f64, ell in 1u8..3) {
            let (r, d) = random_restricted(s);
            let xi = [c(x1), c(x2)];
            let tau = C64::new(tr, ti);
            let y3 = r.m1[(2,2)] * 0.0 - 0.25;
            let a = first_order_amplitudes(ell, &r, xi, tau, 3.0, y3, 0.0, [0.0; 2]).unwrap();
            for v in verify_transmission_system(&a, y3) { prop_assert!(v < 1e-12); }
            let (b, _) = second_order_amplitudes(ell, &r, &d, xi, tau, 3.0, y3, 0.0, [0.0; 2]).unwrap();
            for v in verify_transmission_system(&b, y3) { prop_assert!(v < 1e-10); }
        }
    }
}
