//! Physical constants, flattened-coordinate metric data and model domains.

use std::fmt;
use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{ItpError, Result};

/// Diffusion contrast between the two equations of the transmission problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contrast {
    k: f64,
}

impl Contrast {
    pub fn new(k: f64) -> Result<Self> {
        if !k.is_finite() || k <= 0.0 || k == 1.0 {
            return Err(ItpError::InvalidContrast(k));
        }
        if k < 1.0 {
            log::warn!("contrast k = {k} < 1: accepted, the construction only needs k != 1");
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

impl<'de> Deserialize<'de> for Contrast {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let k = f64::deserialize(d)?;
        Contrast::new(k).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Flat,
    Layered,
    ChartInduced,
}

type MatField = Arc<dyn Fn(&[f64; 3]) -> Matrix3<f64> + Send + Sync>;
type ScalarField = Arc<dyn Fn(&[f64; 3]) -> f64 + Send + Sync>;

/// Coefficients `M = J J^T` and volume factor of the flattened operator.
///
/// Layered metrics also carry analytic normal derivatives, which the
/// second-order amplitudes and the truncation probe need.
#[derive(Clone)]
pub struct MetricField {
    kind: MetricKind,
    m: MatField,
    jdet: ScalarField,
    dm3: Option<MatField>,
    djdet3: Option<ScalarField>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("kind", &self.kind)
            .field("has_derivatives", &self.dm3.is_some())
            .finish()
    }
}

/// Named smooth layered profiles usable from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case")]
pub enum LayeredProfile {
    /// `m33 = 1 + a x3^2`, all other entries as the identity.
    Quadratic { a: f64 },
    /// `m33 = 1 + eps x3`.
    Linear { eps: f64 },
    /// `M = base + x3 slope`, volume factor `exp(c x3)`.
    Affine {
        base: [[f64; 3]; 3],
        slope: [[f64; 3]; 3],
        log_j_slope: f64,
    },
}

impl LayeredProfile {
    pub fn into_metric(self) -> MetricField {
        match self {
            LayeredProfile::Quadratic { a } => MetricField::layered(
                move |z| diag33(1.0 + a * z * z),
                move |z| diag33_only(2.0 * a * z),
                |_| 1.0,
                |_| 0.0,
            ),
            LayeredProfile::Linear { eps } => MetricField::layered(
                move |z| diag33(1.0 + eps * z),
                move |_| diag33_only(eps),
                |_| 1.0,
                |_| 0.0,
            ),
            LayeredProfile::Affine {
                base,
                slope,
                log_j_slope: c,
            } => {
                let b = Matrix3::from_fn(|i, j| 0.5 * (base[i][j] + base[j][i]));
                let s = Matrix3::from_fn(|i, j| 0.5 * (slope[i][j] + slope[j][i]));
                MetricField::layered(
                    move |z| b + s * z,
                    move |_| s,
                    move |z| (c * z).exp(),
                    move |z| c * (c * z).exp(),
                )
            }
        }
    }
}

fn diag33(m33: f64) -> Matrix3<f64> {
    let mut m = Matrix3::identity();
    m[(2, 2)] = m33;
    m
}

fn diag33_only(v: f64) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    m[(2, 2)] = v;
    m
}

impl MetricField {
    pub fn flat() -> Self {
        Self {
            kind: MetricKind::Flat,
            m: Arc::new(|_| Matrix3::identity()),
            jdet: Arc::new(|_| 1.0),
            dm3: Some(Arc::new(|_| Matrix3::zeros())),
            djdet3: Some(Arc::new(|_| 0.0)),
        }
    }

    /// Coefficients depending on the normal coordinate only, with their
    /// analytic x3-derivatives.
    pub fn layered<M, DM, J, DJ>(m: M, dm: DM, j: J, dj: DJ) -> Self
    where
        M: Fn(f64) -> Matrix3<f64> + Send + Sync + 'static,
        DM: Fn(f64) -> Matrix3<f64> + Send + Sync + 'static,
        J: Fn(f64) -> f64 + Send + Sync + 'static,
        DJ: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: MetricKind::Layered,
            m: Arc::new(move |p| m(p[2])),
            jdet: Arc::new(move |p| j(p[2])),
            dm3: Some(Arc::new(move |p| dm(p[2]))),
            djdet3: Some(Arc::new(move |p| dj(p[2]))),
        }
    }

    /// Metric induced by a flattening map with Jacobian `jac(x) = grad_x xi`.
    /// No derivative data is attached.
    pub fn chart_induced<F>(jac: F) -> Self
    where
        F: Fn(&[f64; 3]) -> Matrix3<f64> + Send + Sync + Clone + 'static,
    {
        let jac2 = jac.clone();
        Self {
            kind: MetricKind::ChartInduced,
            m: Arc::new(move |p| {
                let j = jac(p);
                j * j.transpose()
            }),
            jdet: Arc::new(move |p| 1.0 / jac2(p).determinant()),
            dm3: None,
            djdet3: None,
        }
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn is_flat(&self) -> bool {
        self.kind == MetricKind::Flat
    }

    pub fn m(&self, p: &[f64; 3]) -> Matrix3<f64> {
        (self.m)(p)
    }

    pub fn jdet(&self, p: &[f64; 3]) -> f64 {
        (self.jdet)(p)
    }

    pub fn dm3(&self, p: &[f64; 3]) -> Option<Matrix3<f64>> {
        self.dm3.as_ref().map(|f| f(p))
    }

    pub fn djdet3(&self, p: &[f64; 3]) -> Option<f64> {
        self.djdet3.as_ref().map(|f| f(p))
    }

    pub fn has_derivatives(&self) -> bool {
        self.dm3.is_some() && self.djdet3.is_some()
    }

    /// True when the tangential block is a multiple of the identity and the
    /// mixed entries vanish, so symbols depend on |xi'| only.
    pub fn is_radial_at(&self, p: &[f64; 3]) -> bool {
        let m = self.m(p);
        m[(0, 1)].abs() < 1e-14
            && m[(0, 2)].abs() < 1e-14
            && m[(1, 2)].abs() < 1e-14
            && (m[(0, 0)] - m[(1, 1)]).abs() < 1e-14
    }

    /// Checks symmetry, positive definiteness and a positive volume factor.
    pub fn validate_at(&self, p: &[f64; 3]) -> Result<()> {
        let m = self.m(p);
        check_spd(&m, p)?;
        let j = self.jdet(p);
        if !(j > 0.0 && j.is_finite()) {
            return Err(ItpError::InvalidMetric(format!(
                "volume factor {j} not positive at {p:?}"
            )));
        }
        Ok(())
    }
}

fn check_spd(m: &Matrix3<f64>, p: &[f64; 3]) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(ItpError::InvalidMetric(format!("non-finite entry at {p:?}")));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(ItpError::InvalidMetric(format!("non-symmetric M at {p:?}")));
    }
    match m.cholesky() {
        Some(c) if c.l().diagonal().min() > 1e-14 => Ok(()),
        _ => Err(ItpError::InvalidMetric(format!("M not positive definite at {p:?}"))),
    }
}

/// Metric frozen at the source depth and at the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Restricted {
    /// `M` at `x3 = y3`.
    pub m1: Matrix3<f64>,
    /// `M` at `x3 = 0`.
    pub m0: Matrix3<f64>,
    /// Volume factor at the source point.
    pub j_y: f64,
}

/// Normal derivatives at the source depth, needed at second order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceDerivatives {
    pub dm1: Matrix3<f64>,
    /// `d(log J)/dx3` at the source depth.
    pub dlog_j: f64,
}

pub fn restrict(metric: &MetricField, y3: f64, x_t: [f64; 2]) -> Result<Restricted> {
    if y3 > 0.0 {
        return Err(ItpError::Geometry(format!("source depth y3 = {y3} > 0")));
    }
    let py = [x_t[0], x_t[1], y3];
    let p0 = [x_t[0], x_t[1], 0.0];
    metric.validate_at(&py)?;
    metric.validate_at(&p0)?;
    Ok(Restricted {
        m1: metric.m(&py),
        m0: metric.m(&p0),
        j_y: metric.jdet(&py),
    })
}

pub fn source_derivatives(metric: &MetricField, y3: f64, x_t: [f64; 2]) -> Result<SourceDerivatives> {
    let py = [x_t[0], x_t[1], y3];
    match (metric.dm3(&py), metric.djdet3(&py)) {
        (Some(dm1), Some(dj)) => Ok(SourceDerivatives {
            dm1,
            dlog_j: dj / metric.jdet(&py),
        }),
        _ => Err(ItpError::Config("metric carries no x3-derivative data".into())),
    }
}

/// Point of the closed lower half space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpacePoint {
    pub x_t: [f64; 2],
    pub x3: f64,
}

impl HalfSpacePoint {
    pub fn new(x_t: [f64; 2], x3: f64) -> Result<Self> {
        if x3 > 0.0 || !x3.is_finite() {
            return Err(ItpError::Geometry(format!("x3 = {x3} outside the half space")));
        }
        Ok(Self { x_t, x3 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x_t[0], self.x_t[1], self.x3]
    }
}

/// Model slab `(-lateral, lateral) x (-depth, 0)` in the (x1, x3) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabDomain {
    pub depth: f64,
    pub lateral: f64,
    pub nx: usize,
    pub nz: usize,
}

impl SlabDomain {
    pub fn new(depth: f64, lateral: f64, nx: usize, nz: usize) -> Result<Self> {
        if !(depth > 0.0 && lateral > 0.0) || nx == 0 || nz == 0 {
            return Err(ItpError::Geometry(
                "slab extents must be positive with nonzero resolution".into(),
            ));
        }
        Ok(Self { depth, lateral, nx, nz })
    }

    pub fn hx(&self) -> f64 {
        2.0 * self.lateral / self.nx as f64
    }

    pub fn hz(&self) -> f64 {
        self.depth / self.nz as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..=self.nx).map(|i| -self.lateral + i as f64 * self.hx()).collect()
    }

    pub fn z_nodes(&self) -> Vec<f64> {
        (0..=self.nz).map(|i| -self.depth + i as f64 * self.hz()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_metric_is_identity() {
        let g = MetricField::flat();
        let p = [0.3, -1.2, -0.7];
        assert_eq!(g.m(&p), Matrix3::identity());
        assert_eq!(g.jdet(&p), 1.0);
        let r = restrict(&g, -0.4, [1.0, 2.0]).unwrap();
        assert_eq!(r.m1, Matrix3::identity());
        assert_eq!(r.m0, Matrix3::identity());
        assert_eq!(r.j_y, 1.0);
    }

    #[test]
    fn quadratic_profile_restriction() {
        let g = LayeredProfile::Quadratic { a: 1.0 }.into_metric();
        let r = restrict(&g, -1.0, [0.0, 0.0]).unwrap();
        assert_eq!(r.m1[(2, 2)], 2.0);
        assert_eq!(r.m0[(2, 2)], 1.0);
    }

    #[test]
    fn degenerate_metric_rejected() {
        let g = MetricField::layered(|_| Matrix3::zeros(), |_| Matrix3::zeros(), |_| 1.0, |_| 0.0);
        assert!(matches!(
            restrict(&g, -0.5, [0.0, 0.0]),
            Err(ItpError::InvalidMetric(_))
        ));
    }

    #[test]
    fn contrast_validation() {
        assert!(Contrast::new(1.0).is_err());
        assert!(Contrast::new(-2.0).is_err());
        assert!(Contrast::new(0.5).is_ok());
        assert_eq!(Contrast::new(4.0).unwrap().k(), 4.0);
    }

    #[test]
    fn chart_induced_metric() {
        let g = MetricField::chart_induced(|_: &[f64; 3]| Matrix3::from_diagonal_element(2.0));
        let p = [0.0, 0.0, -0.1];
        assert!((g.m(&p)[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((g.jdet(&p) - 0.125).abs() < 1e-15);
        assert!(!g.has_derivatives());
    }

    fn affine_profile() -> MetricField {
        LayeredProfile::Affine {
            base: [[1.2, 0.1, 0.2], [0.1, 0.9, -0.1], [0.2, -0.1, 1.5]],
            slope: [[0.05, 0.0, 0.02], [0.0, -0.03, 0.01], [0.02, 0.01, 0.1]],
            log_j_slope: 0.3,
        }
        .into_metric()
    }

    proptest! {
        #[test]
        fn registered_metrics_are_elliptic(x1 in -2.0..2.0f64, x2 in -2.0..2.0f64, x3 in -2.0..0.0f64) {
            let p = [x1, x2, x3];
            for g in [MetricField::flat(), LayeredProfile::Quadratic { a: 1.0 }.into_metric(), affine_profile()] {
                let m = g.m(&p);
                let ev = m.symmetric_eigenvalues();
                prop_assert!(ev.min() > 0.0);
                prop_assert!(g.jdet(&p) > 0.0);
            }
        }

        #[test]
        fn flat_restriction_is_idempotent(y3 in -3.0..0.0f64, a in -5.0..5.0f64, b in -5.0..5.0f64) {
            let g = MetricField::flat();
            let r1 = restrict(&g, y3, [a, b]).unwrap();
            let r2 = restrict(&g, y3, [b, a]).unwrap();
            prop_assert_eq!(r1, r2);
        }
    }
}
