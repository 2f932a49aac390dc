//! Global parametrix on the model slab: interior fundamental solutions and
//! boundary-chart kernels patched with a partition of unity, with their
//! commutator residuals and boundary defects.

pub mod interval;
pub mod partition;

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ItpError, Result};
use crate::geometry::{HalfSpacePoint, MetricField};
use crate::kernels::{BranchSelection, ContourSpec, Derivative, Field, KernelSample, LeadingKernel, SpaceTimeKernel};
pub use partition::{smooth_step, Chart, Jet, PartitionCheck, PartitionOfUnity, PartitionSpec};

/// `H(t-s) (4 pi kappa (t-s))^{-3/2} exp(-|x-y|^2 / (4 kappa (t-s)))`.
pub fn heat_fundamental(x: [f64; 3], t: f64, y: [f64; 3], s: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(ItpError::Config(format!("diffusivity {kappa} must be positive")));
    }
    let lag = t - s;
    if lag <= 0.0 {
        return Ok(0.0);
    }
    let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((4.0 * PI * kappa * lag).powf(-1.5) * (-d2 / (4.0 * kappa * lag)).exp())
}

fn heat_derivative(x: [f64; 3], lag: f64, y: [f64; 3], kappa: f64, deriv: Derivative) -> f64 {
    let v = heat_fundamental(x, lag, y, 0.0, kappa).unwrap_or(0.0);
    match deriv {
        Derivative::None => v,
        Derivative::Normal => -(x[2] - y[2]) / (2.0 * kappa * lag) * v,
        Derivative::Lateral(j) => -(x[j] - y[j]) / (2.0 * kappa * lag) * v,
    }
}

/// One chart's kernel `(G_ell, H_ell)` in slab coordinates.
pub trait ChartKernel: Send + Sync {
    fn eval(&self, ell: u8, field: Field, x: [f64; 3], lag: f64, y: [f64; 3], deriv: Derivative) -> Result<f64>;
}

/// Interior fundamental solutions; the two fields decouple away from the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FundamentalPair {
    pub k: f64,
}

impl FundamentalPair {
    pub fn g(&self, x: [f64; 3], t: f64, y: [f64; 3], s: f64) -> f64 {
        heat_fundamental(x, t, y, s, 1.0).unwrap_or(0.0)
    }

    pub fn h(&self, x: [f64; 3], t: f64, y: [f64; 3], s: f64) -> f64 {
        heat_fundamental(x, t, y, s, self.k).unwrap_or(0.0)
    }
}

impl ChartKernel for FundamentalPair {
    fn eval(&self, ell: u8, field: Field, x: [f64; 3], lag: f64, y: [f64; 3], deriv: Derivative) -> Result<f64> {
        if lag <= 0.0 {
            return Ok(0.0);
        }
        Ok(match (ell, field) {
            (1, Field::First) => heat_derivative(x, lag, y, 1.0, deriv),
            (2, Field::Second) => heat_derivative(x, lag, y, self.k, deriv),
            _ => 0.0,
        })
    }
}

/// Flat half-space kernel for the boundary `x3 = top` (or `x3 = bottom`,
/// by reflection).
#[derive(Debug, Clone)]
pub struct HalfSpaceChart {
    pub k: f64,
    pub spec: ContourSpec,
    /// Boundary plane position.
    pub plane: f64,
    /// `true` when the domain lies below the plane.
    pub below: bool,
}

impl HalfSpaceChart {
    fn to_chart(&self, p: [f64; 3]) -> Result<HalfSpacePoint> {
        let z = if self.below {
            p[2] - self.plane
        } else {
            self.plane - p[2]
        };
        HalfSpacePoint::new([p[0], p[1]], z.min(0.0))
    }
}

impl ChartKernel for HalfSpaceChart {
    fn eval(&self, ell: u8, field: Field, x: [f64; 3], lag: f64, y: [f64; 3], deriv: Derivative) -> Result<f64> {
        if lag <= 0.0 {
            return Ok(0.0);
        }
        let mut kern = LeadingKernel::flat(ell, field, BranchSelection::All, self.k);
        kern.spec = self.spec;
        let v = kern.eval(self.to_chart(x)?, lag, self.to_chart(y)?, 0.0, deriv)?;
        let sign = if matches!(deriv, Derivative::Normal) && !self.below {
            -1.0
        } else {
            1.0
        };
        Ok(sign * v.re)
    }
}

/// `sum_j psi_j(x3) K_j(x, t; y, s) phi_j(y3)` for both fields and sources.
#[derive(Clone)]
pub struct GlobalParametrix {
    pub partition: PartitionOfUnity,
    pub k: f64,
    kernels: Vec<Arc<dyn ChartKernel>>,
}

impl std::fmt::Debug for GlobalParametrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalParametrix")
            .field("partition", &self.partition)
            .field("k", &self.k)
            .finish()
    }
}

/// Pairs every chart of the partition with its kernel.
pub fn assemble_parametrix(
    partition: PartitionOfUnity,
    k: f64,
    interior: Arc<dyn ChartKernel>,
    boundary: Vec<(Chart, Arc<dyn ChartKernel>)>,
) -> Result<GlobalParametrix> {
    let mut kernels = Vec::with_capacity(partition.len());
    for chart in &partition.charts {
        if *chart == Chart::Interior {
            kernels.push(interior.clone());
        } else {
            let found = boundary
                .iter()
                .find(|(c, _)| c == chart)
                .ok_or_else(|| ItpError::Config(format!("no kernel supplied for chart {chart:?}")))?;
            kernels.push(found.1.clone());
        }
    }
    Ok(GlobalParametrix { partition, k, kernels })
}

/// Standard assembly on the slab `[-depth, 0]` with flat half-space kernels.
pub fn flat_slab_parametrix(partition: PartitionOfUnity, k: f64, spec: ContourSpec) -> Result<GlobalParametrix> {
    let top: Arc<dyn ChartKernel> = Arc::new(HalfSpaceChart {
        k,
        spec,
        plane: partition.b,
        below: true,
    });
    let bottom: Arc<dyn ChartKernel> = Arc::new(HalfSpaceChart {
        k,
        spec,
        plane: partition.a,
        below: false,
    });
    assemble_parametrix(
        partition,
        k,
        Arc::new(FundamentalPair { k }),
        vec![(Chart::Upper, top), (Chart::Lower, bottom)],
    )
}

/// Negative control: boundary charts carry the free fundamental solutions.
pub fn fundamental_only_parametrix(partition: PartitionOfUnity, k: f64) -> Result<GlobalParametrix> {
    let f: Arc<dyn ChartKernel> = Arc::new(FundamentalPair { k });
    assemble_parametrix(
        partition,
        k,
        f.clone(),
        vec![(Chart::Upper, f.clone()), (Chart::Lower, f)],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryDefect {
    /// `max |G - H|` on the boundary points.
    pub trace: f64,
    /// `max |d_nu G - k d_nu H|`.
    pub flux: f64,
    /// Magnitude of `G` on the same points, for scale.
    pub scale: f64,
}

impl GlobalParametrix {
    pub fn eval(
        &self,
        ell: u8,
        field: Field,
        x: [f64; 3],
        t: f64,
        y: [f64; 3],
        s: f64,
        deriv: Derivative,
    ) -> Result<f64> {
        let lag = t - s;
        if lag <= 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (j, kern) in self.kernels.iter().enumerate() {
            let phi = self.partition.phi(j, y[2]);
            if phi == 0.0 {
                continue;
            }
            let psi = self.partition.psi(j, x[2]);
            let normal = matches!(deriv, Derivative::Normal) && psi.d1 != 0.0;
            if psi.v == 0.0 && !normal {
                continue;
            }
            let mut term = 0.0;
            if psi.v != 0.0 {
                term += psi.v * kern.eval(ell, field, x, lag, y, deriv)?;
            }
            if normal {
                term += psi.d1 * kern.eval(ell, field, x, lag, y, Derivative::None)?;
            }
            acc += phi * term;
        }
        Ok(acc)
    }

    /// `(d_t - kappa Laplacian)` of the parametrix away from the diagonal:
    /// `-kappa sum_j phi_j(y) (psi_j'' K_j + 2 psi_j' d3 K_j)`.
    pub fn residual(&self, ell: u8, field: Field, x: [f64; 3], t: f64, y: [f64; 3], s: f64) -> Result<f64> {
        let lag = t - s;
        if lag <= 0.0 {
            return Ok(0.0);
        }
        let kappa = if field == Field::First { 1.0 } else { self.k };
        let mut acc = 0.0;
        for (j, kern) in self.kernels.iter().enumerate() {
            let phi = self.partition.phi(j, y[2]);
            let psi = self.partition.psi(j, x[2]);
            if phi == 0.0 || (psi.d1 == 0.0 && psi.d2 == 0.0) {
                continue;
            }
            let k0 = kern.eval(ell, field, x, lag, y, Derivative::None)?;
            let k3 = kern.eval(ell, field, x, lag, y, Derivative::Normal)?;
            acc += phi * (psi.d2 * k0 + 2.0 * psi.d1 * k3);
        }
        Ok(-kappa * acc)
    }

    /// Transmission defects on the boundary planes at lateral positions `xs`.
    pub fn boundary_defect(&self, ell: u8, xs: &[[f64; 2]], t: f64, y: [f64; 3], s: f64) -> Result<BoundaryDefect> {
        let mut out = BoundaryDefect {
            trace: 0.0,
            flux: 0.0,
            scale: 0.0,
        };
        let mut planes = Vec::new();
        if self.partition.charts.contains(&Chart::Upper) {
            planes.push((self.partition.b, 1.0));
        }
        if self.partition.charts.contains(&Chart::Lower) {
            planes.push((self.partition.a, -1.0));
        }
        for (z, nu) in planes {
            for xt in xs {
                let x = [xt[0], xt[1], z];
                let g = self.eval(ell, Field::First, x, t, y, s, Derivative::None)?;
                let h = self.eval(ell, Field::Second, x, t, y, s, Derivative::None)?;
                let dg = nu * self.eval(ell, Field::First, x, t, y, s, Derivative::Normal)?;
                let dh = nu * self.eval(ell, Field::Second, x, t, y, s, Derivative::Normal)?;
                out.trace = out.trace.max((g - h).abs());
                out.flux = out.flux.max((dg - self.k * dh).abs());
                out.scale = out.scale.max(g.abs()).max(dg.abs());
            }
        }
        Ok(out)
    }

    /// Samples an entry (or its derivative) on points x lags.
    pub fn sample(
        &self,
        ell: u8,
        field: Field,
        deriv: Derivative,
        points: &[([f64; 3], [f64; 3])],
        lags: &[f64],
    ) -> Result<SpaceTimeKernel> {
        self.sample_with(points, lags, |x, lag, y| self.eval(ell, field, x, lag, y, 0.0, deriv))
    }

    fn sample_with<F>(&self, points: &[([f64; 3], [f64; 3])], lags: &[f64], f: F) -> Result<SpaceTimeKernel>
    where
        F: Fn([f64; 3], f64, [f64; 3]) -> Result<f64> + Sync,
    {
        let jobs: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|p| (0..lags.len()).map(move |l| (p, l)))
            .collect();
        let vals: Vec<Result<f64>> = jobs
            .par_iter()
            .map(|(p, l)| f(points[*p].0, lags[*l], points[*p].1))
            .collect();
        let mut samples = Vec::with_capacity(jobs.len());
        for ((p, l), v) in jobs.iter().zip(vals) {
            let v = v?;
            samples.push(KernelSample {
                x: points[*p].0,
                t: lags[*l],
                y: points[*p].1,
                s: 0.0,
                re: v,
                im: 0.0,
            });
        }
        Ok(SpaceTimeKernel {
            samples,
            causal: lags.iter().any(|l| *l < 0.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub residual: SpaceTimeKernel,
    pub deltas: Vec<f64>,
    /// `sup_{0 < t-s < delta} |R|` per delta.
    pub sups: Vec<f64>,
    /// Fitted exponent of `sup ~ delta^rate`; infinite when every sup vanishes.
    pub rate: f64,
}

/// Residual block entry on the sample grid together with its flatness at `t = s`.
pub fn parametrix_residual(
    p: &GlobalParametrix,
    metric: &MetricField,
    ell: u8,
    field: Field,
    points: &[([f64; 3], [f64; 3])],
    lags: &[f64],
) -> Result<ResidualReport> {
    if !metric.is_flat() {
        return Err(ItpError::Config("slab assembly supports the flat metric only".into()));
    }
    if lags.is_empty() || points.is_empty() {
        return Err(ItpError::EmptyGrid);
    }
    let residual = p.sample_with(points, lags, |x, lag, y| p.residual(ell, field, x, lag, y, 0.0))?;
    let mut deltas: Vec<f64> = lags.iter().cloned().filter(|l| *l > 0.0).collect();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let sups: Vec<f64> = deltas
        .iter()
        .map(|d| {
            residual
                .samples
                .iter()
                .filter(|s| s.t > 0.0 && s.t <= *d)
                .map(|s| s.magnitude())
                .fold(0.0, f64::max)
        })
        .collect();
    let rate = if sups.iter().all(|s| *s == 0.0) {
        f64::INFINITY
    } else {
        crate::levi::log_log_slope(&deltas, &sups)
    };
    Ok(ResidualReport {
        residual,
        deltas,
        sups,
        rate,
    })
}

/// Tensor bump `prod_i b(x_i / R)` with `b(r) = exp(1 - 1 / (1 - r^2))`.
pub fn tensor_bump(r: f64, x: f64) -> f64 {
    let u = x / r;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialConditionProbe {
    pub radius: f64,
    pub deltas: Vec<f64>,
    pub errors: Vec<f64>,
    pub rate: f64,
}

/// `sup |Gamma(s + delta, s) f - f|` for the tensor bump of radius `r`,
/// using the separability of the heat kernel. The 1-D convolutions use a
/// fine trapezoid grid that resolves the kernel; the sup runs over a
/// tensor grid with `m` points per axis.
pub fn heat_initial_condition_probe(r: f64, deltas: &[f64], m: usize) -> Result<InitialConditionProbe> {
    if !(r > 0.0) || deltas.iter().any(|d| !(*d > 0.0)) || m < 2 {
        return Err(ItpError::Config("probe radius, lags and grid must be positive".into()));
    }
    let eval: Vec<f64> = (0..m).map(|i| -r + 2.0 * r * i as f64 / (m - 1) as f64).collect();
    let base: Vec<f64> = eval.iter().map(|x| tensor_bump(r, *x)).collect();
    let mut errors = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let sig = (2.0 * d).sqrt();
        let hq = sig / 8.0;
        let reach = 12.0 * sig;
        let conv: Vec<f64> = eval
            .iter()
            .map(|x| {
                let n = (reach / hq).ceil() as i64;
                let mut acc = 0.0;
                for j in -n..=n {
                    let z = j as f64 * hq;
                    acc += (-z * z / (4.0 * d)).exp() * tensor_bump(r, x - z);
                }
                acc * hq / (4.0 * PI * d).sqrt()
            })
            .collect();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let (ca, fa) = (conv[a] * conv[b], base[a] * base[b]);
                for c in 0..m {
                    worst = worst.max((ca * conv[c] - fa * base[c]).abs());
                }
            }
        }
        errors.push(worst);
    }
    let rate = crate::levi::log_log_slope(deltas, &errors);
    Ok(InitialConditionProbe {
        radius: r,
        deltas: deltas.to_vec(),
        errors,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SlabDomain;
    use crate::kernels::{gaussian_bound_fit, DistanceMode};

    fn slab_parametrix() -> GlobalParametrix {
        let slab = SlabDomain::new(1.0, 1.0, 8, 8).unwrap();
        let part = PartitionOfUnity::for_slab(&slab, 3, PartitionSpec::default()).unwrap();
        flat_slab_parametrix(
            part,
            4.0,
            ContourSpec {
                tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn heat_fundamental_values() {
        assert_eq!(heat_fundamental([0.0; 3], 0.0, [0.0; 3], 0.0, 1.0).unwrap(), 0.0);
        let v = heat_fundamental([0.1; 3], 1.0 / (4.0 * PI), [0.1; 3], 0.0, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert!(heat_fundamental([0.0; 3], 1.0, [0.0; 3], 0.0, 0.0).is_err());
        // separable 1-D trapezoid on [-4, 4]^3 at t = 0.1
        let h = 0.02;
        let n = (4.0 / h) as i64;
        let one_d: f64 = (-n..=n).map(|i| (-(i as f64 * h).powi(2) / 0.4).exp()).sum::<f64>() * h / (0.4 * PI).sqrt();
        assert!((one_d.powi(3) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn interior_source_is_fundamental_solution() {
        let p = slab_parametrix();
        let y = [0.0, 0.0, -0.5];
        let x = [0.05, 0.0, -0.45];
        let v = p.eval(1, Field::First, x, 0.01, y, 0.0, Derivative::None).unwrap();
        assert!((v - heat_fundamental(x, 0.01, y, 0.0, 1.0).unwrap()).abs() < 1e-14);
        assert_eq!(
            p.eval(1, Field::Second, x, 0.01, y, 0.0, Derivative::None).unwrap(),
            0.0
        );
        assert_eq!(
            p.eval(1, Field::First, x, -0.01, y, 0.0, Derivative::None).unwrap(),
            0.0
        );
    }

    #[test]
    fn mixed_support_blend() {
        let p = slab_parametrix();
        let y = [0.0, 0.0, -0.22];
        let x = [0.0, 0.1, -0.12];
        let lag = 0.02;
        let v = p.eval(1, Field::First, x, lag, y, 0.0, Derivative::None).unwrap();
        let top = HalfSpaceChart {
            k: 4.0,
            spec: ContourSpec {
                tol: 1e-10,
                ..Default::default()
            },
            plane: 0.0,
            below: true,
        };
        let want = p.partition.phi(2, y[2])
            * p.partition.psi(2, x[2]).v
            * top.eval(1, Field::First, x, lag, y, Derivative::None).unwrap()
            + p.partition.phi(0, y[2]) * p.partition.psi(0, x[2]).v * heat_fundamental(x, lag, y, 0.0, 1.0).unwrap();
        assert!((v - want).abs() < 1e-12 * want.abs());
        assert!(p.partition.phi(0, y[2]) > 0.0 && p.partition.phi(2, y[2]) > 0.0);
    }

    #[test]
    fn boundary_conditions_and_negative_control() {
        let p = slab_parametrix();
        let xs = [[0.0, 0.0], [0.1, -0.05]];
        let y = [0.0, 0.0, -0.1];
        let d = p.boundary_defect(1, &xs, 0.01, y, 0.0).unwrap();
        assert!(d.trace < 1e-8 && d.flux < 1e-8, "{d:?}");
        let d2 = p.boundary_defect(2, &xs, 0.01, y, 0.0).unwrap();
        assert!(d2.trace < 1e-8 && d2.flux < 1e-8, "{d2:?}");
        let bad = fundamental_only_parametrix(p.partition.clone(), 4.0).unwrap();
        let db = bad.boundary_defect(1, &xs, 0.01, y, 0.0).unwrap();
        assert!(db.trace > 0.1 * db.scale);
    }

    #[test]
    fn missing_chart_kernel() {
        let part = PartitionOfUnity::new(-1.0, 0.0, 2, PartitionSpec::default()).unwrap();
        let r = assemble_parametrix(part, 4.0, Arc::new(FundamentalPair { k: 4.0 }), vec![]);
        assert!(matches!(r, Err(ItpError::Config(_))));
    }

    #[test]
    fn residual_is_flat_in_collars() {
        let p = slab_parametrix();
        let interior_only = assemble_parametrix(
            PartitionOfUnity::new(-1.0, 0.0, 1, PartitionSpec::default()).unwrap(),
            4.0,
            Arc::new(FundamentalPair { k: 4.0 }),
            vec![],
        )
        .unwrap();
        let pts = vec![
            ([0.0, 0.0, -0.32], [0.0, 0.0, -0.1]),
            ([0.0, 0.0, -0.12], [0.0, 0.0, -0.5]),
        ];
        let lags = [1e-4, 2e-4, 4e-4, 8e-4];
        let zero = parametrix_residual(&interior_only, &MetricField::flat(), 1, Field::First, &pts, &lags).unwrap();
        assert!(zero.sups.iter().all(|s| *s == 0.0));
        let rep = parametrix_residual(&p, &MetricField::flat(), 1, Field::First, &pts, &lags).unwrap();
        assert!(rep.sups.iter().any(|s| *s > 0.0));
        assert!(rep.rate >= 1.0, "{rep:?}");
    }

    #[test]
    fn residual_matches_finite_differences() {
        let p = slab_parametrix();
        let y = [0.0, 0.0, -0.1];
        let x = [0.02, 0.0, -0.33];
        let (lag, h, ht) = (0.02, 5e-4, 1e-5);
        let f = |x: [f64; 3], t: f64| p.eval(1, Field::First, x, t, y, 0.0, Derivative::None).unwrap();
        let dt = (f(x, lag + ht) - f(x, lag - ht)) / (2.0 * ht);
        let mut lap = 0.0;
        for a in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[a] += h;
            xm[a] -= h;
            lap += (f(xp, lag) - 2.0 * f(x, lag) + f(xm, lag)) / (h * h);
        }
        let r = p.residual(1, Field::First, x, lag, y, 0.0).unwrap();
        assert!((dt - lap - r).abs() < 1e-3 * r.abs().max(1e-2), "{} vs {r}", dt - lap);
    }

    #[test]
    fn gaussian_bound_on_assembled_parametrix() {
        let p = slab_parametrix();
        let pts: Vec<_> = [(-0.1, -0.1), (-0.3, -0.1), (-0.5, -0.5), (-0.2, -0.6)]
            .iter()
            .map(|(a, b)| ([0.05, 0.0, *a], [0.0, 0.0, *b]))
            .collect();
        let k = p
            .sample(1, Field::First, Derivative::None, &pts, &[0.005, 0.02, 0.08])
            .unwrap();
        let fit = gaussian_bound_fit(&k, 1.5, DistanceMode::Direct).unwrap();
        assert_eq!(fit.violations, 0);
        assert!(fit.c2 > 0.0);
    }

    #[test]
    fn initial_condition_probe_converges() {
        let rep = heat_initial_condition_probe(3.0, &[4e-4, 2e-4, 1e-4], 41).unwrap();
        assert!(rep.errors[2] < 1e-3, "{rep:?}");
        assert!((rep.rate - 1.0).abs() < 0.1);
    }
}
