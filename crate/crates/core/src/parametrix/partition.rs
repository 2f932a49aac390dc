//! Partition of unity in the normal direction of an interval `[a, b]`.
//!
//! Each boundary chart covers a collar of width `chart_width` (plus one ramp)
//! at its end. Companions `psi_j` equal one on `supp phi_j` and ramp down
//! after a gap, so `supp phi_j` and `supp psi_j'` are at distance `gap`.

use serde::{Deserialize, Serialize};

use crate::error::{ItpError, Result};
use crate::geometry::SlabDomain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSpec {
    pub chart_width: f64,
    pub ramp: f64,
    pub gap: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            chart_width: 0.2,
            ramp: 0.05,
            gap: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chart {
    Interior,
    /// Boundary at `a`.
    Lower,
    /// Boundary at `b`.
    Upper,
}

/// Value and first two derivatives of a function of one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const ONE: Jet = Jet {
        v: 1.0,
        d1: 0.0,
        d2: 0.0,
    };

    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

/// `C^inf` step: 0 for `x <= 0`, 1 for `x >= 1`, built from `exp(-1/x)`.
pub fn smooth_step(x: f64) -> Jet {
    if x <= 0.0 {
        return Jet {
            v: 0.0,
            d1: 0.0,
            d2: 0.0,
        };
    }
    if x >= 1.0 {
        return Jet::ONE;
    }
    // step = 1 / (1 + e^u), u = 1/x - 1/(1-x)
    let u = 1.0 / x - 1.0 / (1.0 - x);
    if u.abs() > 700.0 {
        let v = if u > 0.0 { 0.0 } else { 1.0 };
        return Jet { v, d1: 0.0, d2: 0.0 };
    }
    let du = -1.0 / (x * x) - 1.0 / ((1.0 - x) * (1.0 - x));
    let ddu = 2.0 / x.powi(3) - 2.0 / (1.0 - x).powi(3);
    let g = 1.0 / (1.0 + u.exp());
    let g1 = -g * (1.0 - g);
    let g2 = g * (1.0 - g) * (1.0 - 2.0 * g);
    Jet {
        v: g,
        d1: g1 * du,
        d2: g2 * du * du + g1 * ddu,
    }
}

/// Equals 1 for `d <= start`, 0 for `d >= start + width`.
fn falling(d: f64, start: f64, width: f64) -> Jet {
    let s = smooth_step((d - start) / width);
    Jet {
        v: 1.0 - s.v,
        d1: -s.d1 / width,
        d2: -s.d2 / (width * width),
    }
}

fn rising(d: f64, start: f64, width: f64) -> Jet {
    let s = smooth_step((d - start) / width);
    Jet {
        v: s.v,
        d1: s.d1 / width,
        d2: s.d2 / (width * width),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionOfUnity {
    pub a: f64,
    pub b: f64,
    pub spec: PartitionSpec,
    pub charts: Vec<Chart>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionCheck {
    pub points: usize,
    /// `max |sum phi_j - 1|`.
    pub sum_error: f64,
    /// `max |psi_j - 1|` over `supp phi_j`.
    pub companion_error: f64,
    /// Smallest distance between `supp phi_j` and `supp psi_j'` on the grid.
    pub support_distance: f64,
}

impl PartitionOfUnity {
    /// `charts` counts all charts: 1 is interior only, 2 adds the upper
    /// boundary, 3 covers both ends.
    pub fn new(a: f64, b: f64, charts: usize, spec: PartitionSpec) -> Result<Self> {
        let PartitionSpec {
            chart_width: w,
            ramp,
            gap,
        } = spec;
        if !(b > a) {
            return Err(ItpError::Geometry(format!("empty interval [{a}, {b}]")));
        }
        if !(w > 0.0 && ramp > 0.0) {
            return Err(ItpError::Config("chart width and ramp must be positive".into()));
        }
        if !(gap > 0.0) {
            return Err(ItpError::Config(format!(
                "companion cutoffs need a positive gap to equal one on supp phi (gap {gap})"
            )));
        }
        let list = match charts {
            1 => vec![Chart::Interior],
            2 => vec![Chart::Interior, Chart::Upper],
            3 => vec![Chart::Interior, Chart::Lower, Chart::Upper],
            _ => return Err(ItpError::Config(format!("chart count {charts} must be 1, 2 or 3"))),
        };
        let len = b - a;
        if charts > 1 {
            if w - gap - ramp <= 0.0 {
                return Err(ItpError::Geometry(format!(
                    "interior companion reaches the boundary: width {w} <= gap {gap} + ramp {ramp}"
                )));
            }
            if w + 2.0 * ramp + gap >= len {
                return Err(ItpError::Geometry("boundary chart reaches the opposite end".into()));
            }
        }
        if charts == 3 && 2.0 * (w + ramp) > len {
            return Err(ItpError::Geometry(
                "boundary cutoffs overlap; no room for the interior chart".into(),
            ));
        }
        Ok(Self {
            a,
            b,
            spec,
            charts: list,
        })
    }

    /// Partition of the slab depth `[-depth, 0]`; `Upper` is the boundary `x3 = 0`.
    pub fn for_slab(domain: &SlabDomain, charts: usize, spec: PartitionSpec) -> Result<Self> {
        Self::new(-domain.depth, 0.0, charts, spec)
    }

    fn distance(&self, chart: Chart, x: f64) -> (f64, f64) {
        match chart {
            Chart::Lower => (x - self.a, 1.0),
            Chart::Upper => (self.b - x, -1.0),
            Chart::Interior => (f64::INFINITY, 0.0),
        }
    }

    fn boundary_phi(&self, chart: Chart, x: f64) -> f64 {
        let (d, _) = self.distance(chart, x);
        falling(d, self.spec.chart_width, self.spec.ramp).v
    }

    pub fn phi(&self, j: usize, x: f64) -> f64 {
        match self.charts[j] {
            Chart::Interior => {
                1.0 - self
                    .charts
                    .iter()
                    .filter(|c| **c != Chart::Interior)
                    .map(|c| self.boundary_phi(*c, x))
                    .sum::<f64>()
            }
            c => self.boundary_phi(c, x),
        }
    }

    pub fn psi(&self, j: usize, x: f64) -> Jet {
        let PartitionSpec {
            chart_width: w,
            ramp,
            gap,
        } = self.spec;
        let chain = |jet: Jet, s: f64| Jet {
            v: jet.v,
            d1: jet.d1 * s,
            d2: jet.d2,
        };
        match self.charts[j] {
            Chart::Interior => self
                .charts
                .iter()
                .filter(|c| **c != Chart::Interior)
                .fold(Jet::ONE, |acc, c| {
                    let (d, s) = self.distance(*c, x);
                    acc.mul(chain(rising(d, w - gap - ramp, ramp), s))
                }),
            c => {
                let (d, s) = self.distance(c, x);
                chain(falling(d, w + ramp + gap, ramp), s)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    /// Checks the partition invariants on `points` equispaced nodes.
    pub fn check(&self, points: usize) -> PartitionCheck {
        let xs: Vec<f64> = (0..points)
            .map(|i| self.a + (self.b - self.a) * i as f64 / (points - 1) as f64)
            .collect();
        let mut sum_error: f64 = 0.0;
        let mut companion_error: f64 = 0.0;
        let mut support_distance = f64::INFINITY;
        for x in &xs {
            let s: f64 = (0..self.len()).map(|j| self.phi(j, *x)).sum();
            sum_error = sum_error.max((s - 1.0).abs());
        }
        for j in 0..self.len() {
            let on: Vec<f64> = xs.iter().cloned().filter(|x| self.phi(j, *x).abs() > 0.0).collect();
            let ramp: Vec<f64> = xs
                .iter()
                .cloned()
                .filter(|x| {
                    let p = self.psi(j, *x);
                    p.d1 != 0.0 || p.d2 != 0.0
                })
                .collect();
            for x in &on {
                companion_error = companion_error.max((self.psi(j, *x).v - 1.0).abs());
                for r in &ramp {
                    support_distance = support_distance.min((x - r).abs());
                }
            }
        }
        PartitionCheck {
            points,
            sum_error,
            companion_error,
            support_distance,
        }
    }
}
