//! Acceptance suite: the twelve end-to-end criteria, each reduced to one
//! pass/fail outcome with a short measurement summary.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::time::Instant;

use serde::Serialize;

use crate::geometry::{restrict, source_derivatives, HalfSpacePoint, LayeredProfile, SlabDomain};
use crate::kernels::{
    gaussian_bound_fit, heat_kernel_3d, sample_kernel, BranchSelection, ContourSpec, Derivative, DistanceMode, Field,
    LeadingKernel, SpaceTimeKernel,
};
use crate::levi::{scalar_levi_error, schur_bound};
use crate::parametrix::interval::{green_equivalence, SMOOTH_PARTITION};
use crate::parametrix::{flat_slab_parametrix, heat_initial_condition_probe, PartitionOfUnity, PartitionSpec};
use crate::refsolver::{
    adjoint_solve, duality_pairing, manufactured_error, mollifier, reciprocity_check, Coupling, ItpSolver, ItpState,
    Mesh, Scheme, TimeStepping,
};
use crate::sampling::{alpha_schedule, indicator_scan, reconstruct, GapOperator, Inclusion, SamplingSetup};
use crate::symbols::{
    discriminant_ray_check, first_order_amplitudes, second_order_amplitudes, verify_transmission_system, Branch,
};
use crate::{Complex64 as C64, Contrast, MetricField};
use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria the 1-D demonstrators cannot meet. They still report FAIL.
pub const KNOWN_UNATTAINED: &[usize] = &[11];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    /// Failure listed in [`KNOWN_UNATTAINED`].
    pub expected_failure: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        format!(
            "{status} [{:2}] {}: {} ({:.1} s)",
            self.id, self.name, self.detail, self.seconds
        )
    }
}

pub const NAMES: [&str; 12] = [
    "amplitude algebra",
    "flat kernel oracle",
    "causality",
    "gaussian estimates",
    "discriminant off the ray",
    "levi oracle",
    "green equivalence",
    "initial condition",
    "duality and reciprocity",
    "schur bound",
    "sampling reconstruction",
    "manufactured solution",
];

fn pt(x: [f64; 2], x3: f64) -> HalfSpacePoint {
    HalfSpacePoint::new(x, x3).unwrap()
}

fn random_metric(rng: &mut ChaCha8Rng) -> MetricField {
    match rng.gen_range(0..4) {
        0 => MetricField::flat(),
        1 => LayeredProfile::Quadratic {
            a: rng.gen_range(0.0..1.0),
        }
        .into_metric(),
        2 => LayeredProfile::Linear {
            eps: rng.gen_range(-0.5..0.5),
        }
        .into_metric(),
        _ => {
            let mut base = [[0.0; 3]; 3];
            let mut slope = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    base[i][j] = if i == j {
                        rng.gen_range(0.8..1.2)
                    } else {
                        rng.gen_range(-0.1..0.1)
                    };
                    slope[i][j] = rng.gen_range(-0.1..0.1);
                }
            }
            LayeredProfile::Affine {
                base,
                slope,
                log_j_slope: rng.gen_range(-0.5..0.5),
            }
            .into_metric()
        }
    }
}

fn amplitude_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst1, mut worst2, mut errors) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let metric = random_metric(&mut rng);
        let y3 = rng.gen_range(-0.9..-0.1);
        let y_t = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let xi = [
            C64::new(rng.gen_range(-2.0..2.0), 0.0),
            C64::new(rng.gen_range(-2.0..2.0), 0.0),
        ];
        let tau = C64::new(rng.gen_range(0.5..20.0), rng.gen_range(-10.0..10.0));
        let k = rng.gen_range(1.5..8.0);
        let s = rng.gen_range(0.0..1.0);
        let ell = rng.gen_range(1..=2u8);
        let run = || -> crate::Result<(f64, f64)> {
            let r = restrict(&metric, y3, y_t)?;
            let d = source_derivatives(&metric, y3, y_t)?;
            let a1 = first_order_amplitudes(ell, &r, xi, tau, k, y3, s, y_t)?;
            let (a2, _) = second_order_amplitudes(ell, &r, &d, xi, tau, k, y3, s, y_t)?;
            let m = |v: [f64; 6]| v.iter().cloned().fold(0.0, f64::max);
            Ok((
                m(verify_transmission_system(&a1, y3)),
                m(verify_transmission_system(&a2, y3)),
            ))
        };
        match run() {
            Ok((r1, r2)) => {
                worst1 = worst1.max(r1);
                worst2 = worst2.max(r2);
            }
            Err(_) => errors += 1,
        }
    }
    outcome(
        errors == 0 && worst1 < 1e-12 && worst2 < 1e-10,
        format!("1000 configs, max residual L=1 {worst1:.2e}, L=2 {worst2:.2e}, errors {errors}"),
    )
}

fn flat_kernel_oracle() -> Outcome {
    let kern = LeadingKernel::flat(1, Field::First, BranchSelection::Free, 4.0);
    let y = pt([0.0, 0.0], -0.5);
    let mut worst = 0.0f64;
    for lat in [0.0, 0.05, 0.1, 0.2, 0.3] {
        for rho in [0.0, 0.05, 0.1, 0.2, 0.3] {
            for t in [1.0 / (4.0 * PI), 0.01, 0.03, 0.2, 0.5] {
                let x = pt([lat, 0.0], -0.5 + rho);
                let v = kern.eval(x, t, y, 0.0, Derivative::None).unwrap();
                let want = heat_kernel_3d(lat * lat + rho * rho, t, 1.0);
                worst = worst.max((v - want).norm() / want);
            }
        }
    }
    let centre = kern.eval(y, 1.0 / (4.0 * PI), y, 0.0, Derivative::None).unwrap();
    outcome(
        worst < 1e-3 && (centre.re - 1.0).abs() < 1e-3,
        format!(
            "125 points, max relative error {worst:.2e}, value at t-s = 1/(4 pi) {:.8}",
            centre.re
        ),
    )
}

/// Leading kernels of every branch, as value and normal derivative, sampled
/// on both sides of the source and at negative lags.
fn branch_kernels() -> Vec<(Branch, Derivative, SpaceTimeKernel)> {
    let mut points = vec![];
    for lat in [0.0, 0.1, 0.3] {
        for x3 in [-0.1, -0.3, -0.6] {
            for y3 in [-0.2, -0.5] {
                points.push((pt([lat, 0.0], x3), pt([0.0, 0.0], y3)));
            }
        }
    }
    let lags = [-0.05, -0.01, 0.005, 0.02, 0.08, 0.2];
    let mut out = vec![];
    for b in Branch::ALL {
        let ell = if b.first_source() { 1 } else { 2 };
        let field = if b.second_field() { Field::Second } else { Field::First };
        let kern = LeadingKernel::flat(ell, field, BranchSelection::Only(vec![b]), 4.0);
        for deriv in [Derivative::None, Derivative::Normal] {
            let sk = sample_kernel(|x, t, y, s| kern.eval(x, t, y, s, deriv), &points, &lags).unwrap();
            out.push((b, deriv, sk));
        }
    }
    out
}

fn causality(kernels: &[(Branch, Derivative, SpaceTimeKernel)]) -> Outcome {
    let worst = kernels.iter().map(|(_, _, k)| k.causality_ratio()).fold(0.0, f64::max);
    outcome(
        worst < 1e-6,
        format!("{} kernels, max past/future ratio {worst:.2e}", kernels.len()),
    )
}

fn gaussian_estimates(kernels: &[(Branch, Derivative, SpaceTimeKernel)]) -> Outcome {
    let mut violations = 0;
    let mut empty = 0;
    let mut free_c2 = f64::NAN;
    for (b, deriv, k) in kernels {
        let free = matches!(
            b,
            Branch::FreeAbove1 | Branch::FreeBelow1 | Branch::FreeAbove2 | Branch::FreeBelow2
        );
        let mode = if free {
            DistanceMode::Direct
        } else {
            DistanceMode::Reflected
        };
        let p = if *deriv == Derivative::None { 1.5 } else { 2.0 };
        let fit = gaussian_bound_fit(k, p, mode).unwrap();
        violations += fit.violations;
        if fit.points == 0 {
            empty += 1;
        }
        if *b == Branch::FreeAbove1 && *deriv == Derivative::None {
            free_c2 = fit.c2;
        }
    }
    // The free branch combines both half spaces; fit the full free kernel.
    let free = LeadingKernel::flat(1, Field::First, BranchSelection::Free, 4.0);
    let pts: Vec<_> = [0.0, 0.1, 0.2, 0.3]
        .iter()
        .map(|d| (pt([*d, 0.0], -0.4), pt([0.0, 0.0], -0.5)))
        .collect();
    let fk = sample_kernel(
        |x, t, y, s| free.eval(x, t, y, s, Derivative::None),
        &pts,
        &[0.01, 0.05, 0.2],
    )
    .unwrap();
    let flat_c2 = gaussian_bound_fit(&fk, 1.5, DistanceMode::Direct).unwrap().c2;

    let slab = SlabDomain::new(1.0, 1.0, 8, 8).unwrap();
    let part = PartitionOfUnity::for_slab(&slab, 3, PartitionSpec::default()).unwrap();
    let p = flat_slab_parametrix(
        part,
        4.0,
        ContourSpec {
            tol: 1e-10,
            ..Default::default()
        },
    )
    .unwrap();
    let ppts: Vec<_> = [(-0.1, -0.1), (-0.3, -0.1), (-0.5, -0.5), (-0.2, -0.6)]
        .iter()
        .map(|(a, b)| ([0.05, 0.0, *a], [0.0, 0.0, *b]))
        .collect();
    let mut assembled = 0;
    for (deriv, pexp) in [(Derivative::None, 1.5), (Derivative::Normal, 2.0)] {
        let k = p.sample(1, Field::First, deriv, &ppts, &[0.005, 0.02, 0.08]).unwrap();
        assembled += gaussian_bound_fit(&k, pexp, DistanceMode::Direct).unwrap().violations;
    }
    outcome(
        violations == 0 && assembled == 0 && empty == 0 && (flat_c2 - 0.25).abs() <= 0.01,
        format!(
            "branch violations {violations}, parametrix violations {assembled}, flat free c2 {flat_c2:.4} (FreeAbove1 alone {free_c2:.4})"
        ),
    )
}

fn discriminant_off_ray() -> Outcome {
    let mu = ContourSpec::default().mu;
    let metrics = [
        Matrix3::identity(),
        LayeredProfile::Quadratic { a: 0.5 }.into_metric().m(&[0.0, 0.0, -0.5]),
        Matrix3::new(1.2, 0.1, 0.05, 0.1, 0.9, -0.1, 0.05, -0.1, 1.1),
    ];
    let mut violations = 0;
    let mut min_d = f64::INFINITY;
    for (i, m) in metrics.iter().enumerate() {
        let rep = discriminant_ray_check(m, mu, 100_000, 31 + i as u64);
        violations += rep.violations;
        min_d = min_d.min(rep.min_distance.unwrap_or(f64::INFINITY));
    }
    outcome(
        violations == 0 && min_d > 0.0,
        format!("3 metrics x 1e5 samples, mu {mu}, violations {violations}, min distance {min_d:.3e}"),
    )
}

fn levi_oracle() -> Outcome {
    let mut ok = true;
    let mut parts = vec![];
    for c in [0.5, 2.0] {
        let (e1, _) = scalar_levi_error(c, 2e-3, 1.0).unwrap();
        let (e2, s) = scalar_levi_error(c, 1e-3, 1.0).unwrap();
        let order = (e1 / e2).log2();
        ok &= e2 < 1e-4 && (order - 2.0).abs() <= 0.2 && s.bound_margin >= -1e-12;
        parts.push(format!(
            "c {c}: error {e2:.2e}, order {order:.3}, bound margin {:.2e}",
            s.bound_margin
        ));
    }
    outcome(ok, parts.join("; "))
}

fn green_equivalence_check() -> Outcome {
    let k = Contrast::new(4.0).unwrap();
    let ladder = [(32, 8e-4), (64, 4e-4), (128, 2e-4), (256, 1e-4)];
    let rep = green_equivalence(k, &ladder, 1, 0.5, 0.08, 0.02, SMOOTH_PARTITION).unwrap();
    let errs: Vec<String> = rep.levels.iter().map(|l| format!("{:.2e}", l.error)).collect();
    outcome(
        (rep.order - 2.0).abs() <= 0.25 && rep.final_error < 1e-3,
        format!(
            "errors [{}], order {:.3}, final {:.2e}",
            errs.join(", "),
            rep.order,
            rep.final_error
        ),
    )
}

fn initial_condition() -> Outcome {
    let mut ok = true;
    let mut parts = vec![];
    for r in [3.0, 4.0, 5.0] {
        let rep = heat_initial_condition_probe(r, &[4e-4, 2e-4, 1e-4], 41).unwrap();
        ok &= rep.errors[2] < 1e-3;
        parts.push(format!("R {r}: {:.2e}", rep.errors[2]));
    }
    outcome(ok, format!("sup error at delta 1e-4: {}", parts.join(", ")))
}

fn duality() -> Outcome {
    let k = Contrast::new(4.0).unwrap();
    let mesh = Mesh::new(1.0, 256, 5e-4, 0.2).unwrap();
    let stepping = TimeStepping::Pure(Scheme::CrankNicolson);
    let bump = |c: f64| mollifier(&mesh, c, 0.04).unwrap();
    let zero = vec![0.0; mesh.n + 1];
    let mut adj = ItpSolver::adjoint(mesh, k);
    let z = adjoint_solve(&mut adj, (bump(0.3), zero.clone()), 0.2, stepping).unwrap();
    let mut fwd = ItpSolver::forward(mesh, k);
    let u = fwd
        .run(
            ItpState {
                v: bump(0.6),
                u: zero.clone(),
                t: 0.0,
            },
            mesh.n_steps(),
            stepping,
            None,
        )
        .unwrap();
    let pairing = duality_pairing(&u, &z, &mesh.weights()).deviation;
    let mut wrong = ItpSolver::with_coupling(
        mesh,
        4.0,
        Coupling {
            trace_sign: -1.0,
            flux_factor: 4.0,
        },
    );
    let zw = adjoint_solve(&mut wrong, (bump(0.3), zero), 0.2, stepping).unwrap();
    let control = duality_pairing(&u, &zw, &mesh.weights()).deviation;

    let devs: Vec<f64> = [32usize, 64, 128]
        .iter()
        .map(|&n| {
            let h = 1.0 / n as f64;
            let m = Mesh::new(1.0, n, 0.1 * h, 0.05).unwrap();
            reciprocity_check(m, k, &[0.4], &[0.5, 0.6], 0.05, 0.0, 2.0 * h, TimeStepping::Rannacher)
                .unwrap()
                .max_deviation
        })
        .collect();
    let ratios: Vec<f64> = devs.windows(2).map(|w| w[0] / w[1]).collect();
    outcome(
        pairing < 1e-6 && control > 1e-2 && ratios.iter().all(|r| *r > 3.0 && *r < 5.5),
        format!(
            "pairing deviation {pairing:.2e}, wrong-sign control {control:.2e}, reciprocity ratios [{:.2}, {:.2}]",
            ratios[0], ratios[1]
        ),
    )
}

fn schur() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violated = 0;
    for _ in 0..100 {
        let n1 = rng.gen_range(5..40);
        let n2 = rng.gen_range(5..40);
        let w1: Vec<f64> = (0..n1).map(|_| rng.gen_range(0.01..1.0)).collect();
        let w2: Vec<f64> = (0..n2).map(|_| rng.gen_range(0.01..1.0)).collect();
        let k = DMatrix::from_fn(n1, n2, |_, _| rng.gen_range(-5.0..5.0));
        let probes: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..n2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        if schur_bound(&k, &w1, &w2, &probes).unwrap().violated {
            violated += 1;
        }
    }
    let n = 64;
    let w = vec![1.0 / n as f64; n];
    let ones = DMatrix::from_element(n, n, 1.0);
    let rep = schur_bound(&ones, &w, &w, &[vec![1.0; n]]).unwrap();
    let ratio = rep.ratios[0] / rep.bound;
    outcome(
        violated == 0 && (ratio - 1.0).abs() <= 1e-10,
        format!("100 kernels x 10 probes, violations {violated}; K = 1 ratio {ratio:.12}"),
    )
}

fn sampling() -> Outcome {
    let truth = Inclusion { a: 0.4, b: 0.7 };
    let mesh = Mesh::new(1.0, 200, 5e-4, 0.05).unwrap();
    let setup = SamplingSetup {
        mesh,
        k: 4.0,
        inclusion: Some(truth),
        eps: 2.0 * mesh.h,
    };
    let op = GapOperator::new(setup).unwrap();
    let probes: Vec<f64> = (0..=160).map(|i| 0.1 + i as f64 * mesh.h).collect();
    let field = indicator_scan(&op, &probes, 0.01, &alpha_schedule(1e-6, 1e-14, 5)).unwrap();
    let rec = reconstruct(&field, truth, mesh.h);
    let tol = 2.0 * mesh.h;
    let endpoints_ok = rec.endpoint_errors.is_some_and(|(a, b)| a <= tol && b <= tol);
    let est = rec
        .estimate
        .map(|e| format!("({:.4}, {:.4})", e.a, e.b))
        .unwrap_or_else(|| "none".into());
    outcome(
        endpoints_ok && rec.median_contrast >= 5.0,
        format!(
            "estimate {est} vs (0.4, 0.7), tolerance {tol}; median contrast {:.1}",
            rec.median_contrast
        ),
    )
}

fn manufactured() -> Outcome {
    let k = Contrast::new(4.0).unwrap();
    let space: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|n| manufactured_error(k, *n, 2e-4, 0.2, TimeStepping::Rannacher).unwrap())
        .collect();
    let time: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|dt| manufactured_error(k, 1024, *dt, 0.8, TimeStepping::Pure(Scheme::CrankNicolson)).unwrap())
        .collect();
    let orders = |e: &[f64]| -> Vec<f64> { e.windows(2).map(|w| (w[0] / w[1]).log2()).collect() };
    let (so, to) = (orders(&space), orders(&time));

    let mesh = Mesh::new(1.0, 20, 0.01, 0.5).unwrap();
    let c = 1.7;
    let src = move |_t: f64| (vec![c; 21], vec![c; 21]);
    let mut solver = ItpSolver::forward(mesh, k);
    let out = solver
        .run(ItpState::zeros(&mesh, 0.0), 50, TimeStepping::Rannacher, Some(&src))
        .unwrap();
    let constant = out
        .iter()
        .flat_map(|st| st.v.iter().chain(&st.u).map(move |v| (v - c * st.t).abs()))
        .fold(0.0, f64::max);
    let within = |o: &[f64]| o.iter().all(|x| (x - 2.0).abs() <= 0.2);
    outcome(
        within(&so) && within(&to) && constant < 1e-10,
        format!(
            "space orders [{:.3}, {:.3}], time orders [{:.3}, {:.3}], constant-source error {constant:.1e}",
            so[0], so[1], to[0], to[1]
        ),
    )
}

/// Runs the selected criteria (1-based ids, all when empty) in order,
/// calling `report` after each one.
pub fn run<F: FnMut(&CriterionOutcome)>(select: &[usize], mut report: F) -> Vec<CriterionOutcome> {
    let kernels = OnceCell::new();
    let branch = || kernels.get_or_init(branch_kernels);
    let mut out = vec![];
    for id in 1..=NAMES.len() {
        if !select.is_empty() && !select.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = match id {
            1 => amplitude_algebra(),
            2 => flat_kernel_oracle(),
            3 => causality(branch()),
            4 => gaussian_estimates(branch()),
            5 => discriminant_off_ray(),
            6 => levi_oracle(),
            7 => green_equivalence_check(),
            8 => initial_condition(),
            9 => duality(),
            10 => schur(),
            11 => sampling(),
            _ => manufactured(),
        };
        let c = CriterionOutcome {
            id,
            name: NAMES[id - 1],
            pass: o.pass,
            expected_failure: !o.pass && KNOWN_UNATTAINED.contains(&id),
            detail: o.detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        report(&c);
        out.push(c);
    }
    out
}

/// Ids of failures not listed in [`KNOWN_UNATTAINED`].
pub fn unexpected_failures(outcomes: &[CriterionOutcome]) -> Vec<usize> {
    outcomes
        .iter()
        .filter(|o| !o.pass && !o.expected_failure)
        .map(|o| o.id)
        .collect()
}
