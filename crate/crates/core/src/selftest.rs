//! Built-in golden-value suite, one suite per module.
//!
//! Every case recomputes a known value (closed form, exact enumeration or a
//! high-sample Monte Carlo cross-check) and compares it with the library.
//! The `beta` table used by the cases can be swapped for a deliberately wrong
//! one to confirm that the suite detects a broken normalization.

use std::collections::BTreeMap;

use crate::distributions::{
    projection_pdf, sample_projection, sample_sphere, RandomStream, SphereDist,
};
use crate::error::Result;
use crate::explorer::{
    certify_regime, open_range_hunt, parse_report, render_report, sign_map, PRange, PointStatus,
    ReportFormat, SweepConfig, SweepReport, XSampling,
};
use crate::hanner::{
    hanner_two_rhs, lp_norm, schechtman_check, theorem_check, theorem_lhs, theorem_rhs,
    CheckVerdict, StepFunction,
};
use crate::hessian::{
    definiteness, ekl_entries, fd_hessian, fd_hessian_projected, gamma_matrix,
    gamma_matrix_rademacher, gamma_mc, gamma_scale, hessian_matrix, hessian_quadratic_form,
    Direction, Verdict,
};
use crate::integrate::{
    gauss_jacobi_rule, mc_expectation, power_expectation, singular_expectation, tensor_expectation,
    SampleLaw,
};
use crate::phi::{
    default_order, phi_mc, phi_projected, phi_rademacher_exact, HannerPoint, PhiEvaluator,
};
use crate::specfun::{beta_pd, g_q, gen_binom, h_q, h_q_prime, log_gamma};

/// Which `beta_{p,d}` the cases use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BetaTable {
    #[default]
    Correct,
    /// Every entry is off by 5%; the suite must fail.
    Wrong,
}

impl BetaTable {
    fn beta(self, p: f64, d: usize) -> Result<f64> {
        let b = beta_pd(p, d)?;
        Ok(match self {
            BetaTable::Correct => b,
            BetaTable::Wrong => 1.05 * b,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    /// Run only suites whose name contains this string.
    pub filter: Option<String>,
    pub beta_table: BetaTable,
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOutcome {
    pub cases: Vec<CaseOutcome>,
}

impl SelftestOutcome {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    /// `(passed, failed)` per suite, in suite order.
    pub fn per_suite(&self) -> Vec<(&'static str, usize, usize)> {
        let mut m: BTreeMap<usize, (&'static str, usize, usize)> = BTreeMap::new();
        for c in &self.cases {
            let pos = SUITES
                .iter()
                .position(|s| *s == c.suite)
                .unwrap_or(usize::MAX);
            let e = m.entry(pos).or_insert((c.suite, 0, 0));
            if c.passed {
                e.1 += 1;
            } else {
                e.2 += 1;
            }
        }
        m.into_values().collect()
    }
}

pub const SUITES: [&str; 7] = [
    "specfun",
    "distributions",
    "integrate",
    "phi",
    "hessian",
    "hanner",
    "explorer",
];

type Check = std::result::Result<(), String>;

type Case = (&'static str, fn(&Ctx) -> Check);

struct Ctx {
    beta: BetaTable,
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn close(what: &str, got: f64, want: f64, rel: f64) -> Check {
    if (got - want).abs() <= rel * want.abs().max(f64::MIN_POSITIVE) || got == want {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} (rel tol {rel})"))
    }
}

fn near(what: &str, got: f64, want: f64, abs: f64) -> Check {
    if (got - want).abs() <= abs {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} (abs tol {abs})"))
    }
}

fn within_sigma(what: &str, est: &crate::integrate::EstimateWithError, want: f64, k: f64) -> Check {
    if est.agrees_with(want, k) {
        Ok(())
    } else {
        Err(format!(
            "{what}: {} +- {} vs {want} ({k} sigma)",
            est.value, est.std_error
        ))
    }
}

fn ensure(what: &str, cond: bool) -> Check {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn pt(p: f64, d: usize, x: &[f64]) -> std::result::Result<HannerPoint, String> {
    lib(HannerPoint::new(p, d, x.to_vec()))
}

fn projected_with(ctx: &Ctx, p: &HannerPoint, m: usize) -> std::result::Result<f64, String> {
    // beta from the case table, expectation from the library
    let rule = lib(gauss_jacobi_rule(m, p.d))?;
    let e = lib(power_expectation(|_| 1.0, &p.coeffs(), p.p(), &rule))?;
    Ok(lib(ctx.beta.beta(p.p(), p.d))? * e)
}

fn specfun_cases() -> Vec<Case> {
    vec![
        ("log_gamma", |_| {
            close("lnG(1)", lib(log_gamma(1.0))?, 0.0, 0.0)?;
            near("lnG(0.5)", lib(log_gamma(0.5))?, 0.572_364_942_9, 1e-10)?;
            near("lnG(6)", lib(log_gamma(6.0))?, 120f64.ln(), 1e-12)?;
            ensure("lnG(0) must fail", log_gamma(0.0).is_err())
        }),
        ("beta_pd", |c| {
            for d in 1..=6 {
                close("beta(2, d)", lib(c.beta.beta(2.0, d))?, d as f64, 1e-12)?;
                if d == 1 {
                    close("beta(p, 1)", lib(c.beta.beta(3.7, 1))?, 1.0, 1e-14)?;
                }
            }
            // (1 / 2pi) int |cos t|^4 dt = 3/8
            close("beta(4, 2)", lib(c.beta.beta(4.0, 2))?, 8.0 / 3.0, 1e-12)?;
            ensure("beta(-1, 2) must fail", beta_pd(-1.0, 2).is_err())
        }),
        ("gen_binom", |_| {
            close("C(a, 0)", gen_binom(2.7, 0), 1.0, 0.0)?;
            close("C(1, 1)", gen_binom(1.0, 1), 1.0, 0.0)?;
            close("C(0.5, 2)", gen_binom(0.5, 2), -0.125, 1e-15)
        }),
        ("g_q", |_| {
            close("g(0)", lib(g_q(0.0, -0.4, 1e-12))?, 1.0, 0.0)?;
            close("g_2(0.5)", lib(g_q(0.5, 2.0, 1e-12))?, 1.25, 1e-12)?;
            close(
                "g_1(1)",
                lib(g_q(1.0, 1.0, 1e-12))?,
                4.0 / std::f64::consts::PI,
                1e-12,
            )?;
            ensure("q = -1 must fail", g_q(0.5, -1.0, 1e-12).is_err())
        }),
        ("h_q", |_| {
            close("h(0)", lib(h_q(0.0, 0.7))?, 1.0 / 1.7, 1e-14)?;
            close("h_2(1)", lib(h_q(1.0, 2.0))?, 4.0 / 3.0, 1e-14)?;
            close("h_-0.5(2)", lib(h_q(2.0, -0.5))?, 3f64.sqrt() - 1.0, 1e-13)
        }),
        ("h_q_prime", |_| {
            close("h'_1(2)", lib(h_q_prime(2.0, 1.0))?, 1.0, 1e-14)?;
            near("h'_0(0.5)", lib(h_q_prime(0.5, 0.0))?, 0.0, 1e-15)?;
            near(
                "h'_-0.5(0.5)",
                lib(h_q_prime(0.5, -0.5))?,
                -0.298_858_5,
                1e-7,
            )?;
            ensure("x = 1, q < 0 must fail", h_q_prime(1.0, -0.5).is_err())
        }),
    ]
}

fn distribution_cases() -> Vec<Case> {
    vec![
        ("sphere_samples", |_| {
            let signs = sample_sphere(lib(SphereDist::new(1))?, 4, RandomStream::new(1, 0));
            ensure(
                "d = 1 draws are signs",
                signs.iter().all(|v| v[0].abs() == 1.0),
            )?;
            let v = sample_sphere(lib(SphereDist::new(3))?, 1000, RandomStream::new(1, 1));
            ensure(
                "unit norms",
                v.iter()
                    .all(|v| (v.iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs() < 1e-12),
            )?;
            let count = 100_000;
            let c = sample_sphere(lib(SphereDist::new(2))?, count, RandomStream::new(1, 2));
            let mean = c.iter().map(|v| v[0]).sum::<f64>() / count as f64;
            ensure("circle mean", mean.abs() < 4.0 / (count as f64).sqrt())
        }),
        ("projection_pdf", |_| {
            close("pdf(0.3, 3)", lib(projection_pdf(0.3, 3))?, 0.5, 1e-14)?;
            close("pdf(1.5, 5)", lib(projection_pdf(1.5, 5))?, 0.0, 0.0)?;
            close(
                "pdf(0, 2)",
                lib(projection_pdf(0.0, 2))?,
                1.0 / std::f64::consts::PI,
                1e-14,
            )?;
            ensure(
                "pole at 1 for d = 2",
                lib(projection_pdf(1.0, 2))?.is_infinite(),
            )
        }),
        ("projection_samples", |_| {
            let moment = |xs: &[f64], k: i32| {
                let n = xs.len() as f64;
                let m = xs.iter().map(|x| x.powi(k)).sum::<f64>() / n;
                let v = xs.iter().map(|x| (x.powi(k) - m).powi(2)).sum::<f64>() / (n - 1.0);
                (m, (v / n).sqrt())
            };
            let s3 = lib(sample_projection(3, 100_000, RandomStream::new(2, 0)))?;
            let (m, se) = moment(&s3, 2);
            near("E theta^2 (d=3)", m, 1.0 / 3.0, 4.0 * se)?;
            let s2 = lib(sample_projection(2, 10_000, RandomStream::new(2, 1)))?;
            ensure("d = 2 draws in [-1, 1]", s2.iter().all(|t| t.abs() <= 1.0))?;
            let s5 = lib(sample_projection(5, 100_000, RandomStream::new(2, 2)))?;
            let (m, se) = moment(&s5, 4);
            near("E theta^4 (d=5)", m, 3.0 / 35.0, 4.0 * se)
        }),
        ("embedding_identity", |c| {
            let mut rng_state = 0x2545_f491_4f6c_dd1du64;
            let mut unif = move || {
                rng_state ^= rng_state << 13;
                rng_state ^= rng_state >> 7;
                rng_state ^= rng_state << 17;
                (rng_state >> 11) as f64 / (1u64 << 53) as f64
            };
            for &p in &[1.0, 2.5, 4.0] {
                for &d in &[2usize, 3, 5] {
                    let rule = lib(gauss_jacobi_rule(32, d))?;
                    for _ in 0..20 {
                        let x: Vec<f64> = (0..d).map(|_| 4.0 * unif() - 2.0).collect();
                        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                        // <x, eta> has the law of |x| theta
                        let e = lib(power_expectation(|_| 1.0, &[norm], p, &rule))?;
                        close(
                            "beta E|<x,eta>|^p",
                            lib(c.beta.beta(p, d))? * e,
                            norm.powf(p),
                            1e-8,
                        )?;
                    }
                }
            }
            Ok(())
        }),
    ]
}

fn integrate_cases() -> Vec<Case> {
    vec![
        ("gauss_jacobi_rule", |_| {
            close(
                "m=2 d=3 t^2",
                lib(gauss_jacobi_rule(2, 3))?.expect(|t| t * t),
                1.0 / 3.0,
                1e-12,
            )?;
            let one = lib(gauss_jacobi_rule(1, 4))?;
            ensure(
                "m=1 node 0 weight 1",
                one.nodes()[0].abs() < 1e-15 && (one.weights()[0] - 1.0).abs() < 1e-15,
            )?;
            close(
                "m=8 d=2 t^2",
                lib(gauss_jacobi_rule(8, 2))?.expect(|t| t * t),
                0.5,
                1e-12,
            )
        }),
        ("tensor_expectation", |_| {
            let rule = lib(gauss_jacobi_rule(16, 3))?;
            close(
                "E 1",
                lib(tensor_expectation(|_| 1.0, &rule, 3))?,
                1.0,
                1e-12,
            )?;
            close(
                "E sum theta^2",
                lib(tensor_expectation(
                    |t| t.iter().map(|v| v * v).sum(),
                    &rule,
                    3,
                ))?,
                1.0,
                1e-10,
            )?;
            let r64 = lib(gauss_jacobi_rule(64, 3))?;
            let q = lib(tensor_expectation(|t| (t[0] + t[1]).abs(), &r64, 2))?;
            let law = SampleLaw::Projection(lib(crate::distributions::ProjectionDist::new(3))?);
            let mc = lib(mc_expectation(
                |t| (t[0] + t[1]).abs(),
                law,
                2,
                1_000_000,
                RandomStream::new(3, 0),
            ))?;
            within_sigma("E|t1 + t2|", &mc, q, 3.0)
        }),
        ("singular_expectation", |_| {
            let rule = lib(gauss_jacobi_rule(24, 3))?;
            close(
                "E|theta|^-1/2",
                lib(singular_expectation(|_| 1.0, &[1.0], -0.5, &rule))?,
                2.0,
                1e-12,
            )?;
            close(
                "zero prefactor",
                lib(singular_expectation(|_| 0.0, &[1.0, 1.0], -0.5, &rule))?,
                0.0,
                0.0,
            )?;
            let v = lib(singular_expectation(
                |_| 1.0,
                &[1.0, 1.0],
                -0.5,
                &lib(gauss_jacobi_rule(48, 3))?,
            ))?;
            // finite-variance vector form: E|xi1 + xi2|^q / beta_{q,3}
            let raw = lib(mc_expectation(
                |u| {
                    let s: f64 = (0..3).map(|i| (u[i] + u[3 + i]).powi(2)).sum();
                    s.powf(-0.25)
                },
                SampleLaw::Sphere(lib(SphereDist::new(3))?),
                2,
                2_000_000,
                RandomStream::new(3, 1),
            ))?;
            let b = lib(beta_pd(-0.5, 3))?;
            let mc = crate::integrate::EstimateWithError {
                value: raw.value / b,
                std_error: raw.std_error / b,
                samples: raw.samples,
            };
            within_sigma("E|t1 + t2|^-1/2", &mc, v, 3.0)
        }),
        ("mc_expectation", |_| {
            let law3 = SampleLaw::Projection(lib(crate::distributions::ProjectionDist::new(4))?);
            let c = lib(mc_expectation(
                |_| 2.5,
                law3,
                1,
                1000,
                RandomStream::new(4, 0),
            ))?;
            ensure("constant", c.value == 2.5 && c.std_error == 0.0)?;
            let m = lib(mc_expectation(
                |t| t[0] * t[0],
                law3,
                1,
                200_000,
                RandomStream::new(4, 1),
            ))?;
            within_sigma("E theta^2 (d=4)", &m, 0.25, 4.0)?;
            let law2 = SampleLaw::Projection(lib(crate::distributions::ProjectionDist::new(2))?);
            let mc = lib(mc_expectation(
                |t| (t[0] + t[1]).abs().powi(3),
                law2,
                2,
                400_000,
                RandomStream::new(4, 2),
            ))?;
            let q = lib(tensor_expectation(
                |t| (t[0] + t[1]).abs().powi(3),
                &lib(gauss_jacobi_rule(64, 2))?,
                2,
            ))?;
            within_sigma("E|t1 + t2|^3 (d=2)", &mc, q, 3.0)
        }),
    ]
}

fn phi_cases() -> Vec<Case> {
    vec![
        ("phi_projected", |c| {
            close(
                "n = 1",
                projected_with(c, &pt(3.3, 3, &[2.2])?, 16)?,
                2.2,
                1e-12,
            )?;
            close(
                "p = 2",
                projected_with(c, &pt(2.0, 5, &[0.5, 1.0, 2.5])?, 16)?,
                4.0,
                1e-12,
            )?;
            // E|xi1 + xi2|^4 = (1/2pi) int (2 + 2 cos t)^2 dt = 6
            let p4 = pt(4.0, 2, &[1.0, 1.0])?;
            close("p=4 d=2 (1,1)", projected_with(c, &p4, 16)?, 6.0, 1e-12)?;
            let mc = lib(phi_mc(&p4, 400_000, RandomStream::new(5, 0)))?;
            within_sigma("p=4 d=2 MC", &mc, projected_with(c, &p4, 16)?, 3.0)
        }),
        ("phi_mc", |_| {
            let one = lib(phi_mc(&pt(2.5, 3, &[1.7])?, 1000, RandomStream::new(5, 1)))?;
            ensure(
                "n = 1 exact",
                (one.value - 1.7).abs() < 1e-12 && one.std_error < 1e-12,
            )?;
            let two = lib(phi_mc(
                &pt(2.0, 4, &[1.0, 2.0])?,
                200_000,
                RandomStream::new(5, 2),
            ))?;
            within_sigma("p = 2", &two, 3.0, 4.0)?;
            let p3 = pt(3.0, 3, &[1.0, 2.0, 3.0])?;
            let q = lib(phi_projected(&p3, &lib(gauss_jacobi_rule(40, 3))?))?;
            within_sigma(
                "p=3 d=3 (1,2,3)",
                &lib(phi_mc(&p3, 1_000_000, RandomStream::new(5, 3)))?,
                q,
                3.0,
            )
        }),
        ("phi_rademacher_exact", |_| {
            let (s, t, p) = (1.4f64, 0.6f64, 3.5);
            let v = lib(phi_rademacher_exact(&pt(p, 1, &[s.powf(p), t.powf(p)])?))?;
            close(
                "n = 2",
                v,
                ((s + t).powf(p) + (s - t).abs().powf(p)) / 2.0,
                1e-13,
            )?;
            close(
                "n = 1",
                lib(phi_rademacher_exact(&pt(2.2, 1, &[0.8])?))?,
                0.8,
                1e-14,
            )?;
            close(
                "n=3 p=4",
                lib(phi_rademacher_exact(&pt(4.0, 1, &[1.0, 1.0, 1.0])?))?,
                21.0,
                1e-14,
            )
        }),
    ]
}

fn hessian_cases() -> Vec<Case> {
    vec![
        ("gamma_ij", |_| {
            let r = lib(gauss_jacobi_rule(40, 3))?;
            let g = lib(gamma_matrix(&pt(2.0, 3, &[0.3, 1.0, 2.0])?, &r))?;
            ensure("p = 2 off-diagonal", g[0][1] == 0.0)?;
            close("p = 2 diagonal", g[2][2], 1.0 / 3.0, 1e-14)?;
            let p4 = pt(4.0, 3, &[1.0, 1.0])?;
            let g = lib(gamma_matrix(&p4, &lib(gauss_jacobi_rule(32, 3))?))?;
            close("p=4 d=3 (1,1)", g[0][1], 2.0 / 9.0, 1e-12)?;
            within_sigma(
                "p=4 d=3 MC",
                &lib(gamma_mc(&p4, 0, 1, 400_000, RandomStream::new(6, 0)))?,
                g[0][1],
                3.0,
            )
        }),
        ("ekl", |_| {
            let r = lib(gauss_jacobi_rule(40, 3))?;
            let g = lib(gamma_matrix(&pt(2.0, 3, &[1.0, 0.5, 2.0])?, &r))?;
            ensure("p = 2", ekl_entries(&g).iter().all(|e| e.2.abs() <= 1e-12))?;
            let g = lib(gamma_matrix_rademacher(&pt(4.0, 1, &[1.0, 1.0])?))?;
            close("d = 1 p = 4", g[0][1], 2.0, 1e-15)?;
            let g = lib(gamma_matrix(&pt(1.5, 3, &[1.0, 1.0, 1.0])?, &r))?;
            let s = gamma_scale(&g);
            ensure(
                "p=1.5 d=3 nonpositive",
                ekl_entries(&g).iter().all(|e| e.2 <= 1e-8 * s),
            )
        }),
        ("hessian_quadratic_form", |_| {
            let r = lib(gauss_jacobi_rule(40, 3))?;
            let p = pt(3.1, 3, &[0.4, 1.0, 1.6])?;
            let a = lib(Direction::new(p.x.clone()))?;
            near(
                "a = x",
                lib(hessian_quadratic_form(&p, &a, &r))?,
                0.0,
                1e-12,
            )?;
            let one = pt(3.0, 3, &[1.2])?;
            near(
                "n = 1",
                lib(hessian_quadratic_form(
                    &one,
                    &lib(Direction::new(vec![1.0]))?,
                    &r,
                ))?,
                0.0,
                1e-14,
            )?;
            let two = pt(4.0, 2, &[1.0, 2.0])?;
            let r2 = lib(gauss_jacobi_rule(64, 2))?;
            let q = lib(hessian_quadratic_form(
                &two,
                &lib(Direction::new(vec![1.0, -1.0]))?,
                &r2,
            ))?;
            let fd = lib(fd_hessian_projected(&two, 1e-4, &r2))?;
            close(
                "p=4 d=2 (1,2) vs FD",
                q,
                fd[0][0] - 2.0 * fd[0][1] + fd[1][1],
                1e-5,
            )
        }),
        ("hessian_matrix", |_| {
            let r = lib(gauss_jacobi_rule(40, 3))?;
            let h = lib(hessian_matrix(&pt(2.0, 3, &[0.5, 1.0, 3.0])?, &r))?;
            ensure("p = 2 zero", h.iter().flatten().all(|v| v.abs() <= 1e-10))?;
            near(
                "n = 1",
                lib(hessian_matrix(&pt(3.0, 3, &[2.0])?, &r))?[0][0],
                0.0,
                1e-14,
            )?;
            let p = pt(3.0, 3, &[1.0, 2.0, 3.0])?;
            let h = lib(hessian_matrix(&p, &r))?;
            let fd = lib(fd_hessian_projected(&p, 1e-4, &r))?;
            let scale = h.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
            let err = h
                .iter()
                .flatten()
                .zip(fd.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ensure(
                &format!("p=3 d=3 (1,2,3) vs FD: {err} > 1e-5 * {scale}"),
                err <= 1e-5 * scale,
            )
        }),
        ("fd_hessian", |_| {
            let lin = lib(fd_hessian(&[0.3, 1.1], 1e-3, |x| Ok(x[0] + x[1])))?;
            ensure("linear", lin.iter().flatten().all(|v| v.abs() < 1e-8))?;
            let (a, b) = (0.6, 1.4);
            let fd = lib(fd_hessian(&[a, b], 1e-4, |x| {
                Ok(x[0] * x[1] / (x[0] + x[1]))
            }))?;
            let s3 = (a + b) * (a + b) * (a + b);
            near("f_11", fd[0][0], -2.0 * b * b / s3, 1e-6)?;
            near("f_12", fd[0][1], 2.0 * a * b / s3, 1e-6)?;
            near("f_22", fd[1][1], -2.0 * a * a / s3, 1e-6)?;
            let sym = lib(fd_hessian_projected(
                &pt(4.0, 2, &[1.0, 1.0])?,
                1e-4,
                &lib(gauss_jacobi_rule(64, 2))?,
            ))?;
            near("symmetric", sym[0][1], sym[1][0], 1e-8)
        }),
        ("definiteness", |_| {
            ensure(
                "identity",
                lib(definiteness(&vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1e-8))? == Verdict::Psd,
            )?;
            ensure(
                "diag(1, -1)",
                lib(definiteness(&vec![vec![1.0, 0.0], vec![0.0, -1.0]], 1e-8))?
                    == Verdict::Indefinite,
            )?;
            let p = pt(4.0, 2, &[0.7, 1.3, 0.45])?;
            let h = lib(hessian_matrix(
                &p,
                &lib(gauss_jacobi_rule(default_order(3), 2))?,
            ))?;
            ensure(
                "p=4 d=2 n=3 NSD",
                lib(definiteness(&h, 1e-8))? == Verdict::Nsd,
            )
        }),
    ]
}

fn sf(pieces: &[(f64, f64)]) -> std::result::Result<StepFunction, String> {
    lib(StepFunction::new(pieces.to_vec()))
}

fn sample_functions(seed: u64, count: usize) -> std::result::Result<Vec<StepFunction>, String> {
    // a small fixed generator keeps the suite independent of rand's API
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut unif = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..count)
        .map(|_| {
            let k = 1 + (unif() * 5.0) as usize;
            let raw: Vec<f64> = (0..k).map(|_| 0.1 + unif()).collect();
            let total: f64 = raw.iter().sum();
            let mut pieces: Vec<(f64, f64)> = raw
                .iter()
                .map(|l| (l / total, 6.0 * unif() - 3.0))
                .collect();
            let head: f64 = pieces[..k - 1].iter().map(|p| p.0).sum();
            pieces[k - 1].0 = 1.0 - head;
            sf(&pieces)
        })
        .collect()
}

fn hanner_cases() -> Vec<Case> {
    vec![
        ("lp_norm", |_| {
            close(
                "constant",
                lib(lp_norm(&sf(&[(1.0, 1.0)])?, 2.5))?,
                1.0,
                0.0,
            )?;
            close(
                "two pieces",
                lib(lp_norm(&sf(&[(0.5, 2.0), (0.5, 0.0)])?, 2.0))?,
                2f64.sqrt(),
                1e-15,
            )?;
            close(
                "p = 3",
                lib(lp_norm(&sf(&[(0.3, 1.0), (0.7, -2.0)])?, 3.0))?,
                5.9f64.cbrt(),
                1e-15,
            )
        }),
        ("theorem_sides", |_| {
            let f = sf(&[(0.2, 1.0), (0.8, -1.5)])?;
            let e3 = PhiEvaluator::for_dim(3);
            let n1 = lib(lp_norm(&f, 3.0))?.powi(3);
            close(
                "lhs n = 1",
                lib(theorem_lhs(std::slice::from_ref(&f), 3.0, &e3))?,
                n1,
                1e-12,
            )?;
            close(
                "rhs n = 1",
                lib(theorem_rhs(std::slice::from_ref(&f), 3.0, &e3))?,
                n1,
                1e-12,
            )?;
            let fs = sample_functions(1, 3)?;
            let sq: f64 = fs
                .iter()
                .map(|f| lp_norm(f, 2.0).map(|v| v * v))
                .sum::<Result<f64>>()
                .map_err(|e| e.to_string())?;
            close("lhs p = 2", lib(theorem_lhs(&fs, 2.0, &e3))?, sq, 1e-12)?;
            close("rhs p = 2", lib(theorem_rhs(&fs, 2.0, &e3))?, sq, 1e-12)?;
            let ones = [sf(&[(1.0, 1.0)])?, sf(&[(1.0, 1.0)])?];
            let e1 = PhiEvaluator::for_dim(1);
            close(
                "lhs constants",
                lib(theorem_lhs(&ones, 3.0, &e1))?,
                4.0,
                1e-14,
            )?;
            close(
                "rhs constants",
                lib(theorem_rhs(&ones, 3.0, &e1))?,
                4.0,
                1e-14,
            )
        }),
        ("theorem_check", |_| {
            let f = sample_functions(2, 1)?.remove(0);
            let same = vec![f.clone(), f.clone(), f];
            let r = lib(theorem_check(
                &same,
                3.0,
                2,
                &PhiEvaluator::for_dim(2),
                1e-10,
            ))?;
            near("equal functions", r.margin, 0.0, 1e-10 * r.rhs)?;
            let fs = sample_functions(3, 3)?;
            let r = lib(theorem_check(&fs, 2.0, 3, &PhiEvaluator::for_dim(3), 1e-10))?;
            near("p = 2 equality", r.margin, 0.0, 1e-10 * r.rhs)?;
            let r = lib(theorem_check(&fs, 4.0, 2, &PhiEvaluator::for_dim(2), 1e-10))?;
            ensure("p=4 d=2 PASS", r.verdict == CheckVerdict::Pass)?;
            let r = lib(theorem_check(&fs, 1.5, 2, &PhiEvaluator::for_dim(2), 1e-10))?;
            ensure(
                "p=1.5 d=2 CONJECTURAL",
                r.verdict == CheckVerdict::Conjectural,
            )
        }),
        ("hanner_two_rhs", |_| {
            close(
                "(1,1)",
                lib(hanner_two_rhs(1.0, 1.0, 3.3))?,
                2f64.powf(3.3),
                1e-15,
            )?;
            close("(1,0)", lib(hanner_two_rhs(1.0, 0.0, 3.3))?, 2.0, 0.0)?;
            close("(2,1,3)", lib(hanner_two_rhs(2.0, 1.0, 3.0))?, 28.0, 0.0)
        }),
        ("schechtman_check", |_| {
            let fs = sample_functions(4, 2)?;
            let p = 3.5;
            let r = lib(schechtman_check(&fs, p, 1e-10))?;
            let two = lib(hanner_two_rhs(
                lib(lp_norm(&fs[0], p))?,
                lib(lp_norm(&fs[1], p))?,
                p,
            ))?;
            close(
                "n = 2 reduces to the classical rhs",
                2.0 * r.rhs,
                two,
                1e-13,
            )?;
            let f = fs[0].clone();
            let r = lib(schechtman_check(&[f.clone(), f.clone(), f], p, 1e-12))?;
            near("equal functions", r.margin, 0.0, 1e-12 * r.rhs)?;
            let r = lib(schechtman_check(&sample_functions(5, 4)?, p, 1e-10))?;
            ensure("four functions", r.margin >= -1e-10)
        }),
    ]
}

fn sweep(p: f64, d: usize, n: usize, x: XSampling) -> SweepConfig {
    SweepConfig {
        p: PRange::single(p),
        d: vec![d],
        n: vec![n],
        x,
        order: None,
        mc_samples: 200_000,
        seed: 11,
        tol: 1e-8,
        open_range: false,
    }
}

fn random_x(count: usize) -> XSampling {
    XSampling::LogUniform {
        count,
        low: 0.1,
        high: 3.0,
    }
}

fn count(r: &SweepReport, v: Verdict) -> usize {
    r.points.iter().filter(|p| p.verdict == v).count()
}

fn explorer_cases() -> Vec<Case> {
    vec![
        ("certify_regime", |_| {
            let r = lib(certify_regime(&sweep(2.0, 3, 2, random_x(5))))?;
            ensure("p = 2 zero Hessians", r.summary.zero_hessians == 5)?;
            let r = lib(certify_regime(&sweep(4.0, 2, 3, random_x(50))))?;
            ensure("p=4 d=2: 50 NSD", count(&r, Verdict::Nsd) == 50)?;
            let r = lib(certify_regime(&sweep(1.5, 3, 3, random_x(50))))?;
            ensure("p=1.5 d=3: 50 PSD", count(&r, Verdict::Psd) == 50)?;
            ensure(
                "open range refused",
                certify_regime(&sweep(1.5, 2, 3, random_x(1))).is_err(),
            )
        }),
        ("sign_map", |_| {
            let r = lib(sign_map(&sweep(
                3.0,
                3,
                2,
                XSampling::Simplex { step: 0.1 },
            )))?;
            ensure(
                "p >= 2 nonnegative",
                r.points
                    .iter()
                    .all(|p| p.ekl_min.is_some_and(|m| m >= -1e-8 * p.scale)),
            )?;
            let r = lib(sign_map(&sweep(
                2.0,
                2,
                3,
                XSampling::Simplex { step: 0.2 },
            )))?;
            ensure(
                "p = 2 zero",
                r.points
                    .iter()
                    .all(|p| p.ekl.iter().all(|e| e.value.abs() <= 1e-12)),
            )?;
            let r = lib(sign_map(&sweep(
                1.5,
                2,
                3,
                XSampling::Simplex { step: 0.05 },
            )))?;
            ensure("d=2 p=1.5 n=3 witness", !r.summary.witnesses.is_empty())
        }),
        ("open_range_hunt", |_| {
            let r = lib(open_range_hunt(&sweep(
                4.0,
                1,
                3,
                XSampling::Simplex { step: 0.1 },
            )))?;
            ensure(
                "d=1 p=4 no wrong signs",
                r.summary.witnesses.is_empty() && count(&r, Verdict::Nsd) == r.points.len(),
            )?;
            let r = lib(open_range_hunt(&sweep(
                1.5,
                2,
                2,
                XSampling::Simplex { step: 0.1 },
            )))?;
            ensure(
                "d=2 p=1.5 n=2 PSD",
                count(&r, Verdict::Psd) == r.points.len(),
            )?;
            let r = lib(open_range_hunt(&sweep(
                1.5,
                2,
                3,
                XSampling::Simplex { step: 0.05 },
            )))?;
            let w: Vec<_> = r
                .points
                .iter()
                .filter(|p| p.status == PointStatus::Witness)
                .collect();
            ensure(
                "witnesses carry a confirmation",
                !w.is_empty()
                    && w.iter()
                        .all(|p| p.confirmation.as_ref().is_some_and(|c| c.confirmed)),
            )
        }),
        ("emit_report", |_| {
            let empty = SweepReport::empty("signmap", sweep(3.0, 3, 2, random_x(1)));
            let csv = lib(render_report(&empty, ReportFormat::Csv))?;
            ensure(
                "empty csv has a header only",
                String::from_utf8_lossy(&csv).lines().count() == 1,
            )?;
            let c = sweep(3.0, 3, 3, random_x(3));
            let r = lib(sign_map(&c))?;
            let json = lib(render_report(&r, ReportFormat::Json))?;
            ensure("json round trip", lib(parse_report(&json))? == r)?;
            ensure(
                "same seed, same bytes",
                lib(render_report(&lib(sign_map(&c))?, ReportFormat::Json))? == json,
            )
        }),
    ]
}

fn all_cases() -> Vec<(&'static str, Vec<Case>)> {
    vec![
        ("specfun", specfun_cases()),
        ("distributions", distribution_cases()),
        ("integrate", integrate_cases()),
        ("phi", phi_cases()),
        ("hessian", hessian_cases()),
        ("hanner", hanner_cases()),
        ("explorer", explorer_cases()),
    ]
}

/// Run the golden suites selected by `opts`.
pub fn run_selftest(opts: &SelftestOptions) -> SelftestOutcome {
    let ctx = Ctx {
        beta: opts.beta_table,
    };
    let mut out = SelftestOutcome::default();
    for (suite, cases) in all_cases() {
        if opts
            .filter
            .as_ref()
            .is_some_and(|f| !suite.contains(f.as_str()))
        {
            continue;
        }
        for (name, case) in cases {
            let res = case(&ctx);
            out.cases.push(CaseOutcome {
                suite,
                name,
                passed: res.is_ok(),
                detail: res.err().unwrap_or_default(),
            });
        }
    }
    out
}
