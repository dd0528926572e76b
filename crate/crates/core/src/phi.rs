//! The concavity functional `phi_n(x) = E|sum_k x_k^{1/p} xi_k|^p`.
//!
//! Three evaluators: projected quadrature `beta_{p,d} E|sum_k x_k^{1/p} theta_k|^p`
//! (`d >= 2`), direct sphere Monte Carlo, and exact sign enumeration for the
//! Rademacher case `d = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{RandomStream, SphereDist};
use crate::error::{contract, domain, HannerError, Result};
use crate::integrate::{
    gauss_jacobi_rule, mc_expectation, power_expectation_multi_inner, EstimateWithError,
    QuadratureRule, SampleLaw, DEFAULT_TENSOR_BUDGET,
};
use crate::numeric::{abs_pow, KahanSum};
use crate::specfun::{beta_pd, PExponent};

/// Largest `n` accepted by exact sign enumeration.
pub const ENUMERATION_MAX_N: usize = 24;

/// The argument `(p, d, x)` of `phi_n`; `n = x.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HannerPoint {
    pub p: PExponent,
    pub d: usize,
    pub x: Vec<f64>,
}

impl HannerPoint {
    pub fn new(p: f64, d: usize, x: Vec<f64>) -> Result<Self> {
        let p = PExponent::new(p)?;
        if d < 1 {
            return Err(domain("dimension d must be at least 1"));
        }
        if x.is_empty() {
            return Err(domain("a Hanner point needs at least one weight"));
        }
        if let Some(bad) = x.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(domain(format!(
                "weights must be finite and strictly positive, got {bad}"
            )));
        }
        Ok(Self { p, d, x })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn p(&self) -> f64 {
        self.p.p()
    }

    /// Coefficients `c_k = x_k^{1/p}` multiplying the random vectors.
    pub fn coeffs(&self) -> Vec<f64> {
        let inv = 1.0 / self.p();
        self.x.iter().map(|v| v.powf(inv)).collect()
    }

    /// Same `(p, d)` at new weights.
    pub fn with_x(&self, x: Vec<f64>) -> Result<Self> {
        Self::new(self.p(), self.d, x)
    }
}

/// Default Gauss order for an `n`-fold expectation, chosen so that the
/// split tensor grid stays at desk scale on a single core.
pub fn default_order(n: usize) -> usize {
    match n {
        0..=2 => 64,
        3 => 40,
        4 => 20,
        5 => 12,
        _ => 8,
    }
}

/// `true` when an `n`-fold expectation at order `m` fits the tensor budget.
pub fn fits_budget(m: usize, n: usize) -> bool {
    (m as f64).powi(n as i32) <= DEFAULT_TENSOR_BUDGET as f64
}

fn check_rule(pt: &HannerPoint, rule: &QuadratureRule) -> Result<()> {
    if pt.d < 2 {
        return Err(contract(
            "projected evaluation needs d >= 2; use enumeration for d = 1",
        ));
    }
    if rule.dim() != pt.d {
        return Err(contract(format!(
            "quadrature rule is for d = {} but the point has d = {}",
            rule.dim(),
            pt.d
        )));
    }
    Ok(())
}

/// `phi_n(x) = beta_{p,d} E|sum_k x_k^{1/p} theta_k|^p` by quadrature.
pub fn phi_projected(pt: &HannerPoint, rule: &QuadratureRule) -> Result<f64> {
    phi_projected_inner(pt, rule, None)
}

/// [`phi_projected`] with the split variable pinned (see
/// [`power_expectation_multi_inner`]).
pub fn phi_projected_inner(
    pt: &HannerPoint,
    rule: &QuadratureRule,
    inner: Option<usize>,
) -> Result<f64> {
    check_rule(pt, rule)?;
    let p = pt.p();
    let beta = beta_pd(p, pt.d)?;
    let v = power_expectation_multi_inner(|_, out| out[0] = 1.0, 1, &pt.coeffs(), p, rule, inner)?;
    Ok(beta * v[0])
}

/// Monte Carlo estimate of `E|sum_k x_k^{1/p} xi_k|^p` from sphere draws (any `d >= 1`).
pub fn phi_mc(pt: &HannerPoint, samples: u64, stream: RandomStream) -> Result<EstimateWithError> {
    let d = pt.d;
    let c = pt.coeffs();
    let p = pt.p();
    let law = SampleLaw::Sphere(SphereDist::new(d)?);
    mc_expectation(
        |v| {
            let mut norm2 = 0.0;
            for i in 0..d {
                let s: f64 = c.iter().enumerate().map(|(k, ck)| ck * v[k * d + i]).sum();
                norm2 += s * s;
            }
            norm2.powf(0.5 * p)
        },
        law,
        pt.n(),
        samples,
        stream,
    )
}

/// Exact `E[f(S, eps)]` over the `2^n` sign patterns, `S = sum_k c_k eps_k`.
///
/// `f(s, signs, out)` writes `outputs` values; `signs[k]` is `+-1`. Only patterns
/// with `eps_1 = +1` are visited; `f` must be invariant under a global sign flip.
pub fn rademacher_expectation<F>(coeffs: &[f64], outputs: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    let n = coeffs.len();
    if n == 0 {
        return Err(contract("enumeration needs at least one coefficient"));
    }
    if n > ENUMERATION_MAX_N {
        return Err(HannerError::Resource(format!(
            "sign enumeration over 2^{n} patterns exceeds the n <= {ENUMERATION_MAX_N} budget"
        )));
    }
    let patterns: u64 = 1 << (n - 1);
    let chunk: u64 = 1 << 12;
    let chunks = patterns.div_ceil(chunk);
    let parts: Vec<Vec<KahanSum>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut acc = vec![KahanSum::new(); outputs];
            let mut signs = vec![1.0; n];
            let mut buf = vec![0.0; outputs];
            for mask in ci * chunk..((ci + 1) * chunk).min(patterns) {
                let mut s = coeffs[0];
                for k in 1..n {
                    let e = if mask >> (k - 1) & 1 == 1 { -1.0 } else { 1.0 };
                    signs[k] = e;
                    s += e * coeffs[k];
                }
                f(s, &signs, &mut buf);
                for (a, &b) in acc.iter_mut().zip(&buf) {
                    a.add(b);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![KahanSum::new(); outputs];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.add(p.value());
        }
    }
    Ok(total
        .into_iter()
        .map(|s| s.value() / patterns as f64)
        .collect())
}

/// `E|sum_k x_k^{1/p} eps_k|^p` by exact enumeration (`d = 1`, `n <= 24`).
pub fn phi_rademacher_exact(pt: &HannerPoint) -> Result<f64> {
    if pt.d != 1 {
        return Err(contract("sign enumeration is the d = 1 evaluator"));
    }
    let p = pt.p();
    Ok(rademacher_expectation(&pt.coeffs(), 1, |s, _, out| out[0] = abs_pow(s, p))?[0])
}

/// How `phi_n` is evaluated for a given dimension.
#[derive(Debug, Clone)]
pub enum PhiEvaluator {
    /// `d = 1`: exact enumeration.
    Enumeration,
    /// `d >= 2`: projected quadrature; rules are chosen per `n` by [`default_order`]
    /// unless a fixed order is requested.
    Quadrature { d: usize, order: Option<usize> },
}

impl PhiEvaluator {
    pub fn for_dim(d: usize) -> Self {
        if d == 1 {
            PhiEvaluator::Enumeration
        } else {
            PhiEvaluator::Quadrature { d, order: None }
        }
    }

    pub fn with_order(d: usize, m: usize) -> Self {
        if d == 1 {
            PhiEvaluator::Enumeration
        } else {
            PhiEvaluator::Quadrature { d, order: Some(m) }
        }
    }

    /// Quadrature rule used for an `n`-fold expectation, if any.
    pub fn rule(&self, n: usize) -> Result<Option<QuadratureRule>> {
        match self {
            PhiEvaluator::Enumeration => Ok(None),
            PhiEvaluator::Quadrature { d, order } => Ok(Some(gauss_jacobi_rule(
                order.unwrap_or_else(|| default_order(n)),
                *d,
            )?)),
        }
    }

    /// `phi_n` at `x`; `n = 1` returns `x_1` exactly.
    pub fn phi(&self, p: f64, x: &[f64]) -> Result<f64> {
        let d = match self {
            PhiEvaluator::Enumeration => 1,
            PhiEvaluator::Quadrature { d, .. } => *d,
        };
        let pt = HannerPoint::new(p, d, x.to_vec())?;
        if pt.n() == 1 {
            return Ok(pt.x[0]);
        }
        match self.rule(pt.n())? {
            None => phi_rademacher_exact(&pt),
            Some(rule) => phi_projected(&pt, &rule),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pt(p: f64, d: usize, x: &[f64]) -> HannerPoint {
        HannerPoint::new(p, d, x.to_vec()).unwrap()
    }

    #[test]
    fn point_validation() {
        assert!(HannerPoint::new(0.5, 2, vec![1.0]).is_err());
        assert!(HannerPoint::new(2.0, 2, vec![]).is_err());
        assert!(HannerPoint::new(2.0, 2, vec![1.0, 0.0]).is_err());
        assert!(HannerPoint::new(2.0, 0, vec![1.0]).is_err());
    }

    #[test]
    fn projected_golden() {
        for d in [2, 3, 5] {
            let rule = gauss_jacobi_rule(32, d).unwrap();
            for &p in &[1.3, 2.5, 4.0] {
                assert_relative_eq!(
                    phi_projected(&pt(p, d, &[3.7]), &rule).unwrap(),
                    3.7,
                    max_relative = 1e-12
                );
            }
            let x = [0.3, 1.7, 2.2];
            assert_relative_eq!(
                phi_projected(&pt(2.0, d, &x), &rule).unwrap(),
                4.2,
                max_relative = 1e-12
            );
        }
        // E|xi1 + xi2|^4 on the circle = (1/2pi) int (2 + 2 cos t)^2 dt = 6
        let rule = gauss_jacobi_rule(16, 2).unwrap();
        assert_relative_eq!(
            phi_projected(&pt(4.0, 2, &[1.0, 1.0]), &rule).unwrap(),
            6.0,
            max_relative = 1e-12
        );
        let mc = phi_mc(&pt(4.0, 2, &[1.0, 1.0]), 400_000, RandomStream::new(4, 0)).unwrap();
        assert!(mc.agrees_with(6.0, 3.0), "{mc:?}");
    }

    #[test]
    fn projected_rejects_mismatched_rule() {
        let rule = gauss_jacobi_rule(8, 3).unwrap();
        assert!(matches!(
            phi_projected(&pt(3.0, 2, &[1.0, 1.0]), &rule),
            Err(HannerError::Contract(_))
        ));
        assert!(matches!(
            phi_projected(&pt(3.0, 1, &[1.0, 1.0]), &rule),
            Err(HannerError::Contract(_))
        ));
    }

    #[test]
    fn mc_golden() {
        let one = phi_mc(&pt(3.0, 3, &[2.5]), 10_000, RandomStream::new(1, 0)).unwrap();
        assert_relative_eq!(one.value, 2.5, max_relative = 1e-12);
        assert!(one.std_error < 1e-12);
        let two = phi_mc(
            &pt(2.0, 4, &[1.0, 2.0, 0.5]),
            200_000,
            RandomStream::new(1, 1),
        )
        .unwrap();
        assert!(two.agrees_with(3.5, 4.0), "{two:?}");
        let p3 = pt(3.0, 3, &[1.0, 2.0, 3.0]);
        let quad = phi_projected(&p3, &gauss_jacobi_rule(40, 3).unwrap()).unwrap();
        let mc = phi_mc(&p3, 1_000_000, RandomStream::new(1, 2)).unwrap();
        assert!(mc.agrees_with(quad, 3.0), "{quad} vs {mc:?}");
    }

    #[test]
    fn rademacher_golden() {
        let (s, t, p) = (1.3f64, 0.4f64, 3.3);
        let v = phi_rademacher_exact(&pt(p, 1, &[s.powf(p), t.powf(p)])).unwrap();
        assert_relative_eq!(
            v,
            ((s + t).powf(p) + (s - t).abs().powf(p)) / 2.0,
            max_relative = 1e-13
        );
        assert_eq!(
            phi_rademacher_exact(&pt(2.7, 1, &[1.9])).unwrap(),
            1.9f64.powf(1.0 / 2.7).powf(2.7)
        );
        // (2 * 3^4 + 6 * 1) / 8 from the eight sign patterns
        assert_relative_eq!(
            phi_rademacher_exact(&pt(4.0, 1, &[1.0, 1.0, 1.0])).unwrap(),
            21.0,
            max_relative = 1e-14
        );
        assert!(matches!(
            phi_rademacher_exact(&pt(3.0, 1, &[1.0; 25])),
            Err(HannerError::Resource(_))
        ));
    }

    #[test]
    fn rademacher_matches_brute_force() {
        // independent oracle: all 2^n patterns, no symmetry reduction
        let x = [0.4, 1.1, 2.0, 0.7, 1.5];
        let p = 2.6;
        let c: Vec<f64> = x.iter().map(|v: &f64| v.powf(1.0 / p)).collect();
        let n = x.len();
        let mut acc = 0.0;
        for mask in 0..(1u32 << n) {
            let s: f64 = (0..n)
                .map(|k| if mask >> k & 1 == 1 { -c[k] } else { c[k] })
                .sum();
            acc += s.abs().powf(p);
        }
        acc /= (1u32 << n) as f64;
        assert_relative_eq!(
            phi_rademacher_exact(&pt(p, 1, &x)).unwrap(),
            acc,
            max_relative = 1e-13
        );
    }

    #[test]
    fn evaluator_dispatch() {
        assert!(matches!(
            PhiEvaluator::for_dim(1),
            PhiEvaluator::Enumeration
        ));
        let e = PhiEvaluator::for_dim(3);
        assert_eq!(e.phi(3.0, &[2.0]).unwrap(), 2.0);
        assert_relative_eq!(
            e.phi(2.0, &[2.0, 1.0, 0.5]).unwrap(),
            3.5,
            max_relative = 1e-12
        );
    }

    fn concavity_gap(
        p: f64,
        d: usize,
        x: &[f64],
        y: &[f64],
        lam: f64,
        rule: &QuadratureRule,
    ) -> (f64, f64) {
        let z: Vec<f64> = x
            .iter()
            .zip(y)
            .map(|(a, b)| lam * a + (1.0 - lam) * b)
            .collect();
        let fz = phi_projected(&pt(p, d, &z), rule).unwrap();
        let fx = phi_projected(&pt(p, d, x), rule).unwrap();
        let fy = phi_projected(&pt(p, d, y), rule).unwrap();
        (fz - lam * fx - (1.0 - lam) * fy, fz.abs())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn homogeneity(p in 1.1f64..5.0, d in prop::sample::select(vec![2usize, 3, 5]),
                       x in prop::collection::vec(0.05f64..3.0, 1..4), lam in 0.1f64..10.0) {
            let rule = gauss_jacobi_rule(default_order(x.len()), d).unwrap();
            let base = phi_projected(&pt(p, d, &x), &rule).unwrap();
            let scaled: Vec<f64> = x.iter().map(|v| v * lam).collect();
            let s = phi_projected(&pt(p, d, &scaled), &rule).unwrap();
            prop_assert!((s - lam * base).abs() <= 1e-9 * (lam * base).abs());
            let e = phi_rademacher_exact(&pt(p, 1, &scaled)).unwrap();
            let b = phi_rademacher_exact(&pt(p, 1, &x)).unwrap();
            prop_assert!((e - lam * b).abs() <= 1e-9 * (lam * b).abs());
        }

        #[test]
        fn permutation_symmetry(p in 1.1f64..5.0, d in prop::sample::select(vec![2usize, 3, 5]),
                                x in prop::collection::vec(0.05f64..3.0, 2..4)) {
            let rule = gauss_jacobi_rule(default_order(x.len()), d).unwrap();
            let base = phi_projected(&pt(p, d, &x), &rule).unwrap();
            let mut rev = x.clone();
            rev.reverse();
            let r = phi_projected(&pt(p, d, &rev), &rule).unwrap();
            // the split variable follows the largest weight, so permutations see the same grid
            prop_assert!((r - base).abs() <= 1e-10 * base);
        }

        #[test]
        fn concave_for_large_p(p in 2.0f64..5.0, d in prop::sample::select(vec![2usize, 3, 5]),
                               x in prop::collection::vec(0.05f64..3.0, 2..4),
                               seed in 0u64..1000, lam in 0.05f64..0.95) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * (0.2 + ((seed + 7 * i as u64) % 17) as f64 / 6.0)).collect();
            let rule = gauss_jacobi_rule(default_order(x.len()), d).unwrap();
            let (gap, scale) = concavity_gap(p, d, &x, &y, lam, &rule);
            prop_assert!(gap >= -1e-8 * scale, "gap {gap}");
        }

        #[test]
        fn convex_for_small_p(p in 1.05f64..2.0, d in prop::sample::select(vec![3usize, 5]),
                              x in prop::collection::vec(0.05f64..3.0, 2..4),
                              seed in 0u64..1000, lam in 0.05f64..0.95) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * (0.2 + ((seed + 5 * i as u64) % 13) as f64 / 4.0)).collect();
            let rule = gauss_jacobi_rule(default_order(x.len()), d).unwrap();
            let (gap, scale) = concavity_gap(p, d, &x, &y, lam, &rule);
            prop_assert!(gap <= 1e-8 * scale, "gap {gap}");
        }
    }
}
