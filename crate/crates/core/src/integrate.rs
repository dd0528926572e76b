//! Expectations against the projection density.
//!
//! Three engines live here:
//!
//! * [`gauss_jacobi_rule`] / [`tensor_expectation`]: tensor-product Gauss rules
//!   for smooth integrands of i.i.d. projected coordinates.
//! * [`power_expectation`] and [`singular_expectation`]: integrands of the form
//!   `|sum_j c_j theta_j|^r g(theta)`. All but the last variable are tensored;
//!   along the last variable the root of `sum_j c_j theta_j = 0` is located and
//!   `[-1, 1]` is split there, with Jacobi weights absorbing the algebraic
//!   behaviour at the root and at the density edges. Nearby singular points
//!   that are not segment endpoints are resolved by geometric grading.
//! * [`mc_expectation`]: block-parallel Monte Carlo with reproducible streams.
//!
//! All sums run in a fixed order, so results do not depend on the number of
//! worker threads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    fill_sphere_point, projection_constant, ProjectionDist, RandomStream, SphereDist,
};
use crate::error::{contract, domain, HannerError, Result};
use crate::numeric::{abs_pow, is_even_integer, KahanSum};
use crate::specfun::log_gamma;

/// Default cap on the number of tensor grid points, `m^n`.
pub const DEFAULT_TENSOR_BUDGET: u64 = 10_000_000;

const NEWTON_MAX_ITER: usize = 100;

/// Gauss rule for the probability density of `<xi, e_1>`, `xi` uniform on `S^{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    d: usize,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E f(theta)` for a single projected coordinate.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .collect::<KahanSum>()
            .value()
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl EstimateWithError {
    /// `|value - other| <= k * std_error` (with a tiny absolute floor for exact estimators).
    pub fn agrees_with(&self, other: f64, k: f64) -> bool {
        (self.value - other).abs() <= k * self.std_error + 1e-12 * (1.0 + other.abs())
    }
}

/// Evaluate the Jacobi polynomial `P_m^{(alpha, beta)}` at `x`, returning
/// `(P_m(x), P_m'(x))`.
fn jacobi_eval(m: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    if m == 0 {
        return (1.0, 0.0);
    }
    let mut p = 0.5 * ((alpha - beta) + (ab + 2.0) * x);
    for n in 2..=m {
        let nf = n as f64;
        let c1 = 2.0 * nf * (nf + ab) * (2.0 * nf + ab - 2.0);
        let c2 = (2.0 * nf + ab - 1.0)
            * ((2.0 * nf + ab) * (2.0 * nf + ab - 2.0) * x + alpha * alpha - beta * beta);
        let c3 = 2.0 * (nf + alpha - 1.0) * (nf + beta - 1.0) * (2.0 * nf + ab);
        let next = (c2 * p - c3 * p_prev) / c1;
        p_prev = p;
        p = next;
    }
    let mf = m as f64;
    // (2m + a + b)(1 - x^2) P_m' = m[(a - b) - (2m + a + b) x] P_m + 2(m + a)(m + b) P_{m-1}
    let num =
        mf * ((alpha - beta) - (2.0 * mf + ab) * x) * p + 2.0 * (mf + alpha) * (mf + beta) * p_prev;
    let dp = num / ((2.0 * mf + ab) * (1.0 - x) * (1.0 + x));
    (p, dp)
}

/// Eigenvalues (ascending) of the symmetric tridiagonal Jacobi matrix of the
/// orthonormal Jacobi polynomials, by implicit QL with Wilkinson shifts.
fn jacobi_matrix_eigenvalues(m: usize, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    let ab = alpha + beta;
    let mut diag: Vec<f64> = (0..m)
        .map(|n| {
            let s = 2.0 * n as f64 + ab;
            if n == 0 {
                (beta - alpha) / (ab + 2.0)
            } else {
                (beta * beta - alpha * alpha) / (s * (s + 2.0))
            }
        })
        .collect();
    let mut off: Vec<f64> = (0..m)
        .map(|k| {
            let n = (k + 1) as f64;
            if k + 1 == m {
                return 0.0;
            }
            let s = 2.0 * n + ab;
            if k == 0 {
                // cancelled form; the general one is 0/0 when alpha + beta = -1
                return (4.0 * (1.0 + alpha) * (1.0 + beta)
                    / ((ab + 2.0) * (ab + 2.0) * (ab + 3.0)))
                    .sqrt();
            }
            (4.0 * n * (n + alpha) * (n + beta) * (n + ab) / (s * s * (s + 1.0) * (s - 1.0))).sqrt()
        })
        .collect();
    for l in 0..m {
        let mut iter = 0;
        loop {
            let mut k = l;
            while k + 1 < m {
                let dd = diag[k].abs() + diag[k + 1].abs();
                if off[k].abs() <= f64::EPSILON * dd {
                    break;
                }
                k += 1;
            }
            if k == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(HannerError::Numeric(format!(
                    "Jacobi matrix eigenvalues for m={m} (alpha={alpha}, beta={beta}) did not converge"
                )));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[k] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = k;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[k] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[k] = 0.0;
        }
    }
    diag.sort_by(f64::total_cmp);
    Ok(diag)
}

/// Nodes (ascending) and weights of the `m`-point Gauss-Jacobi rule for
/// `int_{-1}^{1} (1 - s)^alpha (1 + s)^beta f(s) ds`.
///
/// Roots are eigenvalues of the Jacobi matrix polished by Newton steps on
/// `P_m`; weights are
/// `Gamma(m+a+1) Gamma(m+b+1) / (Gamma(m+a+b+1) m!) 2^(a+b+1) / ((1-x^2) P_m'(x)^2)`.
pub fn jacobi_rule(m: usize, alpha: f64, beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(domain("a quadrature rule needs at least one node"));
    }
    if !(alpha > -1.0 && beta > -1.0) {
        return Err(domain(format!(
            "Jacobi exponents must exceed -1, got ({alpha}, {beta})"
        )));
    }
    let mf = m as f64;
    let mut roots = jacobi_matrix_eigenvalues(m, alpha, beta)?;
    for (i, x) in roots.iter_mut().enumerate() {
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = jacobi_eval(m, alpha, beta, *x);
            let x_new = (*x - p / dp).clamp(-1.0 + f64::EPSILON, 1.0 - f64::EPSILON);
            let done = (x_new - *x).abs() <= 4.0 * f64::EPSILON;
            *x = x_new;
            if done {
                converged = true;
                break;
            }
        }
        if !converged || !x.is_finite() {
            return Err(HannerError::Numeric(format!(
                "Gauss-Jacobi root {} of {m} (alpha={alpha}, beta={beta}) did not converge",
                i + 1
            )));
        }
    }
    if roots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HannerError::Numeric(format!(
            "Gauss-Jacobi roots for m={m} (alpha={alpha}, beta={beta}) are not distinct"
        )));
    }
    let ln_const = log_gamma(mf + alpha + 1.0)? + log_gamma(mf + beta + 1.0)?
        - log_gamma(mf + alpha + beta + 1.0)?
        - log_gamma(mf + 1.0)?
        + (alpha + beta + 1.0) * std::f64::consts::LN_2;
    let konst = ln_const.exp();
    let weights = roots
        .iter()
        .map(|&x| {
            let (_, dp) = jacobi_eval(m, alpha, beta, x);
            konst / ((1.0 - x) * (1.0 + x) * dp * dp)
        })
        .collect();
    Ok((roots, weights))
}

/// `m`-point Gauss rule for the projection density of `S^{d-1}`, `d >= 2`,
/// with weights normalized to sum to one.
pub fn gauss_jacobi_rule(m: usize, d: usize) -> Result<QuadratureRule> {
    if d < 2 {
        return Err(domain("the projection density needs d >= 2"));
    }
    let a = (d as f64 - 3.0) / 2.0;
    let (mut nodes, weights) = jacobi_rule(m, a, a)?;
    // exact symmetry about the origin
    for i in 0..m / 2 {
        let s = 0.5 * (nodes[m - 1 - i] - nodes[i]);
        nodes[i] = -s;
        nodes[m - 1 - i] = s;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let mut sym = weights.clone();
    for i in 0..m {
        sym[i] = 0.5 * (weights[i] + weights[m - 1 - i]);
    }
    let total = sym.iter().copied().collect::<KahanSum>().value();
    let weights = sym.into_iter().map(|w| w / total).collect();
    Ok(QuadratureRule { nodes, weights, d })
}

fn check_budget(m: usize, n: usize, budget: u64) -> Result<()> {
    let points = (m as f64).powi(n as i32);
    if points > budget as f64 {
        return Err(HannerError::Resource(format!(
            "tensor grid of {m}^{n} = {points:.3e} points exceeds the budget of {budget}"
        )));
    }
    Ok(())
}

/// Visit every point of the `(m)^k` tensor grid whose first index is `first`.
fn for_each_tail<F: FnMut(&[f64], f64)>(
    rule: &QuadratureRule,
    k: usize,
    first: usize,
    theta: &mut [f64],
    mut f: F,
) {
    let m = rule.order();
    let mut idx = vec![0usize; k];
    if k == 0 {
        f(theta, 1.0);
        return;
    }
    idx[0] = first;
    loop {
        let mut w = 1.0;
        for (j, &i) in idx.iter().enumerate() {
            theta[j] = rule.nodes[i];
            w *= rule.weights[i];
        }
        f(theta, w);
        // odometer over positions 1..k
        let mut pos = k;
        loop {
            if pos == 1 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// `E f(theta_1, ..., theta_n)` for i.i.d. projected coordinates by tensor-product quadrature.
pub fn tensor_expectation<F>(f: F, rule: &QuadratureRule, n: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    tensor_expectation_with_budget(f, rule, n, DEFAULT_TENSOR_BUDGET)
}

pub fn tensor_expectation_with_budget<F>(
    f: F,
    rule: &QuadratureRule,
    n: usize,
    budget: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n == 0 {
        return Err(contract("tensor_expectation needs n >= 1"));
    }
    check_budget(rule.order(), n, budget)?;
    let partial: Vec<f64> = (0..rule.order())
        .into_par_iter()
        .map(|first| {
            let mut theta = vec![0.0; n];
            let mut acc = KahanSum::new();
            for_each_tail(rule, n, first, &mut theta, |t, w| acc.add(w * f(t)));
            acc.value()
        })
        .collect();
    Ok(partial.into_iter().collect::<KahanSum>().value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EndKind {
    Plain,
    Kink,
    Edge,
    /// The kink sits exactly on a density edge.
    KinkEdge,
}

impl EndKind {
    fn index(self) -> usize {
        match self {
            EndKind::Plain => 0,
            EndKind::Kink => 1,
            EndKind::Edge => 2,
            EndKind::KinkEdge => 3,
        }
    }

    fn has_kink(self) -> bool {
        matches!(self, EndKind::Kink | EndKind::KinkEdge)
    }

    fn has_edge(self) -> bool {
        matches!(self, EndKind::Edge | EndKind::KinkEdge)
    }
}

struct Segment {
    u: f64,
    v: f64,
    ku: EndKind,
    kv: EndKind,
}

type JacobiNodes = (Vec<f64>, Vec<f64>);

/// Entries kept before the rule cache is flushed.
const RULE_CACHE_CAP: usize = 4096;

/// [`jacobi_rule`] memoized on `(m, alpha, beta)`; split integrals rebuild
/// the same few rules on every call.
fn cached_jacobi_rule(m: usize, alpha: f64, beta: f64) -> Result<Arc<JacobiNodes>> {
    type Cache = Mutex<HashMap<(usize, u64, u64), Arc<JacobiNodes>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let key = (m, alpha.to_bits(), beta.to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(hit) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(Arc::clone(hit));
    }
    let rule = Arc::new(jacobi_rule(m, alpha, beta)?);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    if map.len() >= RULE_CACHE_CAP {
        map.clear();
    }
    map.insert(key, Arc::clone(&rule));
    Ok(rule)
}

/// One-dimensional integrator for `int |A + c t|^r g(t) rho_d(t) dt`.
struct LineIntegrator {
    r: f64,
    edge: f64,
    density_c: f64,
    kink: bool,
    edge_singular: bool,
    /// `rules[ku][kv]`: Jacobi rule with `beta` at the left end, `alpha` at the right end.
    rules: Vec<Vec<Arc<JacobiNodes>>>,
}

impl LineIntegrator {
    fn new(m: usize, d: usize, r: f64) -> Result<Self> {
        let edge = (d as f64 - 3.0) / 2.0;
        let kink = !is_even_integer(r);
        let edge_singular = edge.fract() != 0.0 || edge < 0.0;
        let exp_of = |k: usize| match k {
            0 => 0.0,
            1 => r,
            2 => edge,
            _ => r + edge,
        };
        let mut rules = Vec::with_capacity(4);
        for ku in 0..4 {
            let mut row = Vec::with_capacity(4);
            for kv in 0..4 {
                // combined ends can be non-integrable; those rules are never used
                let (a, b) = (exp_of(kv), exp_of(ku));
                row.push(if a > -1.0 && b > -1.0 {
                    cached_jacobi_rule(m, a, b)?
                } else {
                    Arc::default()
                });
            }
            rules.push(row);
        }
        Ok(Self {
            r,
            edge,
            density_c: projection_constant(d)?,
            kink,
            edge_singular,
            rules,
        })
    }

    fn exponent(&self, k: EndKind) -> f64 {
        match k {
            EndKind::Plain => 0.0,
            EndKind::Kink => self.r,
            EndKind::Edge => self.edge,
            EndKind::KinkEdge => self.r + self.edge,
        }
    }

    fn segments(&self, mut t0: f64) -> Vec<Segment> {
        if self.kink && t0.abs() == 1.0 && self.r + self.edge <= -1.0 {
            t0 = if t0 < 0.0 {
                t0.next_up()
            } else {
                t0.next_down()
            };
        }
        let inside = self.kink && t0 > -1.0 && t0 < 1.0;
        let mut base = Vec::with_capacity(2);
        if inside {
            base.push(Segment {
                u: -1.0,
                v: t0,
                ku: EndKind::Edge,
                kv: EndKind::Kink,
            });
            base.push(Segment {
                u: t0,
                v: 1.0,
                ku: EndKind::Kink,
                kv: EndKind::Edge,
            });
        } else if self.kink && (t0 == -1.0 || t0 == 1.0) {
            let (ku, kv) = if t0 < 0.0 {
                (EndKind::KinkEdge, EndKind::Edge)
            } else {
                (EndKind::Edge, EndKind::KinkEdge)
            };
            return vec![Segment {
                u: -1.0,
                v: 1.0,
                ku,
                kv,
            }];
        } else {
            base.push(Segment {
                u: -1.0,
                v: 1.0,
                ku: EndKind::Edge,
                kv: EndKind::Edge,
            });
        }
        let mut out = Vec::new();
        for seg in base {
            // singular points that are near this segment but not one of its endpoints
            let mut ext: Vec<f64> = Vec::with_capacity(3);
            if self.kink && !inside && t0.is_finite() {
                ext.push(t0);
            }
            if self.edge_singular {
                if seg.u != -1.0 {
                    ext.push(-1.0);
                }
                if seg.v != 1.0 {
                    ext.push(1.0);
                }
            }
            let len = seg.v - seg.u;
            let mut cuts: Vec<f64> = Vec::new();
            for e in ext {
                if e >= seg.v {
                    let delta = (e - seg.v).max(1e-15);
                    let mut s = delta;
                    while s < 0.5 * len {
                        cuts.push(seg.v - s);
                        s *= 2.0;
                    }
                } else if e <= seg.u {
                    let delta = (seg.u - e).max(1e-15);
                    let mut s = delta;
                    while s < 0.5 * len {
                        cuts.push(seg.u + s);
                        s *= 2.0;
                    }
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut left = seg.u;
            let mut left_kind = seg.ku;
            for c in cuts {
                if c <= left || c >= seg.v {
                    continue;
                }
                out.push(Segment {
                    u: left,
                    v: c,
                    ku: left_kind,
                    kv: EndKind::Plain,
                });
                left = c;
                left_kind = EndKind::Plain;
            }
            out.push(Segment {
                u: left,
                v: seg.v,
                ku: left_kind,
                kv: seg.kv,
            });
        }
        out
    }

    /// Call `visit(t, w)` for every node, where `w` already contains the
    /// density, `|a0 + c t|^r` and the rule weight.
    fn visit<V: FnMut(f64, f64)>(&self, a0: f64, c: f64, mut visit: V) {
        let t0 = -a0 / c;
        let c_pow = abs_pow(c, self.r);
        for seg in self.segments(t0) {
            let (nodes, weights) = &*self.rules[seg.ku.index()][seg.kv.index()];
            let half = 0.5 * (seg.v - seg.u);
            let mid = 0.5 * (seg.u + seg.v);
            let scale =
                half.powf(1.0 + self.exponent(seg.ku) + self.exponent(seg.kv)) * self.density_c;
            for (&s, &w) in nodes.iter().zip(weights) {
                let t = mid + half * s;
                let mut f = scale * w;
                if !seg.kv.has_edge() && self.edge != 0.0 {
                    f *= (1.0 - t).powf(self.edge);
                }
                if !seg.ku.has_edge() && self.edge != 0.0 {
                    f *= (1.0 + t).powf(self.edge);
                }
                if seg.ku.has_kink() || seg.kv.has_kink() {
                    f *= c_pow;
                } else {
                    f *= abs_pow(a0 + c * t, self.r);
                }
                visit(t, f);
            }
        }
    }
}

/// Default inner (split) variable: the largest coefficient, last one on ties.
///
/// With the largest coefficient inside, the outer integrand is as smooth as
/// possible: for two summands its non-smooth points sit at or beyond the
/// outer density edges.
pub fn inner_index(coeffs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &c) in coeffs.iter().enumerate() {
        if c != 0.0 && best.is_none_or(|b| c.abs() >= coeffs[b].abs()) {
            best = Some(i);
        }
    }
    best
}

/// `E[|sum_j c_j theta_j|^r * g_k(theta)]` for several prefactors `g_k` at once.
///
/// `prefactor(theta, out)` must write `outputs` values into `out`. The inner
/// (split) variable is [`inner_index`].
pub fn power_expectation_multi<G>(
    prefactor: G,
    outputs: usize,
    coeffs: &[f64],
    r: f64,
    rule: &QuadratureRule,
) -> Result<Vec<f64>>
where
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    power_expectation_multi_inner(prefactor, outputs, coeffs, r, rule, None)
}

/// As [`power_expectation_multi`] with an explicit inner variable.
///
/// Holding the inner variable fixed makes the discrete approximation a smooth
/// function of the coefficients, which finite-difference checks rely on.
pub fn power_expectation_multi_inner<G>(
    prefactor: G,
    outputs: usize,
    coeffs: &[f64],
    r: f64,
    rule: &QuadratureRule,
    inner: Option<usize>,
) -> Result<Vec<f64>>
where
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    power_expectation_impl(prefactor, outputs, 0.0, coeffs, r, rule, inner)
}

/// `E[|shift + sum_j c_j theta_j|^r * g(theta)]`.
pub fn power_expectation_shifted<G>(
    prefactor: G,
    shift: f64,
    coeffs: &[f64],
    r: f64,
    rule: &QuadratureRule,
) -> Result<f64>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !shift.is_finite() {
        return Err(domain("shift must be finite"));
    }
    let v = power_expectation_impl(
        |t, out| out[0] = prefactor(t),
        1,
        shift,
        coeffs,
        r,
        rule,
        None,
    )?;
    Ok(v[0])
}

fn power_expectation_impl<G>(
    prefactor: G,
    outputs: usize,
    shift: f64,
    coeffs: &[f64],
    r: f64,
    rule: &QuadratureRule,
    inner: Option<usize>,
) -> Result<Vec<f64>>
where
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    let n = coeffs.len();
    if n == 0 {
        return Err(contract("power_expectation needs at least one coefficient"));
    }
    if !(r > -1.0) || !r.is_finite() {
        return Err(domain(format!("power exponent must exceed -1, got {r}")));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(domain("coefficients must be finite"));
    }
    let inner = match inner {
        Some(i) if i < n && coeffs[i] != 0.0 => i,
        Some(i) => {
            return Err(contract(format!(
                "inner variable {i} must index a nonzero coefficient"
            )))
        }
        None => inner_index(coeffs).ok_or_else(|| domain("all coefficients vanish"))?,
    };
    check_budget(rule.order(), n, DEFAULT_TENSOR_BUDGET)?;
    let line = LineIntegrator::new(rule.order(), rule.dim(), r)?;
    let outer: Vec<usize> = (0..n).filter(|&j| j != inner).collect();
    let c_inner = coeffs[inner];
    let m = rule.order();

    let run = |first: Option<usize>| -> Vec<KahanSum> {
        let mut acc = vec![KahanSum::new(); outputs];
        let mut theta = vec![0.0; n];
        let mut outer_theta = vec![0.0; outer.len()];
        let mut buf = vec![0.0; outputs];
        let mut body = |ot: &[f64], w_outer: f64| {
            let mut a0 = shift;
            for (slot, &j) in outer.iter().enumerate() {
                theta[j] = ot[slot];
                a0 += coeffs[j] * ot[slot];
            }
            line.visit(a0, c_inner, |t, w| {
                theta[inner] = t;
                prefactor(&theta, &mut buf);
                let ww = w_outer * w;
                for (a, &b) in acc.iter_mut().zip(&buf) {
                    a.add(ww * b);
                }
            });
        };
        match first {
            None => body(&[], 1.0),
            Some(i) => for_each_tail(rule, outer.len(), i, &mut outer_theta, &mut body),
        }
        acc
    };

    let partials: Vec<Vec<KahanSum>> = if outer.is_empty() {
        vec![run(None)]
    } else {
        (0..m).into_par_iter().map(|i| run(Some(i))).collect()
    };
    let mut total = vec![KahanSum::new(); outputs];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.add(p.value());
        }
    }
    Ok(total.into_iter().map(|s| s.value()).collect())
}

/// `E[|sum_j c_j theta_j|^r * g(theta)]` for `r > -1`, kink and singularity aware.
pub fn power_expectation<G>(
    prefactor: G,
    coeffs: &[f64],
    r: f64,
    rule: &QuadratureRule,
) -> Result<f64>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let v = power_expectation_multi(|t, out| out[0] = prefactor(t), 1, coeffs, r, rule)?;
    Ok(v[0])
}

/// `E[|sum_j c_j theta_j|^q * g(theta)]` for a negative exponent `q in (-1, 0)`.
///
/// The integrand is singular on the hyperplane `sum_j c_j theta_j = 0`; the
/// inner variable is split at the root and integrated with Jacobi rules
/// carrying the weight `|t - t0|^q` on each side.
pub fn singular_expectation<G>(
    prefactor: G,
    coeffs: &[f64],
    q: f64,
    rule: &QuadratureRule,
) -> Result<f64>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(q > -1.0 && q < 0.0) {
        return Err(contract(format!(
            "singular_expectation is for q in (-1, 0), got {q}"
        )));
    }
    power_expectation(prefactor, coeffs, q, rule)
}

/// Sampling law for [`mc_expectation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleLaw {
    /// Each of the `n` draws is a point of `S^{d-1}`; `f` sees `n * d` numbers, draw-major.
    Sphere(SphereDist),
    /// Each of the `n` draws is a projected coordinate; `f` sees `n` numbers.
    Projection(ProjectionDist),
}

impl SampleLaw {
    fn width(&self) -> usize {
        match self {
            SampleLaw::Sphere(s) => s.dim(),
            SampleLaw::Projection(_) => 1,
        }
    }

    fn dim(&self) -> usize {
        match self {
            SampleLaw::Sphere(s) => s.dim(),
            SampleLaw::Projection(p) => p.dim(),
        }
    }
}

const MC_BLOCK: u64 = 1 << 14;

#[derive(Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }
}

/// Mean and standard error of `f` over `samples` i.i.d. `n`-tuples.
///
/// Samples are drawn in blocks of 16384; block `b` uses `stream.substream(b)`,
/// blocks are merged in index order.
pub fn mc_expectation<F>(
    f: F,
    law: SampleLaw,
    n: usize,
    samples: u64,
    stream: RandomStream,
) -> Result<EstimateWithError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if samples < 2 {
        return Err(contract("Monte Carlo needs at least two samples"));
    }
    let width = law.width();
    let d = law.dim();
    let blocks = samples.div_ceil(MC_BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream.substream(b).rng();
            let len = MC_BLOCK.min(samples - b * MC_BLOCK);
            let mut point = vec![0.0; n * width];
            let mut scratch = vec![0.0; d];
            let mut mom = Moments::default();
            for _ in 0..len {
                for k in 0..n {
                    match law {
                        SampleLaw::Sphere(_) => {
                            fill_sphere_point(&mut rng, &mut point[k * width..(k + 1) * width])
                        }
                        SampleLaw::Projection(_) => {
                            fill_sphere_point(&mut rng, &mut scratch);
                            point[k] = scratch[0];
                        }
                    }
                }
                mom.push(f(&point));
            }
            mom
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if total.count > 1.0 {
        total.m2 / (total.count - 1.0)
    } else {
        0.0
    };
    Ok(EstimateWithError {
        value: total.mean,
        std_error: (var.max(0.0) / total.count).sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::projection_pdf;
    use approx::assert_relative_eq;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn jacobi_weights_sum_to_beta_function() {
        for &(a, b) in &[
            (0.0, 0.0),
            (-0.5, -0.5),
            (1.0, 1.0),
            (-0.7, 0.0),
            (0.0, -0.3),
            (2.5, -0.5),
            (0.4, 1.5),
            (4.49, 0.0),
            (0.0, 7.2),
            (5.5, 3.0),
        ] {
            for m in [1usize, 2, 5, 17, 48, 96, 128] {
                let (x, w) = jacobi_rule(m, a, b).unwrap();
                let total: f64 = w.iter().sum();
                let exact = ((a + b + 1.0) * std::f64::consts::LN_2
                    + log_gamma(a + 1.0).unwrap()
                    + log_gamma(b + 1.0).unwrap()
                    - log_gamma(a + b + 2.0).unwrap())
                .exp();
                assert_relative_eq!(total, exact, max_relative = 1e-12);
                assert!(x.windows(2).all(|p| p[0] < p[1]));
                assert!(w.iter().all(|&w| w > 0.0));
            }
        }
    }

    #[test]
    fn jacobi_rule_is_exact_for_low_degree() {
        // int (1-s)^a (1+s)^b s^k ds against a fine Simpson on a smooth case (a, b >= 1)
        let (a, b) = (1.5, 2.0);
        let (x, w) = jacobi_rule(6, a, b).unwrap();
        for k in 0..12 {
            let quad: f64 = x.iter().zip(&w).map(|(&s, &w)| w * s.powi(k)).sum();
            let oracle = simpson(
                |s| (1.0 - s).powf(a) * (1.0 + s).powf(b) * s.powi(k),
                -1.0,
                1.0,
                20_000,
            );
            assert_relative_eq!(quad, oracle, epsilon = 1e-10, max_relative = 1e-9);
        }
    }

    #[test]
    fn rule_invariants() {
        for d in 2..=8 {
            for m in [1usize, 2, 3, 8, 24, 48, 64] {
                let rule = gauss_jacobi_rule(m, d).unwrap();
                let total: f64 = rule.weights().iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(rule.nodes().windows(2).all(|p| p[0] < p[1]));
                assert!(rule.nodes().iter().all(|t| t.abs() < 1.0));
                for k in [1, 3, 5] {
                    assert!(rule.expect(|t| t.powi(k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rule_golden() {
        let r = gauss_jacobi_rule(2, 3).unwrap();
        assert!((r.expect(|t| t * t) - 1.0 / 3.0).abs() < 1e-12);
        for d in 2..7 {
            let r = gauss_jacobi_rule(1, d).unwrap();
            assert_eq!(r.nodes(), &[0.0]);
            assert_eq!(r.weights(), &[1.0]);
        }
        // oracle: (1/2pi) int cos^2 t dt = 1/2 by the periodic trapezoid rule
        let n = 1000;
        let oracle: f64 = (0..n)
            .map(|i| {
                (2.0 * std::f64::consts::PI * i as f64 / n as f64)
                    .cos()
                    .powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let r = gauss_jacobi_rule(8, 2).unwrap();
        assert!((r.expect(|t| t * t) - oracle).abs() < 1e-12);
    }

    #[test]
    fn rule_exact_against_density_moments() {
        // E theta^{2k} = Gamma(d/2) Gamma(k + 1/2) / (sqrt(pi) Gamma(k + d/2)); oracle by Simpson for d >= 3
        for d in [3usize, 5, 7] {
            let rule = gauss_jacobi_rule(6, d).unwrap();
            for k in 0..6 {
                let quad = rule.expect(|t| t.powi(2 * k));
                let oracle = simpson(
                    |t| t.powi(2 * k) * projection_pdf(t, d).unwrap(),
                    -1.0,
                    1.0,
                    20_000,
                );
                assert!(
                    (quad - oracle).abs() < 1e-10,
                    "d={d} k={k}: {quad} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn tensor_golden() {
        for d in [2, 3, 5] {
            let rule = gauss_jacobi_rule(12, d).unwrap();
            assert!((tensor_expectation(|_| 1.0, &rule, 3).unwrap() - 1.0).abs() < 1e-12);
            let v = tensor_expectation(|t| t.iter().map(|x| x * x).sum(), &rule, 3).unwrap();
            assert!((v - 3.0 / d as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn tensor_budget_error_names_size() {
        let rule = gauss_jacobi_rule(64, 3).unwrap();
        match tensor_expectation(|_| 1.0, &rule, 5) {
            Err(HannerError::Resource(msg)) => assert!(msg.contains("64^5")),
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn tensor_abs_sum_matches_mc() {
        let rule = gauss_jacobi_rule(64, 3).unwrap();
        let quad = tensor_expectation(|t| (t[0] + t[1]).abs(), &rule, 2).unwrap();
        let law = SampleLaw::Projection(ProjectionDist::new(3).unwrap());
        let mc = mc_expectation(
            |t| (t[0] + t[1]).abs(),
            law,
            2,
            1_000_000,
            RandomStream::new(17, 0),
        )
        .unwrap();
        assert!(mc.agrees_with(quad, 3.0), "{quad} vs {mc:?}");
        // the exact value for two uniforms on [-1,1] is E|U1 + U2| = 2/3
        let split = power_expectation(|_| 1.0, &[1.0, 1.0], 1.0, &rule).unwrap();
        assert!((split - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn singular_golden() {
        let rule = gauss_jacobi_rule(16, 3).unwrap();
        // int_{-1}^{1} |t|^{-1/2} / 2 dt = 2
        let v = singular_expectation(|_| 1.0, &[1.0], -0.5, &rule).unwrap();
        assert!((v - 2.0).abs() < 1e-13, "{v}");
        let z = singular_expectation(|_| 0.0, &[1.0, 2.0], -0.5, &rule).unwrap();
        assert_eq!(z, 0.0);
        assert!(matches!(
            singular_expectation(|_| 1.0, &[1.0], 0.5, &rule),
            Err(HannerError::Contract(_))
        ));
    }

    #[test]
    fn shifted_uniform_closed_form() {
        // d = 3 projections are uniform, so E|s + theta|^r = int_{-1}^{1} |s + t|^r dt / 2
        let rule = gauss_jacobi_rule(16, 3).unwrap();
        for &r in &[-0.6, 0.5, 1.7] {
            for &s in &[0.0, 0.4, 1.0, 2.5] {
                let v = power_expectation_shifted(|_| 1.0, s, &[1.0], r, &rule).unwrap();
                let exact = if s >= 1.0 {
                    ((s + 1.0f64).powf(r + 1.0) - (s - 1.0f64).powf(r + 1.0)) / (2.0 * (r + 1.0))
                } else {
                    ((s + 1.0f64).powf(r + 1.0) + (1.0 - s).powf(r + 1.0)) / (2.0 * (r + 1.0))
                };
                assert_relative_eq!(v, exact, max_relative = 1e-12);
            }
        }
        assert!(power_expectation_shifted(|_| 1.0, f64::NAN, &[1.0], 1.0, &rule).is_err());
    }

    #[test]
    fn singular_two_uniforms_closed_form() {
        // S = U1 + U2 is triangular on [-2,2]; E|S|^q = 2 int_0^2 s^q (2 - s)/4 ds = 2^{q+1}/((q+1)(q+2))
        let rule = gauss_jacobi_rule(24, 3).unwrap();
        for &q in &[-0.9, -0.5, -0.1] {
            let v = singular_expectation(|_| 1.0, &[1.0, 1.0], q, &rule).unwrap();
            let exact = 2f64.powf(q + 1.0) / ((q + 1.0) * (q + 2.0));
            // the kink of the inner integral lands on the outer density edge, where
            // Gauss rules converge algebraically; finer rules must get closer
            let coarse = (v - exact).abs();
            let fine =
                singular_expectation(|_| 1.0, &[1.0, 1.0], q, &gauss_jacobi_rule(96, 3).unwrap())
                    .unwrap();
            assert!(coarse < 1e-4 * exact, "q={q}: {v} vs {exact}");
            assert!(
                (fine - exact).abs() < 0.5 * coarse.max(1e-15),
                "q={q}: {fine} vs {exact}"
            );
        }
    }

    #[test]
    fn singular_matches_sphere_mc() {
        // E|theta1 + theta2|^{-1/2} = beta_{q,3}^{-1} E|xi1 + xi2|^{-1/2} (finite-variance vector form)
        let rule = gauss_jacobi_rule(32, 3).unwrap();
        let quad = singular_expectation(|_| 1.0, &[1.0, 1.0], -0.5, &rule).unwrap();
        let beta = crate::specfun::beta_pd(-0.5, 3).unwrap();
        let law = SampleLaw::Sphere(SphereDist::new(3).unwrap());
        let mc = mc_expectation(
            |v| {
                let s: f64 = (0..3).map(|i| (v[i] + v[3 + i]).powi(2)).sum();
                s.powf(-0.25) / beta
            },
            law,
            2,
            10_000_000,
            RandomStream::new(5, 3),
        )
        .unwrap();
        assert!(mc.agrees_with(quad, 3.0), "{quad} vs {mc:?}");
    }

    /// `E|a0 + theta|^q` for the arcsine law, as `(1/pi) int_0^pi |a0 + cos phi|^q dphi`,
    /// with `phi = phi0 +- s^2` around the root so the integrand becomes smooth.
    fn arcsine_line_oracle(a0: f64, q: f64) -> f64 {
        use std::f64::consts::PI;
        if a0.abs() < 1.0 {
            let phi0 = (-a0).acos();
            // cos(phi0 + e) - cos(phi0) = -2 sin(phi0 + e/2) sin(e/2)
            let g = |s: f64, sign: f64| {
                let e = sign * s * s;
                (2.0 * (phi0 + 0.5 * e).sin().abs() * (0.5 * e).sin().abs()).powf(q) * 2.0 * s / PI
            };
            let left =
                crate::specfun::adaptive_gk15(|s| g(s, -1.0), 0.0, phi0.sqrt(), 1e-15, 50_000);
            let right = crate::specfun::adaptive_gk15(
                |s| g(s, 1.0),
                0.0,
                (PI - phi0).sqrt(),
                1e-15,
                50_000,
            );
            left.0 + right.0
        } else {
            crate::specfun::adaptive_gk15(
                |phi: f64| (a0 + phi.cos()).abs().powf(q) / PI,
                0.0,
                PI,
                1e-15,
                50_000,
            )
            .0
        }
    }

    #[test]
    fn split_line_integral_resolves_edge_and_root() {
        // d = 2: the arcsine density has edge poles that can sit next to the root
        for &(a0, q) in &[
            (0.999_999, -0.5),
            (-0.999_999_9, -0.5),
            (1.000_001, -0.5),
            (0.3, -0.5),
            (0.0, -0.5),
            (0.999, 0.5),
            (1.2, 1.5),
            (1.0 + 1e-12, 0.5),
        ] {
            let line = LineIntegrator::new(32, 2, q).unwrap();
            let mut acc = KahanSum::new();
            line.visit(a0, 1.0, |_, w| acc.add(w));
            let oracle = arcsine_line_oracle(a0, q);
            assert!(
                (acc.value() - oracle).abs() < 1e-10 * oracle.abs().max(1.0),
                "a0={a0} q={q}: {} vs {oracle}",
                acc.value()
            );
        }
    }

    #[test]
    fn mc_golden() {
        let law = SampleLaw::Projection(ProjectionDist::new(4).unwrap());
        let c = mc_expectation(|_| 2.5, law, 3, 10_000, RandomStream::new(1, 1)).unwrap();
        assert_eq!(c.value, 2.5);
        assert_eq!(c.std_error, 0.0);
        let e = mc_expectation(|t| t[0] * t[0], law, 1, 200_000, RandomStream::new(1, 2)).unwrap();
        assert!((e.value - 0.25).abs() < 4.0 * e.std_error);
        let rule = gauss_jacobi_rule(64, 2).unwrap();
        let quad = tensor_expectation(|t| (t[0] + t[1]).abs().powi(3), &rule, 2).unwrap();
        let law2 = SampleLaw::Projection(ProjectionDist::new(2).unwrap());
        let mc = mc_expectation(
            |t| (t[0] + t[1]).abs().powi(3),
            law2,
            2,
            1_000_000,
            RandomStream::new(2, 2),
        )
        .unwrap();
        assert!(mc.agrees_with(quad, 3.0));
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let law = SampleLaw::Sphere(SphereDist::new(3).unwrap());
        let f = |v: &[f64]| (v[0] + v[4]).abs();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_expectation(f, law, 2, 100_000, RandomStream::new(8, 8)).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(7));
    }

    #[test]
    fn mc_needs_two_samples() {
        let law = SampleLaw::Projection(ProjectionDist::new(3).unwrap());
        assert!(mc_expectation(|_| 1.0, law, 1, 1, RandomStream::new(0, 0)).is_err());
    }
}
