//! Second-order structure of `phi_n`: the cross expectations
//! `gamma_{i,j} = E|S|^{p-2} theta_i theta_j` with `S = sum_k x_k^{1/p} theta_k`,
//! the Hessian built from them, a finite-difference oracle and
//! semidefiniteness verdicts.
//!
//! `hessian_matrix` is the Hessian of `phi_n` itself, so it carries the
//! factor `beta_{p,d}` in front of the `theta`-expectations. `gamma_ij` and
//! `ekl` are the raw expectations.

use serde::{Deserialize, Serialize};

use crate::distributions::{ProjectionDist, RandomStream, SphereDist};
use crate::error::{contract, domain, Result};
use crate::integrate::{
    inner_index, mc_expectation, power_expectation_multi_inner, EstimateWithError, QuadratureRule,
    SampleLaw,
};
use crate::numeric::abs_pow;
use crate::phi::{phi_projected_inner, rademacher_expectation, HannerPoint};
use crate::specfun::beta_pd;

/// Dense square matrix, row-major.
pub type Matrix = Vec<Vec<f64>>;

/// Largest matrix accepted by [`jacobi_eigenvalues`].
pub const EIGEN_MAX_N: usize = 16;

/// Below this exponent the singular weight `|S|^{p-2}` is so close to
/// non-integrable that verdicts should be read with care.
pub const P_STABLE_MIN: f64 = 1.05;

/// Asymmetry (relative to the largest entry) tolerated by [`definiteness`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// A direction `a` for the Hessian quadratic form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction(Vec<f64>);

impl Direction {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(domain("direction entries must be finite"));
        }
        if a.iter().all(|&v| v == 0.0) {
            return Err(domain("direction must have a nonzero entry"));
        }
        Ok(Self(a))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Semidefiniteness verdict for a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Nsd,
    Psd,
    Indefinite,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Nsd => "NSD",
            Verdict::Psd => "PSD",
            Verdict::Indefinite => "INDEFINITE",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

fn check_p(pt: &HannerPoint) -> Result<()> {
    if pt.p() <= 1.0 {
        return Err(domain(format!(
            "the Hessian needs p > 1 (q = p - 2 > -1), got p = {}",
            pt.p()
        )));
    }
    Ok(())
}

fn check_index(pt: &HannerPoint, i: usize) -> Result<()> {
    if i >= pt.n() {
        return Err(contract(format!(
            "index {i} out of range for n = {}",
            pt.n()
        )));
    }
    Ok(())
}

fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of `(i, j)`, `i <= j`, in the packed upper triangle.
fn packed(n: usize, i: usize, j: usize) -> usize {
    i * n - i * (i + 1) / 2 + j
}

fn unpack(n: usize, packed_vals: &[f64]) -> Matrix {
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = packed_vals[packed(n, i, j)];
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    g
}

/// All `gamma_{i,j}` at once, as a symmetric matrix.
pub fn gamma_matrix(pt: &HannerPoint, rule: &QuadratureRule) -> Result<Matrix> {
    gamma_matrix_inner(pt, rule, None)
}

/// [`gamma_matrix`] with the split variable pinned.
pub fn gamma_matrix_inner(
    pt: &HannerPoint,
    rule: &QuadratureRule,
    inner: Option<usize>,
) -> Result<Matrix> {
    check_p(pt)?;
    if pt.d < 2 {
        return Err(contract(
            "quadrature gamma needs d >= 2; use gamma_matrix_rademacher for d = 1",
        ));
    }
    if rule.dim() != pt.d {
        return Err(contract(format!(
            "quadrature rule is for d = {} but the point has d = {}",
            rule.dim(),
            pt.d
        )));
    }
    let n = pt.n();
    if pt.p() == 2.0 {
        let mut g = vec![vec![0.0; n]; n];
        for (i, row) in g.iter_mut().enumerate() {
            row[i] = 1.0 / pt.d as f64;
        }
        return Ok(g);
    }
    let vals = power_expectation_multi_inner(
        |t, out| {
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    out[idx] = t[i] * t[j];
                    idx += 1;
                }
            }
        },
        pair_count(n),
        &pt.coeffs(),
        pt.p.q(),
        rule,
        inner,
    )?;
    Ok(unpack(n, &vals))
}

/// `gamma_{i,j} = E|eps . c|^{p-2} eps_i eps_j` over Rademacher signs (`d = 1`, `p >= 2`).
///
/// For `p < 2` sign patterns with a vanishing sum make the expectation infinite.
pub fn gamma_matrix_rademacher(pt: &HannerPoint) -> Result<Matrix> {
    if pt.d != 1 {
        return Err(contract("Rademacher gamma is the d = 1 backend"));
    }
    if pt.p() < 2.0 {
        return Err(domain("the Rademacher Hessian is only defined for p >= 2"));
    }
    let n = pt.n();
    let q = pt.p.q();
    let vals = rademacher_expectation(&pt.coeffs(), pair_count(n), |s, signs, out| {
        let w = abs_pow(s, q);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                out[idx] = w * signs[i] * signs[j];
                idx += 1;
            }
        }
    })?;
    Ok(unpack(n, &vals))
}

/// `gamma_{i,j}` (0-based indices) by quadrature; `q < 0` is handled by the
/// singular split of the inner variable.
pub fn gamma_ij(pt: &HannerPoint, i: usize, j: usize, rule: &QuadratureRule) -> Result<f64> {
    check_index(pt, i)?;
    check_index(pt, j)?;
    check_p(pt)?;
    if pt.d < 2 || rule.dim() != pt.d {
        return Err(contract(
            "gamma_ij needs d >= 2 and a rule of matching dimension",
        ));
    }
    if pt.p() == 2.0 {
        return Ok(if i == j { 1.0 / pt.d as f64 } else { 0.0 });
    }
    let v = power_expectation_multi_inner(
        |t, out| out[0] = t[i] * t[j],
        1,
        &pt.coeffs(),
        pt.p.q(),
        rule,
        None,
    )?;
    Ok(v[0])
}

/// `E_{k,l} = gamma_{k,l}` for `k < l` (0-based).
pub fn ekl(pt: &HannerPoint, k: usize, l: usize, rule: &QuadratureRule) -> Result<f64> {
    if k >= l {
        return Err(contract(format!("ekl needs k < l, got ({k}, {l})")));
    }
    gamma_ij(pt, k, l, rule)
}

/// The off-diagonal `E_{k,l}` of a gamma matrix as `(k, l, value)`, `k < l`.
pub fn ekl_entries(gamma: &Matrix) -> Vec<(usize, usize, f64)> {
    let n = gamma.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for k in 0..n {
        for l in k + 1..n {
            out.push((k, l, gamma[k][l]));
        }
    }
    out
}

/// Natural size of the `E_{k,l}`: the largest diagonal `gamma_{i,i}`.
pub fn gamma_scale(gamma: &Matrix) -> f64 {
    gamma
        .iter()
        .enumerate()
        .map(|(i, r)| r[i].abs())
        .fold(0.0, f64::max)
}

/// Hessian of `phi_n` from a gamma matrix. `prefactor` is `beta_{p,d}`
/// (1 for Rademacher signs).
pub fn hessian_from_gamma(pt: &HannerPoint, gamma: &Matrix, prefactor: f64) -> Matrix {
    let n = pt.n();
    let p = pt.p();
    if p == 2.0 {
        return vec![vec![0.0; n]; n];
    }
    let k = prefactor * (p - 1.0) / p;
    let c = pt.coeffs();
    let u: Vec<f64> = pt.x.iter().map(|&x| x.powf((1.0 - p) / p)).collect();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                h[i][j] = k * gamma[i][j] * u[i] * u[j];
            }
        }
        let row: f64 = (0..n).map(|m| c[m] * gamma[i][m]).sum();
        h[i][i] = k * (gamma[i][i] * u[i] * u[i] - pt.x[i].powf((1.0 - 2.0 * p) / p) * row);
    }
    h
}

/// Analytic Hessian of `phi_n` at `pt` by quadrature (`d >= 2`).
pub fn hessian_matrix(pt: &HannerPoint, rule: &QuadratureRule) -> Result<Matrix> {
    hessian_matrix_inner(pt, rule, None)
}

/// [`hessian_matrix`] with the split variable pinned.
pub fn hessian_matrix_inner(
    pt: &HannerPoint,
    rule: &QuadratureRule,
    inner: Option<usize>,
) -> Result<Matrix> {
    let g = gamma_matrix_inner(pt, rule, inner)?;
    Ok(hessian_from_gamma(pt, &g, beta_pd(pt.p(), pt.d)?))
}

/// Analytic Hessian for Rademacher signs (`d = 1`, `p >= 2`).
pub fn hessian_matrix_rademacher(pt: &HannerPoint) -> Result<Matrix> {
    let g = gamma_matrix_rademacher(pt)?;
    Ok(hessian_from_gamma(pt, &g, 1.0))
}

/// `-((p-1)/p) sum_{k<l} (a_k/x_k - a_l/x_l)^2 (x_k x_l)^{1/p} E_{k,l}`, scaled by `prefactor`.
pub fn quadratic_form_from_gamma(
    pt: &HannerPoint,
    gamma: &Matrix,
    a: &Direction,
    prefactor: f64,
) -> Result<f64> {
    let n = pt.n();
    if a.as_slice().len() != n {
        return Err(contract(format!(
            "direction has {} entries, point has n = {n}",
            a.as_slice().len()
        )));
    }
    let p = pt.p();
    let c = pt.coeffs();
    let a = a.as_slice();
    let mut total = 0.0;
    for (k, l, e) in ekl_entries(gamma) {
        let diff = a[k] / pt.x[k] - a[l] / pt.x[l];
        total += diff * diff * c[k] * c[l] * e;
    }
    Ok(-prefactor * (p - 1.0) / p * total)
}

/// `a^T H a` through the cross expectations, without forming `H`.
pub fn hessian_quadratic_form(
    pt: &HannerPoint,
    a: &Direction,
    rule: &QuadratureRule,
) -> Result<f64> {
    let g = gamma_matrix(pt, rule)?;
    quadratic_form_from_gamma(pt, &g, a, beta_pd(pt.p(), pt.d)?)
}

/// Central-difference Hessian of `f` at `x` with steps `rel_step * x_i`.
pub fn fd_hessian<F>(x: &[f64], rel_step: f64, f: F) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(1e-6..=1e-2).contains(&rel_step) {
        return Err(domain(format!(
            "relative step must lie in [1e-6, 1e-2], got {rel_step}"
        )));
    }
    let n = x.len();
    let h: Vec<f64> = x
        .iter()
        .map(|v| rel_step * v.abs().max(f64::MIN_POSITIVE))
        .collect();
    let f0 = f(x)?;
    let mut y = x.to_vec();
    let mut eval = |shifts: &[(usize, f64)]| -> Result<f64> {
        y.copy_from_slice(x);
        for &(i, s) in shifts {
            y[i] += s;
        }
        f(&y)
    };
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let fp = eval(&[(i, h[i])])?;
        let fm = eval(&[(i, -h[i])])?;
        out[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&[(i, h[i]), (j, h[j])])?;
            let fpm = eval(&[(i, h[i]), (j, -h[j])])?;
            let fmp = eval(&[(i, -h[i]), (j, h[j])])?;
            let fmm = eval(&[(i, -h[i]), (j, -h[j])])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

/// Finite-difference Hessian of the projected `phi_n`, keeping the split
/// variable of the base point through the whole stencil.
pub fn fd_hessian_projected(
    pt: &HannerPoint,
    rel_step: f64,
    rule: &QuadratureRule,
) -> Result<Matrix> {
    let inner = inner_index(&pt.coeffs());
    fd_hessian(&pt.x, rel_step, |y| {
        phi_projected_inner(&pt.with_x(y.to_vec())?, rule, inner)
    })
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().flatten().fold(0.0, |a, &b| a.max(b.abs()))
}

fn check_square(m: &Matrix) -> Result<usize> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(contract("matrix must be square"));
    }
    Ok(n)
}

/// Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = check_square(m)?;
    if n > EIGEN_MAX_N {
        return Err(contract(format!(
            "Jacobi eigenvalues are limited to n <= {EIGEN_MAX_N}, got {n}"
        )));
    }
    let mut a = m.clone();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for pidx in 0..n {
            for q in pidx + 1..n {
                let apq = a[pidx][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[pidx][pidx]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][pidx];
                    let akq = a[k][q];
                    a[k][pidx] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[pidx][k];
                    let aqk = a[q][k];
                    a[pidx][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Verdict for a symmetric matrix with eigenvalue tolerance `tol * max|entry|`.
///
/// NSD takes precedence, so a matrix that is negligible both ways (for
/// example the exactly linear `p = 2` case) reports NSD.
pub fn definiteness(m: &Matrix, tol: f64) -> Result<Verdict> {
    Ok(definiteness_with_eigenvalues(m, tol)?.0)
}

/// [`definiteness`] together with the ascending eigenvalues.
pub fn definiteness_with_eigenvalues(m: &Matrix, tol: f64) -> Result<(Verdict, Vec<f64>)> {
    let n = check_square(m)?;
    if !(tol >= 0.0) {
        return Err(domain("tolerance must be nonnegative"));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Ok((Verdict::Inconclusive, Vec::new()));
    }
    let scale = max_abs(m);
    for i in 0..n {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > SYMMETRY_TOL * scale {
                return Err(contract(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let ev = jacobi_eigenvalues(m)?;
    Ok((classify(&ev, tol * scale), ev))
}

fn classify(ev: &[f64], band: f64) -> Verdict {
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if ev.is_empty() || max <= band {
        Verdict::Nsd
    } else if min >= -band {
        Verdict::Psd
    } else {
        Verdict::Indefinite
    }
}

/// Everything known about the Hessian at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub matrix: Matrix,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub quad_form_min: f64,
    pub quad_form_max: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
    /// Entrywise size of the numerical error, when known.
    pub error_estimate: Option<f64>,
    /// `p` is below [`P_STABLE_MIN`].
    pub near_p_one: bool,
}

/// Assemble a report from a Hessian, optional entrywise error estimate and test directions.
///
/// When the tolerance alone would call the matrix INDEFINITE but the
/// offending eigenvalue is within `n * error` of zero, the verdict is
/// INCONCLUSIVE instead.
pub fn hessian_report(
    pt: &HannerPoint,
    matrix: Matrix,
    error_estimate: Option<f64>,
    directions: &[Direction],
    tol: f64,
) -> Result<HessianReport> {
    let (mut verdict, ev) = definiteness_with_eigenvalues(&matrix, tol)?;
    let n = matrix.len();
    if verdict == Verdict::Indefinite {
        if let Some(err) = error_estimate {
            let band = tol * max_abs(&matrix) + n as f64 * err;
            if classify(&ev, band) != Verdict::Indefinite {
                verdict = Verdict::Inconclusive;
            }
        }
    }
    let mut qmin = f64::INFINITY;
    let mut qmax = f64::NEG_INFINITY;
    for a in directions {
        let a = a.as_slice();
        if a.len() != n {
            return Err(contract("direction length does not match the matrix"));
        }
        let q: f64 = (0..n)
            .map(|i| a[i] * (0..n).map(|j| matrix[i][j] * a[j]).sum::<f64>())
            .sum();
        qmin = qmin.min(q);
        qmax = qmax.max(q);
    }
    if directions.is_empty() {
        qmin = 0.0;
        qmax = 0.0;
    }
    Ok(HessianReport {
        min_eigenvalue: ev.first().copied().unwrap_or(0.0),
        max_eigenvalue: ev.last().copied().unwrap_or(0.0),
        matrix,
        quad_form_min: qmin,
        quad_form_max: qmax,
        verdict,
        tolerance: tol,
        error_estimate,
        near_p_one: pt.p() < P_STABLE_MIN,
    })
}

/// Monte Carlo `gamma_{i,j}` from projection draws (finite variance needs `p > 1.5`).
pub fn gamma_mc(
    pt: &HannerPoint,
    i: usize,
    j: usize,
    samples: u64,
    stream: RandomStream,
) -> Result<EstimateWithError> {
    check_index(pt, i)?;
    check_index(pt, j)?;
    check_p(pt)?;
    let c = pt.coeffs();
    let q = pt.p.q();
    mc_expectation(
        |t| {
            let s: f64 = c.iter().zip(t).map(|(a, b)| a * b).sum();
            abs_pow(s, q) * t[i] * t[j]
        },
        SampleLaw::Projection(ProjectionDist::new(pt.d)?),
        pt.n(),
        samples,
        stream,
    )
}

/// Monte Carlo `E_{k,l}` through the vector form
/// `beta_{q,d}^{-1} E[|sum_j c_j xi_j|^q <xi_k, xi_l>]`, which has finite variance for every `q > -1`.
pub fn ekl_mc(
    pt: &HannerPoint,
    k: usize,
    l: usize,
    samples: u64,
    stream: RandomStream,
) -> Result<EstimateWithError> {
    if k >= l {
        return Err(contract(format!("ekl needs k < l, got ({k}, {l})")));
    }
    check_index(pt, l)?;
    check_p(pt)?;
    let d = pt.d;
    let c = pt.coeffs();
    let q = pt.p.q();
    let raw = mc_expectation(
        |v| {
            let mut norm2 = 0.0;
            for i in 0..d {
                let s: f64 = c.iter().enumerate().map(|(m, cm)| cm * v[m * d + i]).sum();
                norm2 += s * s;
            }
            let dot: f64 = (0..d).map(|i| v[k * d + i] * v[l * d + i]).sum();
            abs_pow(norm2.sqrt(), q) * dot
        },
        SampleLaw::Sphere(SphereDist::new(d)?),
        pt.n(),
        samples,
        stream,
    )?;
    let b = beta_pd(q, d)?;
    Ok(EstimateWithError {
        value: raw.value / b,
        std_error: raw.std_error / b,
        samples: raw.samples,
    })
}
