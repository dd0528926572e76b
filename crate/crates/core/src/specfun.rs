//! Special functions and closed forms.
//!
//! Contains the log-gamma function, falling-factorial binomial coefficients,
//! the projection constant `beta_{p,d} = 1 / E|<xi, e_1>|^p`, the circle
//! function `g_q(x) = E|x + xi|^q` for `xi` uniform on the unit circle and the
//! uniform-kernel function `h_q(x) = E|x + U|^q` for `U` uniform on `[-1, 1]`.

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{domain, HannerError, Result};

/// An exponent `p >= 1` together with its shifted companion `q = p - 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PExponent(f64);

impl PExponent {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p < 1.0 {
            return Err(domain(format!("exponent p must satisfy p >= 1, got {p}")));
        }
        Ok(Self(p))
    }

    #[inline]
    pub fn p(self) -> f64 {
        self.0
    }

    /// `q = p - 2`, always recomputed from `p`.
    #[inline]
    pub fn q(self) -> f64 {
        self.0 - 2.0
    }
}

impl TryFrom<f64> for PExponent {
    type Error = HannerError;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<PExponent> for f64 {
    fn from(p: PExponent) -> f64 {
        p.0
    }
}

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma_lanczos(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        (PI / (PI * x).sin()).ln() - ln_gamma_lanczos(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS_COEF[0];
        for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Natural logarithm of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("log_gamma requires x > 0, got {x}")));
    }
    // Gamma(1) = Gamma(2) = 1; return the exact zeros instead of rounding noise.
    if x == 1.0 || x == 2.0 {
        return Ok(0.0);
    }
    Ok(ln_gamma_lanczos(x))
}

/// `beta_{p,d} = sqrt(pi) Gamma((d+p)/2) / (Gamma(d/2) Gamma((p+1)/2))`.
///
/// Defined for `p > -1` and `d >= 1`; equals `1 / E|<xi, e_1>|^p` for `xi`
/// uniform on the sphere `S^{d-1}`.
pub fn beta_pd(p: f64, d: usize) -> Result<f64> {
    if !(p > -1.0) || !p.is_finite() {
        return Err(domain(format!(
            "beta_pd requires p > -1 (the moment diverges otherwise), got {p}"
        )));
    }
    if d == 0 {
        return Err(domain("beta_pd requires d >= 1"));
    }
    if d == 1 {
        return Ok(1.0);
    }
    let d = d as f64;
    let ln = 0.5 * PI.ln() + log_gamma((d + p) / 2.0)?
        - log_gamma(d / 2.0)?
        - log_gamma((p + 1.0) / 2.0)?;
    Ok(ln.exp())
}

/// Generalized binomial coefficient `alpha (alpha - 1) ... (alpha - k + 1) / k!`.
///
/// Evaluated as a running falling-factorial product so that non-positive
/// half-integers `alpha` do not go through poles of the gamma function.
pub fn gen_binom(alpha: f64, k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (alpha - i as f64) / (i as f64 + 1.0);
    }
    acc
}

/// Below this radius `g_q` is summed from its power series.
pub const G_SERIES_MAX_X: f64 = 0.85;
/// Above this radius `g_q` uses the periodic trapezoid rule.
pub const G_TRAPEZOID_MIN_X: f64 = 1.15;

const G_MAX_SERIES_TERMS: usize = 200_000;
const G_MAX_TRAPEZOID_POINTS: usize = 1 << 20;
const G_MAX_ADAPTIVE_INTERVALS: usize = 20_000;

/// `g_q(x) = E|x + xi|^q` for `xi` uniform on the unit circle, `x >= 0`, `q > -1`.
///
/// The series `sum_n binom(q/2, n)^2 x^(2n)` is used for `x <= 0.85`, the
/// periodic trapezoid rule for `x >= 1.15` and adaptive Gauss-Kronrod in
/// between. At `x = 1` the value is the closed form
/// `2^q Gamma((q+1)/2) / (sqrt(pi) Gamma(q/2 + 1))`.
pub fn g_q(x: f64, q: f64, tol: f64) -> Result<f64> {
    if !(q > -1.0) {
        return Err(domain(format!("g_q requires q > -1, got {q}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(domain(format!("g_q requires x >= 0, got {x}")));
    }
    if !(tol > 0.0) {
        return Err(domain("g_q requires a positive tolerance"));
    }
    if x == 0.0 || q == 0.0 {
        return Ok(1.0);
    }
    if x == 1.0 {
        let ln =
            q * 2f64.ln() + log_gamma((q + 1.0) / 2.0)? - 0.5 * PI.ln() - log_gamma(q / 2.0 + 1.0)?;
        return Ok(ln.exp());
    }
    if x <= G_SERIES_MAX_X {
        g_q_series(x, q, tol)
    } else if x >= G_TRAPEZOID_MIN_X {
        g_q_trapezoid(x, q, tol)
    } else {
        g_q_adaptive(x, q, tol)
    }
}

/// Power-series branch of [`g_q`], valid for `0 <= x < 1`.
pub fn g_q_series(x: f64, q: f64, tol: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&x) {
        return Err(domain(format!("g_q series requires 0 <= x < 1, got {x}")));
    }
    let alpha = q / 2.0;
    let x2 = x * x;
    let tail_scale = 1.0 / (1.0 - x2);
    let mut coef = 1.0;
    let mut power = 1.0;
    let mut sum = 0.0;
    for n in 0..G_MAX_SERIES_TERMS {
        sum += coef * coef * power;
        coef *= (alpha - n as f64) / (n as f64 + 1.0);
        power *= x2;
        let next = coef * coef * power;
        if next * tail_scale < tol {
            return Ok(sum);
        }
    }
    Err(HannerError::Accuracy {
        what: "g_q series",
        best: sum,
        err: coef * coef * power * tail_scale,
        tol,
    })
}

/// Angular integrand of `g_q` written as a function of `u = pi - t`,
/// `((x-1)^2 + 4x sin^2(u/2))^(q/2)`, which avoids cancellation near `u = 0`.
#[inline]
fn g_integrand(x: f64, q: f64, u: f64) -> f64 {
    let s = (0.5 * u).sin();
    ((x - 1.0) * (x - 1.0) + 4.0 * x * s * s).powf(0.5 * q)
}

fn g_q_trapezoid(x: f64, q: f64, tol: f64) -> Result<f64> {
    // (1/pi) int_0^pi f(u) du for an even 2pi-periodic f: the trapezoid rule on
    // [0, pi] with endpoint half-weights is the periodic trapezoid rule.
    let trap = |n: usize| -> f64 {
        let h = PI / n as f64;
        let mut s = 0.5 * (g_integrand(x, q, 0.0) + g_integrand(x, q, PI));
        for i in 1..n {
            s += g_integrand(x, q, i as f64 * h);
        }
        s / n as f64
    };
    let mut n = 16;
    let mut prev = trap(n);
    while n < G_MAX_TRAPEZOID_POINTS {
        n *= 2;
        let cur = trap(n);
        if (cur - prev).abs() < tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(HannerError::Accuracy {
        what: "g_q trapezoid",
        best: prev,
        err: f64::NAN,
        tol,
    })
}

fn g_q_adaptive(x: f64, q: f64, tol: f64) -> Result<f64> {
    let (value, err) = adaptive_gk15(
        |u| g_integrand(x, q, u),
        0.0,
        PI,
        tol * PI,
        G_MAX_ADAPTIVE_INTERVALS,
    );
    if err <= tol * PI {
        Ok(value / PI)
    } else {
        Err(HannerError::Accuracy {
            what: "g_q adaptive quadrature",
            best: value / PI,
            err: err / PI,
            tol,
        })
    }
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let dx = h * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss-Kronrod (7/15) quadrature.
///
/// Returns `(value, error estimate)`; the caller decides whether the error
/// estimate is acceptable.
pub(crate) fn adaptive_gk15<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> (f64, f64) {
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece {
        a,
        b,
        value: v,
        err: e,
    });
    let mut total_err = e;
    while total_err > tol && heap.len() < max_intervals {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        total_err += le + re - worst.err;
        heap.push(Piece {
            a: worst.a,
            b: mid,
            value: lv,
            err: le,
        });
        heap.push(Piece {
            a: mid,
            b: worst.b,
            value: rv,
            err: re,
        });
    }
    // recompute from scratch to shed the drift of the running updates
    let mut pieces: Vec<Piece> = heap.into_vec();
    pieces.sort_by(|l, r| l.a.total_cmp(&r.a));
    let value =
        crate::numeric::compensated_sum(&pieces.iter().map(|p| p.value).collect::<Vec<_>>());
    let err = pieces.iter().map(|p| p.err).sum();
    (value, err)
}

/// `h_q(x) = E|x + U|^q` for `U` uniform on `[-1, 1]`, closed form, even in `x`.
pub fn h_q(x: f64, q: f64) -> Result<f64> {
    if !(q > -1.0) {
        return Err(domain(format!("h_q requires q > -1, got {q}")));
    }
    let x = x.abs();
    let e = q + 1.0;
    let far = (x + 1.0).powf(e);
    let near = if x == 1.0 {
        0.0
    } else {
        (x - 1.0).signum() * (x - 1.0).abs().powf(e)
    };
    Ok((far - near) / (2.0 * e))
}

/// `h_q'(x) = ((x+1)^q - |x-1|^q) / 2` for `x > 0`.
pub fn h_q_prime(x: f64, q: f64) -> Result<f64> {
    if !(q > -1.0) {
        return Err(domain(format!("h_q' requires q > -1, got {q}")));
    }
    if !(x > 0.0) {
        return Err(domain(format!("h_q' is evaluated on x > 0, got {x}")));
    }
    if x == 1.0 && q < 0.0 {
        return Err(HannerError::Singularity(format!(
            "h_q' is infinite at x = 1 for q = {q} < 0"
        )));
    }
    Ok(((x + 1.0).powf(q) - (x - 1.0).abs().powf(q)) / 2.0)
}
