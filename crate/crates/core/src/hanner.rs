//! Direct checks of the Hanner-type inequalities on step functions.
//!
//! For symmetric coefficients `xi_k`, `E||sum_k xi_k f_k||_p^p` splits over
//! the pieces of a common refinement into `sum_t len_t phi_n(|f_1(t)|^p, ...)`,
//! while `E|sum_k xi_k ||f_k||_p|^p = phi_n(||f_1||_p^p, ...)`. Comparing the
//! two is a discrete Jensen inequality for `phi_n`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, HannerError, Result};
use crate::numeric::{abs_pow, KahanSum};
use crate::phi::{rademacher_expectation, PhiEvaluator, ENUMERATION_MAX_N};
use crate::specfun::PExponent;

/// Tolerance on `sum of lengths = 1`.
pub const LENGTH_SUM_TOL: f64 = 1e-12;

/// Breakpoints closer than this are merged when refining.
const BREAKPOINT_MERGE: f64 = 1e-13;

/// A piecewise-constant function on `[0, 1]`, serialized as `[[length, value], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct StepFunction {
    pieces: Vec<(f64, f64)>,
}

impl StepFunction {
    pub fn new(pieces: Vec<(f64, f64)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(domain("a step function needs at least one piece"));
        }
        for &(len, val) in &pieces {
            if !(len.is_finite() && len > 0.0) {
                return Err(domain(format!("piece lengths must be positive, got {len}")));
            }
            if !val.is_finite() {
                return Err(domain(format!("piece values must be finite, got {val}")));
            }
        }
        let total: f64 = pieces.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > LENGTH_SUM_TOL {
            return Err(domain(format!("piece lengths must sum to 1, got {total}")));
        }
        Ok(Self { pieces })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![(1.0, value)])
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    /// The same partition with every value multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.pieces.iter().map(|&(l, v)| (l, lambda * v)).collect())
    }
}

impl TryFrom<Vec<(f64, f64)>> for StepFunction {
    type Error = HannerError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StepFunction> for Vec<(f64, f64)> {
    fn from(f: StepFunction) -> Self {
        f.pieces
    }
}

/// `||f||_p = (sum len |value|^p)^{1/p}`.
pub fn lp_norm(f: &StepFunction, p: f64) -> Result<f64> {
    PExponent::new(p)?;
    let s: KahanSum = f.pieces.iter().map(|&(l, v)| l * abs_pow(v, p)).collect();
    Ok(s.value().powf(1.0 / p))
}

/// Pieces of the coarsest common refinement: `(length, values of each f)`.
pub fn common_refinement(fs: &[StepFunction]) -> Vec<(f64, Vec<f64>)> {
    let mut cuts: Vec<f64> = Vec::new();
    for f in fs {
        let mut acc = 0.0;
        for &(l, _) in &f.pieces[..f.pieces.len() - 1] {
            acc += l;
            cuts.push(acc);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(cuts.len() + 2);
    merged.push(0.0);
    for c in cuts {
        if c - merged[merged.len() - 1] > BREAKPOINT_MERGE && 1.0 - c > BREAKPOINT_MERGE {
            merged.push(c);
        }
    }
    merged.push(1.0);
    let mut idx = vec![0usize; fs.len()];
    let mut ends: Vec<f64> = fs.iter().map(|f| f.pieces[0].0).collect();
    let mut out = Vec::with_capacity(merged.len() - 1);
    for w in merged.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let values = fs
            .iter()
            .enumerate()
            .map(|(k, f)| {
                while mid > ends[k] && idx[k] + 1 < f.pieces.len() {
                    idx[k] += 1;
                    ends[k] += f.pieces[idx[k]].0;
                }
                f.pieces[idx[k]].1
            })
            .collect();
        out.push((w[1] - w[0], values));
    }
    out
}

fn check_inputs(fs: &[StepFunction], p: f64) -> Result<()> {
    PExponent::new(p)?;
    if fs.is_empty() {
        return Err(domain("need at least one function"));
    }
    Ok(())
}

/// `phi` of the nonzero entries of `y`; zero when all vanish.
fn phi_shrunk(eval: &PhiEvaluator, p: f64, y: &[f64]) -> Result<f64> {
    let nz: Vec<f64> = y.iter().copied().filter(|&v| v > 0.0).collect();
    if nz.is_empty() {
        Ok(0.0)
    } else {
        eval.phi(p, &nz)
    }
}

/// `E||sum_k xi_k f_k||_p^p`, piece by piece on the common refinement.
pub fn theorem_lhs(fs: &[StepFunction], p: f64, eval: &PhiEvaluator) -> Result<f64> {
    check_inputs(fs, p)?;
    let mut acc = KahanSum::new();
    for (len, vals) in common_refinement(fs) {
        let y: Vec<f64> = vals.iter().map(|&v| abs_pow(v, p)).collect();
        acc.add(len * phi_shrunk(eval, p, &y)?);
    }
    Ok(acc.value())
}

/// `E|sum_k xi_k ||f_k||_p|^p = phi_n(||f_1||_p^p, ...)`.
pub fn theorem_rhs(fs: &[StepFunction], p: f64, eval: &PhiEvaluator) -> Result<f64> {
    check_inputs(fs, p)?;
    let y: Vec<f64> = fs
        .iter()
        .map(|f| lp_norm(f, p).map(|v| v.powf(p)))
        .collect::<Result<_>>()?;
    phi_shrunk(eval, p, &y)
}

/// Status of a checked inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CheckVerdict {
    /// A proven case, numerically satisfied.
    Pass,
    /// A proven case, numerically violated.
    Fail,
    /// `d = 2`, `p < 2`: the reverse inequality is only conjectured.
    Conjectural,
    /// `d = 1` outside the proven ranges.
    Open,
}

impl std::fmt::Display for CheckVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckVerdict::Pass => "PASS",
            CheckVerdict::Fail => "FAIL",
            CheckVerdict::Conjectural => "CONJECTURAL",
            CheckVerdict::Open => "OPEN",
        })
    }
}

/// Which way the inequality is expected to go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `lhs <= rhs` (`p >= 2`).
    LhsBelow,
    /// `lhs >= rhs` (`p <= 2`).
    LhsAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub lhs: f64,
    pub rhs: f64,
    /// Signed slack: positive when the inequality holds in `orientation`.
    pub margin: f64,
    pub satisfied: bool,
    pub orientation: Orientation,
    pub verdict: CheckVerdict,
}

/// Expected direction and whether the case is proven, for `n` functions.
pub fn regime(p: f64, d: usize, n: usize) -> (Orientation, Option<CheckVerdict>) {
    let dir = if p >= 2.0 {
        Orientation::LhsBelow
    } else {
        Orientation::LhsAbove
    };
    let label = if p == 2.0 {
        None
    } else if d == 1 {
        // two functions: classical Hanner for every p; more: Schechtman for p >= 3
        if n <= 2 || p >= 3.0 {
            None
        } else {
            Some(CheckVerdict::Open)
        }
    } else if p < 2.0 && d == 2 {
        Some(CheckVerdict::Conjectural)
    } else {
        None
    };
    (dir, label)
}

fn record(
    lhs: f64,
    rhs: f64,
    dir: Orientation,
    label: Option<CheckVerdict>,
    tol: f64,
) -> CheckRecord {
    let margin = match dir {
        Orientation::LhsBelow => rhs - lhs,
        Orientation::LhsAbove => lhs - rhs,
    };
    let satisfied = margin >= -tol;
    let verdict = label.unwrap_or(if satisfied {
        CheckVerdict::Pass
    } else {
        CheckVerdict::Fail
    });
    CheckRecord {
        lhs,
        rhs,
        margin,
        satisfied,
        orientation: dir,
        verdict,
    }
}

/// Compare both sides with absolute tolerance `tol` and label the result.
pub fn theorem_check(
    fs: &[StepFunction],
    p: f64,
    d: usize,
    eval: &PhiEvaluator,
    tol: f64,
) -> Result<CheckRecord> {
    let lhs = theorem_lhs(fs, p, eval)?;
    let rhs = theorem_rhs(fs, p, eval)?;
    let (dir, label) = regime(p, d, fs.len());
    Ok(record(lhs, rhs, dir, label, tol))
}

/// `|s + t|^p + |s - t|^p`.
pub fn hanner_two_rhs(s: f64, t: f64, p: f64) -> Result<f64> {
    PExponent::new(p)?;
    if !(s >= 0.0 && t >= 0.0) {
        return Err(domain("norms must be nonnegative"));
    }
    Ok(abs_pow(s + t, p) + abs_pow(s - t, p))
}

fn rademacher_lp(values: &[f64], p: f64) -> Result<f64> {
    rademacher_expectation(values, 1, |s, _, out| out[0] = abs_pow(s, p)).map(|v| v[0])
}

/// Rademacher inequality `E||sum eps_k f_k||_p^p <= E|sum eps_k ||f_k||_p|^p`
/// (`p >= 3`), both sides by exact sign enumeration.
pub fn schechtman_check(fs: &[StepFunction], p: f64, tol: f64) -> Result<CheckRecord> {
    check_inputs(fs, p)?;
    if p < 3.0 {
        return Err(domain(format!(
            "the Rademacher inequality is proven for p >= 3, got {p}"
        )));
    }
    if fs.len() > ENUMERATION_MAX_N {
        return Err(HannerError::Resource(format!(
            "{} functions exceed the enumeration budget n <= {ENUMERATION_MAX_N}",
            fs.len()
        )));
    }
    let mut lhs = KahanSum::new();
    for (len, vals) in common_refinement(fs) {
        lhs.add(len * rademacher_lp(&vals, p)?);
    }
    let norms: Vec<f64> = fs.iter().map(|f| lp_norm(f, p)).collect::<Result<_>>()?;
    let rhs = rademacher_lp(&norms, p)?;
    Ok(record(lhs.value(), rhs, Orientation::LhsBelow, None, tol))
}
