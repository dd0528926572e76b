//! Parameter sweeps over `(p, d, n, x)`: certify proven regimes, map the
//! signs of the cross expectations `E_{k,l}`, and hunt for wrong-sign
//! witnesses in the open ranges.
//!
//! Points are evaluated in parallel but each one uses its own random stream
//! `(seed, point index)` and a fixed summation order, and records are
//! assembled by index, so a report depends only on its configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::RandomStream;
use crate::error::{domain, HannerError, Result};
use crate::hessian::{
    ekl_mc, gamma_matrix, gamma_matrix_rademacher, gamma_scale, hessian_from_gamma, hessian_report,
    Matrix, Verdict,
};
use crate::integrate::{gauss_jacobi_rule, EstimateWithError};
use crate::phi::{default_order, fits_budget, HannerPoint};
use crate::specfun::beta_pd;

/// Largest `n` accepted in sweeps.
pub const SWEEP_MAX_N: usize = 6;

/// Finest simplex step a sweep refines to when no witness turns up.
pub const REFINED_STEP: f64 = 0.02;

/// Stream id reserved for drawing random sweep points.
const SAMPLING_STREAM: u64 = u64::MAX;

/// Inclusive grid `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl PRange {
    pub fn single(p: f64) -> Self {
        Self {
            start: p,
            stop: p,
            step: 0.0,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.stop >= self.start) {
            return Err(domain(format!(
                "empty p range [{}, {}]",
                self.start, self.stop
            )));
        }
        if self.stop == self.start {
            return Ok(vec![self.start]);
        }
        if !(self.step > 0.0) {
            return Err(domain("a p range with stop > start needs a positive step"));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|i| self.start + i as f64 * self.step)
            .collect())
    }
}

/// How weight vectors are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum XSampling {
    /// All `x` with `sum x = 1` and every `x_k` a positive multiple of `step`.
    Simplex { step: f64 },
    /// `count` vectors with independent log-uniform entries in `[low, high]`.
    LogUniform { count: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub p: PRange,
    pub d: Vec<usize>,
    pub n: Vec<usize>,
    pub x: XSampling,
    /// Quadrature order; `None` picks a default for each `n`.
    pub order: Option<usize>,
    /// Sample count for Monte Carlo confirmation.
    pub mc_samples: u64,
    pub seed: u64,
    /// Relative tolerance for signs and eigenvalues.
    pub tol: f64,
    /// Allow certification outside the proven regimes.
    pub open_range: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let ps = self.p.values()?;
        if let Some(p) = ps.iter().find(|&&p| p <= 1.0) {
            return Err(domain(format!("sweeps need p > 1, got {p}")));
        }
        if self.d.is_empty() || self.n.is_empty() {
            return Err(domain("d and n lists must be nonempty"));
        }
        if self.d.contains(&0) {
            return Err(domain("d must be at least 1"));
        }
        if let Some(n) = self.n.iter().find(|&&n| n == 0 || n > SWEEP_MAX_N) {
            return Err(domain(format!("n must lie in 1..={SWEEP_MAX_N}, got {n}")));
        }
        for &d in &self.d {
            if d == 1 {
                if let Some(p) = ps.iter().find(|&&p| p < 2.0) {
                    return Err(domain(format!(
                        "d = 1 sweeps use sign enumeration, which needs p >= 2, got {p}"
                    )));
                }
            }
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(domain("tolerance must be positive"));
        }
        if self.mc_samples < 2 {
            return Err(domain("Monte Carlo confirmation needs at least 2 samples"));
        }
        if self.order == Some(0) {
            return Err(domain("quadrature order must be positive"));
        }
        match self.x {
            XSampling::Simplex { step } => {
                if !(step > 0.0 && step <= 1.0) {
                    return Err(domain(format!(
                        "simplex step must lie in (0, 1], got {step}"
                    )));
                }
            }
            XSampling::LogUniform { count, low, high } => {
                if count == 0 || !(low > 0.0 && high >= low && high.is_finite()) {
                    return Err(domain(
                        "log-uniform sampling needs count >= 1 and 0 < low <= high",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Proven semidefiniteness of the Hessian of `phi_n`, if any.
pub fn proven_verdict(p: f64, d: usize, n: usize) -> Option<Verdict> {
    if p == 2.0 {
        return Some(Verdict::Nsd);
    }
    match d {
        1 if p >= 3.0 || (p > 2.0 && n <= 2) => Some(Verdict::Nsd),
        1 => None,
        _ if p > 2.0 => Some(Verdict::Nsd),
        _ if d >= 3 => Some(Verdict::Psd),
        _ => None,
    }
}

/// The verdict the sign argument predicts (proven or conjectured).
pub fn expected_verdict(p: f64) -> Verdict {
    if p >= 2.0 {
        Verdict::Nsd
    } else {
        Verdict::Psd
    }
}

/// `+1` when the `E_{k,l}` should be nonnegative, `-1` when nonpositive.
pub fn desired_sign(p: f64) -> f64 {
    if p >= 2.0 {
        1.0
    } else {
        -1.0
    }
}

/// Integer compositions of `total` into `n` positive parts, lexicographic.
fn compositions(total: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for first in 1..=left.saturating_sub(slots - 1) {
            cur.push(first);
            rec(left - first, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if total >= n && n > 0 {
        rec(total, n, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Simplex grid points for `n` weights.
pub fn simplex_grid(n: usize, step: f64) -> Vec<Vec<f64>> {
    let total = (1.0 / step).round() as usize;
    compositions(total, n)
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / total as f64).collect())
        .collect()
}

/// All `(p, d, x)` of a configuration in sweep order.
pub fn sweep_points(cfg: &SweepConfig) -> Result<Vec<HannerPoint>> {
    cfg.validate()?;
    let mut rng = RandomStream::new(cfg.seed, SAMPLING_STREAM).rng();
    let mut out = Vec::new();
    for p in cfg.p.values()? {
        for &d in &cfg.d {
            for &n in &cfg.n {
                let xs = match cfg.x {
                    XSampling::Simplex { step } => simplex_grid(n, step),
                    XSampling::LogUniform { count, low, high } => {
                        let (a, b) = (low.ln(), high.ln());
                        (0..count)
                            .map(|_| {
                                (0..n)
                                    .map(|_| {
                                        if a == b {
                                            low
                                        } else {
                                            rng.random_range(a..b).exp()
                                        }
                                    })
                                    .collect()
                            })
                            .collect()
                    }
                };
                for x in xs {
                    out.push(HannerPoint::new(p, d, x)?);
                }
            }
        }
    }
    Ok(out)
}

/// One `E_{k,l}` (1-based `k < l`) with its numerical error estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EklEntry {
    pub k: usize,
    pub l: usize,
    pub value: f64,
    pub err_est: f64,
}

/// Re-evaluation of a suspicious point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    /// Pair (1-based) with the worst sign.
    pub k: usize,
    pub l: usize,
    pub value: f64,
    /// Order of the refined rule (`None` for exact enumeration).
    pub refined_order: Option<usize>,
    pub refined_value: f64,
    pub refinement_delta: f64,
    pub mc: Option<EstimateWithError>,
    pub confirmed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    /// Signs and verdict as predicted.
    Ok,
    /// A proven prediction failed and the failure survived refinement.
    Violation,
    /// A wrong sign at the base order that did not survive refinement.
    Resolved,
    /// A confirmed wrong-sign `E_{k,l}` (outside the proven regimes).
    Witness,
    /// A wrong sign that failed confirmation.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// `min_{k<l} sign * E_{k,l} / scale`; negative means a wrong sign.
    pub sign: Option<f64>,
    /// `-max eigenvalue / max|H|` for NSD predictions, `min eigenvalue / max|H|` for PSD.
    pub eigen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    pub p: f64,
    pub d: usize,
    pub n: usize,
    pub x: Vec<f64>,
    /// Quadrature order used; `None` for exact sign enumeration.
    pub order: Option<usize>,
    pub ekl: Vec<EklEntry>,
    /// `max_i gamma_{i,i}`, the size the signs are measured against.
    pub scale: f64,
    pub ekl_min: Option<f64>,
    pub ekl_max: Option<f64>,
    pub verdict: Verdict,
    pub expected: Verdict,
    pub proven: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub margins: Margins,
    pub status: PointStatus,
    pub confirmation: Option<Confirmation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: usize,
    pub verdicts: BTreeMap<Verdict, usize>,
    pub statuses: BTreeMap<String, usize>,
    pub violations: Vec<usize>,
    pub witnesses: Vec<usize>,
    pub min_sign_margin: Option<f64>,
    pub ekl_over_scale_min: Option<f64>,
    pub ekl_over_scale_max: Option<f64>,
    /// Points whose Hessian vanishes identically (`p = 2`).
    pub zero_hessians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: "hanner".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tool: ToolInfo,
    pub kind: String,
    pub config: SweepConfig,
    pub points: Vec<PointRecord>,
    pub summary: SweepSummary,
    pub notes: Vec<String>,
}

/// A sign map is a sweep report whose records carry the `E_{k,l}` extremes.
pub type SignMap = SweepReport;

impl SweepReport {
    pub fn empty(kind: &str, config: SweepConfig) -> Self {
        Self {
            tool: ToolInfo::default(),
            kind: kind.into(),
            config,
            points: Vec::new(),
            summary: SweepSummary::default(),
            notes: Vec::new(),
        }
    }
}

struct Evaluated {
    gamma: Matrix,
    /// Entrywise `|gamma - gamma_coarse|`, zero when exact.
    gamma_err: Matrix,
    order: Option<usize>,
}

fn effective_order(cfg_order: Option<usize>, n: usize) -> usize {
    let mut m = cfg_order.unwrap_or_else(|| default_order(n));
    while m > 2 && !fits_budget(m, n) {
        m -= 1;
    }
    m
}

fn evaluate_gamma(pt: &HannerPoint, order: usize) -> Result<Evaluated> {
    if pt.d == 1 {
        let gamma = gamma_matrix_rademacher(pt)?;
        let n = pt.n();
        return Ok(Evaluated {
            gamma,
            gamma_err: vec![vec![0.0; n]; n],
            order: None,
        });
    }
    let gamma = gamma_matrix(pt, &gauss_jacobi_rule(order, pt.d)?)?;
    let coarse = gamma_matrix(pt, &gauss_jacobi_rule((order / 2).max(2), pt.d)?)?;
    let gamma_err = gamma
        .iter()
        .zip(&coarse)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).collect())
        .collect();
    Ok(Evaluated {
        gamma,
        gamma_err,
        order: Some(order),
    })
}

fn beta_for(pt: &HannerPoint) -> Result<f64> {
    if pt.d == 1 {
        Ok(1.0)
    } else {
        beta_pd(pt.p(), pt.d)
    }
}

fn matrix_max_abs(m: &Matrix) -> f64 {
    m.iter().flatten().fold(0.0, |a, &b| a.max(b.abs()))
}

/// `(k, l, value)` of the worst `sign * E_{k,l}`, 0-based.
fn worst_pair(gamma: &Matrix, sign: f64) -> Option<(usize, usize, f64)> {
    let n = gamma.len();
    let mut best: Option<(usize, usize, f64)> = None;
    for k in 0..n {
        for l in k + 1..n {
            let v = gamma[k][l];
            if best.is_none_or(|b| sign * v < sign * b.2) {
                best = Some((k, l, v));
            }
        }
    }
    best
}

struct Assessment {
    record: PointRecord,
    suspicious: bool,
}

fn assess(index: usize, pt: &HannerPoint, ev: &Evaluated, tol: f64) -> Result<Assessment> {
    let n = pt.n();
    let p = pt.p();
    let beta = beta_for(pt)?;
    let h = hessian_from_gamma(pt, &ev.gamma, beta);
    let h_coarse_err = if ev.order.is_some() {
        let approx: Matrix = ev
            .gamma
            .iter()
            .zip(&ev.gamma_err)
            .map(|(a, e)| a.iter().zip(e).map(|(u, v)| u + v).collect())
            .collect();
        let h2 = hessian_from_gamma(pt, &approx, beta);
        let diff = h
            .iter()
            .flatten()
            .zip(h2.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Some(diff)
    } else {
        None
    };
    let report = hessian_report(pt, h.clone(), h_coarse_err, &[], tol)?;
    let scale = gamma_scale(&ev.gamma);
    let sign = desired_sign(p);
    let mut ekl = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for k in 0..n {
        for l in k + 1..n {
            ekl.push(EklEntry {
                k: k + 1,
                l: l + 1,
                value: ev.gamma[k][l],
                err_est: ev.gamma_err[k][l],
            });
        }
    }
    let ekl_min = ekl.iter().map(|e| e.value).reduce(f64::min);
    let ekl_max = ekl.iter().map(|e| e.value).reduce(f64::max);
    let sign_margin =
        worst_pair(&ev.gamma, sign)
            .map(|(_, _, v)| if scale > 0.0 { sign * v / scale } else { 0.0 });
    let expected = expected_verdict(p);
    let hmax = matrix_max_abs(&h);
    let eigen = if hmax == 0.0 {
        0.0
    } else if expected == Verdict::Nsd {
        -report.max_eigenvalue / hmax
    } else {
        report.min_eigenvalue / hmax
    };
    let wrong_sign = sign_margin.is_some_and(|m| m < -tol);
    let proven = proven_verdict(p, pt.d, n).is_some();
    let suspicious = wrong_sign || (proven && report.verdict != expected);
    Ok(Assessment {
        record: PointRecord {
            index,
            p,
            d: pt.d,
            n,
            x: pt.x.clone(),
            order: ev.order,
            ekl,
            scale,
            ekl_min,
            ekl_max,
            verdict: report.verdict,
            expected,
            proven,
            min_eigenvalue: report.min_eigenvalue,
            max_eigenvalue: report.max_eigenvalue,
            margins: Margins {
                sign: sign_margin,
                eigen,
            },
            status: PointStatus::Ok,
            confirmation: None,
        },
        suspicious,
    })
}

/// Evaluate one point, re-checking anything that looks wrong at doubled
/// order and (for quadrature) by Monte Carlo.
pub fn evaluate_point(index: usize, pt: &HannerPoint, cfg: &SweepConfig) -> Result<PointRecord> {
    let order = effective_order(cfg.order, pt.n());
    let base = evaluate_gamma(pt, order)?;
    let first = assess(index, pt, &base, cfg.tol)?;
    if !first.suspicious {
        return Ok(first.record);
    }
    let sign = desired_sign(pt.p());
    let (refined, refined_order) = if pt.d == 1 {
        (base, None)
    } else {
        let m2 = effective_order(Some(2 * order), pt.n());
        let g2 = gamma_matrix(pt, &gauss_jacobi_rule(m2, pt.d)?)?;
        let err: Matrix = g2
            .iter()
            .zip(&base.gamma)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()).collect())
            .collect();
        (
            Evaluated {
                gamma: g2,
                gamma_err: err,
                order: Some(m2),
            },
            Some(m2),
        )
    };
    let second = assess(index, pt, &refined, cfg.tol)?;
    let mut rec = second.record;
    let Some((k, l, value2)) = worst_pair(&refined.gamma, sign) else {
        // n = 1 cannot be suspicious through signs; a verdict mismatch stands
        rec.status = if second.suspicious {
            PointStatus::Violation
        } else {
            PointStatus::Resolved
        };
        return Ok(rec);
    };
    let delta = refined.gamma_err[k][l];
    let value = first
        .record
        .ekl
        .iter()
        .find(|e| e.k == k + 1 && e.l == l + 1)
        .map_or(value2, |e| e.value);
    let wrong = sign * value2 < -cfg.tol * rec.scale;
    let resolved_by_error = value2.abs() <= 10.0 * delta;
    let mc = if pt.d >= 2 && wrong {
        Some(ekl_mc(
            pt,
            k,
            l,
            cfg.mc_samples,
            RandomStream::new(cfg.seed, index as u64),
        )?)
    } else {
        None
    };
    let mc_agrees = mc
        .as_ref()
        .is_none_or(|m| (m.value - value2).abs() <= 4.0 * m.std_error);
    let confirmed = wrong && !resolved_by_error && mc_agrees;
    let verdict_bad = rec.proven && rec.verdict != rec.expected;
    rec.status = if rec.proven {
        if (confirmed || verdict_bad) && second.suspicious {
            PointStatus::Violation
        } else {
            PointStatus::Resolved
        }
    } else if confirmed {
        PointStatus::Witness
    } else {
        PointStatus::Rejected
    };
    rec.confirmation = Some(Confirmation {
        k: k + 1,
        l: l + 1,
        value,
        refined_order,
        refined_value: value2,
        refinement_delta: delta,
        mc,
        confirmed,
    });
    Ok(rec)
}

fn summarize(points: &[PointRecord], tol: f64) -> SweepSummary {
    let mut s = SweepSummary {
        points: points.len(),
        ..Default::default()
    };
    for r in points {
        *s.verdicts.entry(r.verdict).or_default() += 1;
        let key = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        *s.statuses.entry(key).or_default() += 1;
        match r.status {
            PointStatus::Violation => s.violations.push(r.index),
            PointStatus::Witness => s.witnesses.push(r.index),
            _ => {}
        }
        if let Some(m) = r.margins.sign {
            s.min_sign_margin = Some(s.min_sign_margin.map_or(m, |v: f64| v.min(m)));
        }
        if r.scale > 0.0 {
            if let (Some(lo), Some(hi)) = (r.ekl_min, r.ekl_max) {
                let (lo, hi) = (lo / r.scale, hi / r.scale);
                s.ekl_over_scale_min = Some(s.ekl_over_scale_min.map_or(lo, |v: f64| v.min(lo)));
                s.ekl_over_scale_max = Some(s.ekl_over_scale_max.map_or(hi, |v: f64| v.max(hi)));
            }
        }
        if r.max_eigenvalue.abs().max(r.min_eigenvalue.abs()) <= tol * r.scale {
            s.zero_hessians += 1;
        }
    }
    s
}

fn run_points(cfg: &SweepConfig, pts: &[HannerPoint], offset: usize) -> Result<Vec<PointRecord>> {
    pts.par_iter()
        .enumerate()
        .map(|(i, pt)| evaluate_point(offset + i, pt, cfg))
        .collect()
}

fn finish(
    kind: &str,
    cfg: &SweepConfig,
    points: Vec<PointRecord>,
    mut notes: Vec<String>,
) -> SweepReport {
    let summary = summarize(&points, cfg.tol);
    if points.iter().any(|r| r.p == 2.0) {
        notes.push(
            "p = 2: phi is linear, so every Hessian vanishes and counts as both NSD and PSD".into(),
        );
    }
    if let (None, Some(&n), true) = (cfg.order, cfg.n.iter().max(), cfg.d.iter().any(|&d| d >= 2)) {
        notes.push(format!(
            "quadrature orders chosen per n (largest n = {n} uses order {})",
            default_order(n)
        ));
    }
    SweepReport {
        tool: ToolInfo::default(),
        kind: kind.into(),
        config: cfg.clone(),
        points,
        summary,
        notes,
    }
}

fn outside_proven(cfg: &SweepConfig) -> Result<Option<(f64, usize, usize)>> {
    for p in cfg.p.values()? {
        for &d in &cfg.d {
            for &n in &cfg.n {
                let certifiable =
                    d >= 2 && (p >= 2.0 || d >= 3) || (d == 1 && proven_verdict(p, d, n).is_some());
                if !certifiable {
                    return Ok(Some((p, d, n)));
                }
            }
        }
    }
    Ok(None)
}

/// Certify the predicted Hessian verdict at every sweep point.
///
/// Refuses configurations outside the proven regimes (`p >= 2`, `d >= 2`;
/// `1 < p <= 2`, `d >= 3`; or Rademacher with `p >= 3`) unless `open_range` is set.
pub fn certify_regime(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    if let Some((p, d, n)) = outside_proven(cfg)? {
        if !cfg.open_range {
            return Err(domain(format!(
                "(p = {p}, d = {d}, n = {n}) is outside the proven regimes; set the open-range flag to sweep it anyway"
            )));
        }
    }
    let pts = sweep_points(cfg)?;
    let points = run_points(cfg, &pts, 0)?;
    Ok(finish("certify", cfg, points, Vec::new()))
}

fn witness_search(kind: &str, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let pts = sweep_points(cfg)?;
    let mut points = run_points(cfg, &pts, 0)?;
    let mut notes = Vec::new();
    let open = cfg.p.values()?.iter().any(|&p| {
        cfg.d.iter().any(|&d| {
            cfg.n
                .iter()
                .any(|&n| proven_verdict(p, d, n).is_none() && n >= 2)
        })
    });
    let found = points.iter().any(|r| r.status == PointStatus::Witness);
    if open && !found {
        if let XSampling::Simplex { step } = cfg.x {
            if step > REFINED_STEP {
                notes.push(format!(
                    "no confirmed wrong-sign witness at simplex step {step}; refining once to step {REFINED_STEP}"
                ));
                let mut fine = cfg.clone();
                fine.x = XSampling::Simplex { step: REFINED_STEP };
                let extra = sweep_points(&fine)?;
                points.extend(run_points(&fine, &extra, points.len())?);
                if !points.iter().any(|r| r.status == PointStatus::Witness) {
                    notes.push(format!(
                        "no confirmed wrong-sign witness at step {REFINED_STEP} either"
                    ));
                }
            } else {
                notes.push(format!(
                    "no confirmed wrong-sign witness at simplex step {step}"
                ));
            }
        } else {
            notes.push("no confirmed wrong-sign witness among the sampled points".into());
        }
    }
    Ok(finish(kind, cfg, points, notes))
}

/// Per-point extremes of `E_{k,l}` with Hessian verdicts; wrong signs are
/// double-checked and, in the open ranges, a fruitless simplex sweep is refined once.
pub fn sign_map(cfg: &SweepConfig) -> Result<SignMap> {
    witness_search("signmap", cfg)
}

/// Search the open ranges for wrong-sign `E_{k,l}`, recording the full
/// Hessian verdict at every witness.
pub fn open_range_hunt(cfg: &SweepConfig) -> Result<SweepReport> {
    witness_search("hunt", cfg)
}

/// Output format of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = HannerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(domain(format!(
                "unknown report format {other:?} (expected json or csv)"
            ))),
        }
    }
}

/// Serialize a report. JSON is the full record; CSV has one row per `(point, k, l)`.
pub fn render_report(report: &SweepReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut v =
                serde_json::to_vec_pretty(report).map_err(|e| HannerError::Serde(e.to_string()))?;
            v.push(b'\n');
            Ok(v)
        }
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let nmax = report
        .points
        .iter()
        .map(|r| r.n)
        .max()
        .unwrap_or(0)
        .max(report.config.n.iter().copied().max().unwrap_or(0));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["p".into(), "d".into(), "n".into()];
    header.extend((1..=nmax).map(|i| format!("x{i}")));
    header.extend(["k", "l", "E_kl", "err_est", "verdict", "witness"].map(String::from));
    let csv_err = |e: csv::Error| HannerError::Serde(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in &report.points {
        let witness_pair = r
            .confirmation
            .as_ref()
            .filter(|_| r.status == PointStatus::Witness)
            .map(|c| (c.k, c.l));
        for e in &r.ekl {
            let mut row: Vec<String> = vec![r.p.to_string(), r.d.to_string(), r.n.to_string()];
            row.extend((0..nmax).map(|i| r.x.get(i).map(|v| v.to_string()).unwrap_or_default()));
            row.push(e.k.to_string());
            row.push(e.l.to_string());
            row.push(e.value.to_string());
            row.push(e.err_est.to_string());
            row.push(r.verdict.to_string());
            row.push((witness_pair == Some((e.k, e.l))).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| HannerError::Serde(e.to_string()))
}

/// Write a report to `path`.
pub fn emit_report(report: &SweepReport, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = render_report(report, format)?;
    let io = |source| HannerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.flush().map_err(io)
}

/// Parse a JSON report.
pub fn parse_report(bytes: &[u8]) -> Result<SweepReport> {
    serde_json::from_slice(bytes).map_err(|e| HannerError::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: f64, d: usize, n: usize, x: XSampling) -> SweepConfig {
        SweepConfig {
            p: PRange::single(p),
            d: vec![d],
            n: vec![n],
            x,
            order: None,
            mc_samples: 100_000,
            seed: 7,
            tol: 1e-8,
            open_range: false,
        }
    }

    fn random(count: usize) -> XSampling {
        XSampling::LogUniform {
            count,
            low: 0.1,
            high: 3.0,
        }
    }

    #[test]
    fn grids() {
        assert_eq!(
            PRange {
                start: 1.5,
                stop: 2.0,
                step: 0.25
            }
            .values()
            .unwrap(),
            vec![1.5, 1.75, 2.0]
        );
        assert!(PRange {
            start: 2.0,
            stop: 1.0,
            step: 0.1
        }
        .values()
        .is_err());
        let g = simplex_grid(3, 0.05);
        assert_eq!(g.len(), 171);
        assert!(g
            .iter()
            .all(|x| (x.iter().sum::<f64>() - 1.0).abs() < 1e-12 && x.iter().all(|&v| v > 0.0)));
        assert_eq!(simplex_grid(1, 0.1), vec![vec![1.0]]);
        assert_eq!(compositions(4, 2), vec![vec![1, 3], vec![2, 2], vec![3, 1]]);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(3.0, 2, 3, random(2));
        assert!(c.validate().is_ok());
        c.tol = 0.0;
        assert!(c.validate().is_err());
        assert!(cfg(3.0, 2, 7, random(2)).validate().is_err());
        assert!(cfg(1.0, 2, 2, random(2)).validate().is_err());
        assert!(cfg(1.5, 1, 2, random(2)).validate().is_err());
    }

    #[test]
    fn certify_golden() {
        let r = certify_regime(&cfg(4.0, 2, 3, random(50))).unwrap();
        assert_eq!(r.summary.verdicts.get(&Verdict::Nsd), Some(&50));
        assert!(r.summary.violations.is_empty());
        let r = certify_regime(&cfg(1.5, 3, 3, random(50))).unwrap();
        assert_eq!(
            r.summary.verdicts.get(&Verdict::Psd),
            Some(&50),
            "{:?}",
            r.summary
        );
        let r = certify_regime(&cfg(2.0, 3, 2, random(5))).unwrap();
        assert_eq!(r.summary.zero_hessians, 5);
        assert!(r.notes.iter().any(|n| n.contains("p = 2")));
        assert!(certify_regime(&cfg(1.5, 2, 3, random(1))).is_err());
        let mut open = cfg(1.5, 2, 2, random(3));
        open.open_range = true;
        assert!(certify_regime(&open).is_ok());
    }

    #[test]
    fn sign_map_golden() {
        let r = sign_map(&cfg(3.0, 3, 2, XSampling::Simplex { step: 0.1 })).unwrap();
        assert_eq!(r.points.len(), 9);
        assert!(r
            .points
            .iter()
            .all(|p| p.ekl_min.unwrap() >= -1e-8 * p.scale));
        let r = sign_map(&cfg(2.0, 2, 3, XSampling::Simplex { step: 0.25 })).unwrap();
        assert!(r
            .points
            .iter()
            .all(|p| p.ekl.iter().all(|e| e.value.abs() <= 1e-12)));
    }

    #[test]
    fn hunt_sanity_slices() {
        let r = open_range_hunt(&cfg(4.0, 1, 3, XSampling::Simplex { step: 0.1 })).unwrap();
        assert!(r.summary.witnesses.is_empty());
        assert!(r.points.iter().all(|p| p.verdict == Verdict::Nsd));
        let r = open_range_hunt(&cfg(1.5, 2, 2, XSampling::Simplex { step: 0.1 })).unwrap();
        assert!(
            r.points.iter().all(|p| p.verdict == Verdict::Psd),
            "{:?}",
            r.summary
        );
    }

    #[test]
    fn homogeneity_of_verdicts() {
        let c = cfg(3.4, 3, 3, random(6));
        for (i, pt) in sweep_points(&c).unwrap().iter().enumerate() {
            let a = evaluate_point(i, pt, &c).unwrap();
            let scaled = pt.with_x(pt.x.iter().map(|v| v * 7.3).collect()).unwrap();
            let b = evaluate_point(i, &scaled, &c).unwrap();
            assert_eq!(a.verdict, b.verdict);
            let arg = |r: &PointRecord| {
                r.ekl
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.value.total_cmp(&y.1.value))
                    .map(|e| e.0)
            };
            assert_eq!(arg(&a), arg(&b));
        }
    }

    #[test]
    fn report_round_trip_and_formats() {
        let c = cfg(3.0, 3, 3, random(3));
        let r = sign_map(&c).unwrap();
        let json = render_report(&r, ReportFormat::Json).unwrap();
        assert_eq!(parse_report(&json).unwrap(), r);
        assert_eq!(
            render_report(&sign_map(&c).unwrap(), ReportFormat::Json).unwrap(),
            json
        );
        let csv = String::from_utf8(render_report(&r, ReportFormat::Csv).unwrap()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "p,d,n,x1,x2,x3,k,l,E_kl,err_est,verdict,witness"
        );
        assert_eq!(lines.count(), 9);
        let empty = SweepReport::empty("signmap", c);
        let csv = String::from_utf8(render_report(&empty, ReportFormat::Csv).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(
            parse_report(&render_report(&empty, ReportFormat::Json).unwrap()).unwrap(),
            empty
        );
        assert!("xml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn emit_reports_path_on_failure() {
        let r = SweepReport::empty("certify", cfg(3.0, 3, 2, random(1)));
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("r.json");
        emit_report(&r, &ok, ReportFormat::Json).unwrap();
        assert!(ok.exists());
        let bad = dir.path().join("missing").join("r.json");
        match emit_report(&r, &bad, ReportFormat::Json) {
            Err(HannerError::Io { path, .. }) => assert_eq!(path, bad),
            other => panic!("{other:?}"),
        }
    }
}
