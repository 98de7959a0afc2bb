//! Executable checks of eigenvalue, curvature and diameter estimates over flow
//! traces, plus closed-form chained lower bounds.
//!
//! Every inequality is reduced to per-sample slacks `s_k` (positive when
//! satisfied) and a tolerance `τ`; the check passes iff `min_k s_k ≥ -τ`.
//! With [`CheckOptions::reversed`] every slack is replaced by `-s_k - 2τ`,
//! which demands that the original inequality fail by at least `τ`; a
//! generic passing instance must then fail.

use std::fmt;

use crate::error::{Error, Result};
use crate::flow::{FlowMode, FlowTrace, Sample};
use crate::geometry::ConformalLaw;
use crate::spectral::{BoundaryCondition, OperatorDescriptor, OperatorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictReport {
    pub check_id: String,
    pub verdict: Verdict,
    /// Worst-case signed slack (positive = satisfied); `NaN` when inconclusive.
    pub margin: f64,
    pub tolerance: f64,
    pub details: Vec<String>,
    pub anchor: String,
}

impl VerdictReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn inconclusive(id: impl Into<String>, anchor: &str, reason: impl Into<String>) -> Self {
        Self {
            check_id: id.into(),
            verdict: Verdict::Inconclusive,
            margin: f64::NAN,
            tolerance: f64::NAN,
            details: vec![reason.into()],
            anchor: anchor.to_string(),
        }
    }
}

impl fmt::Display for VerdictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} margin={:.6e} tol={:.3e} anchor=\"{}\"",
            self.check_id,
            self.verdict.name(),
            self.margin,
            self.tolerance,
            self.anchor
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckOptions {
    pub reversed: bool,
}

/// Collects slacks and turns them into a verdict.
struct Slacks {
    id: String,
    anchor: &'static str,
    tol: f64,
    reversed: bool,
    worst: f64,
    worst_at: String,
    details: Vec<String>,
}

impl Slacks {
    fn new(id: impl Into<String>, anchor: &'static str, tol: f64, opts: &CheckOptions) -> Self {
        Self {
            id: id.into(),
            anchor,
            tol,
            reversed: opts.reversed,
            worst: f64::INFINITY,
            worst_at: String::new(),
            details: Vec::new(),
        }
    }

    fn push(&mut self, slack: f64, label: impl FnOnce() -> String) {
        let s = if self.reversed { -slack - 2.0 * self.tol } else { slack };
        // NaN slacks count as violations
        if !(s >= self.worst) {
            self.worst = s;
            self.worst_at = label();
        }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.details.push(line.into());
    }

    fn finish(mut self) -> VerdictReport {
        if self.worst == f64::INFINITY {
            return VerdictReport::inconclusive(self.id, self.anchor, "no comparable samples");
        }
        let verdict = if self.worst >= -self.tol { Verdict::Pass } else { Verdict::Fail };
        self.details.insert(0, format!("worst slack at {}", self.worst_at));
        if self.reversed {
            self.details.push("direction reversed".into());
        }
        VerdictReport {
            check_id: self.id,
            verdict,
            margin: self.worst,
            tolerance: self.tol,
            details: self.details,
            anchor: self.anchor.to_string(),
        }
    }
}

fn require_negative_start(trace: &FlowTrace) -> Result<(f64, f64, f64)> {
    let s0 = trace.initial();
    if !(s0.max_r < 0.0) {
        return Err(Error::Precondition(format!(
            "initial maximal curvature must be negative, got {}",
            s0.max_r
        )));
    }
    Ok((s0.min_r, s0.max_r, s0.rbar))
}

/// Tolerance used by the maximum-principle and integral checks.
pub fn curvature_tolerance(trace: &FlowTrace) -> f64 {
    1e-6 * trace.initial().min_r.abs().max(trace.initial().max_r.abs()).max(1e-300)
}

/// Negativity of the maximal curvature is preserved.
pub fn prop4_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    require_negative_start(trace)?;
    let mut sl = Slacks::new("prop4", "max R(0) < 0 implies max R(t) < 0", curvature_tolerance(trace), opts);
    for s in &trace.samples {
        sl.push(-s.max_r, || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// The maximal curvature does not increase.
pub fn prop5_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let (_, max0, _) = require_negative_start(trace)?;
    let mut sl = Slacks::new("prop5", "max R(t) <= max R(0)", curvature_tolerance(trace), opts);
    for s in &trace.samples[1..] {
        sl.push(max0 - s.max_r, || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// The minimal curvature does not decrease.
pub fn prop6_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let (min0, _, _) = require_negative_start(trace)?;
    let mut sl = Slacks::new("prop6", "min R(t) >= min R(0)", curvature_tolerance(trace), opts);
    for s in &trace.samples[1..] {
        sl.push(s.min_r - min0, || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// CR curvature pinching `min R(0) <= min R(t) <= max R(t) <= max R(0)`.
pub fn prop_a4_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "min R(0) <= min R(t) <= max R(t) <= max R(0) under the CR flow";
    if !trace.law.is_cr() {
        return Ok(VerdictReport::inconclusive("propA4", anchor, "requires a CR background"));
    }
    let (min0, max0, _) = require_negative_start(trace)?;
    let mut sl = Slacks::new("propA4", anchor, curvature_tolerance(trace), opts);
    for s in &trace.samples[1..] {
        sl.push((s.min_r - min0).min(max0 - s.max_r), || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// Average curvature stays within the initial extrema.
pub fn eq20d_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let (min0, max0, _) = require_negative_start(trace)?;
    let mut sl = Slacks::new("eq20d", "min R(0) <= Rbar(t) <= max R(0)", curvature_tolerance(trace), opts);
    for s in &trace.samples {
        sl.push((s.rbar - min0).min(max0 - s.rbar), || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

fn upper_integral_slack(s: &Sample, min0: f64, max0: f64, rbar0: f64) -> f64 {
    rbar0 + (max0 - min0) + max0 * s.i_plus - s.max_r
}

fn lower_integral_slack(s: &Sample, min0: f64, max0: f64, rbar0: f64) -> f64 {
    s.min_r - (rbar0 - (max0 - min0) + max0 * s.i_minus)
}

/// `R(t) <= Rbar(0) + (max R(0) - min R(0)) + max R(0) ∫(max R - Rbar)`.
pub fn thm1_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let (min0, max0, rbar0) = require_negative_start(trace)?;
    let mut sl = Slacks::new(
        "thm1",
        "R(t) <= Rbar(0) + (max R(0) - min R(0)) + max R(0) * int (max R - Rbar)",
        curvature_tolerance(trace),
        opts,
    );
    for s in &trace.samples {
        sl.push(upper_integral_slack(s, min0, max0, rbar0), || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// `R(t) >= Rbar(0) - (max R(0) - min R(0)) + max R(0) ∫(min R - Rbar)`.
pub fn thm2_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let (min0, max0, rbar0) = require_negative_start(trace)?;
    let mut sl = Slacks::new(
        "thm2",
        "R(t) >= Rbar(0) - (max R(0) - min R(0)) + max R(0) * int (min R - Rbar)",
        curvature_tolerance(trace),
        opts,
    );
    for s in &trace.samples {
        sl.push(lower_integral_slack(s, min0, max0, rbar0), || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// Both integral bounds on a CR trace.
pub fn thm3_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "two-sided integral curvature bounds under the CR flow";
    if !trace.law.is_cr() {
        return Ok(VerdictReport::inconclusive("thm3", anchor, "requires a CR background"));
    }
    let (min0, max0, rbar0) = require_negative_start(trace)?;
    let mut sl = Slacks::new("thm3", anchor, curvature_tolerance(trace), opts);
    for s in &trace.samples {
        let slack = upper_integral_slack(s, min0, max0, rbar0).min(lower_integral_slack(s, min0, max0, rbar0));
        sl.push(slack, || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// Tolerance for the infinite-horizon integrals: base tolerance plus the tail
/// term `convergence_tol · (t_end - t_conv)`.
fn horizon_tolerance(trace: &FlowTrace) -> f64 {
    let t_conv = trace.last().t;
    1e-6 + trace.convergence_tol * (trace.t_end - t_conv).max(0.0)
}

/// `∫₀^∞ (max R - Rbar) <= 2(min/max - 1)` and `-∫₀^∞ (min R - Rbar) <= 2(min/max - 1)`.
pub fn bounds19_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "int_0^inf (max R - Rbar) and -int_0^inf (min R - Rbar) are at most -2(1 - min R(0)/max R(0))";
    let (min0, max0, _) = require_negative_start(trace)?;
    if !trace.converged() {
        return Ok(VerdictReport::inconclusive("bounds19", anchor, "flow did not converge"));
    }
    let bound = 2.0 * (min0 / max0 - 1.0);
    let last = trace.last();
    let mut sl = Slacks::new("bounds19", anchor, horizon_tolerance(trace), opts);
    sl.push(bound - last.i_plus, || "upper integral".into());
    sl.push(bound + last.i_minus, || "lower integral".into());
    sl.note(format!("bound={bound:.6e} Iplus={:.6e} Iminus={:.6e}", last.i_plus, last.i_minus));
    Ok(sl.finish())
}

/// Eigenvalue sandwich `e^{-c} λ_Y <= λ_0 <= e^{c} λ_Y` together with the
/// infinite-horizon integral bounds it rests on.
pub fn sandwich_check(
    trace: &FlowTrace,
    lambda0: f64,
    lambda_y: f64,
    tol: f64,
    opts: &CheckOptions,
) -> Result<VerdictReport> {
    let anchor = "e^{-c} lambda(g_Y) <= lambda(g_0) <= e^{c} lambda(g_Y)";
    let (min0, max0, _) = require_negative_start(trace)?;
    if !trace.converged() {
        return Ok(VerdictReport::inconclusive("sandwich", anchor, "flow did not converge"));
    }
    if !(lambda0 > 0.0 && lambda_y > 0.0) {
        return Err(Error::Precondition(format!(
            "eigenvalues must be positive, got {lambda0} and {lambda_y}"
        )));
    }
    let c = trace.law.sandwich_exponent(min0, max0);
    let log_ratio = (lambda0 / lambda_y).ln();
    let mut sl = Slacks::new("sandwich", anchor, tol.max(horizon_tolerance(trace)), opts);
    sl.push(c - log_ratio, || "upper".into());
    sl.push(c + log_ratio, || "lower".into());
    let bound = 2.0 * (min0 / max0 - 1.0);
    let last = trace.last();
    sl.push(bound - last.i_plus, || "upper integral".into());
    sl.push(bound + last.i_minus, || "lower integral".into());
    sl.note(format!(
        "c={c:.6e} lambda0={lambda0:.12e} lambdaY={lambda_y:.12e} log_ratio={log_ratio:.6e} min/max={:.6e}",
        min0 / max0
    ));
    Ok(sl.finish())
}

/// Trace index of the Laplacian whose eigenvalue the log and sandwich estimates concern.
pub fn primary_laplacian(trace: &FlowTrace) -> Option<usize> {
    trace.ops.iter().position(|op| {
        op.kind == OperatorKind::Laplacian
            && matches!(op.bc, BoundaryCondition::Closed | BoundaryCondition::Dirichlet)
    })
}

fn log_band(law: &ConformalLaw, s: &Sample) -> (f64, f64) {
    let g = law.gradient_rate();
    let m = law.mass_rate();
    (
        -g * (s.max_r - s.rbar) + m * (s.min_r - s.rbar),
        -g * (s.min_r - s.rbar) + m * (s.max_r - s.rbar),
    )
}

/// Sampled logarithmic difference quotients of `λ` stay in the curvature band,
/// endpoints taken in the worst case.
pub fn log_eig_bounds_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "-g(max R - Rbar) + m(min R - Rbar) <= d log lambda/dt <= -g(min R - Rbar) + m(max R - Rbar)";
    let Some(k) = primary_laplacian(trace) else {
        return Ok(VerdictReport::inconclusive("log-bounds", anchor, "no Laplacian tracked"));
    };
    if trace.mode != FlowMode::Normalized {
        return Ok(VerdictReport::inconclusive("log-bounds", anchor, "requires the normalized flow"));
    }
    if trace.samples.len() < 2 {
        return Ok(VerdictReport::inconclusive("log-bounds", anchor, "fewer than two samples"));
    }
    if let Some(s) = trace.samples.iter().find(|s| !(s.eigen[k].lambda > 0.0)) {
        return Err(Error::Precondition(format!(
            "eigenvalue must stay positive, got {} at t={}",
            s.eigen[k].lambda, s.t
        )));
    }
    let max_dt = trace
        .samples
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .fold(0.0, f64::max);
    let mut sl = Slacks::new("log-bounds", anchor, 1e-4 + 10.0 * max_dt, opts);
    for w in trace.samples.windows(2) {
        let dt = w[1].t - w[0].t;
        let q = (w[1].eigen[k].lambda / w[0].eigen[k].lambda).ln() / dt;
        let (l0, u0) = log_band(&trace.law, &w[0]);
        let (l1, u1) = log_band(&trace.law, &w[1]);
        sl.push((q - l0.min(l1)).min(u0.max(u1) - q), || format!("t={}", w[0].t));
    }
    Ok(sl.finish())
}

/// Diameter band `½(Rbar - max R) <= d log d/dt <= ½(Rbar - min R)` and the
/// endpoint comparison `|log(d_final/d_initial)| <= min R(0)/max R(0) - 1`.
pub fn diameter_bounds_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "(Rbar - max R)/2 <= d log diam/dt <= (Rbar - min R)/2; e^{-c/(2(n-1))} d_final <= d_initial <= e^{c/(2(n-1))} d_final";
    let (min0, max0, _) = require_negative_start(trace)?;
    if trace.samples.iter().any(|s| !(s.diameter > 0.0)) {
        return Ok(VerdictReport::inconclusive("diameter", anchor, "diameter not tracked"));
    }
    if !trace.converged() {
        return Ok(VerdictReport::inconclusive("diameter", anchor, "flow did not converge"));
    }
    let half = trace.law.length_exponent() * trace.law.flow_speed();
    let max_dt = trace
        .samples
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .fold(0.0, f64::max);
    let mut sl = Slacks::new("diameter", anchor, 1e-4 + 10.0 * max_dt + horizon_tolerance(trace), opts);
    for w in trace.samples.windows(2) {
        let dt = w[1].t - w[0].t;
        let q = (w[1].diameter / w[0].diameter).ln() / dt;
        let lo = (half * (w[0].rbar - w[0].max_r)).min(half * (w[1].rbar - w[1].max_r));
        let hi = (half * (w[0].rbar - w[0].min_r)).max(half * (w[1].rbar - w[1].min_r));
        sl.push((q - lo).min(hi - q), || format!("t={}", w[0].t));
    }
    let exponent = min0 / max0 - 1.0;
    let log_ratio = (trace.last().diameter / trace.initial().diameter).ln();
    sl.push(exponent - log_ratio.abs(), || "endpoint comparison".into());
    sl.note(format!("endpoint exponent={exponent:.6e} log(d_final/d_initial)={log_ratio:.6e}"));
    Ok(sl.finish())
}

/// Curvature hypothesis under which the first eigenvalue is nondecreasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `0 <= a < a_c` with `min R >= (g/m) max R >= 0`.
    SmallPotential,
    /// `a >= a_c` with `min R >= 0`.
    LargePotential,
}

pub fn regime_for(law: &ConformalLaw, a: f64) -> Option<Regime> {
    let ac = law.critical_potential();
    if a < 0.0 {
        None
    } else if a >= ac - 1e-12 {
        Some(Regime::LargePotential)
    } else {
        Some(Regime::SmallPotential)
    }
}

fn regime_holds(law: &ConformalLaw, regime: Regime, s: &Sample) -> bool {
    let eps = 1e-10 * s.max_r.abs().max(s.min_r.abs()).max(1.0);
    match regime {
        Regime::LargePotential => s.min_r >= -eps,
        Regime::SmallPotential => {
            let pinched = law.pinching_ratio() * s.max_r;
            s.min_r >= pinched - eps && pinched >= -eps
        }
    }
}

/// `λ(t_{k+1}) >= λ(t_k) - 1e-6 max(1, |λ(t_k)|)` along an unnormalized trace.
pub fn monotonicity_check(trace: &FlowTrace, op_index: usize, opts: &CheckOptions) -> Result<VerdictReport> {
    let op = trace
        .ops
        .get(op_index)
        .ok_or_else(|| Error::Usage(format!("operator index {op_index} not tracked")))?;
    let id = format!("monotonicity[{}]", op.id());
    let anchor = "first eigenvalue of -Delta + aR is nondecreasing along the unnormalized flow";
    if trace.mode != FlowMode::Unnormalized {
        return Ok(VerdictReport::inconclusive(id, anchor, "requires the unnormalized flow"));
    }
    let Some(regime) = regime_for(&trace.law, op.potential()) else {
        return Ok(VerdictReport::inconclusive(id, anchor, "negative potential coefficient"));
    };
    if let Some(s) = trace.samples.iter().find(|s| !regime_holds(&trace.law, regime, s)) {
        return Ok(VerdictReport::inconclusive(
            id,
            anchor,
            format!("curvature hypothesis {regime:?} fails first at t={}", s.t),
        ));
    }
    let mut sl = Slacks::new(id, anchor, 1e-6, opts);
    for (k, w) in trace.samples.windows(2).enumerate() {
        let (l0, l1) = (w[0].eigen[op_index].lambda, w[1].eigen[op_index].lambda);
        sl.push((l1 - l0) / l0.abs().max(1.0), || format!("t={}", w[0].t));
        if trace.gap_warnings.contains(&(k + 1)) {
            sl.note(format!("small eigen-gap at t={}", w[1].t));
        }
    }
    sl.note(format!("regime {regime:?}"));
    Ok(sl.finish())
}

/// Right-hand side of the eigenvalue derivative formula along the
/// unnormalized flow.
pub fn derivative_formula(law: &ConformalLaw, a: f64, e: &crate::flow::EigenSample) -> f64 {
    let d = law.diffusion();
    (2.0 * d * a - law.gradient_rate()) * (e.grad_r + a * e.potential_r)
        - (2.0 * d * a - law.mass_rate()) * e.lambda * e.mass_r
}

/// Centred difference of `λ` against the derivative formula, relative error
/// at most `2% + 10 dt²` on windows with an eigen-gap above `1e-4 max(1,|λ|)`.
pub fn derivative_formula_check(trace: &FlowTrace, op_index: usize, opts: &CheckOptions) -> Result<VerdictReport> {
    let op: OperatorDescriptor = *trace
        .ops
        .get(op_index)
        .ok_or_else(|| Error::Usage(format!("operator index {op_index} not tracked")))?;
    let id = format!("derivative[{}]", op.id());
    let anchor = "d lambda/dt = (2Da - g) int R(|grad f|^2 + aRf^2) - (2Da - m) lambda int R f^2";
    if trace.mode != FlowMode::Unnormalized {
        return Ok(VerdictReport::inconclusive(id, anchor, "requires the unnormalized flow"));
    }
    let a = op.potential();
    let mut windows = Vec::new();
    for w in trace.samples.windows(3) {
        let h1 = w[1].t - w[0].t;
        let h2 = w[2].t - w[1].t;
        if (h1 - h2).abs() > 1e-9 * h1 {
            continue;
        }
        let gap_ok = w
            .iter()
            .all(|s| s.eigen[op_index].gap > 1e-4 * s.eigen[op_index].lambda.abs().max(1.0));
        if gap_ok {
            windows.push((w, h1));
        }
    }
    if windows.is_empty() {
        return Ok(VerdictReport::inconclusive(id, anchor, "no uniform window with a resolved eigen-gap"));
    }
    let max_h = windows.iter().map(|(_, h)| *h).fold(0.0, f64::max);
    let mut sl = Slacks::new(id, anchor, 0.02 + 10.0 * max_h * max_h, opts);
    for (w, h) in windows {
        let lhs = (w[2].eigen[op_index].lambda - w[0].eigen[op_index].lambda) / (2.0 * h);
        let rhs = derivative_formula(&trace.law, a, &w[1].eigen[op_index]);
        let scale = lhs.abs().max(rhs.abs());
        let floor = 1e-12 * w[1].eigen[op_index].lambda.abs().max(1.0);
        let rel = if scale <= floor { 0.0 } else { (lhs - rhs).abs() / scale };
        sl.push(-rel, || format!("t={} lhs={lhs:.6e} rhs={rhs:.6e}", w[1].t));
    }
    Ok(sl.finish())
}

/// Normalized flow conserves total volume up to `1e-6` per unit time.
pub fn volume_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "total volume is constant along the normalized flow";
    if trace.mode != FlowMode::Normalized {
        return Ok(VerdictReport::inconclusive("volume", anchor, "requires the normalized flow"));
    }
    let v0 = trace.initial().volume;
    let mut sl = Slacks::new("volume", anchor, 1e-6, opts);
    for s in &trace.samples[1..] {
        sl.push(-(s.volume - v0).abs() / (v0 * s.t.max(1.0)), || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// Average curvature is nonincreasing along the normalized flow.
pub fn rbar_monotone_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "t -> Rbar(t) is nonincreasing";
    if trace.mode != FlowMode::Normalized {
        return Ok(VerdictReport::inconclusive("rbar-monotone", anchor, "requires the normalized flow"));
    }
    let mut sl = Slacks::new("rbar-monotone", anchor, 1e-8, opts);
    for w in trace.samples.windows(2) {
        let scale = w[0].rbar.abs().max(f64::MIN_POSITIVE);
        sl.push((w[0].rbar - w[1].rbar) / scale, || format!("t={}", w[0].t));
    }
    Ok(sl.finish())
}

/// `min R(0) >= 0` is preserved along the unnormalized flow.
pub fn positivity_check(trace: &FlowTrace, opts: &CheckOptions) -> Result<VerdictReport> {
    let anchor = "min R >= 0 is preserved along the unnormalized flow";
    let s0 = trace.initial();
    if trace.mode != FlowMode::Unnormalized || s0.min_r < 0.0 {
        return Ok(VerdictReport::inconclusive(
            "positivity",
            anchor,
            "requires the unnormalized flow from nonnegative curvature",
        ));
    }
    let tol = 1e-6 * s0.max_r.abs().max(1e-12);
    let mut sl = Slacks::new("positivity", anchor, tol, opts);
    for s in &trace.samples {
        sl.push(s.min_r, || format!("t={}", s.t));
    }
    Ok(sl.finish())
}

/// Identifiers accepted by [`run_check`].
pub const CHECK_IDS: &[&str] = &[
    "bounds19",
    "derivative",
    "diameter",
    "eq20d",
    "log-bounds",
    "monotonicity",
    "positivity",
    "prop4",
    "prop5",
    "prop6",
    "propA4",
    "rbar-monotone",
    "sandwich",
    "thm1",
    "thm2",
    "thm3",
    "volume",
];

/// Inputs for [`run_check`] beyond the trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckContext {
    /// `(λ(g_0), λ(g_Y))` for the sandwich check.
    pub sandwich: Option<(f64, f64)>,
    pub sandwich_tol: f64,
    pub opts: CheckOptions,
}

/// Runs a check by identifier. Per-operator checks yield one report per
/// tracked operator. Precondition failures become inconclusive verdicts.
pub fn run_check(id: &str, trace: &FlowTrace, ctx: &CheckContext) -> Result<Vec<VerdictReport>> {
    let opts = &ctx.opts;
    let single = |r: Result<VerdictReport>| -> Result<Vec<VerdictReport>> {
        match r {
            Ok(v) => Ok(vec![v]),
            Err(Error::Precondition(msg)) => Ok(vec![VerdictReport::inconclusive(id, "", msg)]),
            Err(e) => Err(e),
        }
    };
    match id {
        "prop4" => single(prop4_check(trace, opts)),
        "prop5" => single(prop5_check(trace, opts)),
        "prop6" => single(prop6_check(trace, opts)),
        "propA4" => single(prop_a4_check(trace, opts)),
        "eq20d" => single(eq20d_check(trace, opts)),
        "thm1" => single(thm1_check(trace, opts)),
        "thm2" => single(thm2_check(trace, opts)),
        "thm3" => single(thm3_check(trace, opts)),
        "bounds19" => single(bounds19_check(trace, opts)),
        "log-bounds" => single(log_eig_bounds_check(trace, opts)),
        "diameter" => single(diameter_bounds_check(trace, opts)),
        "volume" => single(volume_check(trace, opts)),
        "rbar-monotone" => single(rbar_monotone_check(trace, opts)),
        "positivity" => single(positivity_check(trace, opts)),
        "sandwich" => match ctx.sandwich {
            Some((l0, ly)) => single(sandwich_check(trace, l0, ly, ctx.sandwich_tol, opts)),
            None => Ok(vec![VerdictReport::inconclusive(
                "sandwich",
                "",
                "no Yamabe eigenvalue available",
            )]),
        },
        "monotonicity" | "derivative" => {
            if trace.ops.is_empty() {
                return Ok(vec![VerdictReport::inconclusive(id, "", "no tracked operators")]);
            }
            (0..trace.ops.len())
                .map(|k| {
                    if id == "monotonicity" {
                        monotonicity_check(trace, k, opts)
                    } else {
                        derivative_formula_check(trace, k, opts)
                    }
                })
                .collect()
        }
        other => Err(Error::Config(format!("unknown check id `{other}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    /// Li–Yau type lower bound.
    LiYau,
    /// Ling type lower bound.
    Ling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams {
    pub n: u32,
    /// Einstein constant of the comparison metric, negative.
    pub kappa: f64,
    /// Sandwich exponent, nonnegative.
    pub c: f64,
    /// Diameter of the initial metric.
    pub d: f64,
}

/// Lower bound for `λ(g_0)` obtained by chaining the sandwich estimate with a
/// classical bound on the Einstein metric of the conformal class.
pub fn chained_lower_bound(params: &ChainParams, kind: ChainKind) -> Result<f64> {
    let ChainParams { n, kappa, c, d } = *params;
    if n < 2 {
        return Err(Error::Usage(format!("dimension must be at least 2, got {n}")));
    }
    if !(kappa < 0.0 && kappa.is_finite()) {
        return Err(Error::Usage(format!("Einstein constant must be negative, got {kappa}")));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::Usage(format!("sandwich exponent must be nonnegative, got {c}")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Usage(format!("diameter must be positive, got {d}")));
    }
    let m = n as f64 - 1.0;
    let stretch = (n as f64 * c / m).exp();
    Ok(match kind {
        ChainKind::LiYau => {
            let inner = 1.0 + 4.0 * m * m * (c / m).exp() * d * d * kappa.abs();
            (-1.0 - inner.sqrt()).exp() / (m * stretch * d * d)
        }
        ChainKind::Ling => 0.5 * (-c).exp() * m * kappa + std::f64::consts::PI.powi(2) / (stretch * d * d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{EigenSample, FlowStatus};
    use crate::spectral::OperatorDescriptor;

    fn sample(t: f64, min_r: f64, max_r: f64, rbar: f64, lambda: f64) -> Sample {
        Sample {
            t,
            eigen: vec![EigenSample {
                lambda,
                gap: 1.0,
                residual: 0.0,
                grad_r: 0.0,
                potential_r: 0.0,
                mass_r: 0.0,
            }],
            min_r,
            max_r,
            rbar,
            volume: 1.0,
            diameter: 1.0,
            i_plus: 0.0,
            i_minus: 0.0,
        }
    }

    fn trace(samples: Vec<Sample>, mode: FlowMode) -> FlowTrace {
        FlowTrace {
            law: ConformalLaw::Riemannian { n: 3 },
            mode,
            has_boundary: false,
            ops: vec![OperatorDescriptor::laplacian(BoundaryCondition::Closed)],
            samples,
            status: FlowStatus::Converged,
            t_end: 1.0,
            convergence_tol: 0.0,
            final_deviation: 0.0,
            gap_warnings: vec![],
            steps: 1,
        }
    }

    #[test]
    fn sandwich_constant_exponent_examples() {
        let law = ConformalLaw::Riemannian { n: 3 };
        assert_eq!(law.sandwich_exponent(-2.0, -1.0), 4.0);
        assert_eq!(law.sandwich_exponent(-6.0, -6.0), 0.0);
        assert_eq!(ConformalLaw::Cr { n: 1 }.sandwich_exponent(-2.0, -1.0), 6.0);
    }

    #[test]
    fn sandwich_with_equal_eigenvalues_passes_at_zero_margin() {
        let t = trace(vec![sample(0.0, -6.0, -6.0, -6.0, 1.0)], FlowMode::Normalized);
        let r = sandwich_check(&t, 2.0, 2.0, 1e-9, &CheckOptions::default()).unwrap();
        assert!(r.passed());
        assert!(r.margin.abs() < 1e-15);
    }

    #[test]
    fn sandwich_rejects_nonnegative_background() {
        let t = trace(vec![sample(0.0, -1.0, 0.5, 0.0, 1.0)], FlowMode::Normalized);
        assert!(matches!(
            sandwich_check(&t, 1.0, 1.0, 1e-9, &CheckOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn unconverged_sandwich_is_inconclusive() {
        let mut t = trace(vec![sample(0.0, -2.0, -1.0, -1.5, 1.0)], FlowMode::Normalized);
        t.status = FlowStatus::TEndReached;
        let r = sandwich_check(&t, 1.0, 1.0, 1e-9, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn reversal_flips_generic_pass() {
        let t = trace(
            vec![sample(0.0, -2.0, -1.0, -1.5, 1.0), sample(0.1, -1.8, -1.1, -1.5, 1.0)],
            FlowMode::Normalized,
        );
        assert!(prop5_check(&t, &CheckOptions::default()).unwrap().passed());
        let rev = prop5_check(&t, &CheckOptions { reversed: true }).unwrap();
        assert_eq!(rev.verdict, Verdict::Fail);
    }

    #[test]
    fn constant_curvature_log_band_is_degenerate() {
        let t = trace(
            vec![sample(0.0, -6.0, -6.0, -6.0, 2.0), sample(0.1, -6.0, -6.0, -6.0, 2.0)],
            FlowMode::Normalized,
        );
        let r = log_eig_bounds_check(&t, &CheckOptions::default()).unwrap();
        assert!(r.passed() && r.margin.abs() < 1e-15);
        assert_eq!(
            log_eig_bounds_check(&t, &CheckOptions { reversed: true }).unwrap().verdict,
            Verdict::Fail
        );
    }

    #[test]
    fn monotonicity_flags_decrease() {
        let mut t = trace(
            vec![sample(0.0, 1.0, 1.0, 1.0, 2.0), sample(0.1, 1.0, 1.0, 1.0, 1.9)],
            FlowMode::Unnormalized,
        );
        t.ops = vec![OperatorDescriptor::schrodinger(1.0, BoundaryCondition::Closed)];
        assert_eq!(monotonicity_check(&t, 0, &CheckOptions::default()).unwrap().verdict, Verdict::Fail);
        t.samples[1].min_r = -1.0;
        assert_eq!(
            monotonicity_check(&t, 0, &CheckOptions::default()).unwrap().verdict,
            Verdict::Inconclusive
        );
    }

    #[test]
    fn chained_bounds() {
        let ling = chained_lower_bound(&ChainParams { n: 3, kappa: -1.0, c: 0.0, d: 1.0 }, ChainKind::Ling).unwrap();
        assert!((ling - (std::f64::consts::PI.powi(2) - 1.0)).abs() < 1e-14);
        let ly = chained_lower_bound(&ChainParams { n: 3, kappa: -1.0, c: 0.0, d: 1.0 }, ChainKind::LiYau).unwrap();
        let expected = 0.5 * (-1.0 - 17f64.sqrt()).exp();
        assert!((ly - expected).abs() < 1e-15);
        // larger c only weakens the bound
        let ly2 = chained_lower_bound(&ChainParams { n: 3, kappa: -1.0, c: 0.5, d: 1.0 }, ChainKind::LiYau).unwrap();
        assert!(ly2 < ly);
        assert!(chained_lower_bound(&ChainParams { n: 3, kappa: 1.0, c: 0.0, d: 1.0 }, ChainKind::Ling).is_err());
    }

    #[test]
    fn unknown_check_id() {
        let t = trace(vec![sample(0.0, -1.0, -1.0, -1.0, 1.0)], FlowMode::Normalized);
        assert!(matches!(run_check("nope", &t, &CheckContext::default()), Err(Error::Config(_))));
    }
}
