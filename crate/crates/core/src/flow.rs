//! Normalized and unnormalized Yamabe-type flows.
//!
//! The conformal factor evolves by `du/dt = -s (R - R̄) u` (normalized) or
//! `du/dt = -s R u` (unnormalized), `s` the flow speed of the background's
//! [`ConformalLaw`]. The same code drives Riemannian and CR backgrounds.

use crate::error::{Error, Result};
use crate::geometry::{
    check_positive, conformal_forms, scalar_curvature, volume_element, weighted_diameter,
    BackgroundGeometry, ConformalLaw, ConformalState,
};
use crate::spectral::{first_eigen_warm, OperatorDescriptor, SpectralOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMode {
    Normalized,
    Unnormalized,
}

impl FlowMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "normalized" => Some(Self::Normalized),
            "unnormalized" => Some(Self::Unnormalized),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normalized => "normalized",
            Self::Unnormalized => "unnormalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub mode: FlowMode,
    pub t_end: f64,
    pub cfl: f64,
    pub sample_dt: f64,
    /// Threshold on `sup |R - R̄|` declaring convergence (normalized mode only).
    pub convergence_tol: f64,
    pub tracked_ops: Vec<OperatorDescriptor>,
    pub track_diameter: bool,
    /// Upper bound on the time step, on top of the stability limits.
    pub max_dt: Option<f64>,
    pub spectral: SpectralOptions,
    pub deterministic: bool,
}

impl FlowConfig {
    pub fn new(mode: FlowMode, t_end: f64) -> Self {
        Self {
            mode,
            t_end,
            cfl: 0.5,
            sample_dt: t_end / 10.0,
            convergence_tol: 1e-7,
            tracked_ops: Vec::new(),
            track_diameter: false,
            max_dt: None,
            spectral: SpectralOptions::default(),
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("flow.t_end must be positive and finite");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("flow.cfl must lie in (0, 1]");
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return bad("flow.sample_dt must be positive");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("flow.convergence_tol must be nonnegative");
        }
        if let Some(m) = self.max_dt {
            if !(m > 0.0) {
                return bad("flow.max_dt must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Converged,
    TEndReached,
    AbortedPositivity,
}

impl FlowStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::TEndReached => "t_end_reached",
            Self::AbortedPositivity => "aborted_positivity",
        }
    }
}

/// First eigenpair data of one tracked operator at a sample.
///
/// Besides `λ` and the gap, it stores the curvature moments of the normalized
/// eigenfunction `f` that enter the eigenvalue derivative formula:
/// `grad_r = ∫R|∇f|²`, `potential_r = ∫R²f²`, `mass_r = ∫Rf²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSample {
    pub lambda: f64,
    pub gap: f64,
    pub residual: f64,
    pub grad_r: f64,
    pub potential_r: f64,
    pub mass_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub eigen: Vec<EigenSample>,
    pub min_r: f64,
    pub max_r: f64,
    pub rbar: f64,
    pub volume: f64,
    /// `NaN` when diameter tracking is off.
    pub diameter: f64,
    pub i_plus: f64,
    pub i_minus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub law: ConformalLaw,
    pub mode: FlowMode,
    pub has_boundary: bool,
    pub ops: Vec<OperatorDescriptor>,
    pub samples: Vec<Sample>,
    pub status: FlowStatus,
    pub t_end: f64,
    pub convergence_tol: f64,
    /// Final `sup |R - R̄|`.
    pub final_deviation: f64,
    /// Sample indices at which some tracked operator had a gap below `1e-6·|λ|`.
    pub gap_warnings: Vec<usize>,
    pub steps: usize,
}

impl FlowTrace {
    pub fn initial(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trace has at least the initial sample")
    }

    pub fn converged(&self) -> bool {
        self.status == FlowStatus::Converged
    }

    pub fn op_index(&self, op: &OperatorDescriptor) -> Option<usize> {
        self.ops.iter().position(|o| o == op)
    }
}

/// Right-hand side of the conformal-factor equation.
fn velocity(bg: &BackgroundGeometry, u: &[f64], mode: FlowMode) -> Result<Vec<f64>> {
    let r = scalar_curvature(bg, u)?;
    let shift = match mode {
        FlowMode::Normalized => {
            let (dv, vol) = volume_element(bg, u)?;
            r.iter().zip(&dv).map(|(a, b)| a * b).sum::<f64>() / vol
        }
        FlowMode::Unnormalized => 0.0,
    };
    let s = bg.law().flow_speed();
    Ok(u.iter().zip(&r).map(|(ui, ri)| -s * (ri - shift) * ui).collect())
}

fn axpy(u: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    u.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn stage_positive(u: &[f64]) -> bool {
    u.iter().all(|x| *x > 0.0 && x.is_finite())
}

/// One classical RK4 step. A stage with a nonpositive factor aborts with
/// [`Error::Positivity`]; the input state is left untouched.
pub fn flow_step(
    bg: &BackgroundGeometry,
    state: &ConformalState,
    dt: f64,
    mode: FlowMode,
) -> Result<ConformalState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Usage(format!("time step must be positive, got {dt}")));
    }
    let u = state.u();
    check_positive(bg, u)?;
    let t = state.t();
    let abort = || Error::Positivity { t, dt };
    let k1 = velocity(bg, u, mode)?;
    let u2 = axpy(u, &k1, 0.5 * dt);
    if !stage_positive(&u2) {
        return Err(abort());
    }
    let k2 = velocity(bg, &u2, mode)?;
    let u3 = axpy(u, &k2, 0.5 * dt);
    if !stage_positive(&u3) {
        return Err(abort());
    }
    let k3 = velocity(bg, &u3, mode)?;
    let u4 = axpy(u, &k3, dt);
    if !stage_positive(&u4) {
        return Err(abort());
    }
    let k4 = velocity(bg, &u4, mode)?;
    let next: Vec<f64> = (0..u.len())
        .map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if !stage_positive(&next) {
        return Err(abort());
    }
    ConformalState::new(bg, next, t + dt)
}

/// Stable step size for the current state.
///
/// Diffusive limit `cfl / (4 D λ_max(-Δ₀) max u^{1-p})` from the linearized
/// curvature equation, plus a reaction limit `cfl / (10 s max|R|)` that keeps
/// the RK4 error of the pointwise ODE part small.
pub fn stable_dt(bg: &BackgroundGeometry, state: &ConformalState, cfl: f64) -> f64 {
    let law = bg.law();
    let p = law.curvature_exponent();
    let umin = state.u().iter().copied().fold(f64::INFINITY, f64::min);
    let amplification = umin.powf(1.0 - p);
    let lmax = bg.max_laplacian_eigenvalue().max(f64::MIN_POSITIVE);
    let diffusive = cfl / (4.0 * law.diffusion() * lmax * amplification);
    let rmax = state
        .curvature()
        .iter()
        .map(|r| r.abs())
        .fold(0.0, f64::max);
    let reaction = if rmax > 0.0 {
        cfl / (10.0 * law.flow_speed() * rmax)
    } else {
        f64::INFINITY
    };
    diffusive.min(reaction)
}

/// Integrated curvature moments of an eigenfunction, see [`EigenSample`].
pub fn eigen_moments(bg: &BackgroundGeometry, state: &ConformalState, f: &[f64]) -> (f64, f64, f64) {
    let r = state.curvature();
    let u = state.u();
    let dv = state.volume_form();
    let grad_r = bg
        .graph()
        .edges()
        .iter()
        .map(|e| {
            let w = e.weight * 0.5 * (r[e.i] * u[e.i] * u[e.i] + r[e.j] * u[e.j] * u[e.j]);
            w * (f[e.i] - f[e.j]).powi(2)
        })
        .sum();
    let mut potential_r = 0.0;
    let mut mass_r = 0.0;
    for i in 0..f.len() {
        potential_r += r[i] * r[i] * f[i] * f[i] * dv[i];
        mass_r += r[i] * f[i] * f[i] * dv[i];
    }
    (grad_r, potential_r, mass_r)
}

struct Tracker {
    warm: Vec<Option<Vec<f64>>>,
}

impl Tracker {
    fn sample(
        &mut self,
        bg: &BackgroundGeometry,
        state: &ConformalState,
        cfg: &FlowConfig,
        i_plus: f64,
        i_minus: f64,
    ) -> Result<Sample> {
        let mut eigen = Vec::with_capacity(cfg.tracked_ops.len());
        for (k, op) in cfg.tracked_ops.iter().enumerate() {
            let res = first_eigen_warm(bg, state.u(), op, &cfg.spectral, self.warm[k].as_deref())?;
            let (grad_r, potential_r, mass_r) = eigen_moments(bg, state, &res.f);
            eigen.push(EigenSample {
                lambda: res.lambda,
                gap: res.gap,
                residual: res.residual,
                grad_r,
                potential_r,
                mass_r,
            });
            self.warm[k] = Some(res.f);
        }
        let diameter = if cfg.track_diameter {
            weighted_diameter(bg, state.u())?
        } else {
            f64::NAN
        };
        Ok(Sample {
            t: state.t(),
            eigen,
            min_r: state.min_curvature(),
            max_r: state.max_curvature(),
            rbar: state.rbar(),
            volume: state.volume(),
            diameter,
            i_plus,
            i_minus,
        })
    }
}

/// Runs the flow from `u0` until convergence (normalized mode) or `t_end`.
///
/// The trace is sampled at multiples of `sample_dt` (steps are shortened to
/// land on them) and at the final time. On time-step underflow the partial
/// trace is returned inside [`Error::Stiffness`] with status
/// `AbortedPositivity`.
pub fn run_flow(
    bg: &BackgroundGeometry,
    u0: &[f64],
    cfg: &FlowConfig,
) -> Result<(ConformalState, FlowTrace)> {
    cfg.validate()?;
    for op in &cfg.tracked_ops {
        op.validate(bg)?;
    }
    let mut state = ConformalState::new(bg, u0.to_vec(), 0.0)?;
    let mut tracker = Tracker {
        warm: vec![None; cfg.tracked_ops.len()],
    };
    let mut trace = FlowTrace {
        law: bg.law(),
        mode: cfg.mode,
        has_boundary: bg.has_boundary(),
        ops: cfg.tracked_ops.clone(),
        samples: Vec::new(),
        status: FlowStatus::TEndReached,
        t_end: cfg.t_end,
        convergence_tol: cfg.convergence_tol,
        final_deviation: state.curvature_deviation(),
        gap_warnings: Vec::new(),
        steps: 0,
    };
    let mut i_plus = 0.0;
    let mut i_minus = 0.0;
    push_sample(&mut trace, tracker.sample(bg, &state, cfg, 0.0, 0.0)?);

    let converged = |s: &ConformalState| {
        cfg.mode == FlowMode::Normalized && s.curvature_deviation() < cfg.convergence_tol
    };
    if converged(&state) {
        trace.status = FlowStatus::Converged;
        return Ok((state, trace));
    }
    let mut next_sample = 1usize;
    let time_eps = 1e-12 * cfg.t_end.max(1.0);
    loop {
        let sample_time = (next_sample as f64 * cfg.sample_dt).min(cfg.t_end);
        let mut dt = stable_dt(bg, &state, cfg.cfl);
        if let Some(m) = cfg.max_dt {
            dt = dt.min(m);
        }
        let remaining = sample_time - state.t();
        let lands = dt >= remaining - time_eps;
        if lands {
            dt = remaining;
        } else if dt > 0.5 * remaining {
            // split evenly rather than leaving a sliver before the sample
            dt = 0.5 * remaining;
        }
        let next = loop {
            match flow_step(bg, &state, dt, cfg.mode) {
                Ok(s) => break s,
                Err(Error::Positivity { .. }) | Err(Error::Domain { .. }) => {
                    dt *= 0.5;
                    if dt < 1e-12 {
                        trace.status = FlowStatus::AbortedPositivity;
                        trace.final_deviation = state.curvature_deviation();
                        return Err(Error::Stiffness {
                            t: state.t(),
                            dt,
                            trace: Box::new(trace),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let landed = (next.t() - sample_time).abs() <= time_eps;
        i_plus += 0.5 * dt
            * ((state.max_curvature() - state.rbar()) + (next.max_curvature() - next.rbar()));
        i_minus += 0.5 * dt
            * ((state.min_curvature() - state.rbar()) + (next.min_curvature() - next.rbar()));
        state = next;
        trace.steps += 1;
        let done_conv = converged(&state);
        let done_end = state.t() >= cfg.t_end - time_eps;
        if landed || done_conv || done_end {
            push_sample(&mut trace, tracker.sample(bg, &state, cfg, i_plus, i_minus)?);
            if landed {
                next_sample += 1;
            }
        }
        if done_conv {
            trace.status = FlowStatus::Converged;
            break;
        }
        if done_end {
            break;
        }
    }
    trace.final_deviation = state.curvature_deviation();
    Ok((state, trace))
}

fn push_sample(trace: &mut FlowTrace, sample: Sample) {
    if sample
        .eigen
        .iter()
        .any(|e| e.gap < 1e-6 * e.lambda.abs())
    {
        trace.gap_warnings.push(trace.samples.len());
    }
    trace.samples.push(sample);
}

/// Pointwise residual of the curvature evolution equation on three states
/// separated by a uniform step.
///
/// The centred difference of `R` is compared with `D Δ_g R + R(R - R̄)`
/// (normalized) or `D Δ_g R + R²` (unnormalized) at the middle state, where
/// `Δ_g` is the pencil Laplacian and `D` the diffusion coefficient of the law.
pub fn curvature_evolution_residual(
    bg: &BackgroundGeometry,
    states: &[ConformalState; 3],
    mode: FlowMode,
) -> Result<Vec<f64>> {
    let dt1 = states[1].t() - states[0].t();
    let dt2 = states[2].t() - states[1].t();
    if !(dt1 > 0.0) || (dt1 - dt2).abs() > 1e-9 * dt1 {
        return Err(Error::Usage(format!(
            "states must be separated by a uniform positive step, got {dt1} and {dt2}"
        )));
    }
    let mid = &states[1];
    let forms = conformal_forms(bg, mid.u())?;
    let lap = forms.laplacian(bg, mid.curvature());
    let d = bg.law().diffusion();
    let shift = match mode {
        FlowMode::Normalized => mid.rbar(),
        FlowMode::Unnormalized => 0.0,
    };
    Ok((0..bg.num_vertices())
        .map(|i| {
            let dr = (states[2].curvature()[i] - states[0].curvature()[i]) / (dt1 + dt2);
            let r = mid.curvature()[i];
            dr - (d * lap[i] + r * (r - shift))
        })
        .collect())
}

/// Solves `-c Δ₀u + R₀u = λ u^p` with constant `λ < 0` and total conformal
/// volume `target_volume`.
///
/// Newton's method is applied to `F(u) = -c Δ₀u + R₀u + u^p` (the equation with
/// `λ = -1`), starting from the constant supersolution
/// `(max(-R₀))^{1/(p-1)}`. `F` is convex and its Jacobian is positive definite
/// above the solution, so the iterates decrease monotonically and stay
/// positive. The result is then rescaled to the target volume, which turns
/// `λ = -1` into `λ = -k^{1-p}`.
pub fn solve_yamabe(bg: &BackgroundGeometry, target_volume: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let r0 = bg.background_curvature();
    if let Some(i) = r0.iter().position(|&r| !(r < 0.0)) {
        return Err(Error::Precondition(format!(
            "background curvature must be negative everywhere (R0 = {} at vertex {i})",
            r0[i]
        )));
    }
    if !(target_volume > 0.0 && target_volume.is_finite()) {
        return Err(Error::Usage(format!("target volume must be positive, got {target_volume}")));
    }
    let law = bg.law();
    let p = law.curvature_exponent();
    let c = law.operator_coefficient();
    let v = bg.vertex_volumes();
    let nv = bg.num_vertices();
    let graph = bg.graph();
    let worst = r0.iter().map(|r| -r).fold(0.0, f64::max);
    let mut u = vec![worst.powf(1.0 / (p - 1.0)); nv];

    // F in weighted form: c L u + v (R0 u + u^p), L u = Σ w (u_i - u_j)
    let weighted_residual = |u: &[f64]| -> Vec<f64> {
        let lap = graph.laplacian(u);
        (0..nv)
            .map(|i| v[i] * (-c * lap[i] + r0[i] * u[i] + u[i].powf(p)))
            .collect()
    };
    let sup_residual = |g: &[f64]| g.iter().zip(v).map(|(a, b)| (a / b).abs()).fold(0.0, f64::max);

    let max_iter = 60;
    let mut g = weighted_residual(&u);
    let mut res = sup_residual(&g);
    let mut iterations = 0;
    // scale of the rescaling factor, for translating the tolerance
    let mut scale_k = 1.0;
    while iterations < max_iter {
        let vol: f64 = (0..nv).map(|i| v[i] * u[i].powf(p + 1.0)).sum();
        scale_k = (target_volume / vol).powf(1.0 / (p + 1.0));
        if scale_k * res <= tol {
            break;
        }
        iterations += 1;
        let diag: Vec<f64> = (0..nv)
            .map(|i| v[i] * (r0[i] + p * u[i].powf(p - 1.0)))
            .collect();
        let delta = conjugate_gradient(bg, c, &diag, &g, 1e-14)?;
        let mut step = 1.0;
        let candidate = loop {
            let cand: Vec<f64> = (0..nv).map(|i| u[i] - step * delta[i]).collect();
            if stage_positive(&cand) {
                let gc = weighted_residual(&cand);
                let rc = sup_residual(&gc);
                if rc < res || step < 1e-3 {
                    break Some((cand, gc, rc));
                }
            }
            step *= 0.5;
            if step < 1e-3 {
                break None;
            }
        };
        match candidate {
            Some((cand, gc, rc)) => {
                let stalled = rc >= res;
                u = cand;
                g = gc;
                res = rc;
                if stalled && scale_k * res > tol {
                    return Err(Error::Newton { iterations, residual: scale_k * res });
                }
            }
            None => return Err(Error::Newton { iterations, residual: scale_k * res }),
        }
    }
    if scale_k * res > tol {
        return Err(Error::Newton { iterations, residual: scale_k * res });
    }
    let lambda = -scale_k.powf(1.0 - p);
    Ok((u.into_iter().map(|x| scale_k * x).collect(), lambda))
}

/// Solves `(c L + diag) x = b` by Jacobi-preconditioned conjugate gradients,
/// `L` the weighted graph Laplacian (symmetric positive definite system).
fn conjugate_gradient(
    bg: &BackgroundGeometry,
    c: f64,
    diag: &[f64],
    b: &[f64],
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let graph = bg.graph();
    let nv = b.len();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = (0..nv).map(|i| diag[i] * x[i]).collect();
        for e in graph.edges() {
            let flux = c * e.weight * (x[e.i] - x[e.j]);
            out[e.i] += flux;
            out[e.j] -= flux;
        }
        out
    };
    let precond: Vec<f64> = (0..nv)
        .map(|i| {
            let d: f64 = graph.neighbors(i).iter().map(|&(_, e)| c * graph.edges()[e].weight).sum();
            1.0 / (d + diag[i])
        })
        .collect();
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x = vec![0.0; nv];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(10 * nv).max(100) {
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Newton { iterations: 0, residual: f64::NAN });
        }
        let alpha = rz / pap;
        for i in 0..nv {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok(x);
        }
        z = r.iter().zip(&precond).map(|(a, m)| a * m).collect();
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..nv {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::geometry::{build_background, BackgroundSpec, CurvatureField};
    use crate::spectral::BoundaryCondition;

    fn constant_bg(r: f64, cells: usize) -> BackgroundGeometry {
        build_background(&BackgroundSpec::synthetic(3, 3, cells, 2.0 * PI, CurvatureField::Constant(r)))
            .unwrap()
    }

    fn bump_bg(cells: usize) -> BackgroundGeometry {
        build_background(&BackgroundSpec::synthetic(
            3,
            3,
            cells,
            2.0 * PI,
            CurvatureField::Bump { base: -6.0, amplitude: 2.0, width: 1.0, center: None },
        ))
        .unwrap()
    }

    #[test]
    fn stationary_constant_curvature_step() {
        let bg = constant_bg(-6.0, 4);
        let s = ConformalState::new(&bg, vec![1.0; 64], 0.0).unwrap();
        let next = flow_step(&bg, &s, 0.01, FlowMode::Normalized).unwrap();
        assert!(next.u().iter().all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn single_step_matches_scalar_ode() {
        let bg = constant_bg(6.0, 4);
        let s = ConformalState::new(&bg, vec![1.0; 64], 0.0).unwrap();
        let dt = 0.01;
        let next = flow_step(&bg, &s, dt, FlowMode::Unnormalized).unwrap();
        let exact = 6.0 / (1.0 - 6.0 * dt);
        for r in next.curvature() {
            assert!((r - exact).abs() < 1e-6 * exact);
        }
    }

    #[test]
    fn oversized_step_aborts_without_touching_state() {
        let bg = constant_bg(6.0, 4);
        let s = ConformalState::new(&bg, vec![1.0; 64], 0.0).unwrap();
        let err = flow_step(&bg, &s, 50.0, FlowMode::Unnormalized);
        assert!(matches!(err, Err(Error::Positivity { .. })));
        assert_eq!(s.u(), &[1.0; 64][..]);
    }

    #[test]
    fn unnormalized_run_tracks_closed_form() {
        let bg = constant_bg(6.0, 4);
        let mut cfg = FlowConfig::new(FlowMode::Unnormalized, 0.1);
        cfg.sample_dt = 0.02;
        let (_, trace) = run_flow(&bg, &[1.0; 64], &cfg).unwrap();
        assert_eq!(trace.samples.len(), 6);
        for s in &trace.samples {
            let exact = 6.0 / (1.0 - 6.0 * s.t);
            assert!((s.max_r - exact).abs() <= 1e-6 * exact, "t={} {}", s.t, s.max_r);
        }
        assert_eq!(trace.status, FlowStatus::TEndReached);
    }

    #[test]
    fn constant_negative_converges_immediately() {
        let bg = constant_bg(-6.0, 4);
        let cfg = FlowConfig::new(FlowMode::Normalized, 1.0);
        let (_, trace) = run_flow(&bg, &[1.0; 64], &cfg).unwrap();
        assert_eq!(trace.status, FlowStatus::Converged);
        assert_eq!(trace.samples.len(), 1);
        assert!((trace.samples[0].rbar + 6.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_bump_run_preserves_volume_and_pinches() {
        let bg = bump_bg(6);
        let mut cfg = FlowConfig::new(FlowMode::Normalized, 2.0);
        cfg.sample_dt = 0.1;
        cfg.tracked_ops = vec![OperatorDescriptor::laplacian(BoundaryCondition::Closed)];
        let u0 = vec![1.0; bg.num_vertices()];
        let (_, trace) = run_flow(&bg, &u0, &cfg).unwrap();
        let first = trace.initial().clone();
        for pair in trace.samples.windows(2) {
            assert!(pair[1].rbar <= pair[0].rbar + 1e-8 * pair[0].rbar.abs());
            assert!(pair[1].i_plus >= pair[1].i_minus);
            assert!(pair[1].t > pair[0].t);
        }
        for s in &trace.samples {
            assert!((s.volume - first.volume).abs() <= 1e-6 * first.volume * s.t.max(1e-3));
            assert!(s.max_r <= first.max_r + 1e-9 && s.min_r >= first.min_r - 1e-9);
            assert!(s.eigen[0].lambda > 0.0);
        }
    }

    #[test]
    fn residual_rejects_nonuniform_steps() {
        let bg = constant_bg(-6.0, 4);
        let s: Vec<ConformalState> = [0.0, 0.1, 0.3]
            .iter()
            .map(|&t| ConformalState::new(&bg, vec![1.0; 64], t).unwrap())
            .collect();
        let states = [s[0].clone(), s[1].clone(), s[2].clone()];
        assert!(matches!(
            curvature_evolution_residual(&bg, &states, FlowMode::Normalized),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn residual_vanishes_for_constant_data() {
        let bg = constant_bg(-6.0, 4);
        let s: Vec<ConformalState> = [0.0, 0.1, 0.2]
            .iter()
            .map(|&t| ConformalState::new(&bg, vec![1.0; 64], t).unwrap())
            .collect();
        let res =
            curvature_evolution_residual(&bg, &[s[0].clone(), s[1].clone(), s[2].clone()], FlowMode::Normalized)
                .unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn yamabe_constant_cases() {
        let bg = constant_bg(-6.0, 4);
        let vol = bg.total_background_volume();
        let (u, lambda) = solve_yamabe(&bg, vol, 1e-12).unwrap();
        assert!(u.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!((lambda + 6.0).abs() < 1e-12);
        let (u, lambda) = solve_yamabe(&bg, 64.0 * vol, 1e-12).unwrap();
        assert!(u.iter().all(|x| (x - 2.0).abs() < 1e-12));
        assert!((lambda + 6.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn yamabe_solution_has_constant_curvature() {
        let bg = bump_bg(6);
        let vol = bg.total_background_volume();
        let (u, lambda) = solve_yamabe(&bg, vol, 1e-11).unwrap();
        let r = scalar_curvature(&bg, &u).unwrap();
        assert!(r.iter().all(|x| (x - lambda).abs() < 1e-9));
        let (_, v) = volume_element(&bg, &u).unwrap();
        assert!((v - vol).abs() < 1e-10 * vol);
    }

    #[test]
    fn yamabe_requires_negative_background() {
        let bg = constant_bg(0.0, 4);
        assert!(matches!(solve_yamabe(&bg, 1.0, 1e-10), Err(Error::Precondition(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FlowConfig::new(FlowMode::Normalized, 1.0);
        cfg.cfl = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = FlowConfig::new(FlowMode::Normalized, 0.0);
        assert!(cfg.validate().is_err());
    }
}
