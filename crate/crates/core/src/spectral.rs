//! First eigenpairs of the conformal Laplacian and of Schrödinger operators
//! `-Δ_g + aR_g`.
//!
//! Every operator is represented as a symmetric pencil `(A_op, diag(M))` where
//! `A_op` is the conformal energy form (plus `a R_i M_i` on the diagonal for
//! Schrödinger operators) and `M` is the conformal volume element. Dirichlet
//! problems restrict the pencil to interior vertices; the closed Laplacian is
//! solved on the `M`-orthogonal complement of constants.
//!
//! Small pencils are solved densely. Larger ones use a block locally optimal
//! preconditioned conjugate gradient iteration (Rayleigh–Ritz on
//! `[X, W, P]` with an `M`-orthonormalized basis) and explicit deflation of
//! constants at every iteration.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{check_positive, conformal_forms, scalar_curvature, BackgroundGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplacian,
    Schrodinger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Closed,
    Dirichlet,
    Neumann,
}

impl BoundaryCondition {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Closed => "closed",
            Self::Dirichlet => "dirichlet",
            Self::Neumann => "neumann",
        }
    }
}

/// Which operator to track: `-Δ_g` or `-Δ_g + aR_g`, with a boundary condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorDescriptor {
    pub kind: OperatorKind,
    /// Potential coefficient; ignored for the Laplacian.
    pub a: f64,
    pub bc: BoundaryCondition,
}

impl OperatorDescriptor {
    pub fn laplacian(bc: BoundaryCondition) -> Self {
        Self {
            kind: OperatorKind::Laplacian,
            a: 0.0,
            bc,
        }
    }

    pub fn schrodinger(a: f64, bc: BoundaryCondition) -> Self {
        Self {
            kind: OperatorKind::Schrodinger,
            a,
            bc,
        }
    }

    /// Potential coefficient actually applied.
    pub fn potential(&self) -> f64 {
        match self.kind {
            OperatorKind::Laplacian => 0.0,
            OperatorKind::Schrodinger => self.a,
        }
    }

    /// Whether constants are projected out (first *nonzero* eigenvalue).
    pub fn deflates_constants(&self) -> bool {
        self.kind == OperatorKind::Laplacian && self.bc == BoundaryCondition::Closed
    }

    /// Stable identifier used in trace column names, e.g. `lap-closed` or
    /// `schr-dirichlet-a0.125`.
    pub fn id(&self) -> String {
        match self.kind {
            OperatorKind::Laplacian => format!("lap-{}", self.bc.name()),
            OperatorKind::Schrodinger => format!("schr-{}-a{}", self.bc.name(), self.a),
        }
    }

    /// Parses `laplacian/<bc>` or `schrodinger/<bc>/<a>`.
    pub fn parse(s: &str) -> Option<Self> {
        let parts: Vec<&str> = s.trim().split('/').map(str::trim).collect();
        let bc = match parts.get(1).copied() {
            Some("closed") => BoundaryCondition::Closed,
            Some("dirichlet") => BoundaryCondition::Dirichlet,
            Some("neumann") => BoundaryCondition::Neumann,
            _ => return None,
        };
        match (parts[0], parts.len()) {
            ("laplacian", 2) => Some(Self::laplacian(bc)),
            ("schrodinger", 3) => parts[2].parse().ok().map(|a| Self::schrodinger(a, bc)),
            _ => None,
        }
    }

    pub fn validate(&self, bg: &BackgroundGeometry) -> Result<()> {
        if !self.a.is_finite() {
            return Err(Error::Descriptor(format!("potential coefficient {} is not finite", self.a)));
        }
        match self.bc {
            BoundaryCondition::Dirichlet | BoundaryCondition::Neumann if !bg.has_boundary() => {
                Err(Error::Descriptor(format!(
                    "{} condition requested on a background without boundary",
                    self.bc.name()
                )))
            }
            BoundaryCondition::Dirichlet if bg.num_boundary() == bg.num_vertices() => Err(
                Error::Descriptor("dirichlet condition leaves no interior vertices".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// Target for the residual `‖Af - λMf‖_{M⁻¹}` with `fᵀMf = 1`.
    pub tol: f64,
    /// Operator application budget; `None` means `10·V`.
    pub max_applications: Option<usize>,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_applications: None,
            block_size: 4,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub lambda: f64,
    /// Eigenfunction on all vertices (zero on the boundary for Dirichlet problems).
    pub f: Vec<f64>,
    pub residual: f64,
    /// `fᵀ diag(M) f`.
    pub normalization: f64,
    /// Estimated distance to the next eigenvalue.
    pub gap: f64,
    pub applications: usize,
}

/// Symmetric pencil restricted to the admissible vertices.
pub(crate) struct Pencil {
    n_full: usize,
    active: Vec<usize>,
    diag: Vec<f64>,
    offsets: Vec<usize>,
    cols: Vec<(usize, f64)>,
    mass: Vec<f64>,
    precond: Vec<f64>,
    deflate: bool,
    mass_total: f64,
}

impl Pencil {
    pub(crate) fn build(bg: &BackgroundGeometry, u: &[f64], op: &OperatorDescriptor) -> Result<Self> {
        check_positive(bg, u)?;
        op.validate(bg)?;
        let forms = conformal_forms(bg, u)?;
        let a = op.potential();
        let r = if a != 0.0 {
            scalar_curvature(bg, u)?
        } else {
            vec![0.0; u.len()]
        };
        let n_full = bg.num_vertices();
        let dirichlet = op.bc == BoundaryCondition::Dirichlet;
        let mut pos = vec![usize::MAX; n_full];
        let mut active = Vec::with_capacity(n_full);
        for i in 0..n_full {
            if !(dirichlet && bg.boundary()[i]) {
                pos[i] = active.len();
                active.push(i);
            }
        }
        let graph = bg.graph();
        let mut diag = Vec::with_capacity(active.len());
        let mut precond = Vec::with_capacity(active.len());
        let mut offsets = vec![0usize];
        let mut cols = Vec::new();
        let mut mass = Vec::with_capacity(active.len());
        for &i in &active {
            let mut d = 0.0;
            for &(j, e) in graph.neighbors(i) {
                let w = forms.edge_weights[e];
                d += w;
                if pos[j] != usize::MAX {
                    cols.push((pos[j], -w));
                }
            }
            let pot = a * r[i] * forms.mass[i];
            diag.push(d + pot);
            precond.push(1.0 / (d + pot.abs() + 1e-3 * d.max(forms.mass[i])));
            offsets.push(cols.len());
            mass.push(forms.mass[i]);
        }
        let mass_total = mass.iter().sum();
        Ok(Self {
            n_full,
            active,
            diag,
            offsets,
            cols,
            mass,
            precond,
            deflate: op.deflates_constants(),
            mass_total,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.active.len()
    }

    pub(crate) fn apply(&self, x: &[f64], y: &mut [f64]) {
        for k in 0..self.dim() {
            let mut acc = self.diag[k] * x[k];
            for &(c, v) in &self.cols[self.offsets[k]..self.offsets[k + 1]] {
                acc += v * x[c];
            }
            y[k] = acc;
        }
    }

    fn apply_new(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        y
    }

    /// Removes the `M`-weighted mean when constants are deflated.
    pub(crate) fn project(&self, x: &mut [f64]) {
        if self.deflate {
            let mean = dot_m(x, &vec![1.0; x.len()], &self.mass) / self.mass_total;
            for v in x.iter_mut() {
                *v -= mean;
            }
        }
    }

    pub(crate) fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&i| full[i]).collect()
    }

    pub(crate) fn extend(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_full];
        for (k, &i) in self.active.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }

    /// Dense `M^{-1/2} A M^{-1/2}`.
    fn dense_normalized(&self) -> DMatrix<f64> {
        let m = self.dim();
        let s: Vec<f64> = self.mass.iter().map(|x| 1.0 / x.sqrt()).collect();
        let mut mat = DMatrix::zeros(m, m);
        for k in 0..m {
            mat[(k, k)] += self.diag[k] * s[k] * s[k];
            for &(c, v) in &self.cols[self.offsets[k]..self.offsets[k + 1]] {
                mat[(k, c)] += v * s[k] * s[c];
            }
        }
        mat
    }

    fn residual_norm(&self, f: &[f64], lambda: f64) -> f64 {
        let af = self.apply_new(f);
        af.iter()
            .zip(f)
            .zip(&self.mass)
            .map(|((a, x), m)| (a - lambda * m * x).powi(2) / m)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&self) -> f64 {
        let mut ratios: Vec<f64> = self
            .diag
            .iter()
            .zip(&self.mass)
            .map(|(d, m)| (d / m).abs())
            .collect();
        ratios.sort_by(f64::total_cmp);
        ratios[ratios.len() / 2].max(f64::MIN_POSITIVE)
    }
}

fn dot_m(x: &[f64], y: &[f64], m: &[f64]) -> f64 {
    x.iter().zip(y).zip(m).map(|((a, b), w)| a * b * w).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations, eigenvalues ascending with matching eigenvector columns.
///
/// Used instead of `nalgebra::SymmetricEigen`, whose eigenvectors lose
/// accuracy (residuals near 1e-10 relative) on nearly diagonal input, which
/// is exactly the shape of Rayleigh–Ritz matrices close to convergence.
fn sorted_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[(r, c)] * a[(r, c)])
            .sum();
        let diag: f64 = (0..n).map(|k| a[(k, k)] * a[(k, k)]).sum();
        if off <= f64::EPSILON * f64::EPSILON * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
    let vals = order.iter().map(|&k| a[(k, k)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (vals, vecs)
}

/// Dimension at or below which `first_eigen` solves the pencil densely.
const DENSE_CUTOFF: usize = 48;

/// Upper limit on unknowns accepted by [`dense_oracle`].
pub const DENSE_LIMIT: usize = 4096;

/// Smallest admissible eigenpair of the pencil for `op` at conformal factor `u`.
pub fn first_eigen(
    bg: &BackgroundGeometry,
    u: &[f64],
    op: &OperatorDescriptor,
    opts: &SpectralOptions,
) -> Result<SpectralResult> {
    first_eigen_warm(bg, u, op, opts, None)
}

/// As [`first_eigen`], optionally seeding the iteration with a previous eigenvector.
pub fn first_eigen_warm(
    bg: &BackgroundGeometry,
    u: &[f64],
    op: &OperatorDescriptor,
    opts: &SpectralOptions,
    warm: Option<&[f64]>,
) -> Result<SpectralResult> {
    let pencil = Pencil::build(bg, u, op)?;
    let budget = opts.max_applications.unwrap_or(10 * bg.num_vertices());
    let (lambda, x, gap, applications) = if pencil.dim() <= DENSE_CUTOFF {
        solve_dense(&pencil)
    } else {
        let warm = warm.map(|w| pencil.restrict(w));
        solve_block(&pencil, warm.as_deref(), opts, budget)?
    };
    finish(&pencil, lambda, x, gap, applications)
}

fn finish(
    pencil: &Pencil,
    _ritz: f64,
    mut x: Vec<f64>,
    gap: f64,
    applications: usize,
) -> Result<SpectralResult> {
    pencil.project(&mut x);
    let norm = dot_m(&x, &x, &pencil.mass).sqrt();
    for v in x.iter_mut() {
        *v /= norm;
    }
    // fix the sign so repeated solves agree
    let (imax, _) = x
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (k, v)| if v.abs() > acc.1 { (k, v.abs()) } else { acc });
    if x[imax] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let ax = pencil.apply_new(&x);
    let normalization = dot_m(&x, &x, &pencil.mass);
    let lambda = dot(&x, &ax) / normalization;
    let residual = pencil.residual_norm(&x, lambda);
    Ok(SpectralResult {
        lambda,
        f: pencil.extend(&x),
        residual,
        normalization,
        gap,
        applications,
    })
}

fn solve_dense(pencil: &Pencil) -> (f64, Vec<f64>, f64, usize) {
    let m = pencil.dim();
    let mut mat = pencil.dense_normalized();
    if pencil.deflate {
        // push the constant mode to the top of the spectrum
        let q: Vec<f64> = pencil.mass.iter().map(|w| w.sqrt()).collect();
        let qn = dot(&q, &q);
        let shift = 2.0 * mat.trace().abs() + 1.0;
        for r in 0..m {
            for c in 0..m {
                mat[(r, c)] += shift * q[r] * q[c] / qn;
            }
        }
    }
    let (vals, vecs) = sorted_eigen(mat);
    let x: Vec<f64> = (0..m)
        .map(|r| vecs[(r, 0)] / pencil.mass[r].sqrt())
        .collect();
    let gap = if m > 1 { vals[1] - vals[0] } else { f64::INFINITY };
    (vals[0], x, gap, 0)
}

/// Block locally optimal preconditioned iteration on the pencil.
fn solve_block(
    pencil: &Pencil,
    warm: Option<&[f64]>,
    opts: &SpectralOptions,
    budget: usize,
) -> Result<(f64, Vec<f64>, f64, usize)> {
    let m = pencil.dim();
    let b = opts.block_size.clamp(2, (m - 1) / 3);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..b)
        .map(|_| (0..m).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    if let Some(w) = warm {
        if w.len() == m && w.iter().any(|v| *v != 0.0) {
            x[0] = w.to_vec();
        }
    }
    for col in x.iter_mut() {
        pencil.project(col);
    }
    let mut applications = 0;
    let mut ritz = rayleigh_ritz(pencil, x, vec![None; b], b, b, &mut applications)
        .ok_or(Error::NoConvergence { applications, residual: f64::INFINITY })?;

    let scale = pencil.scale();
    let mut best = f64::INFINITY;
    let mut gap = f64::INFINITY;
    loop {
        let target = opts.tol * ritz.values[0].abs().max(1e-2 * scale).min(1.0);
        let r: Vec<Vec<f64>> = (0..b)
            .map(|k| {
                (0..m)
                    .map(|i| ritz.ax[k][i] - ritz.values[k] * pencil.mass[i] * ritz.x[k][i])
                    .collect()
            })
            .collect();
        let res0 = r[0]
            .iter()
            .zip(&pencil.mass)
            .map(|(v, w)| v * v / w)
            .sum::<f64>()
            .sqrt();
        best = best.min(res0);
        if res0 <= target {
            return Ok((ritz.values[0], ritz.x.swap_remove(0), gap, applications));
        }
        if applications + 2 * b > budget {
            return Err(Error::NoConvergence {
                applications,
                residual: best,
            });
        }
        // Jacobi preconditioner for A - θM at the current Ritz value θ
        let theta = ritz.values[0];
        let t: Vec<f64> = (0..m)
            .map(|i| {
                let floor = 1.0 / pencil.precond[i];
                1.0 / (pencil.diag[i] - theta * pencil.mass[i]).abs().max(1e-2 * floor)
            })
            .collect();
        let w = r
            .into_iter()
            .map(|rk| rk.iter().zip(&t).map(|(v, t)| v * t).collect::<Vec<f64>>());

        let n_lead = ritz.x.len();
        let mut cols = std::mem::take(&mut ritz.x);
        let mut acols: Vec<Option<Vec<f64>>> = std::mem::take(&mut ritz.ax).into_iter().map(Some).collect();
        for col in w.chain(std::mem::take(&mut ritz.p)) {
            cols.push(col);
            acols.push(None);
        }
        let Some(next) = rayleigh_ritz(pencil, cols, acols, n_lead, b, &mut applications) else {
            return Err(Error::NoConvergence {
                applications,
                residual: best,
            });
        };
        if next.values.len() > 1 {
            gap = next.values[1] - next.values[0];
        }
        ritz = next;
    }
}

/// Outcome of one Rayleigh–Ritz projection.
struct Ritz {
    /// All Ritz values of the projected pencil, ascending.
    values: Vec<f64>,
    /// The `b` lowest Ritz vectors and their images under `A`.
    x: Vec<Vec<f64>>,
    ax: Vec<Vec<f64>>,
    /// Search directions: the Ritz vectors without their component along the
    /// leading columns.
    p: Vec<Vec<f64>>,
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rayleigh–Ritz on the span of `cols`, whose first `n_lead` entries are the
/// current iterates.
///
/// Columns are projected off the constants and `M`-orthonormalized by two
/// passes of modified Gram–Schmidt; nearly dependent ones are dropped. Known
/// images under `A` follow the same combinations. Missing images are computed
/// after orthonormalization: for small search directions the combination
/// cancels most of the product and would leave only roundoff.
fn rayleigh_ritz(
    pencil: &Pencil,
    cols: Vec<Vec<f64>>,
    acols: Vec<Option<Vec<f64>>>,
    n_lead: usize,
    b: usize,
    applications: &mut usize,
) -> Option<Ritz> {
    let mass = &pencil.mass;
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut aq: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut kept_lead = 0;
    for (k, (mut v, mut av)) in cols.into_iter().zip(acols).enumerate() {
        pencil.project(&mut v);
        let norm0 = dot_m(&v, &v, mass).sqrt();
        if !(norm0 > 0.0 && norm0.is_finite()) {
            continue;
        }
        for _ in 0..2 {
            for (qj, aqj) in q.iter().zip(&aq) {
                let c = dot_m(qj, &v, mass);
                axpy(-c, qj, &mut v);
                if let Some(av) = av.as_mut() {
                    axpy(-c, aqj, av);
                }
            }
        }
        let nrm = dot_m(&v, &v, mass).sqrt();
        if !(nrm > 1e-8 * norm0) {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nrm);
        let av = match av {
            Some(mut av) => {
                av.iter_mut().for_each(|x| *x /= nrm);
                av
            }
            None => {
                *applications += 1;
                pencil.apply_new(&v)
            }
        };
        q.push(v);
        aq.push(av);
        if k < n_lead {
            kept_lead += 1;
        }
    }
    let s = q.len();
    if s < b {
        return None;
    }
    let h = DMatrix::from_fn(s, s, |r, c| 0.5 * (dot(&q[r], &aq[c]) + dot(&q[c], &aq[r])));
    let (values, y) = sorted_eigen(h);
    let m = pencil.dim();
    let build = |vecs: &[Vec<f64>], from: usize| -> Vec<Vec<f64>> {
        (0..b)
            .map(|k| {
                let mut out = vec![0.0; m];
                for j in from..s {
                    axpy(y[(j, k)], &vecs[j], &mut out);
                }
                out
            })
            .collect()
    };
    let x = build(&q, 0);
    let ax = build(&aq, 0);
    let p = if kept_lead < s { build(&q, kept_lead) } else { Vec::new() };
    Some(Ritz { values, x, ax, p })
}

/// The `k` smallest eigenvalues of the pencil by full dense decomposition.
///
/// Constants are not deflated: for the closed Laplacian the first entry is
/// the zero eigenvalue.
pub fn dense_oracle(
    bg: &BackgroundGeometry,
    u: &[f64],
    op: &OperatorDescriptor,
    k: usize,
) -> Result<Vec<f64>> {
    let pencil = Pencil::build(bg, u, op)?;
    if pencil.dim() > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            limit: DENSE_LIMIT,
            got: pencil.dim(),
        });
    }
    let mut vals: Vec<f64> = pencil.dense_normalized().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals.into_iter().take(k).collect())
}

/// Dense counterpart of [`first_eigen`]: the first admissible eigenvalue.
pub fn dense_first_admissible(
    bg: &BackgroundGeometry,
    u: &[f64],
    op: &OperatorDescriptor,
) -> Result<f64> {
    let vals = dense_oracle(bg, u, op, 2)?;
    Ok(if op.deflates_constants() { vals[1] } else { vals[0] })
}
