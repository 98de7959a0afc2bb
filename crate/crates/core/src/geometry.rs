//! Discrete backgrounds and the conformal-geometry kernel.
//!
//! A background is a weighted graph (see [`crate::graph`]) together with a
//! background curvature field and a [`ConformalLaw`] fixing how curvature,
//! volume and lengths transform under `u ↦ g = u^{4/(n-2)} g₀` (Riemannian)
//! or `θ = u^{2/n} θ₀` (CR).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Edge, WeightedGraph};

/// Exponents and coefficients of a conformal transformation law.
///
/// With `p` the curvature exponent and `c` the operator coefficient, curvature
/// is `R = u^{-p} (-c Δ₀u + R₀ u)`; the volume form is `u^{p+1} dV₀`; the flow
/// is `∂u/∂t = -s (R - R̄) u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConformalLaw {
    /// Riemannian manifold of dimension `n ≥ 3`.
    Riemannian { n: u32 },
    /// CR manifold of real dimension `2n + 1`.
    Cr { n: u32 },
}

impl ConformalLaw {
    fn nf(&self) -> f64 {
        match *self {
            ConformalLaw::Riemannian { n } | ConformalLaw::Cr { n } => n as f64,
        }
    }

    pub fn dimension(&self) -> u32 {
        match *self {
            ConformalLaw::Riemannian { n } | ConformalLaw::Cr { n } => n,
        }
    }

    pub fn is_cr(&self) -> bool {
        matches!(self, ConformalLaw::Cr { .. })
    }

    /// `(n+2)/(n-2)` or `1 + 2/n`.
    pub fn curvature_exponent(&self) -> f64 {
        let n = self.nf();
        match self {
            ConformalLaw::Riemannian { .. } => (n + 2.0) / (n - 2.0),
            ConformalLaw::Cr { .. } => 1.0 + 2.0 / n,
        }
    }

    /// `4(n-1)/(n-2)` or `2 + 2/n`.
    pub fn operator_coefficient(&self) -> f64 {
        let n = self.nf();
        match self {
            ConformalLaw::Riemannian { .. } => 4.0 * (n - 1.0) / (n - 2.0),
            ConformalLaw::Cr { .. } => 2.0 + 2.0 / n,
        }
    }

    /// `2n/(n-2)` or `(2n+2)/n`.
    pub fn volume_exponent(&self) -> f64 {
        self.curvature_exponent() + 1.0
    }

    /// `(n-2)/4` or `n/2`.
    pub fn flow_speed(&self) -> f64 {
        let n = self.nf();
        match self {
            ConformalLaw::Riemannian { .. } => (n - 2.0) / 4.0,
            ConformalLaw::Cr { .. } => n / 2.0,
        }
    }

    /// Coefficient of the Laplacian in the curvature evolution: `n-1` or `n+1`.
    pub fn diffusion(&self) -> f64 {
        self.operator_coefficient() * self.flow_speed()
    }

    /// `2/(n-2)` or `1/n`.
    pub fn length_exponent(&self) -> f64 {
        let n = self.nf();
        match self {
            ConformalLaw::Riemannian { .. } => 2.0 / (n - 2.0),
            ConformalLaw::Cr { .. } => 1.0 / n,
        }
    }

    /// Exponent of `k` in `R(k·u) = k^e R(u)`: `-4/(n-2)` or `-2/n`.
    pub fn curvature_scaling(&self) -> f64 {
        1.0 - self.curvature_exponent()
    }

    /// Rate at which the Dirichlet form changes: `(n-2)/2` or `n`.
    pub fn gradient_rate(&self) -> f64 {
        2.0 * self.flow_speed()
    }

    /// Rate at which the volume form changes: `n/2` or `n+1`.
    pub fn mass_rate(&self) -> f64 {
        self.volume_exponent() * self.flow_speed()
    }

    /// Schrödinger threshold `(n-2)/(4(n-1))` or `n/(2n+2)`.
    pub fn critical_potential(&self) -> f64 {
        self.gradient_rate() / (2.0 * self.diffusion())
    }

    /// Pinching ratio of the small-`a` regime: `(n-2)/n` or `n/(n+1)`.
    pub fn pinching_ratio(&self) -> f64 {
        self.gradient_rate() / self.mass_rate()
    }

    /// Eigenvalue sandwich exponent `2(n-1)(min/max - 1)` or `2(2n+1)(min/max - 1)`.
    pub fn sandwich_exponent(&self, min_r0: f64, max_r0: f64) -> f64 {
        2.0 * (self.gradient_rate() + self.mass_rate()) * (min_r0 / max_r0 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    FlatTorus,
    BoxWithBoundary,
    Synthetic,
    Heisenberg,
}

impl BackgroundKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flat-torus" => Some(Self::FlatTorus),
            "box-with-boundary" => Some(Self::BoxWithBoundary),
            "synthetic" => Some(Self::Synthetic),
            "heisenberg" => Some(Self::Heisenberg),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FlatTorus => "flat-torus",
            Self::BoxWithBoundary => "box-with-boundary",
            Self::Synthetic => "synthetic",
            Self::Heisenberg => "heisenberg",
        }
    }
}

/// Prescribed background curvature.
#[derive(Debug, Clone, PartialEq)]
pub enum CurvatureField {
    Zero,
    Constant(f64),
    /// `base + amplitude · bump(x)` with a smooth bump of the given width
    /// centred at `center` (domain centre when `None`).
    Bump {
        base: f64,
        amplitude: f64,
        width: f64,
        center: Option<Vec<f64>>,
    },
    Values(Vec<f64>),
}

/// Descriptor accepted by [`build_background`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    pub kind: BackgroundKind,
    pub n: u32,
    /// Grid dimension `d` (number of axes).
    pub grid_dim: usize,
    /// Vertices per axis.
    pub cells: usize,
    pub side: f64,
    pub curvature: CurvatureField,
}

impl BackgroundSpec {
    pub fn flat_torus(n: u32, grid_dim: usize, cells: usize, side: f64) -> Self {
        Self {
            kind: BackgroundKind::FlatTorus,
            n,
            grid_dim,
            cells,
            side,
            curvature: CurvatureField::Zero,
        }
    }

    pub fn synthetic(n: u32, grid_dim: usize, cells: usize, side: f64, curvature: CurvatureField) -> Self {
        Self {
            kind: BackgroundKind::Synthetic,
            n,
            grid_dim,
            cells,
            side,
            curvature,
        }
    }

    pub fn boxed(n: u32, grid_dim: usize, cells: usize, side: f64, curvature: CurvatureField) -> Self {
        Self {
            kind: BackgroundKind::BoxWithBoundary,
            n,
            grid_dim,
            cells,
            side,
            curvature,
        }
    }
}

/// Lattice layout; vertex indices are lexicographic with axis 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    /// Period (torus) or extent (box) along each axis.
    pub extent: Vec<f64>,
    pub periodic: bool,
    /// Axes that bump profiles depend on.
    pub bump_axes: usize,
}

impl Grid {
    pub fn num_vertices(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.shape.len());
        for &s in &self.shape {
            out.push(idx % s);
            idx /= s;
        }
        out
    }

    pub fn linear_index(&self, mi: &[usize]) -> usize {
        let mut idx = 0;
        for k in (0..self.shape.len()).rev() {
            idx = idx * self.shape[k] + mi[k];
        }
        idx
    }

    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .zip(&self.spacing)
            .map(|(&m, &h)| m as f64 * h)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.extent.iter().map(|&e| 0.5 * e).collect()
    }

    /// Smooth bump in `(0, 1]` equal to 1 at `center`.
    ///
    /// Periodic grids use `exp(-Σ (1 - cos(2πΔ/P)) (P/2π)² / w²)`, which agrees
    /// with a Gaussian of width `w` near the centre and stays smooth across the
    /// identification; boxes use the plain Gaussian.
    pub fn bump(&self, idx: usize, center: &[f64], width: f64) -> f64 {
        let x = self.position(idx);
        let mut q = 0.0;
        for k in 0..self.bump_axes {
            let delta = x[k] - center[k];
            if self.periodic {
                let period = self.extent[k];
                let scale = period / (2.0 * PI);
                q += (1.0 - (delta / scale).cos()) * scale * scale;
            } else {
                q += 0.5 * delta * delta;
            }
        }
        (-q / (width * width)).exp()
    }
}

/// Weighted-graph discretization of a compact background `(M, g₀)` or `(M, θ₀)`.
#[derive(Debug)]
pub struct BackgroundGeometry {
    pub(crate) kind: BackgroundKind,
    pub(crate) law: ConformalLaw,
    pub(crate) grid: Grid,
    pub(crate) graph: WeightedGraph,
    pub(crate) r0: Vec<f64>,
    pub(crate) boundary: Vec<bool>,
    max_eigenvalue: OnceLock<f64>,
}

impl Clone for BackgroundGeometry {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            law: self.law,
            grid: self.grid.clone(),
            graph: self.graph.clone(),
            r0: self.r0.clone(),
            boundary: self.boundary.clone(),
            max_eigenvalue: self.max_eigenvalue.clone(),
        }
    }
}

impl BackgroundGeometry {
    pub(crate) fn from_parts(
        kind: BackgroundKind,
        law: ConformalLaw,
        grid: Grid,
        graph: WeightedGraph,
        r0: Vec<f64>,
        boundary: Vec<bool>,
    ) -> Self {
        Self {
            kind,
            law,
            grid,
            graph,
            r0,
            boundary,
            max_eigenvalue: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> BackgroundKind {
        self.kind
    }

    pub fn law(&self) -> ConformalLaw {
        self.law
    }

    pub fn dimension_n(&self) -> u32 {
        self.law.dimension()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }

    pub fn vertex_volumes(&self) -> &[f64] {
        self.graph.volumes()
    }

    pub fn background_curvature(&self) -> &[f64] {
        &self.r0
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary.iter().any(|&b| b)
    }

    pub fn num_boundary(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub fn total_background_volume(&self) -> f64 {
        self.vertex_volumes().iter().sum()
    }

    /// Background Laplacian `Δ₀f`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.graph.laplacian(f)
    }

    /// Cached upper estimate of the largest eigenvalue of `-Δ₀`.
    pub fn max_laplacian_eigenvalue(&self) -> f64 {
        *self
            .max_eigenvalue
            .get_or_init(|| self.graph.max_laplacian_eigenvalue())
    }

    /// Field `1 + amplitude · bump` centred at `center` (domain centre if `None`).
    pub fn bump_profile(&self, center: Option<&[f64]>, width: f64, amplitude: f64) -> Vec<f64> {
        let c = center.map(<[f64]>::to_vec).unwrap_or_else(|| self.grid.center());
        (0..self.num_vertices())
            .map(|i| 1.0 + amplitude * self.grid.bump(i, &c, width))
            .collect()
    }
}

pub(crate) fn curvature_values(grid: &Grid, field: &CurvatureField) -> Result<Vec<f64>> {
    let nv = grid.num_vertices();
    let values = match field {
        CurvatureField::Zero => vec![0.0; nv],
        CurvatureField::Constant(c) => vec![*c; nv],
        CurvatureField::Bump {
            base,
            amplitude,
            width,
            center,
        } => {
            if !(*width > 0.0) {
                return Err(Error::Construction {
                    param: "r0.width",
                    reason: format!("bump width must be positive, got {width}"),
                });
            }
            let c = center.clone().unwrap_or_else(|| grid.center());
            if c.len() < grid.bump_axes {
                return Err(Error::Construction {
                    param: "r0.center",
                    reason: format!("expected {} coordinates", grid.bump_axes),
                });
            }
            (0..nv)
                .map(|i| base + amplitude * grid.bump(i, &c, *width))
                .collect()
        }
        CurvatureField::Values(v) => {
            if v.len() != nv {
                return Err(Error::Construction {
                    param: "r0",
                    reason: format!("expected {nv} values, got {}", v.len()),
                });
            }
            v.clone()
        }
    };
    if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::Construction {
            param: "r0",
            reason: format!("non-finite curvature value {bad}"),
        });
    }
    Ok(values)
}

/// Builds a lattice background.
///
/// Tori use spacing `h = L/N` with `v_i = h^d` and `w_ij = h^{d-2}`. Boxes use
/// `h = L/(N-1)` and dual-cell weights: a vertex volume is halved for every
/// axis along which it sits on a face, and an edge weight is halved for every
/// transverse axis along which the edge lies on a face. This is the symmetric
/// form of ghost reflection across the faces, so the box Laplacian carries a
/// homogeneous Neumann condition.
pub fn build_background(spec: &BackgroundSpec) -> Result<BackgroundGeometry> {
    if spec.kind == BackgroundKind::Heisenberg {
        return Err(Error::Construction {
            param: "kind",
            reason: "heisenberg backgrounds are built by cr::build_nilmanifold".into(),
        });
    }
    if spec.n < 3 {
        return Err(Error::Construction {
            param: "n",
            reason: format!("conformal dimension must be at least 3, got {}", spec.n),
        });
    }
    if spec.grid_dim == 0 {
        return Err(Error::Construction {
            param: "grid_dim",
            reason: "grid needs at least one axis".into(),
        });
    }
    if spec.cells < 3 {
        return Err(Error::Construction {
            param: "cells",
            reason: format!("need at least 3 vertices per axis, got {}", spec.cells),
        });
    }
    if !(spec.side > 0.0 && spec.side.is_finite()) {
        return Err(Error::Construction {
            param: "side",
            reason: format!("side length must be positive and finite, got {}", spec.side),
        });
    }
    if spec.kind == BackgroundKind::FlatTorus && spec.curvature != CurvatureField::Zero {
        let flat = matches!(spec.curvature, CurvatureField::Constant(c) if c == 0.0);
        if !flat {
            return Err(Error::Construction {
                param: "r0",
                reason: "flat-torus backgrounds carry zero curvature; use kind = synthetic".into(),
            });
        }
    }
    let d = spec.grid_dim;
    let n = spec.cells;
    let periodic = spec.kind != BackgroundKind::BoxWithBoundary;
    let h = if periodic {
        spec.side / n as f64
    } else {
        spec.side / (n - 1) as f64
    };
    let grid = Grid {
        shape: vec![n; d],
        spacing: vec![h; d],
        extent: vec![spec.side; d],
        periodic,
        bump_axes: d,
    };
    let nv = grid.num_vertices();
    let cell_volume = h.powi(d as i32);
    let face_weight = h.powi(d as i32 - 2);

    let on_face = |m: usize| !periodic && (m == 0 || m == n - 1);
    let mut volumes = Vec::with_capacity(nv);
    let mut boundary = Vec::with_capacity(nv);
    let mut edges = Vec::with_capacity(nv * d);
    for idx in 0..nv {
        let mi = grid.multi_index(idx);
        let faces = mi.iter().filter(|&&m| on_face(m)).count();
        volumes.push(cell_volume * 0.5f64.powi(faces as i32));
        boundary.push(faces > 0);
        for axis in 0..d {
            let next = mi[axis] + 1;
            if next == n && !periodic {
                continue;
            }
            let mut mj = mi.clone();
            mj[axis] = next % n;
            let transverse_faces = (0..d)
                .filter(|&k| k != axis && on_face(mi[k]))
                .count();
            edges.push(Edge {
                i: idx,
                j: grid.linear_index(&mj),
                weight: face_weight * 0.5f64.powi(transverse_faces as i32),
                length: h,
            });
        }
    }
    let graph = WeightedGraph::new(volumes, edges);
    if !graph.is_connected() {
        return Err(Error::Construction {
            param: "cells",
            reason: "lattice graph is disconnected".into(),
        });
    }
    let r0 = curvature_values(&grid, &spec.curvature)?;
    Ok(BackgroundGeometry::from_parts(
        spec.kind,
        ConformalLaw::Riemannian { n: spec.n },
        grid,
        graph,
        r0,
        boundary,
    ))
}

pub(crate) fn check_field(bg: &BackgroundGeometry, u: &[f64]) -> Result<()> {
    if u.len() != bg.num_vertices() {
        return Err(Error::Shape {
            expected: bg.num_vertices(),
            got: u.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_positive(bg: &BackgroundGeometry, u: &[f64]) -> Result<()> {
    check_field(bg, u)?;
    match u.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(vertex) => Err(Error::Domain {
            vertex,
            value: u[vertex],
        }),
        None => Ok(()),
    }
}

/// Curvature of the conformal metric: `R = u^{-p} (-c Δ₀u + R₀ u)`.
pub fn scalar_curvature(bg: &BackgroundGeometry, u: &[f64]) -> Result<Vec<f64>> {
    check_positive(bg, u)?;
    let p = bg.law.curvature_exponent();
    let c = bg.law.operator_coefficient();
    let lap = bg.laplacian(u);
    Ok(u.iter()
        .zip(&lap)
        .zip(&bg.r0)
        .map(|((&ui, &li), &r0)| ui.powf(-p) * (-c * li + r0 * ui))
        .collect())
}

/// Per-vertex conformal volume `u^{p+1} v_i` and its total.
pub fn volume_element(bg: &BackgroundGeometry, u: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_positive(bg, u)?;
    let q = bg.law.volume_exponent();
    let dv: Vec<f64> = u
        .iter()
        .zip(bg.vertex_volumes())
        .map(|(&ui, &vi)| ui.powf(q) * vi)
        .collect();
    let total = dv.iter().sum();
    Ok((dv, total))
}

fn weighted_mean(values: &[f64], weights: &[f64], total: f64) -> f64 {
    values.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / total
}

/// Volume-weighted mean curvature `R̄`.
pub fn average_scalar_curvature(bg: &BackgroundGeometry, u: &[f64]) -> Result<f64> {
    let r = scalar_curvature(bg, u)?;
    let (dv, total) = volume_element(bg, u)?;
    Ok(weighted_mean(&r, &dv, total))
}

/// Conformal Dirichlet form and mass weights of `g = u^{4/(n-2)} g₀`.
///
/// The energy form has edge weights `w_ij (u_i² + u_j²)/2`, so `fᵀAf` is the
/// discrete `∫|∇_g f|² dV_g`; the mass is the conformal volume element.
#[derive(Debug, Clone)]
pub struct ConformalForms {
    pub edge_weights: Vec<f64>,
    pub mass: Vec<f64>,
}

impl ConformalForms {
    pub fn energy(&self, bg: &BackgroundGeometry, f: &[f64]) -> f64 {
        bg.graph
            .edges()
            .iter()
            .zip(&self.edge_weights)
            .map(|(e, w)| w * (f[e.i] - f[e.j]).powi(2))
            .sum()
    }

    pub fn mass_norm2(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.mass).map(|(x, m)| m * x * x).sum()
    }

    /// `A f` on the full vertex set.
    pub fn apply(&self, bg: &BackgroundGeometry, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for (e, w) in bg.graph.edges().iter().zip(&self.edge_weights) {
            let flux = w * (f[e.i] - f[e.j]);
            out[e.i] += flux;
            out[e.j] -= flux;
        }
        out
    }

    /// Conformal Laplacian `Δ_g f = -diag(M)⁻¹ A f`.
    pub fn laplacian(&self, bg: &BackgroundGeometry, f: &[f64]) -> Vec<f64> {
        let mut out = self.apply(bg, f);
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o = -*o / m;
        }
        out
    }
}

pub fn conformal_forms(bg: &BackgroundGeometry, u: &[f64]) -> Result<ConformalForms> {
    let (mass, _) = volume_element(bg, u)?;
    let edge_weights = bg
        .graph
        .edges()
        .iter()
        .map(|e| e.weight * 0.5 * (u[e.i] * u[e.i] + u[e.j] * u[e.j]))
        .collect();
    Ok(ConformalForms { edge_weights, mass })
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn eccentricity(graph: &WeightedGraph, lengths: &[f64], source: usize) -> f64 {
    let mut dist = vec![f64::INFINITY; graph.num_vertices()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for &(j, e) in graph.neighbors(i) {
            let nd = d + lengths[e];
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(HeapItem(nd, j));
            }
        }
    }
    dist.into_iter().fold(0.0, f64::max)
}

/// All-pairs shortest-path diameter with conformal edge lengths
/// `l_ij (u_i^e + u_j^e)/2`, `e` the length exponent of the law.
pub fn weighted_diameter(bg: &BackgroundGeometry, u: &[f64]) -> Result<f64> {
    check_positive(bg, u)?;
    let e = bg.law.length_exponent();
    let scaled: Vec<f64> = u.iter().map(|x| x.powf(e)).collect();
    let lengths: Vec<f64> = bg
        .graph
        .edges()
        .iter()
        .map(|ed| ed.length * 0.5 * (scaled[ed.i] + scaled[ed.j]))
        .collect();
    // max is order independent, so the parallel reduction is deterministic
    Ok((0..bg.num_vertices())
        .into_par_iter()
        .map(|s| eccentricity(&bg.graph, &lengths, s))
        .reduce(|| 0.0, f64::max))
}

/// Positive conformal factor at a flow time, with curvature data derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalState {
    u: Vec<f64>,
    t: f64,
    curvature: Vec<f64>,
    dv: Vec<f64>,
    rbar: f64,
    volume: f64,
}

impl ConformalState {
    pub fn new(bg: &BackgroundGeometry, u: Vec<f64>, t: f64) -> Result<Self> {
        let curvature = scalar_curvature(bg, &u)?;
        let (dv, volume) = volume_element(bg, &u)?;
        let rbar = weighted_mean(&curvature, &dv, volume);
        Ok(Self {
            u,
            t,
            curvature,
            dv,
            rbar,
            volume,
        })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn into_u(self) -> Vec<f64> {
        self.u
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn volume_form(&self) -> &[f64] {
        &self.dv
    }

    pub fn rbar(&self) -> f64 {
        self.rbar
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn min_curvature(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_curvature(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup |R - R̄|`.
    pub fn curvature_deviation(&self) -> f64 {
        self.curvature
            .iter()
            .map(|r| (r - self.rbar).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(n: usize) -> BackgroundGeometry {
        build_background(&BackgroundSpec::flat_torus(3, 3, n, 2.0 * PI)).unwrap()
    }

    #[test]
    fn torus_structure() {
        let bg = torus(4);
        assert_eq!(bg.num_vertices(), 64);
        assert!(bg.background_curvature().iter().all(|&r| r == 0.0));
        assert!((0..64).all(|i| bg.graph().degree(i) == 6));
        assert!(!bg.has_boundary());
    }

    #[test]
    fn synthetic_constant_override() {
        let bg = build_background(&BackgroundSpec::synthetic(
            3,
            3,
            4,
            2.0 * PI,
            CurvatureField::Constant(-6.0),
        ))
        .unwrap();
        assert_eq!(bg.num_vertices(), 64);
        assert!(bg.background_curvature().iter().all(|&r| r == -6.0));
        assert!((0..64).all(|i| bg.graph().degree(i) == 6));
    }

    #[test]
    fn box_boundary_count_matches_enumeration() {
        let bg = build_background(&BackgroundSpec::boxed(3, 3, 5, 1.0, CurvatureField::Zero)).unwrap();
        // oracle: enumerate the 5^3 lattice and count points with a coordinate on a face
        let mut count = 0;
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    if [x, y, z].iter().any(|&c| c == 0 || c == 4) {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 98);
        assert_eq!(bg.num_vertices(), 125);
        assert_eq!(bg.num_boundary(), count);
        // dual cells tile the box exactly
        assert!((bg.total_background_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn construction_errors_name_parameter() {
        let bad = |spec: BackgroundSpec, p: &str| match build_background(&spec) {
            Err(Error::Construction { param, .. }) => assert_eq!(param, p),
            other => panic!("expected construction error, got {other:?}"),
        };
        bad(BackgroundSpec::flat_torus(2, 3, 4, 1.0), "n");
        bad(BackgroundSpec::flat_torus(3, 3, 2, 1.0), "cells");
        bad(BackgroundSpec::flat_torus(3, 3, 4, -1.0), "side");
        bad(
            BackgroundSpec::synthetic(3, 3, 4, 1.0, CurvatureField::Constant(f64::NAN)),
            "r0",
        );
        let mut flat = BackgroundSpec::flat_torus(3, 3, 4, 1.0);
        flat.curvature = CurvatureField::Constant(1.0);
        bad(flat, "r0");
    }

    #[test]
    fn curvature_of_constant_factor() {
        let bg = build_background(&BackgroundSpec::synthetic(
            3,
            3,
            4,
            2.0 * PI,
            CurvatureField::Bump {
                base: -6.0,
                amplitude: 2.0,
                width: 1.0,
                center: None,
            },
        ))
        .unwrap();
        let r = scalar_curvature(&bg, &vec![1.0; 64]).unwrap();
        assert_eq!(r, bg.background_curvature());
        let k: f64 = 3.0;
        let r = scalar_curvature(&bg, &vec![k; 64]).unwrap();
        for (a, b) in r.iter().zip(bg.background_curvature()) {
            assert!((a - k.powi(-4) * b).abs() <= 1e-14 * b.abs());
        }
    }

    #[test]
    fn nonpositive_factor_rejected() {
        let bg = torus(4);
        let mut u = vec![1.0; 64];
        u[7] = 0.0;
        assert!(matches!(
            scalar_curvature(&bg, &u),
            Err(Error::Domain { vertex: 7, .. })
        ));
        assert!(volume_element(&bg, &u).is_err());
        assert!(conformal_forms(&bg, &u).is_err());
        assert!(weighted_diameter(&bg, &u).is_err());
    }

    #[test]
    fn volume_scaling_n3() {
        let bg = torus(4);
        let (_, v1) = volume_element(&bg, &vec![1.0; 64]).unwrap();
        assert!((v1 - bg.total_background_volume()).abs() < 1e-12);
        let (_, v2) = volume_element(&bg, &vec![2.0; 64]).unwrap();
        assert!((v2 / v1 - 64.0).abs() < 1e-12);
    }

    #[test]
    fn average_curvature_cases() {
        let bg = build_background(&BackgroundSpec::synthetic(
            3,
            3,
            4,
            2.0 * PI,
            CurvatureField::Constant(-6.0),
        ))
        .unwrap();
        assert!((average_scalar_curvature(&bg, &vec![1.0; 64]).unwrap() + 6.0).abs() < 1e-14);
        // alternating field has zero mean on an even torus
        let alt: Vec<f64> = (0..64)
            .map(|i| {
                let m = bg.grid().multi_index(i);
                if (m[0] + m[1] + m[2]) % 2 == 0 { 1.0 } else { -1.0 }
            })
            .collect();
        let bg2 = build_background(&BackgroundSpec::synthetic(
            3,
            3,
            4,
            2.0 * PI,
            CurvatureField::Values(alt),
        ))
        .unwrap();
        assert!(average_scalar_curvature(&bg2, &vec![1.0; 64]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn two_vertex_edge_weight() {
        let graph = WeightedGraph::new(
            vec![1.0, 1.0],
            vec![Edge { i: 0, j: 1, weight: 1.0, length: 1.0 }],
        );
        let grid = Grid {
            shape: vec![2],
            spacing: vec![1.0],
            extent: vec![1.0],
            periodic: false,
            bump_axes: 1,
        };
        let bg = BackgroundGeometry::from_parts(
            BackgroundKind::Synthetic,
            ConformalLaw::Riemannian { n: 3 },
            grid,
            graph,
            vec![0.0; 2],
            vec![false; 2],
        );
        let forms = conformal_forms(&bg, &[1.0, 2.0]).unwrap();
        assert_eq!(forms.edge_weights, vec![2.5]);
    }

    #[test]
    fn diameter_of_unit_torus_and_path() {
        let bg = torus(4);
        let d = weighted_diameter(&bg, &vec![1.0; 64]).unwrap();
        assert!((d - 3.0 * PI).abs() < 1e-12, "{d}");
        let k: f64 = 4.0;
        let dk = weighted_diameter(&bg, &vec![k; 64]).unwrap();
        assert!((dk / d - k.powi(2)).abs() < 1e-12);

        let graph = WeightedGraph::new(
            vec![1.0; 4],
            (0..3).map(|i| Edge { i, j: i + 1, weight: 1.0, length: 1.0 }).collect(),
        );
        let grid = Grid {
            shape: vec![4],
            spacing: vec![1.0],
            extent: vec![3.0],
            periodic: false,
            bump_axes: 1,
        };
        let path = BackgroundGeometry::from_parts(
            BackgroundKind::Synthetic,
            ConformalLaw::Riemannian { n: 3 },
            grid,
            graph,
            vec![0.0; 4],
            vec![false; 4],
        );
        assert_eq!(weighted_diameter(&path, &[1.0; 4]).unwrap(), 3.0);
    }

    #[test]
    fn law_constants() {
        let r = ConformalLaw::Riemannian { n: 3 };
        assert_eq!(r.curvature_exponent(), 5.0);
        assert_eq!(r.operator_coefficient(), 8.0);
        assert_eq!(r.volume_exponent(), 6.0);
        assert_eq!(r.diffusion(), 2.0);
        assert_eq!(r.critical_potential(), 0.125);
        assert_eq!(r.sandwich_exponent(-2.0, -1.0), 4.0);
        let c = ConformalLaw::Cr { n: 1 };
        assert_eq!(c.curvature_exponent(), 3.0);
        assert_eq!(c.operator_coefficient(), 4.0);
        assert_eq!(c.volume_exponent(), 4.0);
        assert_eq!(c.diffusion(), 2.0);
        assert_eq!(c.gradient_rate(), 1.0);
        assert_eq!(c.mass_rate(), 2.0);
        assert_eq!(c.critical_potential(), 0.25);
        assert_eq!(c.sandwich_exponent(-2.0, -1.0), 6.0);
    }
}
