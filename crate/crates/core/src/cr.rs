//! CR analogue on a discrete Heisenberg nilmanifold.
//!
//! Vertices are the elements `(i, j, k)` of the Heisenberg group over `Z_N`
//! with product `(a,b,c)·(x,y,z) = (a+x, b+y, c+z+a·y)`. The horizontal fields
//! `X = ∂x` and `Y = ∂y + x∂t` are discretized by right translation by the
//! generators `(±1,0,0)` and `(0,±1,0)`, so `Δ_b = X² + Y²` becomes a graph
//! Laplacian with centred second differences along group-translated stencils.
//! Real coordinates are `(i h, j h, k h²)` with `h = 1/N`; a `Y` step moves
//! `t` by `x h = i h²`, which lands on the grid exactly.
//!
//! A [`CrBackground`] dereferences to [`BackgroundGeometry`] carrying the CR
//! transformation law, so the spectral and flow modules apply unchanged.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::flow::{flow_step, run_flow, FlowConfig, FlowMode, FlowTrace};
use crate::geometry::{
    curvature_values, scalar_curvature, BackgroundGeometry, BackgroundKind, ConformalLaw,
    ConformalState, CurvatureField, Grid,
};
use crate::graph::{Edge, WeightedGraph};

#[derive(Debug, Clone)]
pub struct CrBackground(BackgroundGeometry);

impl Deref for CrBackground {
    type Target = BackgroundGeometry;

    fn deref(&self) -> &BackgroundGeometry {
        &self.0
    }
}

impl CrBackground {
    pub fn cr_dimension(&self) -> u32 {
        self.0.dimension_n()
    }

    pub fn geometry(&self) -> &BackgroundGeometry {
        &self.0
    }

    pub fn into_geometry(self) -> BackgroundGeometry {
        self.0
    }
}

/// Conformal factor on a CR background; same data as the Riemannian state.
pub type CrConformalState = ConformalState;

/// Builds the `N³` nilmanifold grid with background Webster curvature `r0`.
///
/// Only CR dimension 1 (real dimension 3) is supported. Bump curvature
/// profiles depend on the horizontal coordinates `(x, y)`.
pub fn build_nilmanifold(cells: usize, cr_n: u32, r0: &CurvatureField) -> Result<CrBackground> {
    if cr_n != 1 {
        return Err(Error::Construction {
            param: "n",
            reason: format!("nilmanifold grids exist for CR dimension 1 only, got {cr_n}"),
        });
    }
    if cells < 3 {
        return Err(Error::Construction {
            param: "cells",
            reason: format!("need at least 3 vertices per axis, got {cells}"),
        });
    }
    let n = cells;
    let h = 1.0 / n as f64;
    let grid = Grid {
        shape: vec![n; 3],
        spacing: vec![h, h, h * h],
        extent: vec![1.0, 1.0, h],
        periodic: true,
        bump_axes: 2,
    };
    let nv = grid.num_vertices();
    let volume = h.powi(4);
    let weight = volume / (h * h);
    let mut edges = Vec::with_capacity(2 * nv);
    for idx in 0..nv {
        let m = grid.multi_index(idx);
        let (i, j, k) = (m[0], m[1], m[2]);
        // X step: (i+1, j, k)
        edges.push(Edge {
            i: idx,
            j: grid.linear_index(&[(i + 1) % n, j, k]),
            weight,
            length: h,
        });
        // Y step: (i, j+1, k+i)
        edges.push(Edge {
            i: idx,
            j: grid.linear_index(&[i, (j + 1) % n, (k + i) % n]),
            weight,
            length: h,
        });
    }
    let graph = WeightedGraph::new(vec![volume; nv], edges);
    if !graph.is_connected() {
        return Err(Error::Construction {
            param: "cells",
            reason: "nilmanifold graph is disconnected".into(),
        });
    }
    let r0 = curvature_values(&grid, r0)?;
    Ok(CrBackground(BackgroundGeometry::from_parts(
        BackgroundKind::Heisenberg,
        ConformalLaw::Cr { n: cr_n },
        grid,
        graph,
        r0,
        vec![false; nv],
    )))
}

/// Webster curvature `R = u^{-(1+2/n)} (-(2+2/n) Δ_b u + R₀ u)`.
pub fn webster_curvature(crbg: &CrBackground, u: &[f64]) -> Result<Vec<f64>> {
    scalar_curvature(crbg, u)
}

pub fn cr_flow_step(
    crbg: &CrBackground,
    state: &CrConformalState,
    dt: f64,
    mode: FlowMode,
) -> Result<CrConformalState> {
    flow_step(crbg, state, dt, mode)
}

pub fn run_cr_flow(
    crbg: &CrBackground,
    u0: &[f64],
    cfg: &FlowConfig,
) -> Result<(CrConformalState, FlowTrace)> {
    run_flow(crbg, u0, cfg)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::geometry::volume_element;
    use crate::spectral::{dense_first_admissible, first_eigen, BoundaryCondition, OperatorDescriptor, SpectralOptions};

    /// Dense sub-Laplacian built from coordinates: neighbours of `(x, y, t)` are
    /// `(x±h, y, t)` and `(x, y±h, t±x h)` reduced modulo the lattice.
    fn dense_sub_laplacian(n: usize) -> DMatrix<f64> {
        let h = 1.0 / n as f64;
        let nv = n * n * n;
        let index = |x: f64, y: f64, t: f64| -> usize {
            let i = ((x / h).round() as i64).rem_euclid(n as i64) as usize;
            let j = ((y / h).round() as i64).rem_euclid(n as i64) as usize;
            let k = ((t / (h * h)).round() as i64).rem_euclid(n as i64) as usize;
            i + n * (j + n * k)
        };
        let mut m = DMatrix::zeros(nv, nv);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (x, y, t) = (i as f64 * h, j as f64 * h, k as f64 * h * h);
                    let me = index(x, y, t);
                    for nb in [
                        index(x + h, y, t),
                        index(x - h, y, t),
                        index(x, y + h, t + x * h),
                        index(x, y - h, t - x * h),
                    ] {
                        m[(me, nb)] += 1.0 / (h * h);
                        m[(me, me)] -= 1.0 / (h * h);
                    }
                }
            }
        }
        m
    }

    #[test]
    fn curvature_matches_dense_operator() {
        let bg = build_nilmanifold(8, 1, &CurvatureField::Constant(-1.0)).unwrap();
        let u = bg.bump_profile(None, 0.2, 0.5);
        let r = webster_curvature(&bg, &u).unwrap();
        let lap = dense_sub_laplacian(8) * nalgebra::DVector::from_vec(u.clone());
        for i in 0..u.len() {
            let expected = u[i].powf(-3.0) * (-4.0 * lap[i] - u[i]);
            assert!((r[i] - expected).abs() < 1e-10 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn sub_laplacian_is_symmetric_and_kills_constants() {
        let m = dense_sub_laplacian(5);
        assert!((&m - m.transpose()).amax() < 1e-12);
        let bg = build_nilmanifold(5, 1, &CurvatureField::Zero).unwrap();
        assert!(bg.laplacian(&[3.0; 125]).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn constant_factor_scaling() {
        let bg = build_nilmanifold(4, 1, &CurvatureField::Constant(2.0)).unwrap();
        let r = webster_curvature(&bg, &[3.0; 64]).unwrap();
        assert!(r.iter().all(|x| (x - 2.0 / 9.0).abs() < 1e-14));
        let (_, v1) = volume_element(&bg, &[1.0; 64]).unwrap();
        let (_, v3) = volume_element(&bg, &[3.0; 64]).unwrap();
        assert!((v3 / v1 - 81.0).abs() < 1e-10);
    }

    #[test]
    fn spectrum_has_positive_gap() {
        let bg = build_nilmanifold(5, 1, &CurvatureField::Zero).unwrap();
        let op = OperatorDescriptor::laplacian(BoundaryCondition::Closed);
        let u = bg.bump_profile(None, 0.3, 0.4);
        let it = first_eigen(&bg, &u, &op, &SpectralOptions::default()).unwrap();
        let de = dense_first_admissible(&bg, &u, &op).unwrap();
        assert!(it.lambda > 0.0);
        assert!((it.lambda - de).abs() <= 1e-8 * de);
    }

    #[test]
    fn unnormalized_constant_reduction() {
        let bg = build_nilmanifold(4, 1, &CurvatureField::Constant(2.0)).unwrap();
        let s = ConformalState::new(&bg, vec![1.0; 64], 0.0).unwrap();
        let dt = 0.01;
        let next = cr_flow_step(&bg, &s, dt, FlowMode::Unnormalized).unwrap();
        let exact = 2.0 / (1.0 - 2.0 * dt);
        assert!(next.curvature().iter().all(|r| (r - exact).abs() < 1e-9));
    }

    #[test]
    fn rejects_higher_cr_dimension() {
        assert!(matches!(
            build_nilmanifold(4, 2, &CurvatureField::Zero),
            Err(Error::Construction { param: "n", .. })
        ));
    }
}
