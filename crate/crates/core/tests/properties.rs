use std::f64::consts::TAU;

use proptest::prelude::*;
use yamabe_lab::geometry::{
    build_background, conformal_forms, scalar_curvature, volume_element, BackgroundGeometry, BackgroundSpec,
    CurvatureField,
};
use yamabe_lab::spectral::{first_eigen, BoundaryCondition, OperatorDescriptor, SpectralOptions};

fn synthetic(cells: usize, base: f64, amplitude: f64) -> BackgroundGeometry {
    let r0 = CurvatureField::Bump { base, amplitude, width: 1.0, center: None };
    build_background(&BackgroundSpec::synthetic(3, 3, cells, TAU, r0)).unwrap()
}

fn factor(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.5f64..1.5, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn background_laplacian_is_minus_gradient_of_energy(f in proptest::collection::vec(-2.0f64..2.0, 64)) {
        let bg = synthetic(4, -1.0, 0.5);
        let g = bg.graph();
        let lap = g.laplacian(&f);
        let pairing: f64 = -f.iter().zip(&lap).zip(g.volumes()).map(|((a, l), v)| a * l * v).sum::<f64>();
        let energy = g.dirichlet_energy(&f);
        prop_assert!((pairing - energy).abs() <= 1e-10 * (1.0 + energy));
    }

    #[test]
    fn constants_are_harmonic(c in -5.0f64..5.0) {
        let bg = synthetic(4, 0.3, 1.0);
        let lap = bg.laplacian(&vec![c; bg.num_vertices()]);
        prop_assert!(lap.iter().all(|x| x.abs() <= 1e-12 * (1.0 + c.abs())));
    }

    #[test]
    fn curvature_and_volume_scale_homogeneously(u in factor(64), k in 0.2f64..5.0) {
        let bg = synthetic(4, -1.0, 2.0);
        let p = bg.law().curvature_exponent();
        let scaled: Vec<f64> = u.iter().map(|x| k * x).collect();
        let r = scalar_curvature(&bg, &u).unwrap();
        let rk = scalar_curvature(&bg, &scaled).unwrap();
        for (a, b) in r.iter().zip(&rk) {
            prop_assert!((b - k.powf(1.0 - p) * a).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        let (_, vol) = volume_element(&bg, &u).unwrap();
        let (_, vol_k) = volume_element(&bg, &scaled).unwrap();
        prop_assert!((vol_k / vol - k.powf(p + 1.0)).abs() <= 1e-10 * k.powf(p + 1.0));
    }

    #[test]
    fn conformal_energy_is_nonnegative_and_kills_constants(u in factor(64), c in -3.0f64..3.0) {
        let bg = synthetic(4, 0.0, 1.0);
        let forms = conformal_forms(&bg, &u).unwrap();
        prop_assert!(forms.energy(&bg, &vec![c; 64]).abs() < 1e-14);
        let af = forms.apply(&bg, &u);
        prop_assert!(af.iter().sum::<f64>().abs() <= 1e-10);
        prop_assert!(forms.energy(&bg, &u) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn first_eigenvalue_bounds_rayleigh_quotients(u in factor(125), f in proptest::collection::vec(-1.0f64..1.0, 125)) {
        let bg = synthetic(5, -1.0, 1.0);
        let op = OperatorDescriptor::laplacian(BoundaryCondition::Closed);
        let res = first_eigen(&bg, &u, &op, &SpectralOptions::default()).unwrap();
        let forms = conformal_forms(&bg, &u).unwrap();
        let total: f64 = forms.mass.iter().sum();
        let mean = f.iter().zip(&forms.mass).map(|(a, m)| a * m).sum::<f64>() / total;
        let g: Vec<f64> = f.iter().map(|a| a - mean).collect();
        let quotient = forms.energy(&bg, &g) / forms.mass_norm2(&g);
        prop_assert!(res.lambda > 0.0);
        prop_assert!(res.lambda <= quotient * (1.0 + 1e-9));
        let own = forms.energy(&bg, &res.f) / forms.mass_norm2(&res.f);
        prop_assert!((own - res.lambda).abs() <= 1e-7 * res.lambda);
    }
}
