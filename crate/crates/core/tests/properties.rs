use std::sync::Arc;

use chns::assembly::{assemble_skew_convection, chi, chi_da};
use chns::gronwall::{a_alpha, check_gronwall_standard, check_gronwall_weighted, extremal_standard, extremal_weighted};
use chns::{FieldVector, FunctionSpace, Mesh, SpaceKind};
use proptest::prelude::*;

proptest! {
    #[test]
    fn chi_is_symmetric_and_consistent(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        prop_assert!((chi(a, b) - chi(b, a)).abs() <= 1e-14 * (1.0 + chi(a, b).abs()));
        prop_assert!((chi(a, a) - a * a * a).abs() <= 1e-13);
        // (chi(a, b), a - b) = (a^4 - b^4) / 4
        prop_assert!((chi(a, b) * (a - b) - 0.25 * (a.powi(4) - b.powi(4))).abs() <= 1e-12);
        let h = 1e-6;
        let fd = (chi(a + h, b) - chi(a - h, b)) / (2.0 * h);
        prop_assert!((fd - chi_da(a, b)).abs() <= 1e-7 * (1.0 + fd.abs()));
    }

    #[test]
    fn extremal_sequences_respect_both_bounds(
        c in prop::collection::vec(0.0f64..5.0, 1..40),
        tau in 1e-3f64..0.5,
        c2 in 0.01f64..5.0,
        a0 in 0.0f64..5.0,
        alpha in 0.01f64..0.99,
    ) {
        let b = vec![0.0; c.len() + 1];
        let r = check_gronwall_standard(&extremal_standard(&c, &b, tau, c2)).unwrap();
        prop_assert!(r.hypotheses_hold());
        prop_assert_eq!(r.first_violation(), None);
        let r = check_gronwall_weighted(&extremal_weighted(&c, &b, tau, c2, a0, alpha), alpha).unwrap();
        prop_assert!(r.hypotheses_hold());
        prop_assert_eq!(r.first_violation(), None);
    }

    #[test]
    fn growth_constant_is_increasing(x in 1e-3f64..0.98, dx in 1e-3f64..0.01) {
        let (a, b) = (a_alpha(x).unwrap(), a_alpha(x + dx).unwrap());
        prop_assert!(a >= 1.0 && b > a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn skew_convection_is_energy_neutral(seed in prop::collection::vec(-1.0f64..1.0, 8)) {
        let v = FunctionSpace::p2_vector(Arc::new(Mesh::unit_square(3).unwrap()));
        let field = |k: usize| {
            let c: Vec<f64> = (0..v.dof_count)
                .map(|i| if v.dirichlet[i] { 0.0 } else { seed[(i * (k + 3)) % seed.len()] * ((i % 5) as f64 - 2.0) })
                .collect();
            FieldVector::new(SpaceKind::P2VectorDirichlet, c)
        };
        let k = assemble_skew_convection(&field(0), &v).unwrap();
        let w = field(1);
        let scale = k.max_abs() * w.coeffs.iter().map(|x| x * x).sum::<f64>();
        prop_assert!(k.bilinear(&w.coeffs, &w.coeffs).abs() <= 1e-14 * scale.max(1e-300));
    }
}
