use langevin_core::bounds::{decay_upper_bound, higher_order_bound, quadratic_lower_bound};
use langevin_core::exec::Execution;
use langevin_core::fokker_planck::{build_generator, mass, Grid, ImplicitStepper};
use langevin_core::objective::{quadratic_pl_constants, Objective, QuadraticLoss, SquaredNorm};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn generator_case(
    two_d: bool,
    n: usize,
    half: f64,
    sigma: f64,
    a: [f64; 4],
) -> langevin_core::fokker_planck::Generator {
    if two_d {
        let q = QuadraticLoss::new(DMatrix::from_row_slice(2, 2, &a), DVector::zeros(2)).unwrap();
        build_generator(&Grid::square(-half, half, n).unwrap(), &q, sigma).unwrap()
    } else {
        build_generator(&Grid::line(-half, half, n).unwrap(), &SquaredNorm::new(1, a[0].abs() + 0.1), sigma).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generator_is_self_adjoint_and_dissipative(
        two_d in any::<bool>(),
        n in 16usize..40,
        half in 1.0f64..4.0,
        sigma in 0.3f64..2.0,
        a in prop::array::uniform4(-1.0f64..1.0),
        phi in prop::collection::vec(-1.0f64..1.0, 1600),
        psi in prop::collection::vec(-1.0f64..1.0, 1600),
    ) {
        let gen = generator_case(two_d, n, half, sigma, a);
        let m = gen.n_nodes();
        let (phi, psi) = (&phi[..m], &psi[..m]);
        let lphi = gen.apply_vec(phi, Execution::Sequential);
        let lpsi = gen.apply_vec(psi, Execution::Sequential);
        let (x, y) = (gen.inner(phi, &lpsi), gen.inner(&lphi, psi));
        let scale = gen.max_rate() * gen.inner(phi, phi).max(gen.inner(psi, psi));
        prop_assert!((x - y).abs() <= 1e-12 * scale);
        prop_assert!(gen.inner(phi, &lphi) <= 1e-12 * scale);
        prop_assert!((gen.inner(phi, &lphi) + gen.gradient_form(phi, phi)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn implicit_steps_conserve_mass_and_positivity(
        two_d in any::<bool>(),
        n in 16usize..32,
        dt in 1e-3f64..1.0,
        a in prop::array::uniform4(-1.0f64..1.0),
        phi in prop::collection::vec(0.0f64..3.0, 1024),
    ) {
        let gen = generator_case(two_d, n, 3.0, 0.7, a);
        let mut cur = phi[..gen.n_nodes()].to_vec();
        let m0 = mass(&gen, &cur);
        let stepper = ImplicitStepper::new(&gen, dt).unwrap();
        for _ in 0..20 {
            stepper.step(&gen, &mut cur, Execution::Parallel).unwrap();
            prop_assert!(cur.iter().all(|&x| x >= 0.0));
        }
        prop_assert!((mass(&gen, &cur) - m0).abs() <= 1e-11 * m0.max(1e-300));
    }

    #[test]
    fn sandwich_bounds_are_ordered(
        s1 in 0.2f64..3.0,
        s2 in 0.2f64..3.0,
        gap0 in 0.0f64..10.0,
        sigma in 0.01f64..2.0,
        t in 0.0f64..20.0,
    ) {
        let q = QuadraticLoss::embedded(DMatrix::from_diagonal(&DVector::from_vec(vec![s1, s2])), 4).unwrap();
        let cert = quadratic_pl_constants(q.matrix()).unwrap();
        let up = decay_upper_bound(gap0, &cert, sigma).unwrap().eval(t);
        let lo = quadratic_lower_bound(gap0, q.sigma_max(), q.frobenius_sq(), sigma).unwrap().eval(t);
        prop_assert!(lo <= up * (1.0 + 1e-12));
        prop_assert!((q.laplacian(&[0.0; 4]) - 2.0 * q.frobenius_sq()).abs() <= 1e-12 * q.frobenius_sq());
    }

    #[test]
    fn higher_order_bound_scales_as_power(k in 1u32..7, t in 0.01f64..50.0, c in 0.1f64..10.0) {
        let b = higher_order_bound(c, k).unwrap();
        let ratio = b.eval(t) / b.eval(2.0 * t);
        prop_assert!((ratio - 2f64.powi(k as i32)).abs() < 1e-9 * ratio);
    }
}
