mod common;

use approx::assert_relative_eq;
use munu_core::admissibility::{
    oracle_solve_weighted, solve_admissibility, weighted_relative_error, Boundary, GreenKernel,
};
use munu_core::dichotomy::{fit_certificate, verify_dichotomy, VerifyOptions};
use munu_core::linalg::{spectral_norm, ScaledMatrix};
use munu_core::rates::{log_norm, Sequence, WeightedNormSpec};
use munu_core::robustness::{apply_graph_operator, make_perturbation, GraphNormOperator, PerturbationSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::random_case;

/// `‖a − b‖ / max(‖a‖, ‖b‖)` computed at a common scale.
fn scaled_rel_diff(a: &ScaledMatrix, b: &ScaledMatrix) -> f64 {
    let s = a.log_scale.to_f64().max(b.log_scale.to_f64());
    let am = &a.mat * (a.log_scale.to_f64() - s).exp();
    let bm = &b.mat * (b.log_scale.to_f64() - s).exp();
    let denom = am.norm().max(bm.norm());
    if denom == 0.0 {
        0.0
    } else {
        (am - bm).norm() / denom
    }
}

fn scale_seq(y: &Sequence, c: f64) -> Sequence {
    y.iter().map(|v| v * c).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cocycle_law(seed in 0u64..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let case = random_case(seed);
        let sys = &case.model.system;
        let w = sys.window();
        let mut idx = [a, b, c].map(|t| w.min + (t * (w.len() - 1) as f64).round() as i64);
        idx.sort();
        let [n, k, m] = idx;
        let whole = sys.evolution(m, n).unwrap();
        let split = sys.evolution(m, k).unwrap().mul(&sys.evolution(k, n).unwrap());
        prop_assert!(scaled_rel_diff(&whole, &split) < 1e-10);
    }

    #[test]
    fn norm_homogeneity_and_nesting(seed in 0u64..10_000, log_c in -30.0f64..30.0) {
        let case = random_case(seed);
        let nu = Some(&case.nu);
        let sup = WeightedNormSpec::sup(case.beta);
        let l1 = WeightedNormSpec::l1(case.beta);
        let base = log_norm(&case.y, &l1, &case.rate, nu).unwrap();
        let scaled = log_norm(&scale_seq(&case.y, log_c.exp()), &l1, &case.rate, nu).unwrap();
        prop_assert!((scaled - base - log_c).abs() < 1e-9 * (1.0 + base.abs()));
        let s = log_norm(&case.y, &sup, &case.rate, nu).unwrap();
        prop_assert!(s <= base + 1e-12);
    }

    #[test]
    fn fit_is_covariant_under_nu_scaling(seed in 0u64..10_000, log_c in 0.0f64..5.0) {
        let case = random_case(seed);
        let scaled = case.nu.scaled(log_c).unwrap();
        let f = fit_certificate(&case.model.system, &case.model.projections, &case.rate, &scaled).unwrap();
        assert_relative_eq!(f.certificate.lambda, case.fit.certificate.lambda, max_relative = 1e-12);
        assert_relative_eq!(
            f.certificate.d * log_c.exp(),
            case.fit.certificate.d,
            max_relative = 1e-9
        );
    }

    #[test]
    fn fitted_certificate_verifies(seed in 0u64..10_000) {
        let case = random_case(seed);
        let rep = verify_dichotomy(
            &case.model.system,
            &case.model.projections,
            &case.rate,
            &case.nu,
            &case.fit.certificate,
            &VerifyOptions::default(),
        )
        .unwrap();
        prop_assert!(rep.pass, "{}: slack {}", case.describe(), rep.max_slack);
    }

    #[test]
    fn green_kernel_jump(seed in 0u64..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let case = random_case(seed);
        let sys = &case.model.system;
        let g = GreenKernel::new(sys, &case.model.projections).unwrap();
        let w = sys.window();
        let n = w.min + 1 + (a * (w.len() - 2) as f64).round() as i64;
        let m = w.min + (b * (w.len() - 2) as f64).round() as i64;
        let next = g.green(m + 1, n).unwrap();
        let pushed = sys.matrix(m).mul(&g.green(m, n).unwrap());
        if m + 1 == n {
            let jump = next.to_dense() - pushed.to_dense();
            let id = DMatrix::<f64>::identity(sys.dim(), sys.dim());
            prop_assert!((jump - id).norm() < 1e-8);
        } else {
            prop_assert!(scaled_rel_diff(&next, &pushed) < 1e-9);
        }
    }

    #[test]
    fn solver_matches_oracle(seed in 10_000u64..20_000) {
        let case = random_case(seed);
        let sys = &case.model.system;
        let proj = &case.model.projections;
        let bnd = Boundary::from_projections(sys, proj);
        let rep = solve_admissibility(sys, proj, &case.y, case.beta, &case.rate, &case.nu, &bnd).unwrap();
        let x: Sequence = rep.solution.iter().map(|v| DVector::from_vec(v.clone())).collect();
        let oracle = oracle_solve_weighted(sys, proj, &case.y, &bnd, Some((&case.rate, case.beta))).unwrap();
        let err = weighted_relative_error(&x, &oracle, &case.rate, case.beta).unwrap();
        prop_assert!(err <= 1e-8, "{}: {err}", case.describe());
        prop_assert!(rep.max_residual <= 1e-10);
    }

    #[test]
    fn graph_operator_inverts_solve(seed in 20_000u64..30_000) {
        let case = random_case(seed);
        let sys = &case.model.system;
        let proj = &case.model.projections;
        let bnd = Boundary::from_projections(sys, proj);
        let rep = solve_admissibility(sys, proj, &case.y, case.beta, &case.rate, &case.nu, &bnd).unwrap();
        let x: Sequence = rep.solution.iter().map(|v| DVector::from_vec(v.clone())).collect();
        let ax = apply_graph_operator(&GraphNormOperator::a_beta(sys), &x).unwrap();
        let mut diff: Sequence = ax.iter().zip(&case.y).map(|(a, y)| a - y).collect();
        diff[0] = DVector::zeros(sys.dim());
        let spec = WeightedNormSpec::l1(case.beta);
        let e = log_norm(&diff, &spec, &case.rate, Some(&case.nu)).unwrap();
        let y = log_norm(&case.y, &spec, &case.rate, Some(&case.nu)).unwrap();
        prop_assert!(e - y < (1e-9f64).ln(), "{}: {}", case.describe(), (e - y).exp());
    }

    #[test]
    fn perturbation_norms_saturate(seed in 0u64..10_000, log_c in -6.0f64..0.0) {
        let case = random_case(seed);
        let spec = PerturbationSpec::new(log_c.exp(), case.beta, seed);
        let p = make_perturbation(&case.model.system, &case.rate, &case.nu, &spec, Some(&case.fit.certificate))
            .unwrap();
        for (b, lr) in p.matrices.iter().zip(&p.log_rho) {
            let got = spectral_norm(&b.mat).ln() + b.log_scale.to_f64();
            prop_assert!((got - lr).abs() <= 1e-12 * (1.0 + lr.abs()));
        }
    }
}
