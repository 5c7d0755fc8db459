//! Property tests of the information geometry and the bracketing bounds,
//! checked against direct linear algebra in nalgebra.

use nalgebra::{DMatrix, DVector};
use profilik_core::brackets::{bracket_eval, bracket_matrices, sup_bracket, sup_bracket_constrained};
use profilik_core::estimator::{profile_fit, OptimizerSettings};
use profilik_core::infogeom::{block_split, efficient_score, identifiability_report, schur_complement};
use profilik_core::model::{make_logistic_iid, DesignSpec};
use profilik_core::{BlockInfoPair, ParamVector, QuasiLikelihoodModel, SymMatrix};
use proptest::prelude::*;

/// `AAᵀ + cI` from a flat list of entries; exactly symmetric.
fn spd(d: usize, entries: &[f64], ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |i, j| entries[i * d + j]);
    let m = &a * a.transpose() + DMatrix::identity(d, d) * ridge;
    (&m + m.transpose()) * 0.5
}

fn sym(m: DMatrix<f64>) -> SymMatrix {
    SymMatrix::new(m).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Problem of dimension `d ∈ 2..=6` with split `p ∈ 1..d`.
fn problem() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|d| {
        (
            Just(d),
            1..d,
            proptest::collection::vec(-1.0f64..1.0, d * d),
            proptest::collection::vec(-3.0f64..3.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schur_complement_is_the_partial_minimum((d, p, e, v) in problem()) {
        let m = spd(d, &e, 0.5);
        let s = schur_complement(&sym(m.clone()), p).unwrap();
        let a = DVector::from_fn(p, |i, _| v[i]);
        // min over η of [a; η]ᵀ M [a; η], at η = −M_ee⁻¹ M_eθ a.
        let m_ee = m.view((p, p), (d - p, d - p)).into_owned();
        let m_et = m.view((p, 0), (d - p, p)).into_owned();
        let eta = -m_ee.cholesky().unwrap().solve(&(m_et * &a));
        let mut full = DVector::zeros(d);
        full.rows_mut(0, p).copy_from(&a);
        full.rows_mut(p, d - p).copy_from(&eta);
        let direct = (full.transpose() * &m * &full)[(0, 0)];
        prop_assert!(rel_close(s.quad_form(&a), direct, 1e-9));
    }

    #[test]
    fn efficient_score_splits_the_bracket_supremum((d, p, e, v) in problem()) {
        let m = sym(spd(d, &e, 0.5));
        let info = BlockInfoPair::matched(m.clone(), p).unwrap();
        let grad = DVector::from_column_slice(&v);
        let xi = efficient_score(&info, &grad).unwrap().xi;
        let h = info.d_blocks().ee;
        let lhs = sup_bracket(&m, &grad).unwrap() - sup_bracket_constrained(&h, &grad.rows(p, d - p).into_owned()).unwrap();
        prop_assert!(rel_close(lhs, 0.5 * xi.norm_squared(), 1e-9));
    }

    #[test]
    fn nu_hat_is_scale_invariant((d, p, e, _v) in problem(), c in 1e-3f64..1e3) {
        let info = BlockInfoPair::matched(sym(spd(d, &e, 0.5)), p).unwrap();
        let a = identifiability_report(&info).unwrap().nu_hat;
        let b = identifiability_report(&info.scale(c)).unwrap().nu_hat;
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert!((0.0..1.0).contains(&a));
    }

    #[test]
    fn blocks_reassemble_exactly((d, p, e, _v) in problem()) {
        let m = sym(spd(d, &e, 0.1));
        prop_assert_eq!(block_split(&m, p).unwrap().reassemble(), m);
    }

    #[test]
    fn brackets_are_loewner_ordered((d, p, e, _v) in problem(), delta in 0.0f64..0.5, rho in 0.0f64..0.5) {
        let d2 = sym(spd(d, &e, 1.0));
        let v2 = sym(spd(d, &e, 0.3));
        let info = BlockInfoPair::new(d2.clone(), v2, p).unwrap();
        let br = bracket_matrices(&info, delta, rho);
        prop_assert!(br.d_up.loewner_le(&d2));
        prop_assert!(d2.loewner_le(&br.d_dn));
        let h0 = info.d_blocks().ee;
        prop_assert!(br.h_up.loewner_le(&h0));
        prop_assert!(h0.loewner_le(&br.h_dn));
    }

    #[test]
    fn sup_bracket_is_the_maximum((d, _p, e, v) in problem(), pert in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let m = spd(d, &e, 0.5);
        let d2 = sym(m.clone());
        let grad = DVector::from_column_slice(&v);
        let truth = DVector::zeros(d);
        let argmax = m.cholesky().unwrap().solve(&grad);
        let sup = sup_bracket(&d2, &grad).unwrap();
        prop_assert!(rel_close(bracket_eval(&argmax, &truth, &grad, &d2).unwrap(), sup, 1e-9));
        let other = &argmax + DVector::from_fn(d, |i, _| pert[i]);
        prop_assert!(bracket_eval(&other, &truth, &grad, &d2).unwrap() <= sup + 1e-9 * (1.0 + sup));
    }
}

#[test]
fn degenerate_split_residual_is_the_full_expansion_residual() {
    let d = 3;
    let truth = ParamVector::from_slice(&[0.3, -0.2, 0.1], d).unwrap();
    let m = make_logistic_iid(800, d, d, truth.clone(), DesignSpec::StandardGaussian, 5).unwrap();
    let fit = profile_fit(&m, &OptimizerSettings::default()).unwrap();
    assert!(fit.converged());
    // ‖D₀(υ̃ − υ*) − D₀⁻¹∇L(υ*)‖ with D₀ from a direct eigendecomposition.
    let d2 = m.info_pair().d2().matrix().clone();
    let eig = d2.symmetric_eigen();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
    let inv_root = root.clone().try_inverse().unwrap();
    let grad = m.grad(truth.values());
    let resid = &root * (fit.upsilon_hat.values() - truth.values()) - inv_root * grad;
    assert!((fit.fisher_residual - resid.norm()).abs() <= 1e-9 * (1.0 + resid.norm()));
}
