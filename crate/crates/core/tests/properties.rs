mod common;

use gfetld::baselines::rmse;
use gfetld::ensemble::{affine_transform, ensemble_covariance, ensemble_mean, AffineDirection, ParticleEnsemble};
use gfetld::kernel::{eval_kernel, median_heuristic_bandwidth, mmd2_unbiased, mmd2_vstat, KernelSpec, SampleBatch};
use gfetld::models::{contaminate_indexed, lorenz96_drift, ContaminationSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(max_rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), 2..=max_rows)
}

fn rows_to_batch(rows: &[Vec<f64>]) -> SampleBatch {
    SampleBatch::from_rows(rows).unwrap()
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded(x in prop::collection::vec(-5.0..5.0f64, 3), y in prop::collection::vec(-5.0..5.0f64, 3), g in 0.1..5.0f64) {
        let k = KernelSpec::new(g).unwrap();
        let a = eval_kernel(&x, &y, &k).unwrap();
        prop_assert_eq!(a, eval_kernel(&y, &x, &k).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(eval_kernel(&x, &x, &k).unwrap(), 1.0);
    }

    #[test]
    fn mmd_estimators_match_double_loops((x, y) in (1usize..4).prop_flat_map(|d| (batch(8, d), batch(8, d))), g in 0.3..3.0f64) {
        let k = KernelSpec::new(g).unwrap();
        let (bx, by) = (rows_to_batch(&x), rows_to_batch(&y));
        let scale = common::mmd_scale(&x, &y, g);
        let u = mmd2_unbiased(&bx, &by, &k).unwrap();
        prop_assert!((u - common::brute_mmd2_u(&x, &y, g)).abs() <= 1e-12 * scale);
        let v = mmd2_vstat(&bx, &by, &k).unwrap();
        prop_assert!((v - common::brute_mmd2_v(&x, &y, g).max(0.0)).abs() <= 1e-12 * scale);
        prop_assert!(v >= 0.0);
        prop_assert!((u - mmd2_unbiased(&by, &bx, &k).unwrap()).abs() <= 1e-12 * scale);
    }

    #[test]
    fn median_bandwidth_scales_with_data(x in batch(12, 2), c in 0.1..10.0f64) {
        prop_assume!(x.windows(2).any(|w| w[0] != w[1]));
        let Ok(base) = median_heuristic_bandwidth(&rows_to_batch(&x)) else { return Ok(()); };
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let s = median_heuristic_bandwidth(&rows_to_batch(&scaled)).unwrap();
        prop_assert!(common::rel_close(s.bandwidth(), c * base.bandwidth(), 1e-10));
    }

    #[test]
    fn covariance_is_psd_and_translation_invariant(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 2..12), shift in prop::collection::vec(-5.0..5.0f64, 3)) {
        let ens = ParticleEnsemble::from_rows(&rows).unwrap();
        let c = ensemble_covariance(&ens);
        prop_assert!((&c - c.transpose()).abs().max() < 1e-14);
        let eig = c.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > -1e-10);
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let c2 = ensemble_covariance(&ParticleEnsemble::from_rows(&moved).unwrap());
        prop_assert!((c2 - c).abs().max() < 1e-9);
    }

    #[test]
    fn affine_map_round_trips(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 2..10), a in prop::collection::vec(-2.0..2.0f64, 4), b in prop::collection::vec(-1.0..1.0f64, 2)) {
        let a = DMatrix::from_row_slice(2, 2, &a);
        prop_assume!(a.determinant().abs() > 0.1);
        let b = DVector::from_vec(b);
        let ens = ParticleEnsemble::from_rows(&rows).unwrap();
        let fwd = affine_transform(&ens, &a, &b, AffineDirection::Forward).unwrap();
        let mean = ensemble_mean(&fwd);
        let want = &a * ensemble_mean(&ens) + &b;
        prop_assert!((mean - want).abs().max() < 1e-10);
        let back = affine_transform(&fwd, &a, &b, AffineDirection::Inverse).unwrap();
        prop_assert!((back.matrix() - ens.matrix()).abs().max() < 1e-8);
    }

    #[test]
    fn contamination_replaces_exactly_round_eps_n(n in 1usize..300, eps in 0.0..=1.0f64, seed in any::<u64>()) {
        let clean = SampleBatch::from_scalars(&vec![0.0; n]).unwrap();
        let spec = ContaminationSpec::new(eps, 10.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, idx) = contaminate_indexed(&clean, &spec, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), (eps * n as f64).round() as usize);
        prop_assert_eq!(out.rows(), n);
        let changed = out.values().iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(changed, idx.len());
    }

    #[test]
    fn lorenz_drift_is_cyclically_equivariant(y in prop::collection::vec(-10.0..10.0f64, 8), g in prop::collection::vec(-2.0..2.0f64, 8), s in 0usize..8) {
        let base = lorenz96_drift(&y, 10.0, &g).unwrap();
        let mut yr = y.clone();
        let mut gr = g.clone();
        yr.rotate_left(s);
        gr.rotate_left(s);
        let mut want = base.clone();
        want.rotate_left(s);
        prop_assert_eq!(lorenz96_drift(&yr, 10.0, &gr).unwrap(), want);
    }

    #[test]
    fn rmse_is_nonnegative_and_order_free(mut est in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 1..10)) {
        let truth = [0.5, -0.5];
        let a = rmse(&est, &truth).unwrap();
        prop_assert!(a.iter().all(|v| *v >= 0.0));
        est.reverse();
        let b = rmse(&est, &truth).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(common::rel_close(*x, *y, 1e-12));
        }
    }
}
