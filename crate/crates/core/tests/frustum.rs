use catbev_core::diagnostics::{gradcheck, GRADCHECK_EPS, GRADCHECK_TOL};
use catbev_core::frustum::{
    drop_overflow_bin, lift, lift_backward, softmax_backward, softmax_normalize, DepthDistribution,
};
use catbev_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape.to_vec(), v).unwrap())
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let logits = Tensor::<f64>::from_fn(&[3, 3, 8], |_| rng.gen_range(-5.0..5.0)).unwrap();
    let p = softmax_normalize(&logits).unwrap();
    for (px, lx) in p.values().data().chunks(8).zip(logits.data().chunks(8)) {
        let z: f64 = lx.iter().map(|l| l.exp()).sum();
        for (a, l) in px.iter().zip(lx) {
            assert!((a - l.exp() / z).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let logits = Tensor::new(vec![1, 1, 3], vec![1000.0f32, 999.0, -1000.0]).unwrap();
    let p = softmax_normalize(&logits).unwrap();
    assert!(p.values().data().iter().all(|v| v.is_finite()));
    p.check_normalized(1e-6).unwrap();
    let bad = Tensor::new(vec![1, 1, 2], vec![f32::NAN, 0.0]).unwrap();
    assert!(softmax_normalize(&bad).is_err());
}

#[test]
fn overflow_bin_is_dropped_without_renormalizing() {
    let k = 6;
    let uniform = DepthDistribution::new(Tensor::filled(&[2, 3, k + 1], 1.0 / (k + 1) as f64).unwrap()).unwrap();
    let cut = drop_overflow_bin(&uniform, k).unwrap();
    assert_eq!(cut.num_bins(), k);
    for px in cut.values().data().chunks(k) {
        assert!(px.iter().all(|&v| v == 1.0 / (k + 1) as f64));
        assert!((px.iter().sum::<f64>() - k as f64 / (k + 1) as f64).abs() < 1e-12);
    }
    assert!(drop_overflow_bin(&uniform, k + 1).is_err());
}

#[test]
fn uniform_softmax_has_no_gradient() {
    let p = DepthDistribution::new(Tensor::filled(&[2, 2, 5], 0.2f64).unwrap()).unwrap();
    let g = softmax_backward(&p, &Tensor::filled(&[2, 2, 5], 1.3).unwrap()).unwrap();
    assert!(g.data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn lift_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (w, h, d, c) = (2, 3, 4, 3);
    let dist = Tensor::from_fn(&[w, h, d], |_| rng.gen_range(0.0..1.0)).unwrap();
    let feat = Tensor::from_fn(&[w, h, c], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let up = Tensor::from_fn(&[w, h, d, c], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let objective = |p: &Tensor<f64>, f: &Tensor<f64>| -> catbev_core::Result<f64> {
        let g = lift(&DepthDistribution::new(p.clone())?, f)?;
        Ok(g.values().data().iter().zip(up.data()).map(|(a, b)| a * b).sum())
    };
    let (gd, gf) = lift_backward(&DepthDistribution::new(dist.clone()).unwrap(), &feat, &up).unwrap();
    let a = gradcheck(|p| objective(p, &feat), &gd, &dist, GRADCHECK_EPS).unwrap();
    let b = gradcheck(|f| objective(&dist, f), &gf, &feat, GRADCHECK_EPS).unwrap();
    assert!(a.max_rel_error <= GRADCHECK_TOL && b.max_rel_error <= GRADCHECK_TOL, "{a:?} {b:?}");
}

#[test]
fn lift_rejects_pixel_mismatch() {
    let p = DepthDistribution::new(Tensor::filled(&[2, 2, 3], 1.0f32 / 3.0).unwrap()).unwrap();
    assert!(lift(&p, &Tensor::zeros(&[2, 3, 4]).unwrap()).is_err());
}

proptest! {
    // Spreads beyond ~36 nats round the top probability to exactly 1 in f64.
    #[test]
    fn softmax_is_interior_and_shift_invariant(
        logits in tensor(&[2, 2, 6], -15.0, 15.0),
        shifts in prop::collection::vec(-50.0..50.0f64, 4),
    ) {
        let p = softmax_normalize(&logits).unwrap();
        prop_assert!(p.values().data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mut shifted = logits.clone();
        for (px, s) in shifted.data_mut().chunks_mut(6).zip(&shifts) {
            px.iter_mut().for_each(|v| *v += s);
        }
        let q = softmax_normalize(&shifted).unwrap();
        for (a, b) in p.values().data().iter().zip(q.values().data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn lift_is_linear_in_features(
        dist in tensor(&[3, 2, 4], 0.0, 1.0),
        f1 in tensor(&[3, 2, 2], -3.0, 3.0),
        f2 in tensor(&[3, 2, 2], -3.0, 3.0),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let p = DepthDistribution::new(dist).unwrap();
        let mix = Tensor::from_fn(&[3, 2, 2], |i| a * f1.data()[i] + b * f2.data()[i]).unwrap();
        let lm = lift(&p, &mix).unwrap();
        let (l1, l2) = (lift(&p, &f1).unwrap(), lift(&p, &f2).unwrap());
        for i in 0..lm.values().len() {
            let want = a * l1.values().data()[i] + b * l2.values().data()[i];
            prop_assert!((lm.values().data()[i] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn lift_conserves_unnormalized_mass(dist in tensor(&[2, 2, 5], 0.0, 2.0), feat in tensor(&[2, 2, 3], -3.0, 3.0)) {
        let g = lift(&DepthDistribution::new(dist.clone()).unwrap(), &feat).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                let mass: f64 = (0..5).map(|k| dist.get(&[u, v, k])).sum();
                for c in 0..3 {
                    let s: f64 = (0..5).map(|k| g.values().get(&[u, v, k, c])).sum();
                    prop_assert!((s - feat.get(&[u, v, c]) * mass).abs() <= 1e-9);
                }
            }
        }
    }
}
