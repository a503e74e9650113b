use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rotdet_core::rep::{branch_forward, fuse};
use rotdet_core::selfcheck::random_rep_block;

fn max_abs_diff(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

#[test]
fn fused_block_matches_branches_on_random_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..100 {
        let c = rng.gen_range(1..6);
        let w = random_rep_block(&mut rng, c, i % 2 == 0);
        let x = Array4::from_shape_fn((2, c, 5, 7), |_| rng.gen_range(-2.0..2.0));
        let fused = fuse(&w).unwrap();
        assert!(max_abs_diff(&fused.forward(&x).unwrap(), &branch_forward(&w, &x).unwrap()) <= 1e-9);
        assert_eq!(fused.num_params(), c * c * 9 + c);
    }
}

#[test]
fn fused_kernel_is_affine_in_the_gates() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let mut w = random_rep_block(&mut rng, 3, true);
        let base = fuse(&w).unwrap();
        let h = 1e-3;
        w.alpha1 += h;
        let up = fuse(&w).unwrap();
        w.alpha1 += h;
        let up2 = fuse(&w).unwrap();
        // constant first difference means zero second difference
        for ((a, b), c) in base.kernel.iter().zip(up.kernel.iter()).zip(up2.kernel.iter()) {
            assert!((c - 2.0 * b + a).abs() <= 1e-12);
        }
    }
}

#[test]
fn identity_branch_requires_matching_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut w = random_rep_block(&mut rng, 2, false);
    w.k3 = Array4::zeros((3, 2, 3, 3));
    assert!(fuse(&w).is_err());
}
