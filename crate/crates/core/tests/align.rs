mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simeval_core::align::{estimate_sim3, CorrespondenceSet, Sim3};
use simeval_core::math::Vec3;

fn sim3(rng: &mut ChaCha8Rng) -> Sim3 {
    Sim3::new(rng.gen_range(0.1..10.0), random_rotation(rng), Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 4.0)
}

proptest! {
    #[test]
    fn noiseless_pairs_are_recovered(seed in any::<u64>(), n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = sim3(&mut rng);
        let pairs: Vec<(Vec3, Vec3)> = (0..n)
            .map(|_| {
                let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                (p, truth.apply_point(&p))
            })
            .collect();
        let (est, rms) = estimate_sim3(&CorrespondenceSet::new(pairs)).unwrap();
        prop_assert!((est.scale / truth.scale - 1.0).abs() < 1e-9);
        prop_assert!(est.rotation.angle_to(&truth.rotation) < 1e-8);
        prop_assert!(rms < 1e-9 * truth.scale.max(1.0));
    }

    #[test]
    fn compose_and_inverse_agree_with_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (sim3(&mut rng), sim3(&mut rng));
        let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let ab = a.compose(&b);
        prop_assert!((ab.apply_point(&p) - a.apply_point(&b.apply_point(&p))).norm() < 1e-9);
        prop_assert!((a.inverse().apply_point(&a.apply_point(&p)) - p).norm() < 1e-9);
    }
}
