use mdca::synthetic::{bar_generators, bar_image};
use mdca::{train_pathway, LayerGeometry, LcaParams, PathwaySpec, ThresholdKind, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn learned_kernels_align_with_generating_bars() {
    let (size, kernel, stride) = (16, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let images: Vec<_> = (0..200).map(|_| bar_image(&mut rng, size, kernel, stride)).collect();
    let g = [LayerGeometry { num_features: 8, kernel, stride }];
    let init = PathwaySpec::random("bars", 1, &g, &mut rng).unwrap();
    let lca = LcaParams { lambda: 0.1, timesteps: 100, kind: ThresholdKind::Soft, ..LcaParams::default() };
    let cfg = TrainConfig { learning_rate: 0.05, infer_timesteps: 100, batch_size: 1, epochs: 10, seed: 4 };
    let (trained, _) = train_pathway(&images, init, &lca, &[], &cfg).unwrap();
    let layer = &trained.layers[0];
    for (b, bar) in bar_generators(kernel).iter().enumerate() {
        let best = (0..layer.num_features())
            .map(|f| layer.kernel(f).iter().zip(bar).map(|(a, b)| a * b).sum::<f32>())
            .fold(f32::NEG_INFINITY, f32::max);
        assert!(best >= 0.8, "bar {b}: best normalized inner product {best}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn kernels_stay_unit_norm(seed in any::<u64>(), lr in 0.0f32..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<_> = (0..4).map(|_| bar_image(&mut rng, 16, 8, 4)).collect();
        let g = [
            LayerGeometry { num_features: 4, kernel: 8, stride: 4 },
            LayerGeometry { num_features: 3, kernel: 4, stride: 4 },
        ];
        let init = PathwaySpec::random("p", 1, &g, &mut rng).unwrap();
        let cfg = TrainConfig { learning_rate: lr, infer_timesteps: 20, batch_size: 2, epochs: 1, seed };
        let (trained, _) = train_pathway(&images, init, &LcaParams::default(), &[], &cfg).unwrap();
        for layer in &trained.layers {
            for f in 0..layer.num_features() {
                prop_assert!((layer.kernel_norm(f) - 1.0).abs() < 1e-4);
            }
        }
    }
}
