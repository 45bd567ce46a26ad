//! Fixtures shared by the criterion benches: seeded random inputs and
//! networks built from a [`RunConfig`].

use mdca::{ImageTensor, NetworkConfig, NetworkState, PathwaySpec, Result, RunConfig, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in `[-0.5, 0.5)`.
pub fn random_tensor(shape: Shape, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.len()).map(|_| rng.gen::<f32>() - 0.5).collect();
    ImageTensor::new(shape.height, shape.width, shape.channels, data).expect("shape matches data")
}

/// A network with `pathways` randomly initialised pathways in the
/// configured geometry.
pub fn random_network(cfg: &RunConfig, pathways: usize, seed: u64) -> Result<NetworkConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = cfg.geometry();
    let specs = (0..pathways)
        .map(|i| PathwaySpec::random(format!("p{i}"), cfg.image_c, &geometry, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    cfg.network(specs)
}

/// Network state after `steps` updates on `x`, so that benchmarks see a
/// realistic mix of active and silent units.
pub fn warmed_state(x: &ImageTensor, net: &NetworkConfig, steps: usize) -> Result<NetworkState> {
    let mut state = NetworkState::zeros(x, net)?;
    for _ in 0..steps {
        state = mdca::mdca_step(x, &state, net, &[])?;
    }
    Ok(state)
}

/// The configuration shipped in `configs/` under `name`.
pub fn shipped_config(name: &str) -> RunConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    RunConfig::load(&path).expect("shipped config parses")
}
