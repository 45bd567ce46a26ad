//! Self-supervised dictionary learning.
//!
//! After inference on an image, every layer of a pathway steps its kernels
//! along the negative gradient of `½‖x - x̂‖²`. For level `k` this gradient
//! correlates the residual projected up to level `k`'s input domain with the
//! level's effective code `a_k + Φ_{k+1}(a_{k+1} + …)`, a local Hebbian
//! product of pre- and post-synaptic activity. Kernels are renormalised to
//! unit length after each step.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{extract_patch, DictionaryLayer};
use crate::error::{MdcaError, Result};
use crate::lca::LcaParams;
use crate::network::{analyze_chain, infer, nested_codes, NetworkConfig, PathwaySpec};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    /// Inference steps run on each image before its dictionary update.
    pub infer_timesteps: usize,
    /// Images whose gradients are averaged into one update.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            infer_timesteps: 400,
            batch_size: 1,
            epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and freezes the dictionaries.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(MdcaError::InvalidConfig(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.infer_timesteps == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(MdcaError::InvalidConfig(
                "infer_timesteps, batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Descent direction for the weights of `d`: the correlation of `residual`
/// (in `d`'s input domain) with each feature map of `code`, laid out like
/// [`DictionaryLayer::weights`]. Adding a small multiple of it lowers
/// `½‖residual‖²`.
pub fn dict_gradient(
    residual: &ImageTensor,
    code: &ImageTensor,
    d: &DictionaryLayer,
) -> Result<Vec<f32>> {
    if residual.channels() != d.in_channels() || code.channels() != d.num_features() {
        return Err(MdcaError::ShapeMismatch(format!(
            "gradient: residual {} / code {} do not fit dictionary",
            residual.shape(),
            code.shape()
        )));
    }
    let g = d.geometry(residual.height(), residual.width())?;
    if code.height() != g.output_h() || code.width() != g.output_w() {
        return Err(MdcaError::ShapeMismatch(format!(
            "gradient: code {} does not match residual {} at stride {}",
            code.shape(),
            residual.shape(),
            d.stride()
        )));
    }
    let klen = d.kernel_len();
    let mut acc = vec![0.0f64; d.num_features() * klen];
    let mut patch = vec![0.0f32; klen];
    for oi in 0..g.output_h() {
        for oj in 0..g.output_w() {
            let px = code.pixel(oi, oj);
            if px.iter().all(|&v| v == 0.0) {
                continue;
            }
            extract_patch(residual, &g, oi, oj, &mut patch);
            for (f, &coef) in px.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                let coef = coef as f64;
                for (gk, &p) in acc[f * klen..(f + 1) * klen].iter_mut().zip(&patch) {
                    *gk += coef * p as f64;
                }
            }
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// `Φ ← Φ + lr·grad`, then renormalise every stepped kernel to unit norm.
///
/// Kernels with an all-zero gradient are left untouched. A kernel that
/// collapses to zero norm is replaced by a fresh random unit kernel. Returns
/// the number of kernels replaced.
pub fn apply_update<R: Rng + ?Sized>(
    d: &mut DictionaryLayer,
    grad: &[f32],
    lr: f32,
    rng: &mut R,
) -> Result<usize> {
    if grad.len() != d.weights().len() {
        return Err(MdcaError::ShapeMismatch(format!(
            "gradient has {} entries, dictionary has {}",
            grad.len(),
            d.weights().len()
        )));
    }
    if !(lr >= 0.0) {
        return Err(MdcaError::InvalidConfig("learning rate must be nonnegative".into()));
    }
    if lr == 0.0 {
        return Ok(0);
    }
    let klen = d.kernel_len();
    let mut resampled = 0;
    for f in 0..d.num_features() {
        let gk = &grad[f * klen..(f + 1) * klen];
        if gk.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (w, &gv) in d.kernel_mut(f).iter_mut().zip(gk) {
            *w += lr * gv;
        }
        if !d.normalize_kernel(f) {
            warn!("kernel {f} collapsed to zero norm; resampling");
            d.resample_kernel(f, rng);
            resampled += 1;
        }
    }
    Ok(resampled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_recon_mse: f64,
    pub mean_percent_active: f64,
}

/// Gradients for every level of a single-pathway network at its final
/// inference state, plus the reconstruction MSE and fraction of active units.
pub fn pathway_gradients(
    x: &ImageTensor,
    net: &NetworkConfig,
) -> Result<(Vec<Vec<f32>>, f64, f64)> {
    let pathway = &net.pathways[0];
    let (state, _) = infer(x, net, &[], net.lca.timesteps)?;
    let codes = nested_codes(pathway, &state.states[0])?;
    let drives = analyze_chain(&state.residual, pathway)?;
    let mut grads = Vec::with_capacity(pathway.depth());
    for (k, layer) in pathway.layers.iter().enumerate() {
        let residual = if k == 0 { &state.residual } else { &drives[k - 1] };
        grads.push(dict_gradient(residual, &codes[k], layer)?);
    }
    let (active, total) = state.states[0].iter().fold((0usize, 0usize), |(a, t), s| {
        (a + s.a.count_nonzero(), t + s.a.len())
    });
    Ok((grads, state.residual.mean_sq(), active as f64 / total as f64))
}

/// Trains all levels of one pathway jointly on `images`, which must share a
/// shape. Each image is inferred with the pathway alone (no competition),
/// then the dictionaries are updated from the end-of-inference residual.
pub fn train_pathway(
    images: &[ImageTensor],
    pathway: PathwaySpec,
    lca: &LcaParams,
    layer_lambdas: &[f32],
    cfg: &TrainConfig,
) -> Result<(PathwaySpec, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let first = images
        .first()
        .ok_or_else(|| MdcaError::Empty("training set is empty".into()))?;
    if let Some(bad) = images.iter().position(|x| x.shape() != first.shape()) {
        return Err(MdcaError::ShapeMismatch(format!(
            "training image {bad} has shape {}, expected {}",
            images[bad].shape(),
            first.shape()
        )));
    }
    let lca = LcaParams {
        timesteps: cfg.infer_timesteps,
        ..*lca
    };
    let mut net = NetworkConfig::new(vec![pathway], first.shape(), lca, layer_lambdas.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut mse_sum, mut active_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut total: Option<Vec<Vec<f32>>> = None;
            for &i in batch {
                let (grads, mse, active) = pathway_gradients(&images[i], &net)?;
                mse_sum += mse;
                active_sum += active;
                match &mut total {
                    None => total = Some(grads),
                    Some(t) => {
                        for (tk, gk) in t.iter_mut().zip(&grads) {
                            tk.iter_mut().zip(gk).for_each(|(a, b)| *a += *b);
                        }
                    }
                }
            }
            let lr = cfg.learning_rate / batch.len() as f32;
            let grads = total.expect("chunks are nonempty");
            for (layer, g) in net.pathways[0].layers.iter_mut().zip(&grads) {
                apply_update(layer, g, lr, &mut rng)?;
            }
        }
        let n = images.len() as f64;
        let m = EpochMetrics {
            epoch,
            mean_recon_mse: mse_sum / n,
            mean_percent_active: active_sum / n,
        };
        info!(
            "pathway {:?} epoch {epoch}: recon mse {:.6}, active {:.4}",
            net.pathways[0].name, m.mean_recon_mse, m.mean_percent_active
        );
        log.push(m);
    }
    let trained = net.pathways.pop().expect("one pathway");
    Ok((trained, log))
}

/// Writes per-epoch metrics as CSV.
pub fn write_metrics_csv<W: std::io::Write>(
    out: W,
    pathway: &str,
    metrics: &[EpochMetrics],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pathway", "epoch", "mean_recon_mse", "mean_percent_active"])?;
    for m in metrics {
        w.write_record([
            pathway.to_string(),
            m.epoch.to_string(),
            m.mean_recon_mse.to_string(),
            m.mean_percent_active.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
