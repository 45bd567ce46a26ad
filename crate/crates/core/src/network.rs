//! Multipath, multiscale competitive inference.
//!
//! Every layer `k` of every pathway `m` contributes `Φ_{m,1}…Φ_{m,k} a_{m,k}`
//! to one shared reconstruction. All layers are driven by the same image
//! residual, projected up through their pathway, so they compete for what is
//! left unexplained.
//!
//! Levels are 0-based throughout the API: level 0 is the layer that touches
//! the image.

use crate::analysis::{trace_record, TraceRecord};
use crate::conv::{analyze, synthesize, DictionaryLayer};
use crate::error::{MdcaError, Result};
use crate::lca::{euler_update, LayerState, LcaParams};
use crate::tensor::{ImageTensor, Shape};

/// One independently trained hierarchy of dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwaySpec {
    pub name: String,
    pub layers: Vec<DictionaryLayer>,
}

/// Geometry of one level, used to build fresh pathways.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub num_features: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl PathwaySpec {
    pub fn new(name: impl Into<String>, layers: Vec<DictionaryLayer>) -> Result<Self> {
        let p = Self {
            name: name.into(),
            layers,
        };
        if p.layers.is_empty() {
            return Err(MdcaError::InvalidConfig(format!(
                "pathway {:?} has no layers",
                p.name
            )));
        }
        for (k, pair) in p.layers.windows(2).enumerate() {
            if pair[1].in_channels() != pair[0].num_features() {
                return Err(MdcaError::InvalidConfig(format!(
                    "pathway {:?}: level {} expects {} input channels but level {} has {} features",
                    p.name,
                    k + 1,
                    pair[1].in_channels(),
                    k,
                    pair[0].num_features()
                )));
            }
        }
        Ok(p)
    }

    /// Randomly initialised unit-norm dictionaries for the given geometry.
    pub fn random<R: rand::Rng + ?Sized>(
        name: impl Into<String>,
        image_channels: usize,
        geometry: &[LayerGeometry],
        rng: &mut R,
    ) -> Result<Self> {
        let mut in_ch = image_channels;
        let mut layers = Vec::with_capacity(geometry.len());
        for g in geometry {
            layers.push(DictionaryLayer::random(
                g.num_features,
                g.kernel,
                g.kernel,
                in_ch,
                g.stride,
                rng,
            )?);
            in_ch = g.num_features;
        }
        Self::new(name, layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.num_features() == b.num_features()
                    && a.kernel_h() == b.kernel_h()
                    && a.kernel_w() == b.kernel_w()
                    && a.in_channels() == b.in_channels()
                    && a.stride() == b.stride()
            })
    }
}

/// Pathways plus the image geometry and dynamics they run under.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub pathways: Vec<PathwaySpec>,
    pub image: Shape,
    pub lca: LcaParams,
    /// Per-level thresholds; empty means `lca.lambda` everywhere.
    pub layer_lambdas: Vec<f32>,
    level_shapes: Vec<Shape>,
}

impl NetworkConfig {
    pub fn new(
        pathways: Vec<PathwaySpec>,
        image: Shape,
        lca: LcaParams,
        layer_lambdas: Vec<f32>,
    ) -> Result<Self> {
        lca.validate()?;
        let first = pathways
            .first()
            .ok_or_else(|| MdcaError::InvalidConfig("network needs at least one pathway".into()))?;
        for p in &pathways[1..] {
            if !p.same_geometry(first) {
                return Err(MdcaError::InvalidConfig(format!(
                    "pathway {:?} geometry differs from pathway {:?}",
                    p.name, first.name
                )));
            }
        }
        if first.layers[0].in_channels() != image.channels {
            return Err(MdcaError::InvalidConfig(format!(
                "image has {} channels, first layer expects {}",
                image.channels,
                first.layers[0].in_channels()
            )));
        }
        if !layer_lambdas.is_empty() && layer_lambdas.len() != first.depth() {
            return Err(MdcaError::InvalidConfig(format!(
                "{} per-layer lambdas given for {} levels",
                layer_lambdas.len(),
                first.depth()
            )));
        }
        if layer_lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(MdcaError::InvalidConfig("per-layer lambdas must be nonnegative".into()));
        }
        let mut level_shapes = Vec::with_capacity(first.depth());
        let (mut h, mut w) = (image.height, image.width);
        for layer in &first.layers {
            let s = layer.activation_shape(h, w)?;
            h = s.height;
            w = s.width;
            level_shapes.push(s);
        }
        Ok(Self {
            pathways,
            image,
            lca,
            layer_lambdas,
            level_shapes,
        })
    }

    pub fn num_pathways(&self) -> usize {
        self.pathways.len()
    }

    pub fn depth(&self) -> usize {
        self.level_shapes.len()
    }

    pub fn level_shape(&self, level: usize) -> Shape {
        self.level_shapes[level]
    }

    pub fn lambda(&self, level: usize) -> f32 {
        self.layer_lambdas
            .get(level)
            .copied()
            .unwrap_or(self.lca.lambda)
    }

    pub fn pathway_index(&self, name: &str) -> Option<usize> {
        self.pathways.iter().position(|p| p.name == name)
    }

    /// Same dynamics and geometry with a different pathway list.
    pub fn with_pathways(&self, pathways: Vec<PathwaySpec>) -> Result<Self> {
        Self::new(pathways, self.image, self.lca, self.layer_lambdas.clone())
    }

    fn check_image(&self, x: &ImageTensor) -> Result<()> {
        if x.shape() != self.image {
            return Err(MdcaError::ShapeMismatch(format!(
                "input {} does not match network image {}",
                x.shape(),
                self.image
            )));
        }
        Ok(())
    }
}

/// Full network state: layer states indexed `[pathway][level]`, plus the
/// reconstruction and residual implied by the current activations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub states: Vec<Vec<LayerState>>,
    pub xhat: ImageTensor,
    pub residual: ImageTensor,
    pub t: usize,
}

impl NetworkState {
    /// All potentials zero; the residual is the input itself.
    pub fn zeros(x: &ImageTensor, config: &NetworkConfig) -> Result<Self> {
        config.check_image(x)?;
        let states = (0..config.num_pathways())
            .map(|_| {
                (0..config.depth())
                    .map(|k| LayerState::zeros(config.level_shape(k)))
                    .collect()
            })
            .collect();
        Ok(Self {
            states,
            xhat: ImageTensor::zeros_like_shape(config.image),
            residual: x.clone(),
            t: 0,
        })
    }

    pub fn activation(&self, pathway: usize, level: usize) -> &ImageTensor {
        &self.states[pathway][level].a
    }

    /// `½‖x - x̂‖² + Σ λ_k ‖a_{m,k}‖₁`.
    pub fn energy(&self, config: &NetworkConfig) -> f64 {
        let mut e = 0.5 * self.residual.sq_norm();
        for pathway in &self.states {
            for (k, s) in pathway.iter().enumerate() {
                e += config.lambda(k) as f64 * s.a.l1_norm();
            }
        }
        e
    }
}

/// Additive input current injected into one layer, uniform over space.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulationSpec {
    pub pathway: usize,
    pub level: usize,
    pub bias: Vec<f32>,
    pub gain: f32,
}

impl StimulationSpec {
    fn validate(&self, config: &NetworkConfig) -> Result<()> {
        if self.pathway >= config.num_pathways() || self.level >= config.depth() {
            return Err(MdcaError::InvalidConfig(format!(
                "stimulation target (pathway {}, level {}) out of range",
                self.pathway, self.level
            )));
        }
        let nf = config.level_shape(self.level).channels;
        if self.bias.len() != nf {
            return Err(MdcaError::ShapeMismatch(format!(
                "stimulation bias has {} entries, layer has {nf} features",
                self.bias.len()
            )));
        }
        if !(self.gain >= 0.0) || !self.gain.is_finite() {
            return Err(MdcaError::InvalidConfig("stimulation gain must be nonnegative".into()));
        }
        Ok(())
    }
}

fn check_level(pathway: &PathwaySpec, level: usize) -> Result<()> {
    if level >= pathway.depth() {
        return Err(MdcaError::InvalidConfig(format!(
            "level {level} out of range for pathway {:?} with {} levels",
            pathway.name,
            pathway.depth()
        )));
    }
    Ok(())
}

/// Image-domain contribution of activations at `level`: synthesize through
/// `level, level-1, …, 0`.
pub fn compose_synthesize(
    a: &ImageTensor,
    pathway: &PathwaySpec,
    level: usize,
) -> Result<ImageTensor> {
    check_level(pathway, level)?;
    let mut out = synthesize(a, &pathway.layers[level])?;
    for layer in pathway.layers[..level].iter().rev() {
        out = synthesize(&out, layer)?;
    }
    Ok(out)
}

/// Adjoint of [`compose_synthesize`]: analyze through levels `0..=level`.
pub fn compose_analyze(r: &ImageTensor, pathway: &PathwaySpec, level: usize) -> Result<ImageTensor> {
    check_level(pathway, level)?;
    let mut out = analyze(r, &pathway.layers[0])?;
    for layer in &pathway.layers[1..=level] {
        out = analyze(&out, layer)?;
    }
    Ok(out)
}

/// Drives for every level of a pathway, reusing each level's projection
/// as the input of the next.
pub(crate) fn analyze_chain(r: &ImageTensor, pathway: &PathwaySpec) -> Result<Vec<ImageTensor>> {
    let mut drives: Vec<ImageTensor> = Vec::with_capacity(pathway.depth());
    for layer in &pathway.layers {
        let next = analyze(drives.last().unwrap_or(r), layer)?;
        drives.push(next);
    }
    Ok(drives)
}

/// Effective codes at every level of a pathway: `y_K = a_K`,
/// `y_k = a_k + Φ_{k+1} y_{k+1}`. The pathway's image contribution is
/// `Φ_1 y_1`.
pub(crate) fn nested_codes(
    pathway: &PathwaySpec,
    states: &[LayerState],
) -> Result<Vec<ImageTensor>> {
    let depth = pathway.depth();
    let mut codes: Vec<ImageTensor> = Vec::with_capacity(depth);
    codes.push(states[depth - 1].a.clone());
    for k in (0..depth - 1).rev() {
        let mut y = synthesize(codes.last().expect("nonempty"), &pathway.layers[k + 1])?;
        y.add_assign(&states[k].a)?;
        codes.push(y);
    }
    codes.reverse();
    Ok(codes)
}

/// Pathway contribution to the reconstruction, summed over its levels.
pub fn reconstruct_pathway(pathway: &PathwaySpec, states: &[LayerState]) -> Result<ImageTensor> {
    let codes = nested_codes(pathway, states)?;
    synthesize(&codes[0], &pathway.layers[0])
}

/// `x̂ = Σ_m Σ_k (Φ_{m,1}…Φ_{m,k}) a_{m,k}`.
pub fn reconstruct(state: &NetworkState, config: &NetworkConfig) -> Result<ImageTensor> {
    let mut xhat = ImageTensor::zeros_like_shape(config.image);
    for (pathway, states) in config.pathways.iter().zip(&state.states) {
        xhat.add_assign(&reconstruct_pathway(pathway, states)?)?;
    }
    Ok(xhat)
}

/// Per-`[pathway][level]` image-domain contributions, each computed on its
/// own through [`compose_synthesize`].
pub fn contributions(state: &NetworkState, config: &NetworkConfig) -> Result<Vec<Vec<ImageTensor>>> {
    config
        .pathways
        .iter()
        .zip(&state.states)
        .map(|(pathway, states)| {
            states
                .iter()
                .enumerate()
                .map(|(k, s)| compose_synthesize(&s.a, pathway, k))
                .collect()
        })
        .collect()
}

/// One synchronous update of every layer from the residual snapshot held in
/// `state`.
pub fn mdca_step(
    x: &ImageTensor,
    state: &NetworkState,
    config: &NetworkConfig,
    stims: &[StimulationSpec],
) -> Result<NetworkState> {
    config.check_image(x)?;
    for s in stims {
        s.validate(config)?;
    }
    let mut states = Vec::with_capacity(config.num_pathways());
    for (m, pathway) in config.pathways.iter().enumerate() {
        let drives = analyze_chain(&state.residual, pathway)?;
        let mut layer_states = Vec::with_capacity(pathway.depth());
        for (k, drive) in drives.iter().enumerate() {
            let bias = stimulation_current(stims, m, k);
            let prev = &state.states[m][k];
            layer_states.push(euler_update(
                prev,
                drive,
                bias.as_deref(),
                config.lambda(k),
                &config.lca,
            ));
        }
        states.push(layer_states);
    }
    let mut next = NetworkState {
        states,
        xhat: ImageTensor::zeros_like_shape(config.image),
        residual: x.clone(),
        t: state.t + 1,
    };
    next.xhat = reconstruct(&next, config)?;
    next.residual = x.sub(&next.xhat)?;
    Ok(next)
}

/// Summed per-feature current for layer `(m, k)`; `None` when no active
/// stimulation targets it.
fn stimulation_current(stims: &[StimulationSpec], m: usize, k: usize) -> Option<Vec<f32>> {
    let mut current: Option<Vec<f32>> = None;
    for s in stims {
        if s.pathway != m || s.level != k || s.gain == 0.0 {
            continue;
        }
        let c = current.get_or_insert_with(|| vec![0.0; s.bias.len()]);
        for (ci, b) in c.iter_mut().zip(&s.bias) {
            *ci += s.gain * b;
        }
    }
    current
}

/// Runs `timesteps` steps from the zero state, calling `observe` on the
/// initial state and after every step.
pub fn run_inference(
    x: &ImageTensor,
    config: &NetworkConfig,
    stims: &[StimulationSpec],
    mut observe: impl FnMut(&NetworkState) -> Result<()>,
) -> Result<NetworkState> {
    let mut state = NetworkState::zeros(x, config)?;
    observe(&state)?;
    for _ in 0..config.lca.timesteps {
        state = mdca_step(x, &state, config, stims)?;
        observe(&state)?;
    }
    Ok(state)
}

/// Full inference with a [`TraceRecord`] at `t = 0`, every `trace_every`
/// steps, and at the final step.
pub fn infer(
    x: &ImageTensor,
    config: &NetworkConfig,
    stims: &[StimulationSpec],
    trace_every: usize,
) -> Result<(NetworkState, Vec<TraceRecord>)> {
    if trace_every == 0 {
        return Err(MdcaError::InvalidConfig("trace_every must be at least 1".into()));
    }
    let total = config.lca.timesteps;
    let mut trace = Vec::new();
    let state = run_inference(x, config, stims, |s| {
        if s.t % trace_every == 0 || s.t == total {
            trace.push(trace_record(s, config)?);
        }
        Ok(())
    })?;
    Ok((state, trace))
}
