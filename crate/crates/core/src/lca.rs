//! Single-layer sparse inference with the locally competitive algorithm.
//!
//! Membrane potentials `u` leak toward the feed-forward drive `Φᵀx` while
//! active units inhibit each other through the shared reconstruction:
//!
//! ```text
//! τ du/dt = -u + Φᵀx - (ΦᵀΦa - a),   a = T_λ(u)
//! ```
//!
//! The update is computed in residual form, `Φᵀ(x - Φa) + a`, which never
//! materialises the Gram operator.

use std::fmt;
use std::str::FromStr;

use crate::conv::{analyze, synthesize, DictionaryLayer};
use crate::error::{MdcaError, Result};
use crate::tensor::{ImageTensor, Shape};

/// How potentials above threshold become activations. Both kinds are
/// one-sided: potentials at or below `λ` produce zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdKind {
    /// `H(u - λ)·u`: the potential passes through unchanged once above `λ`.
    #[default]
    AsWritten,
    /// `max(u - λ, 0)`: shrinkage by `λ`.
    Soft,
}

impl fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdKind::AsWritten => "as-written",
            ThresholdKind::Soft => "soft",
        })
    }
}

impl FromStr for ThresholdKind {
    type Err = MdcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" | "hard" => Ok(ThresholdKind::AsWritten),
            "soft" => Ok(ThresholdKind::Soft),
            other => Err(MdcaError::InvalidConfig(format!(
                "unknown threshold kind {other:?} (expected as-written or soft)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcaParams {
    pub lambda: f32,
    pub tau: f32,
    pub dt: f32,
    pub timesteps: usize,
    pub kind: ThresholdKind,
}

impl Default for LcaParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 1.0,
            dt: 0.1,
            timesteps: 400,
            kind: ThresholdKind::AsWritten,
        }
    }
}

impl LcaParams {
    /// Largest `dt / tau` accepted by [`LcaParams::validate`].
    pub const MAX_STEP_RATIO: f32 = 0.5;

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(MdcaError::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tau > 0.0) || !(self.dt > 0.0) {
            return Err(MdcaError::InvalidConfig("tau and dt must be positive".into()));
        }
        if self.step_ratio() > Self::MAX_STEP_RATIO {
            return Err(MdcaError::InvalidConfig(format!(
                "dt/tau = {} exceeds the stability limit {}",
                self.step_ratio(),
                Self::MAX_STEP_RATIO
            )));
        }
        if self.timesteps == 0 {
            return Err(MdcaError::InvalidConfig("timesteps must be positive".into()));
        }
        Ok(())
    }

    pub fn step_ratio(&self) -> f32 {
        self.dt / self.tau
    }
}

#[inline]
pub fn threshold(u: f32, lambda: f32, kind: ThresholdKind) -> f32 {
    if u > lambda {
        match kind {
            ThresholdKind::AsWritten => u,
            ThresholdKind::Soft => u - lambda,
        }
    } else {
        0.0
    }
}

pub fn threshold_tensor(u: &ImageTensor, lambda: f32, kind: ThresholdKind) -> ImageTensor {
    u.map(|v| threshold(v, lambda, kind))
}

/// Potentials and activations of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub u: ImageTensor,
    pub a: ImageTensor,
}

impl LayerState {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            u: ImageTensor::zeros_like_shape(shape),
            a: ImageTensor::zeros_like_shape(shape),
        }
    }

    pub fn from_potentials(u: ImageTensor, lambda: f32, kind: ThresholdKind) -> Self {
        let a = threshold_tensor(&u, lambda, kind);
        Self { u, a }
    }
}

/// One explicit Euler step of the membrane dynamics.
///
/// `drive` is `Φᵀ(x - Φa)` for the current activations; `extra` adds any
/// injected input current. Shared by the single-layer solver and the
/// multipath network so both integrate identically.
pub(crate) fn euler_update(
    state: &LayerState,
    drive: &ImageTensor,
    extra: Option<&[f32]>,
    lambda: f32,
    p: &LcaParams,
) -> LayerState {
    let eta = p.step_ratio();
    let mut u = state.u.clone();
    let nf = u.channels();
    {
        let ud = u.data_mut();
        let ad = state.a.data();
        let dd = drive.data();
        match extra {
            None => {
                for i in 0..ud.len() {
                    ud[i] += eta * (-ud[i] + dd[i] + ad[i]);
                }
            }
            Some(bias) => {
                for i in 0..ud.len() {
                    ud[i] += eta * (-ud[i] + dd[i] + ad[i] + bias[i % nf]);
                }
            }
        }
    }
    LayerState::from_potentials(u, lambda, p.kind)
}

fn check_code_shape(x: &ImageTensor, a: &ImageTensor, d: &DictionaryLayer) -> Result<()> {
    let expected = d.activation_shape(x.height(), x.width())?;
    if a.shape() != expected || x.channels() != d.in_channels() {
        return Err(MdcaError::ShapeMismatch(format!(
            "code {} / input {} inconsistent with dictionary (expects code {expected}, {} input channels)",
            a.shape(),
            x.shape(),
            d.in_channels()
        )));
    }
    Ok(())
}

pub fn lca_step(
    x: &ImageTensor,
    state: &LayerState,
    d: &DictionaryLayer,
    p: &LcaParams,
) -> Result<LayerState> {
    check_code_shape(x, &state.a, d)?;
    if state.u.shape() != state.a.shape() {
        return Err(MdcaError::ShapeMismatch("potential and activation shapes differ".into()));
    }
    let residual = x.sub(&synthesize(&state.a, d)?)?;
    let drive = analyze(&residual, d)?;
    Ok(euler_update(state, &drive, None, p.lambda, p))
}

/// Runs `p.timesteps` steps from the zero state. The returned trace holds
/// the energy after each step.
pub fn solve_single_layer(
    x: &ImageTensor,
    d: &DictionaryLayer,
    p: &LcaParams,
) -> Result<(LayerState, Vec<f64>)> {
    p.validate()?;
    let mut state = LayerState::zeros(d.activation_shape(x.height(), x.width())?);
    let mut energies = Vec::with_capacity(p.timesteps);
    for _ in 0..p.timesteps {
        state = lca_step(x, &state, d, p)?;
        energies.push(energy(x, &state.a, d, p.lambda)?);
    }
    Ok((state, energies))
}

/// `½‖x - Φa‖² + λ‖a‖₁`.
pub fn energy(x: &ImageTensor, a: &ImageTensor, d: &DictionaryLayer, lambda: f32) -> Result<f64> {
    check_code_shape(x, a, d)?;
    let r = x.sub(&synthesize(a, d)?)?;
    Ok(0.5 * r.sq_norm() + lambda as f64 * a.l1_norm())
}
