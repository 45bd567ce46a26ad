//! Experiment metrics: activity traces, activity-triggered averages, the
//! face/object activity ratio and its threshold fit, and mean top-layer
//! responses used for stimulation.

use std::io::Write;

use crate::error::{MdcaError, Result};
use crate::network::{compose_synthesize, infer, NetworkConfig, NetworkState};
use crate::tensor::ImageTensor;

/// Floor applied to the denominator of [`activity_ratio`].
pub const RATIO_EPSILON: f64 = 1e-9;

/// Default face/non-face decision threshold on the activity ratio.
pub const DEFAULT_RATIO_THRESHOLD: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerMetrics {
    pub pathway: usize,
    pub level: usize,
    pub l1_activity: f64,
    pub percent_active: f64,
    pub contribution_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub timestep: usize,
    /// Ordered by pathway, then level.
    pub layers: Vec<LayerMetrics>,
    pub recon_mse: f64,
}

impl TraceRecord {
    pub fn layer(&self, pathway: usize, level: usize) -> Option<&LayerMetrics> {
        self.layers
            .iter()
            .find(|l| l.pathway == pathway && l.level == level)
    }
}

pub fn trace_record(state: &NetworkState, config: &NetworkConfig) -> Result<TraceRecord> {
    let mut layers = Vec::new();
    for (m, pathway) in config.pathways.iter().enumerate() {
        for (k, s) in state.states[m].iter().enumerate() {
            let contribution = compose_synthesize(&s.a, pathway, k)?;
            layers.push(LayerMetrics {
                pathway: m,
                level: k,
                l1_activity: s.a.l1_norm(),
                percent_active: s.a.count_nonzero() as f64 / s.a.len() as f64,
                contribution_l2: contribution.l2_norm(),
            });
        }
    }
    Ok(TraceRecord {
        timestep: state.t,
        layers,
        recon_mse: state.residual.mean_sq(),
    })
}

/// Header of the trace CSV.
pub const TRACE_CSV_HEADER: [&str; 7] = [
    "timestep",
    "pathway",
    "layer",
    "l1_activity",
    "percent_active",
    "contribution_l2",
    "recon_mse",
];

/// Writes one row per `(timestep, pathway, layer)`. Layers are numbered
/// from 1 (the image-facing layer) in the file.
pub fn write_trace_csv<W: Write>(
    out: W,
    trace: &[TraceRecord],
    pathway_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER)?;
    for rec in trace {
        for l in &rec.layers {
            let name = pathway_names
                .get(l.pathway)
                .cloned()
                .unwrap_or_else(|| l.pathway.to_string());
            w.write_record([
                rec.timestep.to_string(),
                name,
                (l.level + 1).to_string(),
                l.l1_activity.to_string(),
                l.percent_active.to_string(),
                l.contribution_l2.to_string(),
                rec.recon_mse.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-timestep, per-layer contribution norms pulled out of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionRow {
    pub timestep: usize,
    pub pathway: usize,
    pub level: usize,
    pub contribution_l2: f64,
}

pub fn layer_contribution_trace(trace: &[TraceRecord]) -> Result<Vec<ContributionRow>> {
    if trace.is_empty() {
        return Err(MdcaError::Empty("trace has no records".into()));
    }
    Ok(trace
        .iter()
        .flat_map(|rec| {
            rec.layers.iter().map(move |l| ContributionRow {
                timestep: rec.timestep,
                pathway: l.pathway,
                level: l.level,
                contribution_l2: l.contribution_l2,
            })
        })
        .collect())
}

/// Image-domain contribution of each level summed over all pathways
/// (index `k`), followed by the total reconstruction (last entry).
pub fn level_contribution_images(
    state: &NetworkState,
    config: &NetworkConfig,
) -> Result<Vec<ImageTensor>> {
    let mut levels = vec![ImageTensor::zeros_like_shape(config.image); config.depth()];
    for (m, pathway) in config.pathways.iter().enumerate() {
        for (k, s) in state.states[m].iter().enumerate() {
            levels[k].add_assign(&compose_synthesize(&s.a, pathway, k)?)?;
        }
    }
    levels.push(state.xhat.clone());
    Ok(levels)
}

/// First traced timestep at which `(pathway, level)` reaches `fraction` of
/// its final contribution norm. `None` if the final contribution is zero.
pub fn time_to_fraction(
    trace: &[TraceRecord],
    pathway: usize,
    level: usize,
    fraction: f64,
) -> Option<usize> {
    let last = trace.last()?.layer(pathway, level)?.contribution_l2;
    if last <= 0.0 {
        return None;
    }
    trace.iter().find_map(|rec| {
        let l = rec.layer(pathway, level)?;
        (l.contribution_l2 >= fraction * last).then_some(rec.timestep)
    })
}

/// L1 norm of the top-level activations of `pathway`.
pub fn pathway_activity(state: &NetworkState, pathway: usize) -> f64 {
    let top = state.states[pathway].len() - 1;
    layer_activity(state, pathway, top)
}

pub fn layer_activity(state: &NetworkState, pathway: usize, level: usize) -> f64 {
    state.states[pathway][level].a.l1_norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioLabel {
    Face,
    NonFace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioDecision {
    pub ratio: f64,
    pub threshold: f64,
    pub label: RatioLabel,
}

impl RatioDecision {
    pub fn from_activities(face: f64, object: f64, threshold: f64) -> Self {
        let ratio = face / object.max(RATIO_EPSILON);
        Self::from_ratio(ratio, threshold)
    }

    pub fn from_ratio(ratio: f64, threshold: f64) -> Self {
        let label = if ratio >= threshold {
            RatioLabel::Face
        } else {
            RatioLabel::NonFace
        };
        Self {
            ratio,
            threshold,
            label,
        }
    }

    pub fn is_face(&self) -> bool {
        self.label == RatioLabel::Face
    }
}

/// Top-layer activity of the face pathway over that of the object pathway.
pub fn activity_ratio(
    state: &NetworkState,
    face_pathway: usize,
    object_pathway: usize,
    threshold: f64,
) -> RatioDecision {
    RatioDecision::from_activities(
        pathway_activity(state, face_pathway),
        pathway_activity(state, object_pathway),
        threshold,
    )
}

/// Ratios are floored here before taking logs so an all-silent face
/// pathway maps to a finite (very negative) log-ratio.
const LOG_RATIO_FLOOR: f64 = 1e-12;

fn log_ratio(r: f64) -> f64 {
    r.max(LOG_RATIO_FLOOR).ln()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Maximum-likelihood threshold between two classes of ratios.
///
/// Fits a Gaussian to each class's log-ratio and returns the ratio at which
/// the two densities are equal, taking the crossing that lies between the
/// class means. Degenerate variances fall back to the midpoint of the means.
pub fn fit_threshold(face_ratios: &[f64], nonface_ratios: &[f64]) -> Result<f64> {
    if face_ratios.is_empty() || nonface_ratios.is_empty() {
        return Err(MdcaError::Empty(
            "threshold fit needs at least one ratio per class".into(),
        ));
    }
    let face: Vec<f64> = face_ratios.iter().map(|&r| log_ratio(r)).collect();
    let other: Vec<f64> = nonface_ratios.iter().map(|&r| log_ratio(r)).collect();
    let (m1, v1) = mean_var(&face);
    let (m0, v0) = mean_var(&other);
    let midpoint = 0.5 * (m0 + m1);
    if v1 < 1e-12 || v0 < 1e-12 {
        return Ok(midpoint.exp());
    }
    // log N(x; m1, v1) = log N(x; m0, v0)  =>  a x² + b x + c = 0
    let a = 1.0 / v0 - 1.0 / v1;
    let b = 2.0 * (m1 / v1 - m0 / v0);
    let c = m0 * m0 / v0 - m1 * m1 / v1 + (v0 / v1).ln();
    let crossing = if a.abs() < 1e-12 * (1.0 / v0 + 1.0 / v1) {
        if b.abs() < f64::MIN_POSITIVE {
            midpoint
        } else {
            -c / b
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            midpoint
        } else {
            let sq = disc.sqrt();
            let r1 = (-b + sq) / (2.0 * a);
            let r2 = (-b - sq) / (2.0 * a);
            let (lo, hi) = if m0 <= m1 { (m0, m1) } else { (m1, m0) };
            let between = |r: f64| r >= lo && r <= hi;
            match (between(r1), between(r2)) {
                (true, _) => r1,
                (_, true) => r2,
                _ => {
                    if (r1 - midpoint).abs() <= (r2 - midpoint).abs() {
                        r1
                    } else {
                        r2
                    }
                }
            }
        }
    };
    Ok(crossing.exp())
}

/// Fraction of ratios classified correctly at `threshold`.
pub fn threshold_accuracy(face_ratios: &[f64], nonface_ratios: &[f64], threshold: f64) -> f64 {
    let correct = face_ratios.iter().filter(|&&r| r >= threshold).count()
        + nonface_ratios.iter().filter(|&&r| r < threshold).count();
    correct as f64 / (face_ratios.len() + nonface_ratios.len()) as f64
}

/// Activation-weighted mean of `images`, one entry per feature.
///
/// `activations[n]` is the activation map produced for `images[n]`; the
/// weight of image `n` for feature `f` is the spatial sum of channel `f`.
/// Features whose weights sum to zero yield `None`.
pub fn ata_from_activations(
    images: &[ImageTensor],
    activations: &[ImageTensor],
) -> Result<Vec<Option<ImageTensor>>> {
    if images.is_empty() {
        return Err(MdcaError::Empty("activity-triggered average needs images".into()));
    }
    if images.len() != activations.len() {
        return Err(MdcaError::ShapeMismatch(format!(
            "{} images but {} activation maps",
            images.len(),
            activations.len()
        )));
    }
    let shape = images[0].shape();
    let nf = activations[0].channels();
    let mut sums = vec![vec![0.0f64; shape.len()]; nf];
    let mut totals = vec![0.0f64; nf];
    for (img, act) in images.iter().zip(activations) {
        if img.shape() != shape || act.channels() != nf {
            return Err(MdcaError::ShapeMismatch(
                "images and activation maps must share shapes".into(),
            ));
        }
        for (f, w) in act.channel_sums().into_iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            totals[f] += w;
            for (s, &v) in sums[f].iter_mut().zip(img.data()) {
                *s += w * v as f64;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(totals)
        .map(|(s, total)| {
            (total != 0.0).then(|| {
                let data = s.into_iter().map(|v| (v / total) as f32).collect();
                ImageTensor::new(shape.height, shape.width, shape.channels, data)
                    .expect("weighted mean of finite images is finite")
            })
        })
        .collect())
}

/// Runs inference on every image and averages each image over the
/// end-of-inference activity of `(pathway, level)`.
pub fn activity_triggered_average(
    config: &NetworkConfig,
    images: &[ImageTensor],
    pathway: usize,
    level: usize,
) -> Result<Vec<Option<ImageTensor>>> {
    if images.is_empty() {
        return Err(MdcaError::Empty("activity-triggered average needs images".into()));
    }
    check_target(config, pathway, level)?;
    let mut acts = Vec::with_capacity(images.len());
    for x in images {
        let (state, _) = infer(x, config, &[], config.lca.timesteps)?;
        acts.push(state.states[pathway][level].a.clone());
    }
    ata_from_activations(images, &acts)
}

fn check_target(config: &NetworkConfig, pathway: usize, level: usize) -> Result<()> {
    if pathway >= config.num_pathways() || level >= config.depth() {
        return Err(MdcaError::InvalidConfig(format!(
            "no layer at pathway {pathway}, level {level}"
        )));
    }
    Ok(())
}

/// Spatial mean of each feature, averaged over the given activation maps.
pub fn mean_response_from_activations(activations: &[ImageTensor]) -> Result<Vec<f32>> {
    let first = activations
        .first()
        .ok_or_else(|| MdcaError::Empty("mean response needs at least one image".into()))?;
    let nf = first.channels();
    let mut acc = vec![0.0f64; nf];
    for a in activations {
        if a.shape() != first.shape() {
            return Err(MdcaError::ShapeMismatch("activation maps differ in shape".into()));
        }
        let positions = (a.height() * a.width()) as f64;
        for (s, v) in acc.iter_mut().zip(a.channel_sums()) {
            *s += v / positions;
        }
    }
    let n = activations.len() as f64;
    Ok(acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// Mean top-level response of `pathway` over `images`.
pub fn mean_top_response(
    config: &NetworkConfig,
    images: &[ImageTensor],
    pathway: usize,
) -> Result<Vec<f32>> {
    if images.is_empty() {
        return Err(MdcaError::Empty("mean response needs at least one image".into()));
    }
    let top = config.depth() - 1;
    check_target(config, pathway, top)?;
    let mut acts = Vec::with_capacity(images.len());
    for x in images {
        let (state, _) = infer(x, config, &[], config.lca.timesteps)?;
        acts.push(state.states[pathway][top].a.clone());
    }
    mean_response_from_activations(&acts)
}
