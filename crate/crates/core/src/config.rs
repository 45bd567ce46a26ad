//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, lists are comma separated.
//! Per-pathway training directories use `data.<pathway> = DIR`. Layers are
//! numbered from 1 (the image-facing layer) in configuration files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{MdcaError, Result};
use crate::image_io::PREPROCESS;
use crate::lca::{LcaParams, ThresholdKind};
use crate::learning::TrainConfig;
use crate::network::{LayerGeometry, NetworkConfig, PathwaySpec};
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub pathways: Vec<String>,
    pub features: Vec<usize>,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    /// One value for every layer, or one per layer.
    pub lambda: Vec<f32>,
    pub tau: f32,
    pub dt: f32,
    pub timesteps: usize,
    pub threshold_kind: ThresholdKind,
    pub learning_rate: f32,
    pub epochs: usize,
    pub infer_timesteps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub data_dirs: BTreeMap<String, PathBuf>,
    pub face_pathway: String,
    pub object_pathway: String,
    pub ratio_threshold: f64,
    pub out_dir: PathBuf,
    pub preprocess: String,
    pub trace_every: usize,
    pub snapshot_timesteps: Vec<usize>,
    pub input: Option<PathBuf>,
    pub ata_pathway: Option<String>,
    pub ata_layer: Option<usize>,
    pub ata_dir: Option<PathBuf>,
    pub face_dir: Option<PathBuf>,
    pub nonface_dir: Option<PathBuf>,
    pub stim_pathway: Option<String>,
    pub stim_layer: Option<usize>,
    pub gain: f32,
    pub mean_response: Option<PathBuf>,
    pub stim_source_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub face_labels: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image_h: 128,
            image_w: 128,
            image_c: 3,
            pathways: vec!["face".into(), "object".into()],
            features: vec![128, 128, 256],
            kernel: vec![8, 8, 8],
            stride: vec![4, 4, 4],
            lambda: vec![0.1],
            tau: 1.0,
            dt: 0.1,
            timesteps: 400,
            threshold_kind: ThresholdKind::AsWritten,
            learning_rate: 0.01,
            epochs: 1,
            infer_timesteps: 400,
            batch_size: 1,
            seed: 0,
            data_dirs: BTreeMap::new(),
            face_pathway: "face".into(),
            object_pathway: "object".into(),
            ratio_threshold: 1.4,
            out_dir: PathBuf::from("out"),
            preprocess: PREPROCESS.into(),
            trace_every: 10,
            snapshot_timesteps: vec![10, 50, 100, 400],
            input: None,
            ata_pathway: None,
            ata_layer: None,
            ata_dir: None,
            face_dir: None,
            nonface_dir: None,
            stim_pathway: None,
            stim_layer: None,
            gain: 100.0,
            mean_response: None,
            stim_source_dir: None,
            eval_dir: None,
            face_labels: Vec::new(),
        }
    }
}

fn parse_one<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_one)
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| MdcaError::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| MdcaError::ConfigParse {
                    line: line_no,
                    message,
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let path = || Some(PathBuf::from(v));
        match key {
            "image_h" => self.image_h = parse_one(v)?,
            "image_w" => self.image_w = parse_one(v)?,
            "image_c" => self.image_c = parse_one(v)?,
            "pathways" => self.pathways = parse_list(v)?,
            "features" => self.features = parse_list(v)?,
            "kernel" => self.kernel = parse_list(v)?,
            "stride" => self.stride = parse_list(v)?,
            "lambda" => self.lambda = parse_list(v)?,
            "tau" => self.tau = parse_one(v)?,
            "dt" => self.dt = parse_one(v)?,
            "timesteps" => self.timesteps = parse_one(v)?,
            "threshold_kind" => self.threshold_kind = parse_one(v)?,
            "learning_rate" => self.learning_rate = parse_one(v)?,
            "epochs" => self.epochs = parse_one(v)?,
            "infer_timesteps" => self.infer_timesteps = parse_one(v)?,
            "batch_size" => self.batch_size = parse_one(v)?,
            "seed" => self.seed = parse_one(v)?,
            "face_pathway" => self.face_pathway = v.to_string(),
            "object_pathway" => self.object_pathway = v.to_string(),
            "ratio_threshold" => self.ratio_threshold = parse_one(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "preprocess" => {
                if v != PREPROCESS {
                    return Err(format!("only preprocess = {PREPROCESS} is supported"));
                }
            }
            "trace_every" => self.trace_every = parse_one(v)?,
            "snapshot_timesteps" => self.snapshot_timesteps = parse_list(v)?,
            "input" => self.input = path(),
            "ata_pathway" => self.ata_pathway = Some(v.to_string()),
            "ata_layer" => self.ata_layer = Some(parse_one(v)?),
            "ata_dir" => self.ata_dir = path(),
            "face_dir" => self.face_dir = path(),
            "nonface_dir" => self.nonface_dir = path(),
            "stim_pathway" => self.stim_pathway = Some(v.to_string()),
            "stim_layer" => self.stim_layer = Some(parse_one(v)?),
            "gain" => self.gain = parse_one(v)?,
            "mean_response" => self.mean_response = path(),
            "stim_source_dir" => self.stim_source_dir = path(),
            "eval_dir" => self.eval_dir = path(),
            "face_labels" => self.face_labels = parse_list(v)?,
            other => match other.strip_prefix("data.") {
                Some(name) if !name.is_empty() => {
                    self.data_dirs.insert(name.to_string(), PathBuf::from(v));
                }
                _ => return Err(format!("unknown key {other:?}")),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MdcaError::InvalidConfig(m));
        if self.image_h == 0 || self.image_w == 0 || self.image_c == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.pathways.is_empty() {
            return bad("at least one pathway is required".into());
        }
        let depth = self.features.len();
        if depth == 0 || self.kernel.len() != depth || self.stride.len() != depth {
            return bad(format!(
                "features, kernel and stride must list the same number of layers ({} / {} / {})",
                self.features.len(),
                self.kernel.len(),
                self.stride.len()
            ));
        }
        if self.lambda.len() != 1 && self.lambda.len() != depth {
            return bad(format!("lambda must have 1 or {depth} entries"));
        }
        for counts in [
            &self.features,
            &self.kernel,
            &self.stride,
            &self.snapshot_timesteps,
        ] {
            if counts.iter().any(|&c| c == 0) {
                return bad("layer sizes and snapshot timesteps must be positive".into());
            }
        }
        if self.timesteps == 0
            || self.epochs == 0
            || self.infer_timesteps == 0
            || self.batch_size == 0
            || self.trace_every == 0
        {
            return bad("all counts must be positive".into());
        }
        for layer in [self.ata_layer, self.stim_layer].into_iter().flatten() {
            if layer == 0 || layer > depth {
                return bad(format!("layer {layer} outside 1..={depth}"));
            }
        }
        self.lca_params().validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn image_shape(&self) -> Shape {
        Shape::new(self.image_h, self.image_w, self.image_c)
    }

    pub fn lca_params(&self) -> LcaParams {
        LcaParams {
            lambda: self.lambda[0],
            tau: self.tau,
            dt: self.dt,
            timesteps: self.timesteps,
            kind: self.threshold_kind,
        }
    }

    pub fn layer_lambdas(&self) -> Vec<f32> {
        if self.lambda.len() == 1 {
            Vec::new()
        } else {
            self.lambda.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            infer_timesteps: self.infer_timesteps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn geometry(&self) -> Vec<LayerGeometry> {
        self.features
            .iter()
            .zip(&self.kernel)
            .zip(&self.stride)
            .map(|((&num_features, &kernel), &stride)| LayerGeometry {
                num_features,
                kernel,
                stride,
            })
            .collect()
    }

    /// Network over `pathways` with this file's geometry and dynamics.
    pub fn network(&self, pathways: Vec<PathwaySpec>) -> Result<NetworkConfig> {
        let net = NetworkConfig::new(
            pathways,
            self.image_shape(),
            self.lca_params(),
            self.layer_lambdas(),
        )?;
        for p in &net.pathways {
            let g = self.geometry();
            let matches = p.layers.len() == g.len()
                && p.layers.iter().zip(&g).all(|(l, g)| {
                    l.num_features() == g.num_features
                        && l.kernel_h() == g.kernel
                        && l.kernel_w() == g.kernel
                        && l.stride() == g.stride
                });
            if !matches {
                return Err(MdcaError::InvalidConfig(format!(
                    "pathway {:?} does not match the configured layer geometry",
                    p.name
                )));
            }
        }
        Ok(net)
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("image_h", self.image_h.to_string());
        kv("image_w", self.image_w.to_string());
        kv("image_c", self.image_c.to_string());
        kv("pathways", join(&self.pathways));
        kv("features", join(&self.features));
        kv("kernel", join(&self.kernel));
        kv("stride", join(&self.stride));
        kv("lambda", join(&self.lambda));
        kv("tau", self.tau.to_string());
        kv("dt", self.dt.to_string());
        kv("timesteps", self.timesteps.to_string());
        kv("threshold_kind", self.threshold_kind.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("epochs", self.epochs.to_string());
        kv("infer_timesteps", self.infer_timesteps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        for (name, dir) in &self.data_dirs {
            kv(&format!("data.{name}"), dir.display().to_string());
        }
        kv("face_pathway", self.face_pathway.clone());
        kv("object_pathway", self.object_pathway.clone());
        kv("ratio_threshold", self.ratio_threshold.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("preprocess", self.preprocess.clone());
        kv("trace_every", self.trace_every.to_string());
        kv("snapshot_timesteps", join(&self.snapshot_timesteps));
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let optional = [
            ("input", opt_path(&self.input)),
            ("ata_pathway", self.ata_pathway.clone()),
            ("ata_layer", self.ata_layer.map(|v| v.to_string())),
            ("ata_dir", opt_path(&self.ata_dir)),
            ("face_dir", opt_path(&self.face_dir)),
            ("nonface_dir", opt_path(&self.nonface_dir)),
            ("stim_pathway", self.stim_pathway.clone()),
            ("stim_layer", self.stim_layer.map(|v| v.to_string())),
            ("mean_response", opt_path(&self.mean_response)),
            ("stim_source_dir", opt_path(&self.stim_source_dir)),
            ("eval_dir", opt_path(&self.eval_dir)),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                kv(k, v);
            }
        }
        kv("gain", self.gain.to_string());
        if !self.face_labels.is_empty() {
            kv("face_labels", join(&self.face_labels));
        }
        s
    }
}
