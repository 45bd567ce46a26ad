use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mdca::analysis::{
    ata_from_activations, fit_threshold, level_contribution_images, mean_response_from_activations,
    threshold_accuracy, trace_record, write_trace_csv, TraceRecord,
};
use mdca::dataset::{list_images, load_images, LabeledDataset};
use mdca::image_io::{load_image, save_image, save_unit_image};
use mdca::learning::write_metrics_csv;
use mdca::network::run_inference;
use mdca::synthetic::{face_like, texture_field};
use mdca::{
    activity_ratio, load_checkpoint, save_checkpoint, train_pathway, ImageTensor, MdcaError,
    NetworkConfig, NetworkState, PathwaySpec, RunConfig, StimulationSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";
pub const DEFAULT_CHECKPOINT: &str = "model.mdca";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit status 1.
    Usage(String),
    /// Unreadable or inconsistent data, models or files; exit status 2.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<MdcaError> for CliError {
    fn from(e: MdcaError) -> Self {
        match e {
            MdcaError::ConfigParse { .. } | MdcaError::InvalidConfig(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(e: MdcaError) -> CliError {
    CliError::Data(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub cfg: RunConfig,
    checkpoint: Option<PathBuf>,
}

impl Context {
    /// Creates the output directory and echoes the effective configuration
    /// into it.
    pub fn new(cfg: RunConfig, checkpoint: Option<PathBuf>) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir)?;
        fs::write(cfg.out_dir.join(EFFECTIVE_CONFIG), cfg.to_text())?;
        Ok(Self { cfg, checkpoint })
    }

    fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn network(&self) -> Result<NetworkConfig> {
        let path = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required for this command".into()))?;
        if !path.is_file() {
            return Err(CliError::Data(format!("checkpoint {} not found", path.display())));
        }
        let mut stored = load_checkpoint(path).map_err(data_err)?;
        let mut ordered = Vec::with_capacity(self.cfg.pathways.len());
        for name in &self.cfg.pathways {
            let idx = stored.iter().position(|p| &p.name == name).ok_or_else(|| {
                CliError::Data(format!(
                    "checkpoint {} has no pathway named {name:?}",
                    path.display()
                ))
            })?;
            ordered.push(stored.remove(idx));
        }
        self.cfg.network(ordered).map_err(data_err)
    }

    fn pathway_index(&self, net: &NetworkConfig, name: &str) -> Result<usize> {
        net.pathway_index(name)
            .ok_or_else(|| CliError::Usage(format!("no pathway named {name:?}")))
    }

    fn ratio_indices(&self, net: &NetworkConfig) -> Result<(usize, usize)> {
        Ok((
            self.pathway_index(net, &self.cfg.face_pathway)?,
            self.pathway_index(net, &self.cfg.object_pathway)?,
        ))
    }

    fn input_image(&self) -> Result<ImageTensor> {
        let path = self
            .cfg
            .input
            .as_ref()
            .ok_or_else(|| CliError::Usage("an input image is required (--input or `input`)".into()))?;
        let s = self.cfg.image_shape();
        load_image(path, s.height, s.width, s.channels).map_err(data_err)
    }

    fn load_dir(&self, dir: &Path) -> Result<Vec<(PathBuf, ImageTensor)>> {
        let files = list_images(dir)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?;
        let images = load_images(&files, self.cfg.image_shape());
        if images.is_empty() {
            return Err(CliError::Data(format!("no readable images in {}", dir.display())));
        }
        Ok(images)
    }

    fn data_dir(&self, pathway: &str) -> Result<&PathBuf> {
        self.cfg
            .data_dirs
            .get(pathway)
            .ok_or_else(|| CliError::Usage(format!("missing `data.{pathway}` directory")))
    }

    /// 0-based level from an optional 1-based config value; defaults to the
    /// top layer.
    fn level(&self, layer: Option<usize>) -> usize {
        layer.map_or(self.cfg.features.len() - 1, |l| l - 1)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

pub fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let geometry = cfg.geometry();
    let tc = cfg.train_config();
    let mut trained = Vec::with_capacity(cfg.pathways.len());
    for (i, name) in cfg.pathways.iter().enumerate() {
        let dir = ctx.data_dir(name)?;
        let images: Vec<ImageTensor> = ctx.load_dir(dir)?.into_iter().map(|(_, x)| x).collect();
        info!("training pathway {name:?} on {} images", images.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let init = PathwaySpec::random(name.clone(), cfg.image_c, &geometry, &mut rng)?;
        let tc = mdca::TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..tc
        };
        let (pathway, metrics) =
            train_pathway(&images, init, &cfg.lca_params(), &cfg.layer_lambdas(), &tc)?;
        let metrics_file = File::create(ctx.out(format!("metrics_{name}.csv")))?;
        write_metrics_csv(BufWriter::new(metrics_file), name, &metrics).map_err(data_err)?;
        if let Some(last) = metrics.last() {
            println!(
                "{name}: {} epochs, final recon mse {:.6}, active {:.4}",
                last.epoch, last.mean_recon_mse, last.mean_percent_active
            );
        }
        trained.push(pathway);
    }
    let path = ctx
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.out(DEFAULT_CHECKPOINT));
    save_checkpoint(&path, &trained).map_err(data_err)?;
    println!("checkpoint: {}", path.display());
    Ok(())
}

fn write_inference_outputs(
    ctx: &Context,
    net: &NetworkConfig,
    state: &NetworkState,
    trace: &[TraceRecord],
) -> Result<()> {
    save_image(ctx.out("reconstruction.png"), &state.xhat).map_err(data_err)?;
    let f = BufWriter::new(File::create(ctx.out("trace.csv"))?);
    let names: Vec<String> = net.pathways.iter().map(|p| p.name.clone()).collect();
    write_trace_csv(f, trace, &names).map_err(data_err)?;
    let (face, object) = ctx.ratio_indices(net)?;
    let d = activity_ratio(state, face, object, ctx.cfg.ratio_threshold);
    println!(
        "recon mse {:.6}; activity ratio {:.4} ({:?})",
        state.residual.mean_sq(),
        d.ratio,
        d.label
    );
    Ok(())
}

pub fn infer(ctx: &Context) -> Result<()> {
    let net = ctx.network()?;
    let x = ctx.input_image()?;
    let (state, trace) = mdca::infer(&x, &net, &[], ctx.cfg.trace_every)?;
    write_inference_outputs(ctx, &net, &state, &trace)
}

pub fn trace(ctx: &Context) -> Result<()> {
    let net = ctx.network()?;
    let x = ctx.input_image()?;
    let total = net.lca.timesteps;
    for &t in &ctx.cfg.snapshot_timesteps {
        if t > total {
            warn!("snapshot timestep {t} is beyond the {total} inference steps");
        }
    }
    let every = ctx.cfg.trace_every;
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let state = run_inference(&x, &net, &[], |s| {
        if s.t % every == 0 || s.t == total {
            trace.push(trace_record(s, &net)?);
        }
        if ctx.cfg.snapshot_timesteps.contains(&s.t) {
            snapshots.push((s.t, level_contribution_images(s, &net)?));
        }
        Ok(())
    })?;
    for (t, images) in &snapshots {
        let (total_image, levels) = images.split_last().expect("levels plus total");
        for (k, img) in levels.iter().enumerate() {
            save_image(ctx.out(format!("contribution_t{t:04}_layer{}.png", k + 1)), img)
                .map_err(data_err)?;
        }
        save_image(ctx.out(format!("reconstruction_t{t:04}.png")), total_image).map_err(data_err)?;
    }
    println!("{} snapshot(s) written", snapshots.len());
    write_inference_outputs(ctx, &net, &state, &trace)
}

pub fn ata(ctx: &Context) -> Result<()> {
    let net = ctx.network()?;
    let name = ctx
        .cfg
        .ata_pathway
        .clone()
        .unwrap_or_else(|| ctx.cfg.face_pathway.clone());
    let m = ctx.pathway_index(&net, &name)?;
    let level = ctx.level(ctx.cfg.ata_layer);
    let dir = match &ctx.cfg.ata_dir {
        Some(d) => d.clone(),
        None => ctx.data_dir(&name)?.clone(),
    };
    let images: Vec<ImageTensor> = ctx.load_dir(&dir)?.into_iter().map(|(_, x)| x).collect();
    let mut acts = Vec::with_capacity(images.len());
    for x in &images {
        let (state, _) = mdca::infer(x, &net, &[], net.lca.timesteps)?;
        acts.push(state.activation(m, level).clone());
    }
    let averages = ata_from_activations(&images, &acts)?;
    let out_dir = ctx.out("ata");
    fs::create_dir_all(&out_dir)?;
    let mut silent = 0;
    for (f, avg) in averages.iter().enumerate() {
        match avg {
            Some(img) => save_image(out_dir.join(format!("{name}_{}_{f:03}.png", level + 1)), img)
                .map_err(data_err)?,
            None => silent += 1,
        }
    }
    println!(
        "{} feature images written to {}; {silent} feature(s) never active",
        averages.len() - silent,
        out_dir.display()
    );
    Ok(())
}

fn ratios_for(
    ctx: &Context,
    net: &NetworkConfig,
    images: &[(PathBuf, ImageTensor)],
) -> Result<Vec<f64>> {
    let (face, object) = ctx.ratio_indices(net)?;
    images
        .iter()
        .map(|(_, x)| {
            let (state, _) = mdca::infer(x, net, &[], net.lca.timesteps)?;
            Ok(activity_ratio(&state, face, object, ctx.cfg.ratio_threshold).ratio)
        })
        .collect()
}

pub fn classify(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (face_dir, nonface_dir) = match (&cfg.face_dir, &cfg.nonface_dir) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Usage("classify needs `face_dir` and `nonface_dir`".into())),
    };
    let net = ctx.network()?;
    let faces = ctx.load_dir(face_dir)?;
    let others = ctx.load_dir(nonface_dir)?;
    let face_ratios = ratios_for(ctx, &net, &faces)?;
    let other_ratios = ratios_for(ctx, &net, &others)?;

    let mut w = csv_writer(&ctx.out("ratios.csv"))?;
    w.write_record(["path", "class", "ratio", "predicted"]).map_err(csv_err)?;
    for (class, imgs, ratios) in [("face", &faces, &face_ratios), ("nonface", &others, &other_ratios)] {
        for ((path, _), r) in imgs.iter().zip(ratios.iter()) {
            let predicted = if *r >= cfg.ratio_threshold { "face" } else { "nonface" };
            w.write_record([
                path.display().to_string(),
                class.to_string(),
                r.to_string(),
                predicted.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let accuracy = threshold_accuracy(&face_ratios, &other_ratios, cfg.ratio_threshold);
    let fitted = fit_threshold(&face_ratios, &other_ratios)?;
    let fitted_accuracy = threshold_accuracy(&face_ratios, &other_ratios, fitted);
    let mut s = csv_writer(&ctx.out("classify_summary.csv"))?;
    s.write_record(["threshold_source", "threshold", "accuracy"]).map_err(csv_err)?;
    s.write_record(["configured", &cfg.ratio_threshold.to_string(), &accuracy.to_string()])
        .map_err(csv_err)?;
    s.write_record(["fitted", &fitted.to_string(), &fitted_accuracy.to_string()])
        .map_err(csv_err)?;
    s.flush()?;
    println!(
        "accuracy {accuracy:.4} at threshold {} ({} face, {} non-face images); fitted threshold {fitted:.4} gives {fitted_accuracy:.4}",
        cfg.ratio_threshold,
        faces.len(),
        others.len()
    );
    Ok(())
}

fn read_mean_response(path: &Path) -> Result<Vec<f32>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = || CliError::Data(format!("{}: malformed row {}", path.display(), i + 2));
        let feature: usize = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let value: f32 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if feature != i {
            return Err(bad());
        }
        values.push(value);
    }
    Ok(values)
}

fn write_mean_response(path: &Path, values: &[f32]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["feature", "mean_response"]).map_err(csv_err)?;
    for (f, v) in values.iter().enumerate() {
        w.write_record([f.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn stimulate(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let net = ctx.network()?;
    let name = cfg.stim_pathway.clone().unwrap_or_else(|| cfg.face_pathway.clone());
    let m = ctx.pathway_index(&net, &name)?;
    let level = ctx.level(cfg.stim_layer);
    let bias = match &cfg.mean_response {
        Some(path) => read_mean_response(path)?,
        None => {
            let dir = match &cfg.stim_source_dir {
                Some(d) => d.clone(),
                None => ctx.data_dir(&name)?.clone(),
            };
            let images = ctx.load_dir(&dir)?;
            let mut acts = Vec::with_capacity(images.len());
            for (_, x) in &images {
                let (state, _) = mdca::infer(x, &net, &[], net.lca.timesteps)?;
                acts.push(state.activation(m, level).clone());
            }
            let bias = mean_response_from_activations(&acts)?;
            write_mean_response(&ctx.out("mean_response.csv"), &bias)?;
            bias
        }
    };
    let stim = StimulationSpec {
        pathway: m,
        level,
        bias,
        gain: cfg.gain,
    };
    let x = ctx.input_image()?;
    let (state, trace) = mdca::infer(&x, &net, &[stim], cfg.trace_every)?;
    println!("stimulated {name} layer {} with gain {}", level + 1, cfg.gain);
    write_inference_outputs(ctx, &net, &state, &trace)
}

pub fn eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let root = cfg
        .eval_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("eval needs `eval_dir`".into()))?;
    let net = ctx.network()?;
    let dataset = LabeledDataset::from_tree(root).map_err(data_err)?;
    let is_face_label = |label: &str| {
        if cfg.face_labels.is_empty() {
            label == cfg.face_pathway
        } else {
            cfg.face_labels.iter().any(|l| l == label)
        }
    };
    let (face, object) = ctx.ratio_indices(&net)?;
    let s = cfg.image_shape();

    let mut rows = csv_writer(&ctx.out("eval_images.csv"))?;
    rows.write_record(["path", "label", "is_face", "ratio", "predicted_face", "correct"])
        .map_err(csv_err)?;
    let mut tally: Vec<(usize, usize)> = vec![(0, 0); dataset.labels.len()];
    for (path, label) in &dataset.entries {
        let x = match load_image(path, s.height, s.width, s.channels) {
            Ok(x) => x,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let (state, _) = mdca::infer(&x, &net, &[], net.lca.timesteps)?;
        let d = activity_ratio(&state, face, object, cfg.ratio_threshold);
        let truth = is_face_label(label);
        let correct = d.is_face() == truth;
        let li = dataset.labels.iter().position(|l| l == label).expect("label from dataset");
        tally[li].0 += 1;
        tally[li].1 += correct as usize;
        rows.write_record([
            path.display().to_string(),
            label.clone(),
            truth.to_string(),
            d.ratio.to_string(),
            d.is_face().to_string(),
            correct.to_string(),
        ])
        .map_err(csv_err)?;
    }
    rows.flush()?;

    let mut summary = csv_writer(&ctx.out("eval_summary.csv"))?;
    summary.write_record(["label", "images", "correct", "accuracy"]).map_err(csv_err)?;
    println!("{:<24} {:>7} {:>8} {:>9}", "label", "images", "correct", "accuracy");
    for (label, &(n, c)) in dataset.labels.iter().zip(&tally) {
        let acc = if n > 0 { c as f64 / n as f64 } else { 0.0 };
        summary
            .write_record([label.clone(), n.to_string(), c.to_string(), acc.to_string()])
            .map_err(csv_err)?;
        println!("{label:<24} {n:>7} {c:>8} {acc:>9.4}");
    }
    summary.flush()?;
    Ok(())
}

pub fn synth(ctx: &Context, count: usize) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.image_h != cfg.image_w || cfg.image_c != 1 {
        return Err(CliError::Usage(
            "synth writes square single-channel images (image_h = image_w, image_c = 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (class, faces) in [(&cfg.face_pathway, true), (&cfg.object_pathway, false)] {
        let dir = ctx.out(class);
        fs::create_dir_all(&dir)?;
        for i in 0..count {
            let img = if faces {
                face_like(&mut rng, cfg.image_h)
            } else {
                texture_field(&mut rng, cfg.image_h)
            };
            save_unit_image(dir.join(format!("{class}_{i:04}.png")), &img).map_err(data_err)?;
        }
    }
    println!("{count} images per class written under {}", cfg.out_dir.display());
    Ok(())
}
