use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use stnet::data::{
    generate_synthetic_dataset, read_frame_container, split_dataset, write_dataset, write_frame_container,
    Dataset, DatasetManifest, FrameSequence, ManifestEntry, SplitSpec, SyntheticConfig, CLASS_NAMES,
};
use stnet::gradcheck::{run_gradient_suite, Tolerance};
use stnet::models::{
    import_external_weights, load_checkpoint, save_checkpoint, CheckpointMeta, Model, ModelConfig, Variant,
};
use stnet::train::{
    dump_feature_maps, evaluate, history_csv, sliding_window_classify, train_with, write_pgm, Metrics, TrainConfig,
    STREAM_WINDOW,
};
use stnet::{Error, Result};

#[derive(Parser)]
#[command(name = "stnet", version, about = "Spatio-temporal violence classifiers on raw frame containers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-class motion dataset.
    Synth(SynthArgs),
    /// Store raw RGB24 frames (time-major) as a container and add it to a manifest.
    Preprocess(PreprocessArgs),
    /// Split a dataset manifest into train/validation/test manifests.
    Split(SplitArgs),
    /// Train a model; writes checkpoint, history and test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Classify a single clip.
    Predict(PredictArgs),
    /// Classify a long clip with a sliding 25-frame window.
    Stream(StreamArgs),
    /// Run the finite-difference gradient suite over every layer.
    Gradcheck(GradcheckArgs),
    /// Show a model's layers and parameter count, optionally dumping feature maps.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 25×90×90×3 input with the full layer sizes.
    Full,
    /// 16×24×24×3 input with narrow layers.
    Desk,
}

/// Optional TOML file with `[model]`, `[train]`, `[synthetic]` and `[split]`
/// tables.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    synthetic: Option<SyntheticConfig>,
    split: Option<SplitSpec>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let cfg: FileConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(m) = &cfg.model {
        m.validate()?;
    }
    Ok(cfg)
}

#[derive(Args)]
struct ModelArgs {
    /// convlstm, lrcn_custom_cnn, lrcn_vgg, c3d or cnn_transformer.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
}

fn parse_variant(tag: &str) -> Result<Variant> {
    Variant::ALL
        .into_iter()
        .find(|v| v.tag() == tag)
        .ok_or_else(|| {
            let known: Vec<&str> = Variant::ALL.iter().map(|v| v.tag()).collect();
            Error::Usage(format!("unknown variant '{tag}', expected one of {}", known.join(", ")))
        })
}

impl ModelArgs {
    fn variant(&self) -> Result<Option<Variant>> {
        self.variant.as_deref().map(parse_variant).transpose()
    }

    /// `[model]` from the config file if present (with `--variant` taking
    /// precedence), otherwise the preset for `--variant`.
    fn resolve(&self, file: &FileConfig) -> Result<ModelConfig> {
        let variant = self.variant()?;
        let mut cfg = match (&file.model, variant) {
            (Some(m), _) => m.clone(),
            (None, Some(v)) => match self.preset {
                Preset::Full => ModelConfig::full(v),
                Preset::Desk => ModelConfig::desk(v),
            },
            (None, None) => return Err(Error::Usage("--variant is required without a [model] config".into())),
        };
        if let Some(v) = variant {
            cfg.variant = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clips_per_class: Option<usize>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw RGB24 bytes, `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    /// 0 = nonviolent, 1 = violent.
    #[arg(long)]
    label: usize,
    #[arg(long)]
    id: String,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Dataset directory; the clip lands in `clips/` and `manifest.jsonl` is updated.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset directory holding `manifest.jsonl`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to the dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds the split, initialization and shuffling unless the config sets them.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// External VGG weight file for lrcn_vgg.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Manifest file relative to the dataset directory.
    #[arg(long, default_value = "manifest.jsonl")]
    manifest: String,
    /// Write `metrics.json` here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// STNETFRM container.
    #[arg(long)]
    clip: PathBuf,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// STNETFRM container holding the whole stream.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip whose first frame is fed to the extractor for feature maps.
    #[arg(long)]
    clip: Option<PathBuf>,
    /// 0-based extractor layer positions.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Directory for feature-map PGM files.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Metrics report written by `train` and `eval`.
#[derive(Serialize)]
struct Report<'a> {
    variant: Variant,
    /// Random-initialized VGG backbone; pretrained-backbone accuracy is not expected.
    untrained_backbone: bool,
    confusion_layout: &'static str,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

const CONFUSION_LAYOUT: &str = "rows = true class, columns = predicted class, order [nonviolent, violent]";

fn report_json(model: &Model<f32>, metrics: &Metrics) -> Result<String> {
    let report = Report {
        variant: model.variant(),
        untrained_backbone: model.untrained_backbone(),
        confusion_layout: CONFUSION_LAYOUT,
        metrics,
    };
    serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(e).context(dir.display().to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(e).context(path.display().to_string()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let file = read_config(a.config.as_deref())?;
    let mut cfg = file.synthetic.unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.clips_per_class {
        cfg.clips_per_class = n;
    }
    let (manifest, seqs) = generate_synthetic_dataset(&cfg)?;
    ensure_dir(&a.out)?;
    write_dataset(&a.out, &manifest, &seqs)?;
    let [nv, v] = manifest.counts();
    println!("wrote {} clips ({nv} calm, {v} agitated) to {}", manifest.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut bytes = Vec::new();
    if a.input.as_os_str() == "-" {
        std::io::stdin().read_to_end(&mut bytes)?;
    } else {
        bytes = fs::read(&a.input).map_err(|e| Error::Io(e).context(a.input.display().to_string()))?;
    }
    let frame = a.height * a.width * 3;
    if frame == 0 {
        return Err(Error::Usage("height and width must be positive".into()));
    }
    if bytes.is_empty() {
        return Err(Error::EmptyClip(format!("{} holds no frames", a.input.display())));
    }
    if bytes.len() % frame != 0 {
        return Err(Error::Integrity(format!(
            "{} bytes is not a whole number of {}×{} RGB24 frames ({frame} bytes each)",
            bytes.len(),
            a.height,
            a.width
        )));
    }
    let frames = bytes.len() / frame;
    let seq = FrameSequence::new(bytes, [frames, a.height, a.width, 3], a.label, a.id.clone(), a.fps)?;
    let rel = format!("clips/{}.stnetfrm", a.id);
    ensure_dir(&a.out.join("clips"))?;
    write_frame_container(&seq, a.out.join(&rel))?;

    let manifest_path = a.out.join("manifest.jsonl");
    let mut entries = if manifest_path.exists() { DatasetManifest::read(&manifest_path)?.entries } else { Vec::new() };
    entries.retain(|e| e.path != rel);
    entries.push(ManifestEntry {
        clip_id: a.id,
        path: rel.clone(),
        label: a.label,
        frames,
        height: a.height,
        width: a.width,
    });
    DatasetManifest::new(entries)?.write(&manifest_path)?;
    println!("{rel}: {frames} frames {}×{}, label {}", a.height, a.width, a.label);
    Ok(())
}

fn split_spec(file: &FileConfig, seed: Option<u64>) -> SplitSpec {
    let mut spec = file.split.unwrap_or_else(|| SplitSpec::new(0));
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec
}

const SPLIT_FILES: [&str; 3] = ["train.jsonl", "validation.jsonl", "test.jsonl"];

fn split(a: SplitArgs) -> Result<()> {
    let file = read_config(a.config.as_deref())?;
    let manifest = DatasetManifest::read(a.data.join("manifest.jsonl"))?;
    let parts = split_dataset(&manifest, &split_spec(&file, a.seed))?;
    let out = a.out.unwrap_or(a.data);
    ensure_dir(&out)?;
    for (name, m) in SPLIT_FILES.iter().zip([&parts.train, &parts.validation, &parts.test]) {
        m.write(out.join(name))?;
        println!("{name}: {} clips {:?}", m.len(), m.counts());
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let file = read_config(a.config.as_deref())?;
    let cfg = a.model.resolve(&file)?;
    let mut tc = file.train.clone().unwrap_or_else(|| match a.model.preset {
        Preset::Desk => TrainConfig::desk(cfg.variant),
        Preset::Full => TrainConfig::default(),
    });
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    tc.validate()?;

    let manifest = DatasetManifest::read(a.data.join("manifest.jsonl"))?;
    let parts = split_dataset(&manifest, &split_spec(&file, a.seed))?;
    let train_set = Dataset::load(&a.data, &parts.train, &cfg.input)?;
    let val = Dataset::load(&a.data, &parts.validation, &cfg.input)?;
    let test = Dataset::load(&a.data, &parts.test, &cfg.input)?;

    let mut model = Model::build(&cfg, tc.seed)?;
    if let Some(w) = &a.weights {
        let r = import_external_weights(&mut model, w)?;
        eprintln!("imported {} layers, skipped {}", r.loaded.len(), r.skipped.len());
    }
    ensure_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    if tc.checkpoint_every.is_some() {
        ensure_dir(&ckpt_dir)?;
    }
    eprintln!(
        "{}: {} parameters, {} train / {} val / {} test clips",
        cfg.variant,
        model.param_count(),
        train_set.len(),
        val.len(),
        test.len()
    );
    let history = train_with(&mut model, &train_set, &val, &tc, Some(&ckpt_dir), |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  acc {:.3}  val loss {:.4}  val acc {:.3}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_loss.unwrap_or(f64::NAN),
            r.val_accuracy.unwrap_or(f64::NAN)
        );
    })?;
    let meta = CheckpointMeta { epoch: history.len() as u64, seed: tc.seed, ..CheckpointMeta::default() };
    save_checkpoint(&model, a.out.join("model.ckpt"), &meta)?;
    write_text(&a.out.join("history.csv"), &history_csv(&history))?;
    for (name, m) in SPLIT_FILES.iter().zip([&parts.train, &parts.validation, &parts.test]) {
        m.write(a.out.join(name))?;
    }
    let metrics = evaluate(&model, &test)?;
    let json = report_json(&model, &metrics)?;
    write_text(&a.out.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let manifest = DatasetManifest::read(a.data.join(&a.manifest))?;
    let data = Dataset::load(&a.data, &manifest, &model.config().input)?;
    let json = report_json(&model, &evaluate(&model, &data)?)?;
    match a.out {
        Some(dir) => {
            ensure_dir(&dir)?;
            write_text(&dir.join("metrics.json"), &json)?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let seq = read_frame_container(&a.clip)?;
    let clip = stnet::data::prepare_clip(&seq, &model.config().input)?;
    let p = model.predict_clip(&clip)?;
    let label = stnet::train::argmax(p.data());
    let out = serde_json::json!({
        "clip_id": seq.clip_id,
        "label": label,
        "class": CLASS_NAMES[label],
        "probabilities": p.data(),
        "untrained_backbone": model.untrained_backbone(),
    });
    println!("{out}");
    Ok(())
}

fn stream(a: StreamArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let seq = read_frame_container(&a.input)?;
    for w in sliding_window_classify(&model, &seq, STREAM_WINDOW, a.stride)? {
        let line = serde_json::json!({
            "start": w.start,
            "end": w.start + STREAM_WINDOW,
            "label": w.label,
            "class": CLASS_NAMES[w.label],
            "probabilities": w.probabilities,
        });
        println!("{line}");
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = run_gradient_suite(&a.seeds, Tolerance::default())?;
    for r in &report.results {
        println!("{r}");
    }
    println!("{:.1}s", report.elapsed.as_secs_f64());
    if let Some(path) = a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
        write_text(&path, &json)?;
    }
    let failed = report.failures().count();
    if failed > 0 {
        return Err(Error::Oracle(format!("{failed} of {} case runs exceed the tolerance", report.results.len())));
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => Model::build(&a.model.resolve(&read_config(a.config.as_deref())?)?, a.seed)?,
    };
    println!("variant {}  input {}", model.variant(), model.config().input);
    for (i, label) in model.blueprint().iter().enumerate() {
        println!("{i:>3}  {label}");
    }
    if let Some(ex) = model.frame_extractor() {
        println!("per-frame extractor:");
        for (i, label) in ex.blueprint().iter().enumerate() {
            println!("{i:>3}  {label}");
        }
    }
    println!("parameters {}", model.param_count());
    if model.untrained_backbone() {
        println!("untrained backbone");
    }
    if a.layers.is_empty() {
        return Ok(());
    }
    let (Some(clip), Some(out)) = (&a.clip, &a.out) else {
        return Err(Error::Usage("--layers needs --clip and --out".into()));
    };
    let one = read_frame_container(clip)?.window(0, 1)?;
    let input = model.config().input;
    let frame = stnet::data::prepare_clip(&one, &stnet::models::InputShape { frames: 1, ..input })?;
    let frame = frame.index_axis0(0)?;
    ensure_dir(out)?;
    let maps = dump_feature_maps(&model, &frame, &a.layers)?;
    let layers: HashSet<usize> = maps.iter().map(|m| m.layer).collect();
    for m in &maps {
        write_pgm(m, out.join(format!("layer{:02}-{}-ch{:03}.pgm", m.layer, m.layer_name, m.channel)))?;
    }
    println!("wrote {} feature maps from {} layers to {}", maps.len(), layers.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Stream(a) => stream(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(stnet::ErrorCategory::Usage.code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error [{cat}]: {e}");
            ExitCode::from(cat.code() as u8)
        }
    }
}
