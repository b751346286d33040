//! The `slotwm` command line: dataset generation, the three training
//! stages, evaluation, sample-efficiency measurement, and frame dumps.
//! Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage.

pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use slotwm_core::baseline::{train_decoder_only, BaselineConfig};
use slotwm_core::classifier::{train_classifier, ClassifierConfig, ClassifierParams};
use slotwm_core::error::Result;
use slotwm_core::metrics::{emit_metrics_csv, sample_efficiency};
use slotwm_core::physics::{
    builtin_templates, generate_dataset, read_fpv1, write_ppm, Split,
};
use slotwm_core::tokenizer::{
    reconstruction_mae, train_tokenizer, TokenizerConfig, TokenizerTrainOptions,
};
use slotwm_core::worldmodel::{train_worldmodel, WmConfig, WmTrainOptions};
use slotwm_core::{Arch, Error, RunConfig, Tensor};

use pipeline::{
    classifier_inputs, load_split_dataset, load_tokenizer, load_worldmodel, resolve_config,
    save_params, tokenize_videos,
};

#[derive(Parser)]
#[command(name = "slotwm", version, about = "Slot-based world modelling on toy physics videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration preset: desk | paper
    #[arg(long, default_value = "desk")]
    preset: String,
    /// `key = value` config file overlaid on the preset
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, repeatable: --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Global seed; makes the whole pipeline bit-reproducible
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self, arch: Option<Arch>) -> Result<RunConfig> {
        resolve_config(&self.preset, self.config.as_deref(), &self.set, self.seed, arch)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled physics video dataset with a 95/5 train/eval split
    GenData {
        /// Output directory for FPV1 samples and the manifest
        #[arg(long)]
        out: PathBuf,
        /// Number of videos (>= 20)
        #[arg(long)]
        count: usize,
        /// Comma-separated template names (drop-onto-target, ramp-roll,
        /// blocked-path, sanity); all four by default
        #[arg(long)]
        templates: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the frame tokenizer on the train split and write a checkpoint
    TrainTokenizer {
        /// Dataset directory (from gen-data)
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Adam steps (default: config vq_steps)
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a world model on tokenized videos and write a checkpoint
    TrainWorldmodel {
        /// Architecture: fptt | decoder-only
        #[arg(long)]
        arch: String,
        #[arg(long)]
        data: PathBuf,
        /// Frozen tokenizer checkpoint
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override config epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Metrics CSV to append per-epoch rows to
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the success classifier on frozen world-model outputs
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// World-model checkpoint; the architecture is read from it
        #[arg(long)]
        worldmodel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a trained classifier over one dataset split
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        worldmodel: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Split to evaluate: train | eval
        #[arg(long, default_value = "eval")]
        split: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Apply the sustained-threshold rule to a metrics CSV
    SampleEfficiency {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        threshold: f64,
        #[arg(long, default_value_t = 4)]
        consecutive: usize,
        #[arg(long = "steps-per-epoch", default_value_t = 500)]
        steps_per_epoch: usize,
    },
    /// Dump an FPV1 video's frames as PPM images
    DumpFrames {
        /// Input .fpv1 file
        #[arg(long)]
        input: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses and executes one invocation; never panics on bad input.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { out, count, templates, cfg } => gen_data(&out, count, templates.as_deref(), &cfg),
        Command::TrainTokenizer { data, out, steps, cfg } => train_tokenizer_cmd(&data, &out, steps, &cfg),
        Command::TrainWorldmodel { arch, data, tokenizer, out, epochs, metrics, cfg } => {
            let arch: Arch = arch.parse()?;
            train_worldmodel_cmd(arch, &data, &tokenizer, &out, epochs, metrics.as_deref(), &cfg)
        }
        Command::TrainClassifier { data, tokenizer, worldmodel, out, epochs, metrics, cfg } => {
            train_classifier_cmd(&data, &tokenizer, &worldmodel, &out, epochs, metrics.as_deref(), &cfg)
        }
        Command::Eval { data, tokenizer, worldmodel, classifier, split, cfg } => {
            eval_cmd(&data, &tokenizer, &worldmodel, &classifier, &split, &cfg)
        }
        Command::SampleEfficiency { metrics, threshold, consecutive, steps_per_epoch } => {
            match sample_efficiency(&metrics, threshold, consecutive, steps_per_epoch)? {
                Some(steps) => println!("{steps}"),
                None => println!("not reached"),
            }
            Ok(())
        }
        Command::DumpFrames { input, out } => dump_frames(&input, &out),
    }
}

fn parse_templates(names: Option<&str>, cfg: &RunConfig) -> Result<Vec<slotwm_core::physics::TaskTemplate>> {
    let all = builtin_templates(cfg.t_min, cfg.t_max, cfg.sim_dt, cfg.sim_steps_per_frame);
    let Some(names) = names else { return Ok(all) };
    let mut chosen = Vec::new();
    for name in names.split(',') {
        let name = name.trim();
        let t = all
            .iter()
            .find(|t| t.kind.name() == name)
            .ok_or_else(|| Error::input(format!("unknown template {name:?}")))?;
        chosen.push(*t);
    }
    Ok(chosen)
}

fn gen_data(out: &Path, count: usize, templates: Option<&str>, cfg_args: &ConfigArgs) -> Result<()> {
    let cfg = cfg_args.build(None)?;
    let templates = parse_templates(templates, &cfg)?;
    let manifest = generate_dataset(
        &templates,
        count,
        cfg.seed,
        out,
        cfg.frame_width,
        cfg.frame_height,
        cfg.contact_epsilon,
    )?;
    let (train, eval) = manifest.split_counts();
    println!(
        "wrote {} samples to {} ({} train / {} eval, success fraction {:.3})",
        manifest.entries.len(),
        out.display(),
        train,
        eval,
        manifest.success_fraction()
    );
    Ok(())
}

fn train_tokenizer_cmd(data: &Path, out: &Path, steps: Option<usize>, cfg_args: &ConfigArgs) -> Result<()> {
    let cfg = cfg_args.build(None)?;
    let (train_samples, _) = load_split_dataset(data)?;
    let mut frames: Vec<Tensor<f32>> = Vec::new();
    for s in &train_samples {
        for t in 0..s.frames_total {
            frames.push(s.frame_tensor(t));
        }
    }
    let opts = TokenizerTrainOptions {
        steps: steps.unwrap_or(cfg.vq_steps),
        batch_size: cfg.batch_size,
        learning_rate: cfg.vq_lr,
        eval_every: 50,
    };
    println!("training tokenizer on {} frames for {} steps", frames.len(), opts.steps);
    let (tok, curve) = train_tokenizer(&frames, TokenizerConfig::from_run(&cfg), opts, cfg.seed)?;
    for p in &curve {
        println!("step {:>6}  loss {:.6}", p.step, p.loss);
    }
    let mae = reconstruction_mae(&tok, &frames[..frames.len().min(64)])?;
    println!("reconstruction MAE over {} frames: {:.6}", frames.len().min(64), mae);
    save_params(&tok.params, &cfg, out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn train_worldmodel_cmd(
    arch: Arch,
    data: &Path,
    tokenizer: &Path,
    out: &Path,
    epochs: Option<usize>,
    metrics: Option<&Path>,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = cfg_args.build(Some(arch))?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let (tok, tok_cfg) = load_tokenizer(tokenizer)?;
    if tok_cfg.tokens_per_frame() != cfg.tokens_per_frame() || tok_cfg.codebook_size != cfg.codebook_size {
        return Err(Error::input(format!(
            "tokenizer geometry ({} tokens, K={}) does not match run config ({}, K={})",
            tok_cfg.tokens_per_frame(),
            tok_cfg.codebook_size,
            cfg.tokens_per_frame(),
            cfg.codebook_size
        )));
    }
    let (train_samples, eval_samples) = load_split_dataset(data)?;
    println!("tokenizing {} train / {} eval videos", train_samples.len(), eval_samples.len());
    let train_videos = tokenize_videos(&tok, &train_samples)?;
    let eval_videos = tokenize_videos(&tok, &eval_samples)?;
    let opts = WmTrainOptions::from_run(&cfg);
    let records = match arch {
        Arch::Fptt => {
            let (wm, records) =
                train_worldmodel::<f32>(&train_videos, &eval_videos, WmConfig::from_run(&cfg), &opts)?;
            save_params(&wm.params, &cfg, out)?;
            records
        }
        Arch::DecoderOnly => {
            let (m, records) =
                train_decoder_only::<f32>(&train_videos, &eval_videos, BaselineConfig::from_run(&cfg), &opts)?;
            save_params(&m.params, &cfg, out)?;
            records
        }
    };
    for r in records.iter().filter(|r| r.split == Split::Eval) {
        println!("epoch {:>3}  eval loss {:.4}  token acc {:.3}", r.epoch, r.loss, r.accuracy);
    }
    if let Some(path) = metrics {
        emit_metrics_csv(&records, path)?;
        println!("metrics appended to {}", path.display());
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn train_classifier_cmd(
    data: &Path,
    tokenizer: &Path,
    worldmodel: &Path,
    out: &Path,
    epochs: Option<usize>,
    metrics: Option<&Path>,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let (tok, _) = load_tokenizer(tokenizer)?;
    let (model, wm_cfg) = load_worldmodel(worldmodel)?;
    let mut cfg = cfg_args.build(Some(model.arch()))?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let (train_samples, eval_samples) = load_split_dataset(data)?;
    println!(
        "precomputing {} rollouts with the {} world model",
        train_samples.len() + eval_samples.len(),
        wm_cfg.arch
    );
    let train_set = classifier_inputs(&model, &tok, &train_samples, cfg.n_given, cfg.seed)?;
    let eval_set = classifier_inputs(&model, &tok, &eval_samples, cfg.n_given, cfg.seed)?;
    let opts = WmTrainOptions::from_run(&cfg);
    let (clf, records) = train_classifier::<f32>(&train_set, &eval_set, ClassifierConfig::from_run(&cfg), &opts)?;
    for r in records.iter().filter(|r| r.split == Split::Eval) {
        println!(
            "epoch {:>3}  eval loss {:.4}  acc {:.3}  f1 {:.3}",
            r.epoch, r.loss, r.accuracy, r.f1
        );
    }
    if let Some(path) = metrics {
        emit_metrics_csv(&records, path)?;
        println!("metrics appended to {}", path.display());
    }
    save_params(&clf.params, &cfg, out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn eval_cmd(
    data: &Path,
    tokenizer: &Path,
    worldmodel: &Path,
    classifier: &Path,
    split: &str,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let split: Split = split.parse()?;
    let (tok, _) = load_tokenizer(tokenizer)?;
    let (model, _) = load_worldmodel(worldmodel)?;
    let cfg = cfg_args.build(Some(model.arch()))?;

    let (saved, snapshot) = slotwm_core::checkpoint::load(classifier)?;
    let clf_cfg = pipeline::config_from_snapshot(&snapshot)?;
    let mut clf = ClassifierParams::<f32>::init(ClassifierConfig::from_run(&clf_cfg), 0)?;
    clf.params.load_from(&saved)?;

    let (train_samples, eval_samples) = load_split_dataset(data)?;
    let samples = match split {
        Split::Train => train_samples,
        Split::Eval => eval_samples,
    };
    let set = classifier_inputs(&model, &tok, &samples, cfg.n_given, cfg.seed)?;
    let (loss, counts) = slotwm_core::classifier::evaluate_classifier(&clf, &set)?;
    let m = slotwm_core::metrics::compute_metrics(&counts)?;
    println!(
        "{split}: n={} loss={:.4} accuracy={:.4} precision={:.4} recall={:.4} f1={:.4}",
        counts.total(),
        loss,
        m.accuracy,
        m.precision,
        m.recall,
        m.f1
    );
    Ok(())
}

fn dump_frames(input: &Path, out: &Path) -> Result<()> {
    let sample = read_fpv1(input)?;
    std::fs::create_dir_all(out)?;
    for t in 0..sample.frames_total {
        let path = out.join(format!("frame_{t:03}.ppm"));
        write_ppm(sample.frame_rgb8(t), sample.width, sample.height, &path)?;
    }
    println!(
        "wrote {} frames ({}x{}, label {}) to {}",
        sample.frames_total,
        sample.width,
        sample.height,
        sample.label,
        out.display()
    );
    Ok(())
}
