//! `inpaint-vad`: generate data, train, evaluate and score sequences.
//!
//! Exit codes: 0 success, 2 usage or invalid argument, 3 contract violation
//! (e.g. anomalous data in a training set), 4 data/model mismatch or
//! unreadable input.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use inpaint_vad::data::{
    build_test_set, generate_normal_set, load_dataset, load_sprites, read_dataset, save_dataset, synthetic_glyphs,
    CorruptionMode, Label, LabeledSequence, MovingConfig,
};
use inpaint_vad::eval::{checkpoint_id, export_loss_map, report_for, score_dataset, write_scores, EvalConfig};
use inpaint_vad::exec::set_threads;
use inpaint_vad::loss::Scope;
use inpaint_vad::model::{peek_checkpoint, read_checkpoint, write_checkpoint, ModelParameters, Variant};
use inpaint_vad::tensor::{Precision, Scalar};
use inpaint_vad::train::{train_with, ModelConfig, TrainConfig, TrainLogRecord};
use inpaint_vad::{Error, Exec, Frame, Sequence};

#[derive(Parser, Debug)]
#[command(name = "inpaint-vad", version, about = "Video anomaly detection by masked-frame inpainting")]
struct Cli {
    /// Worker threads; 1 runs strictly sequentially (bit-exact), 0 uses every core [default: 0]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Optional file of `key=value` lines (keys are flag names); flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a normal training set and a labeled test set
    Generate(GenerateArgs),
    /// Train on an anomaly-free dataset and write a checkpoint and log
    Train(TrainArgs),
    /// Score a labeled dataset and write report, score file and loss maps
    Eval(EvalArgs),
    /// Score a single sequence read from a file or standard input
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Number of training sequences [default: 500]
    #[arg(long)]
    train: Option<usize>,
    /// Number of normal test sequences [default: 50]
    #[arg(long)]
    test_normal: Option<usize>,
    /// Number of corrupted test sequences [default: 50]
    #[arg(long)]
    test_corrupted: Option<usize>,
    /// Corruption of the corrupted test sequences: both, temporal, spatial or mixed [default: both]
    #[arg(long)]
    corruption: Option<CorruptionMode>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for train.mmsq and test.mmsq
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frames per sequence [default: 20]
    #[arg(long)]
    frames: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    height: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    width: Option<usize>,
    /// Digits per sequence [default: 2]
    #[arg(long)]
    digits: Option<usize>,
    /// Sprite downscale factor, dividing 28 [default: 1]
    #[arg(long)]
    sprite_scale: Option<usize>,
    /// Minimum speed in pixels per frame [default: 2]
    #[arg(long)]
    speed_min: Option<f64>,
    /// Maximum speed in pixels per frame [default: 4]
    #[arg(long)]
    speed_max: Option<f64>,
    /// MNIST IDX image file; built-in glyphs are used when absent
    #[arg(long)]
    sprites: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset (MMSQ), normal sequences only
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for model.ckpt and train.log
    #[arg(long)]
    out: Option<PathBuf>,
    /// [default: 1000]
    #[arg(long)]
    steps: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Conditioning frames per window [default: 9]
    #[arg(long)]
    context_len: Option<usize>,
    /// ConvLSTM hidden channels [default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// Intensity bins: 32, 64, 128 or 256 [default: 256]
    #[arg(long)]
    bins: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    decoder_width: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    meta_hidden: Option<usize>,
    /// full, no-attention or no-masked-frame [default: full]
    #[arg(long)]
    variant: Option<Variant>,
    /// Mask lattice period along rows [default: 4]
    #[arg(long)]
    mask_rows: Option<usize>,
    /// Mask lattice period along columns [default: 5]
    #[arg(long)]
    mask_cols: Option<usize>,
    /// Pixels entering the training loss: all or masked [default: all]
    #[arg(long)]
    scope: Option<Scope>,
    /// 32 or 64 [default: 32]
    #[arg(long)]
    precision: Option<Precision>,
    /// [default: 10]
    #[arg(long)]
    log_interval: Option<usize>,
    /// Steps between checkpoint writes [default: 500]
    #[arg(long)]
    checkpoint_interval: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Labeled dataset (MMSQ)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for report.txt, scores.tsv and loss maps
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pixels entering the score: all or masked [default: masked]
    #[arg(long)]
    scope: Option<Scope>,
    /// Seed of the evaluation mask [default: 0]
    #[arg(long)]
    mask_seed: Option<u64>,
    /// Masks averaged per frame [default: 1]
    #[arg(long)]
    masks: Option<usize>,
    /// Export P5 loss maps of the k highest-scoring frames [default: 0]
    #[arg(long)]
    maps: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    mask_rows: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    mask_cols: Option<usize>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Checkpoint to score with
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Single-sequence MMSQ file or raw frames (T x C x H x W bytes); `-` or absent reads standard input
    #[arg(long)]
    input: Option<PathBuf>,
    /// [default: masked]
    #[arg(long)]
    scope: Option<Scope>,
    /// [default: 0]
    #[arg(long)]
    mask_seed: Option<u64>,
    /// [default: 1]
    #[arg(long)]
    masks: Option<usize>,
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => 2,
            Error::Contract(_) => 3,
            Error::Shape(_) | Error::Format { .. } | Error::Checkpoint { .. } | Error::Precision { .. } | Error::Io { .. } => 4,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Effective settings: flag, else config file, else default. Every
/// resolved value is echoed to standard error.
struct Settings {
    file: BTreeMap<String, String>,
    used: Vec<String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Outcome<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Failure::usage(format!("config line {}: expected key=value", n + 1)))?;
                file.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Self { file, used: Vec::new() })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Outcome<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.push(key.to_string());
        match (flag, self.file.get(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(raw)) => raw
                .parse()
                .map(Some)
                .map_err(|e| Failure::usage(format!("config key `{key}`: {e}"))),
            (None, None) => Ok(None),
        }
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Outcome<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        eprintln!("{key}={v}");
        Ok(v)
    }

    fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Outcome<PathBuf> {
        let v = self.optional_path(key, flag)?;
        v.ok_or_else(|| Failure::usage(format!("--{key} is required")))
    }

    fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Outcome<Option<PathBuf>> {
        let v: Option<PathBuf> = self.lookup(key, flag)?;
        if let Some(p) = &v {
            eprintln!("{key}={}", p.display());
        }
        Ok(v)
    }

    /// Rejects config keys no setting consumed.
    fn finish(&self) -> Outcome {
        match self.file.keys().find(|k| !self.used.contains(k)) {
            Some(k) => Err(Failure::usage(format!("config key `{k}` is not a setting of this command"))),
            None => Ok(()),
        }
    }
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn read_input(path: Option<&Path>) -> Outcome<Vec<u8>> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::read(p).map_err(|e| Error::io(p, e).into()),
        _ => {
            let mut bytes = Vec::new();
            std::io::stdin().read_to_end(&mut bytes).map_err(|e| Error::io("<stdin>", e))?;
            Ok(bytes)
        }
    }
}

fn cmd_generate(args: GenerateArgs, s: &mut Settings, exec: Exec) -> Outcome {
    let defaults = MovingConfig::default();
    let n_train = s.get("train", args.train, 500)?;
    let n_normal = s.get("test-normal", args.test_normal, 50)?;
    let n_corrupted = s.get("test-corrupted", args.test_corrupted, 50)?;
    let mode = s.get("corruption", args.corruption, CorruptionMode::Both)?;
    let seed = s.get("seed", args.seed, 0)?;
    let out = s.required_path("out", args.out)?;
    let config = MovingConfig {
        frames: s.get("frames", args.frames, defaults.frames)?,
        height: s.get("height", args.height, defaults.height)?,
        width: s.get("width", args.width, defaults.width)?,
        digits: s.get("digits", args.digits, defaults.digits)?,
        sprite_scale: s.get("sprite-scale", args.sprite_scale, defaults.sprite_scale)?,
        speed: (s.get("speed-min", args.speed_min, defaults.speed.0)?, s.get("speed-max", args.speed_max, defaults.speed.1)?),
    };
    let sprites_path = s.optional_path("sprites", args.sprites)?;
    s.finish()?;

    let sprites = match &sprites_path {
        Some(p) => load_sprites(p)?,
        None => synthetic_glyphs(),
    };
    config.validate()?;
    let train = generate_normal_set(&sprites, &config, n_train, seed, exec)?;
    let test = build_test_set(&sprites, &config, n_normal, n_corrupted, mode, seed, exec)?;
    let dims = (config.frames, 1, config.height, config.width);
    create_dir(&out)?;
    save_dataset(out.join("train.mmsq"), &train, dims)?;
    save_dataset(out.join("test.mmsq"), &test, dims)?;
    eprintln!("wrote {} training and {} test sequences to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs, s: &mut Settings, exec: Exec) -> Outcome {
    let d = TrainConfig::default();
    let data = s.required_path("data", args.data)?;
    let out = s.required_path("out", args.out)?;
    let model = ModelConfig {
        hidden: s.get("hidden", args.hidden, d.model.hidden)?,
        context_len: s.get("context-len", args.context_len, d.model.context_len)?,
        bins: s.get("bins", args.bins, d.model.bins)?,
        decoder_width: s.get("decoder-width", args.decoder_width, d.model.decoder_width)?,
        meta_hidden: s.get("meta-hidden", args.meta_hidden, d.model.meta_hidden)?,
        variant: s.get("variant", args.variant, d.model.variant)?,
    };
    let config = TrainConfig {
        learning_rate: s.get("lr", args.lr, d.learning_rate)?,
        batch_size: s.get("batch", args.batch, d.batch_size)?,
        steps: s.get("steps", args.steps, d.steps)?,
        seed: s.get("seed", args.seed, d.seed)?,
        mask_periods: (s.get("mask-rows", args.mask_rows, d.mask_periods.0)?, s.get("mask-cols", args.mask_cols, d.mask_periods.1)?),
        loss_scope: s.get("scope", args.scope, d.loss_scope)?,
        log_interval: s.get("log-interval", args.log_interval, d.log_interval)?,
        checkpoint_interval: s.get("checkpoint-interval", args.checkpoint_interval, d.checkpoint_interval)?,
        precision: s.get("precision", args.precision, d.precision)?,
        model,
        exec,
    };
    s.finish()?;
    config.validate()?;

    let (dataset, _) = load_dataset(&data)?;
    create_dir(&out)?;
    match config.precision {
        Precision::F32 => run_train::<f32>(&config, &dataset, &out),
        Precision::F64 => run_train::<f64>(&config, &dataset, &out),
    }
}

fn run_train<T: Scalar>(config: &TrainConfig, dataset: &[LabeledSequence], out: &Path) -> Outcome {
    let ckpt = out.join("model.ckpt");
    let (params, logs) = train_with::<T, _>(config, dataset, |step, p| {
        eprintln!("checkpoint at step {step}");
        std::fs::write(&ckpt, write_checkpoint(p)).map_err(|e| Error::io(&ckpt, e))
    })?;
    write_file(&ckpt, &write_checkpoint(&params))?;
    let mut log = Vec::new();
    TrainLogRecord::write_all(&logs, &mut log).expect("writing to memory");
    write_file(&out.join("train.log"), &log)?;
    if let Some(last) = logs.last() {
        eprintln!("step {} mean_nll {:.5}", last.step, last.mean_nll);
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, s: &mut Settings, exec: Exec) -> Outcome {
    let d = EvalConfig::default();
    let ckpt = s.required_path("ckpt", args.ckpt)?;
    let data = s.required_path("data", args.data)?;
    let out = s.required_path("out", args.out)?;
    let config = EvalConfig {
        scope: s.get("scope", args.scope, d.scope)?,
        mask_seed: s.get("mask-seed", args.mask_seed, d.mask_seed)?,
        masks: s.get("masks", args.masks, d.masks)?,
        mask_periods: (s.get("mask-rows", args.mask_rows, d.mask_periods.0)?, s.get("mask-cols", args.mask_cols, d.mask_periods.1)?),
        exec,
    };
    let maps = s.get("maps", args.maps, 0)?;
    s.finish()?;

    let bytes = std::fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let (dataset, _) = load_dataset(&data)?;
    let (_, precision) = peek_checkpoint(&bytes)?;
    match precision {
        Precision::F32 => run_eval(read_checkpoint::<f32>(&bytes)?, &bytes, &dataset, &config, maps, &out),
        Precision::F64 => run_eval(read_checkpoint::<f64>(&bytes)?, &bytes, &dataset, &config, maps, &out),
    }
}

fn run_eval<T: Scalar>(
    params: ModelParameters<T>,
    ckpt_bytes: &[u8],
    dataset: &[LabeledSequence],
    config: &EvalConfig,
    maps: usize,
    out: &Path,
) -> Outcome {
    let scored = score_dataset(&params, dataset, config)?;
    let report = report_for(&scored, &checkpoint_id(ckpt_bytes))?;
    create_dir(out)?;
    let mut scores = Vec::new();
    write_scores(&scored, &mut scores).expect("writing to memory");
    write_file(&out.join("scores.tsv"), &scores)?;
    let mut worst: Vec<_> = scored.iter().collect();
    worst.sort_by(|a, b| b.score.mean_nll.total_cmp(&a.score.mean_nll).then(a.id.cmp(&b.id)));
    for (rank, s) in worst.iter().take(maps).enumerate() {
        export_loss_map(&s.loss_map, out.join(format!("map_{rank:02}_seq{}.pgm", s.id)))?;
    }
    write_file(&out.join("report.txt"), report.to_string().as_bytes())?;
    print!("{report}");
    Ok(())
}

/// One sequence from an MMSQ file holding exactly one record, or raw frames
/// matching the model's frame dims.
fn parse_single(bytes: &[u8], dims: (usize, usize, usize)) -> Outcome<LabeledSequence> {
    if bytes.starts_with(b"MMSQ") {
        let (mut seqs, _) = read_dataset(bytes)?;
        if seqs.len() != 1 {
            return Err(Error::Format { what: "MMSQ", offset: 6, reason: format!("expected 1 sequence, found {}", seqs.len()) }.into());
        }
        return Ok(seqs.pop().expect("one sequence"));
    }
    let (c, h, w) = dims;
    let frame_len = c * h * w;
    if bytes.is_empty() || bytes.len() % frame_len != 0 {
        return Err(Error::Format {
            what: "raw frames",
            offset: bytes.len() - bytes.len() % frame_len,
            reason: format!("{} bytes is not a whole number of {c}x{h}x{w} frames", bytes.len()),
        }
        .into());
    }
    let frames = bytes
        .chunks_exact(frame_len)
        .map(|chunk| Frame::new(h, w, c, chunk.to_vec()))
        .collect::<inpaint_vad::Result<Vec<_>>>()?;
    Ok(LabeledSequence { sequence: Sequence::new(frames)?, label: Label::Normal, corruption: None })
}

fn cmd_score(args: ScoreArgs, s: &mut Settings, exec: Exec) -> Outcome {
    let d = EvalConfig::default();
    let ckpt = s.required_path("ckpt", args.ckpt)?;
    let input = s.optional_path("input", args.input)?;
    let config = EvalConfig {
        scope: s.get("scope", args.scope, d.scope)?,
        mask_seed: s.get("mask-seed", args.mask_seed, d.mask_seed)?,
        masks: s.get("masks", args.masks, d.masks)?,
        exec,
        ..d
    };
    s.finish()?;

    let bytes = std::fs::read(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let input = read_input(input.as_deref())?;
    let (_, precision) = peek_checkpoint(&bytes)?;
    match precision {
        Precision::F32 => run_score(read_checkpoint::<f32>(&bytes)?, &input, &config),
        Precision::F64 => run_score(read_checkpoint::<f64>(&bytes)?, &input, &config),
    }
}

fn run_score<T: Scalar>(params: ModelParameters<T>, input: &[u8], config: &EvalConfig) -> Outcome {
    let h = params.hyper();
    let seq = parse_single(input, (h.channels, h.height, h.width))?;
    let clock = Instant::now();
    let scored = score_dataset(&params, std::slice::from_ref(&seq), config)?;
    let ms = clock.elapsed().as_secs_f64() * 1e3;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "mean_nll={} ms={ms:.3}", scored[0].score.mean_nll).map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let mut settings = Settings::load(cli.config.as_deref())?;
    let threads = settings.get("threads", cli.threads, 0)?;
    set_threads(threads);
    let exec = Exec::from_threads(threads);
    match cli.command {
        Command::Generate(a) => cmd_generate(a, &mut settings, exec),
        Command::Train(a) => cmd_train(a, &mut settings, exec),
        Command::Eval(a) => cmd_eval(a, &mut settings, exec),
        Command::Score(a) => cmd_score(a, &mut settings, exec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
