//! Command-line driver: dataset generation, training, evaluation, the
//! objective ablation, and the built-in verification suite.
//!
//! Exit codes: 0 success, 2 usage/config, 3 I/O, 4 numeric failure,
//! 5 artifact integrity.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use angular_at::attack::AttackSpec;
use angular_at::config::Config;
use angular_at::data::{gen_blobs, load_dataset, load_idx_dataset, save_dataset, Split};
use angular_at::error::{Error, Result};
use angular_at::eval::{
    angle_statistics, natural_accuracy, robust_accuracy, run_ablation, summary_table, MetricsRecord,
};
use angular_at::model::{init_parameters, HeadKind, ModelSpec};
use angular_at::selfcheck::{run_selfcheck, Fault};
use angular_at::storage::{load_checkpoint, save_checkpoint};
use angular_at::train::{fit, Objective, TrainSpec};
use angular_at::Classifier;

use angular_at::attack::EVAL_PRESETS;

#[derive(Parser)]
#[command(
    name = "angular-at",
    version,
    about = "Desk-scale adversarial training with hypersphere heads and angular regularizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset on disk (features/labels tensors plus a manifest).
    #[command(subcommand)]
    GenData(GenDataCommand),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint under the requested attacks.
    Eval(EvalArgs),
    /// Train and evaluate the four objective configurations.
    Ablate(AblateArgs),
    /// Run the gradient and format verification suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Subcommand)]
enum GenDataCommand {
    /// Gaussian blobs with class means on a circle.
    Blobs(BlobArgs),
    /// Convert an IDX image/label pair.
    Idx(IdxArgs),
}

#[derive(Args)]
struct BlobArgs {
    /// Number of classes.
    #[arg(long)]
    k: usize,
    /// Feature dimension (>= 2).
    #[arg(long)]
    dim: usize,
    /// Examples per class.
    #[arg(long)]
    n: usize,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    /// Generation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; writes <out>.features.aat, <out>.labels.aat, <out>.manifest.
    #[arg(long)]
    out: PathBuf,
    /// Split tag recorded in the manifest (train|test).
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args)]
struct IdxArgs {
    /// IDX image file (magic 0x00000803).
    #[arg(long)]
    images: PathBuf,
    /// IDX label file (magic 0x00000801).
    #[arg(long)]
    labels: PathBuf,
    /// Number of classes.
    #[arg(long)]
    classes: usize,
    /// Output stem.
    #[arg(long)]
    out: PathBuf,
    /// Split tag recorded in the manifest (train|test).
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Flat key=value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// angular_at | pgd_at_plain | pgd_at_he | natural.
    #[arg(long)]
    objective: Option<String>,
    /// Training dataset stem (as written by gen-data).
    #[arg(long)]
    train_data: Option<String>,
    /// Output directory for checkpoint.aatc and metrics.log.
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Comma-separated decay fractions, e.g. 0.75,0.9.
    #[arg(long)]
    lr_decay_points: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Cosine scale s.
    #[arg(long)]
    s: Option<f64>,
    /// Additive angular margin m.
    #[arg(long)]
    m: Option<f64>,
    /// Training seed (shuffling and initialization).
    #[arg(long)]
    seed: Option<u64>,
    /// Full layer dims including input, e.g. 2,128,64,32.
    #[arg(long)]
    layer_dims: Option<String>,
    #[arg(long)]
    attack_epsilon: Option<f64>,
    #[arg(long)]
    attack_step_size: Option<f64>,
    #[arg(long)]
    attack_iterations: Option<usize>,
    #[arg(long)]
    attack_random_start: Option<bool>,
    #[arg(long)]
    attack_seed: Option<u64>,
    #[arg(long)]
    run_id: Option<String>,
    /// Threads for attack crafting (pure map; results identical to 1).
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Test dataset stem.
    #[arg(long)]
    test_data: Option<String>,
    /// Comma-separated attacks: pgd20, pgd500, cw20, spsa, none.
    #[arg(long)]
    attacks: Option<String>,
    /// Override the L-inf radius for all requested attacks.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the per-iteration step size for all requested attacks.
    #[arg(long)]
    step_size: Option<f64>,
    /// Attack seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also report mean clean/adversarial true-class angles (hypersphere
    /// heads; uses the first attack).
    #[arg(long, default_value_t = false)]
    angles: bool,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_data: Option<String>,
    #[arg(long)]
    test_data: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layer_dims: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Test fixture: negate the wfc gradient to prove the suite catches it.
    #[arg(long, default_value_t = false)]
    inject_wfc_sign_bug: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenData(cmd) => cmd_gen_data(cmd).map(|()| 0),
        Command::Train(args) => cmd_train(args).map(|()| 0),
        Command::Eval(args) => cmd_eval(args).map(|()| 0),
        Command::Ablate(args) => cmd_ablate(args).map(|()| 0),
        Command::Selfcheck(args) => cmd_selfcheck(args),
    }
}

fn now_ts() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Print a line to stdout, tolerating a closed pipe (e.g. `... | head`):
/// console output is advisory; files are the artifact of record.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

/// Like [`emit`] for text that already ends with a newline.
fn emit_block(text: &str) {
    let _ = write!(std::io::stdout(), "{text}");
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::from_file(p),
        None => Ok(Config::new()),
    }
}

fn set_if<T: ToString>(cfg: &mut Config, key: &str, value: Option<T>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

/// Build the TrainSpec from config + objective defaults.
fn train_spec_from_config(cfg: &Config) -> Result<TrainSpec> {
    let objective = match cfg.get("objective") {
        Some(raw) => Objective::from_str(&raw.replace('-', "_"))?,
        None => Objective::AngularAt,
    };
    let seed = cfg.get_u64("seed")?.unwrap_or(0);
    let mut spec = TrainSpec::for_objective(objective, seed);
    if let Some(v) = cfg.get_f64("alpha")? {
        spec.alpha = v;
    }
    if let Some(v) = cfg.get_f64("beta")? {
        spec.beta = v;
    }
    if let Some(v) = cfg.get_f64("s")? {
        spec.s = v;
    }
    if let Some(v) = cfg.get_f64("m")? {
        spec.m = v;
    }
    if let Some(v) = cfg.get_usize("epochs")? {
        spec.epochs = v;
    }
    if let Some(v) = cfg.get_usize("batch_size")? {
        spec.batch_size = v;
    }
    if let Some(v) = cfg.get_f64("lr")? {
        spec.lr = v;
    }
    if let Some(v) = cfg.get_f64("momentum")? {
        spec.momentum = v;
    }
    if let Some(v) = cfg.get_f64("weight_decay")? {
        spec.weight_decay = v;
    }
    if let Some(v) = cfg.get_f64_list("lr_decay_points")? {
        spec.lr_decay_points = v;
    }
    if let Some(v) = cfg.get_f64("attack_epsilon")? {
        spec.attack.epsilon = v;
    }
    if let Some(v) = cfg.get_f64("attack_step_size")? {
        spec.attack.step_size = v;
    }
    if let Some(v) = cfg.get_usize("attack_iterations")? {
        spec.attack.iterations = v;
    }
    if let Some(v) = cfg.get_bool("attack_random_start")? {
        spec.attack.random_start = v;
    }
    if let Some(v) = cfg.get_u64("attack_seed")? {
        spec.attack.seed = v;
    }
    if let Some(v) = cfg.get_f64("spsa_perturbation")? {
        spec.attack.spsa_perturbation = v;
    }
    if let Some(v) = cfg.get_usize("spsa_samples")? {
        spec.attack.spsa_samples = v;
    }
    if let Some(v) = cfg.get_f64("spsa_lr")? {
        spec.attack.spsa_lr = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn model_spec_from_config(
    cfg: &Config,
    input_dim: usize,
    classes: usize,
    head: HeadKind,
    scale: f64,
) -> Result<ModelSpec> {
    let layer_dims = match cfg.get_usize_list("layer_dims")? {
        Some(dims) => {
            if dims.first() != Some(&input_dim) {
                return Err(Error::Config {
                    message: format!(
                        "layer_dims must start with the dataset input dim {input_dim}, got {dims:?}"
                    ),
                });
            }
            dims
        }
        None => vec![input_dim, 128, 64, 32],
    };
    let spec = ModelSpec {
        layer_dims,
        classes,
        head,
        scale,
    };
    spec.validate()?;
    Ok(spec)
}

fn append_lines(dir: &str, name: &str, lines: &[String]) -> Result<()> {
    let dir_path = Path::new(dir);
    std::fs::create_dir_all(dir_path).map_err(|source| Error::Io {
        path: dir_path.to_path_buf(),
        source,
    })?;
    let path = dir_path.join(name);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    for line in lines {
        writeln!(file, "{line}").map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

fn cmd_gen_data(cmd: GenDataCommand) -> Result<()> {
    match cmd {
        GenDataCommand::Blobs(args) => {
            let split = Split::from_str(&args.split)?;
            let ds = gen_blobs(args.k, args.dim, args.n, args.spread, args.seed)?.with_split(split);
            save_dataset(&args.out, &ds)?;
            emit(&format!(
                "wrote {} examples ({} classes, dim {}) to {}.{{features.aat,labels.aat,manifest}}",
                ds.len(),
                ds.classes(),
                ds.input_dim(),
                args.out.display()
            ));
            Ok(())
        }
        GenDataCommand::Idx(args) => {
            let split = Split::from_str(&args.split)?;
            let ds = load_idx_dataset(&args.images, &args.labels, args.classes, split)?;
            save_dataset(&args.out, &ds)?;
            emit(&format!(
                "wrote {} examples ({} classes, dim {}) to {}.{{features.aat,labels.aat,manifest}}",
                ds.len(),
                ds.classes(),
                ds.input_dim(),
                args.out.display()
            ));
            Ok(())
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    set_if(&mut cfg, "objective", args.objective)?;
    set_if(&mut cfg, "train_data", args.train_data)?;
    set_if(&mut cfg, "out_dir", args.out_dir)?;
    set_if(&mut cfg, "epochs", args.epochs)?;
    set_if(&mut cfg, "batch_size", args.batch_size)?;
    set_if(&mut cfg, "lr", args.lr)?;
    set_if(&mut cfg, "momentum", args.momentum)?;
    set_if(&mut cfg, "weight_decay", args.weight_decay)?;
    set_if(&mut cfg, "lr_decay_points", args.lr_decay_points)?;
    set_if(&mut cfg, "alpha", args.alpha)?;
    set_if(&mut cfg, "beta", args.beta)?;
    set_if(&mut cfg, "s", args.s)?;
    set_if(&mut cfg, "m", args.m)?;
    set_if(&mut cfg, "seed", args.seed)?;
    set_if(&mut cfg, "layer_dims", args.layer_dims)?;
    set_if(&mut cfg, "attack_epsilon", args.attack_epsilon)?;
    set_if(&mut cfg, "attack_step_size", args.attack_step_size)?;
    set_if(&mut cfg, "attack_iterations", args.attack_iterations)?;
    set_if(&mut cfg, "attack_random_start", args.attack_random_start)?;
    set_if(&mut cfg, "attack_seed", args.attack_seed)?;
    set_if(&mut cfg, "run_id", args.run_id)?;

    let spec = train_spec_from_config(&cfg)?;
    let train_stem = cfg.require("train_data")?.to_string();
    let out_dir = cfg.require("out_dir")?.to_string();
    let dataset = load_dataset(Path::new(&train_stem))?;
    let arch = model_spec_from_config(
        &cfg,
        dataset.input_dim(),
        dataset.classes(),
        spec.objective.head_kind(),
        spec.s,
    )?;
    let clf = init_parameters(&arch, spec.seed)?;
    let run_id = cfg
        .get("run_id")
        .map(str::to_string)
        .unwrap_or_else(|| format!("{}-seed{}", spec.objective.as_str(), spec.seed));

    let (trained, mut records) = fit(clf, &dataset, &spec, args.workers)?;

    let ckpt_path = Path::new(&out_dir).join("checkpoint.aatc");
    std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
        path: PathBuf::from(&out_dir),
        source,
    })?;
    save_checkpoint(&trained, &ckpt_path)?;

    let ts = now_ts();
    let mut lines = Vec::with_capacity(records.len());
    for rec in &mut records {
        rec.run_id = run_id.clone();
        rec.validate()?;
        lines.push(rec.to_line(&ts));
    }
    for line in &lines {
        emit(line);
    }
    append_lines(&out_dir, "metrics.log", &lines)?;
    emit(&format!(
        "checkpoint: {} (params checksum {:016x})",
        ckpt_path.display(),
        trained.param_checksum()
    ));
    Ok(())
}

fn parse_eval_attack(
    name: &str,
    seed: u64,
    epsilon: Option<f64>,
    step_size: Option<f64>,
) -> Result<Option<AttackSpec>> {
    let Some(mut spec) = AttackSpec::eval_preset(name, seed)? else {
        return Ok(None);
    };
    if let Some(e) = epsilon {
        spec.epsilon = e;
    }
    if let Some(a) = step_size {
        spec.step_size = a;
    }
    spec.validate()?;
    Ok(Some(spec))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    set_if(&mut cfg, "checkpoint", args.checkpoint)?;
    set_if(&mut cfg, "test_data", args.test_data)?;
    set_if(&mut cfg, "attacks", args.attacks)?;
    set_if(&mut cfg, "out_dir", args.out_dir)?;
    set_if(&mut cfg, "run_id", args.run_id)?;

    let ckpt = cfg.require("checkpoint")?.to_string();
    let test_stem = cfg.require("test_data")?.to_string();
    let clf: Classifier = load_checkpoint(Path::new(&ckpt))?;
    let dataset = load_dataset(Path::new(&test_stem))?;
    let attack_names: Vec<String> = cfg
        .get("attacks")
        .unwrap_or("none")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if attack_names.is_empty() {
        return Err(Error::invalid(format!(
            "no attacks requested (valid: {EVAL_PRESETS})"
        )));
    }

    let run_id = cfg
        .get("run_id")
        .map(str::to_string)
        .unwrap_or_else(|| format!("eval-seed{}", args.seed));
    let mut rec = MetricsRecord::new("eval", &run_id, args.seed);
    rec.extra.insert(
        "test_checksum".to_string(),
        format!("{:016x}", angular_at::eval::dataset_checksum(&dataset)),
    );
    rec.extra.insert(
        "param_checksum".to_string(),
        format!("{:016x}", clf.param_checksum()),
    );

    let mut first_attack: Option<AttackSpec> = None;
    for name in &attack_names {
        match parse_eval_attack(name, args.seed, args.epsilon, args.step_size)? {
            None => {
                rec.natural_accuracy = Some(natural_accuracy(&clf, &dataset)?);
            }
            Some(attack) => {
                let acc = robust_accuracy(&clf, &dataset, &attack, args.workers)?;
                rec.robust.insert(name.clone(), acc);
                if first_attack.is_none() {
                    first_attack = Some(attack);
                }
            }
        }
    }
    if args.angles {
        let attack = first_attack
            .clone()
            .ok_or_else(|| Error::invalid("--angles needs at least one non-'none' attack"))?;
        let (clean, adv) = angle_statistics(&clf, &dataset, &attack, args.workers)?;
        rec.extra
            .insert("mean_angle_clean".to_string(), format!("{clean}"));
        rec.extra
            .insert("mean_angle_adv".to_string(), format!("{adv}"));
    }
    rec.validate()?;

    let ts = now_ts();
    let line = rec.to_line(&ts);
    emit(&line);
    emit_block(&summary_table(std::slice::from_ref(&rec)));
    if let Some(dir) = cfg.get("out_dir") {
        append_lines(dir, "metrics.log", std::slice::from_ref(&line))?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    set_if(&mut cfg, "train_data", args.train_data)?;
    set_if(&mut cfg, "test_data", args.test_data)?;
    set_if(&mut cfg, "out_dir", args.out_dir)?;
    set_if(&mut cfg, "epochs", args.epochs)?;
    set_if(&mut cfg, "batch_size", args.batch_size)?;
    set_if(&mut cfg, "lr", args.lr)?;
    set_if(&mut cfg, "alpha", args.alpha)?;
    set_if(&mut cfg, "beta", args.beta)?;
    set_if(&mut cfg, "seed", args.seed)?;
    set_if(&mut cfg, "layer_dims", args.layer_dims)?;

    if let Some(objective) = cfg.get("objective") {
        let normalized = objective.replace('-', "_");
        if Objective::from_str(&normalized)? != Objective::AngularAt {
            return Err(Error::invalid(
                "the ablation grid is defined for the angular_at objective",
            ));
        }
    }
    let base = train_spec_from_config(&cfg)?;
    let train_ds = load_dataset(Path::new(cfg.require("train_data")?))?;
    let test_ds = load_dataset(Path::new(cfg.require("test_data")?))?;
    let arch = model_spec_from_config(
        &cfg,
        train_ds.input_dim(),
        train_ds.classes(),
        HeadKind::Hypersphere,
        base.s,
    )?;

    let records = run_ablation(&arch, &train_ds, &test_ds, &base, args.workers)?;
    let ts = now_ts();
    let lines: Vec<String> = records.iter().map(|r| r.to_line(&ts)).collect();
    for line in &lines {
        emit(line);
    }
    emit_block(&summary_table(&records));
    if let Some(dir) = cfg.get("out_dir") {
        append_lines(dir, "metrics.log", &lines)?;
    }
    Ok(())
}

fn cmd_selfcheck(args: SelfcheckArgs) -> Result<u8> {
    let fault = if args.inject_wfc_sign_bug {
        Fault::WfcGradientSign
    } else {
        Fault::None
    };
    let report = run_selfcheck(fault);
    for rec in &report.records {
        emit(&rec.to_line());
    }
    let code = report.exit_code();
    emit(&format!(
        "selfcheck: {} of {} checks passed (exit {code})",
        report.records.iter().filter(|r| r.passed).count(),
        report.records.len()
    ));
    Ok(code as u8)
}
