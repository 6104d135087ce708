//! The `litho` command-line driver. [`run`] parses arguments, dispatches to
//! a subcommand and maps failures to exit codes: 1 for usage and
//! configuration mistakes, 2 for problems with the data itself.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use litho_core::config::{ConfigError, KeyValues, LithoConfig};
use litho_core::dataset::{augment, build_dataset, load_dataset, save_dataset, split, Dataset};
use litho_core::geometry::{enumerate_clips, ClipMix};
use litho_core::harness::{bound_instance, run_sweep, scale_from_kv, ExperimentConfig, HarnessError, SweepData};
use litho_core::metrics::{cd_rms, EvalReport};
use litho_core::nn::{load_model, save_model, train, Arch, Network, TrainConfig, TrainSet};
use litho_core::select::{select_samples, write_indices};
use litho_core::transfer::{transfer_train, PlanFile, TransferError};

/// A mistake in how the tool was invoked.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "litho", version, about = "Synthetic resist modeling: data, training, transfer and selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<&Path> {
        self.config.as_deref().ok_or_else(|| usage("--config is required"))
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate clips for a litho config and write the labeled dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 982)]
        clips: usize,
        /// Array, randomized-array and random-position fractions.
        #[arg(long, default_value = "0.3,0.4,0.3")]
        mix: String,
    },
    /// Train a regressor from scratch on a split of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Fraction of clips (split by --seed) to train on; the samples are augmented.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
    },
    /// Finetune a source model as described by a plan file.
    Transfer {
        #[command(flatten)]
        common: Common,
    },
    /// Pick k representative samples of a dataset by K-Medoids.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a model's thresholds and CDs on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate on the augmented test half of the split drawn from --seed.
        #[arg(long)]
        test_half: bool,
    },
    /// Run a fraction x seed x scheme sweep and write curve CSVs.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Replace the configured scheme list.
        #[arg(long)]
        schemes: Option<String>,
        /// Run only the --seed seed instead of the configured seed list.
        #[arg(long)]
        single_seed: bool,
    },
    /// Check the coreset loss bound on pools drawn from a dataset.
    CheckBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        pool: usize,
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 50_000)]
        max_epochs: usize,
    },
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return 1;
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            if matches!(
                h,
                HarnessError::Config(_) | HarnessError::BadExperiment(_) | HarnessError::UnknownScheme(_)
            ) {
                return 1;
            }
        }
        if let Some(TransferError::Config(_)) = cause.downcast_ref::<TransferError>() {
            return 1;
        }
    }
    2
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { common, clips, mix } => gen(&common, clips, &mix),
        Command::Train { common, data, fraction } => train_cmd(&common, &data, fraction),
        Command::Transfer { common } => transfer_cmd(&common),
        Command::Select { common, data, k } => select_cmd(&common, &data, k),
        Command::Eval {
            common,
            model,
            data,
            test_half,
        } => eval_cmd(&common, &model, &data, test_half),
        Command::Sweep {
            common,
            schemes,
            single_seed,
        } => sweep_cmd(&common, schemes.as_deref(), single_seed),
        Command::CheckBound {
            common,
            data,
            k,
            pool,
            instances,
            tol,
            max_epochs,
        } => check_bound_cmd(&common, &data, k, pool, instances, tol, max_epochs),
    }
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(common: &Common, clips: usize, mix: &str) -> Result<()> {
    let litho = LithoConfig::load(common.config()?)?;
    let parts: Vec<f64> = mix
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--mix `{mix}` is not three comma-separated numbers")))?;
    let [a, r, p] = parts[..] else {
        return Err(usage(format!("--mix `{mix}` needs exactly three fractions")));
    };
    let clip_set = enumerate_clips(&litho.rule, clips, ClipMix::new(a, r, p), common.seed).map_err(|e| usage(e.to_string()))?;
    let ds = build_dataset(&clip_set, &litho)?;
    let out = common.out()?;
    save_dataset(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    println!("{}: {} clips, {} samples -> {}", litho.tag, clip_set.len(), ds.len(), out.display());
    Ok(())
}

fn train_cmd(common: &Common, data: &Path, fraction: f64) -> Result<()> {
    let kv = match &common.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let arch: Arch = kv
        .get_str("arch")
        .unwrap_or("resnet10")
        .parse()
        .map_err(|_| usage(format!("unknown arch `{}`", kv.get_str("arch").unwrap_or_default())))?;
    let scale = scale_from_kv(&kv)?;
    let cfg = TrainConfig {
        seed: common.seed,
        ..TrainConfig::from_kv(&kv)?
    };
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(usage(format!("--fraction {fraction} must lie strictly between 0 and 1")));
    }
    let out = common.out()?;
    let ds = load_data(data)?;
    let (train_clips, _) = split(&ds, fraction, common.seed)?;
    if train_clips.is_empty() {
        bail!("fraction {fraction} of {} samples leaves no training data", ds.len());
    }
    let net = Network::new(arch.build(&scale))?;
    let set = TrainSet::from_dataset(&net, &augment(&train_clips)?)?;
    let outcome = train(&net, net.init(cfg.seed), &set, &cfg, 0)?;
    save_model(net.spec(), &outcome.state, out)?;
    println!(
        "{arch}: {} samples, {} epochs, final loss {:.6e} -> {}",
        set.len(),
        outcome.loss_history.len(),
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn transfer_cmd(common: &Common) -> Result<()> {
    let mut plan = PlanFile::load(common.config()?)?;
    if let Some(out) = &common.out {
        plan.out = out.clone();
    }
    // An explicit --seed wins over the plan's.
    if common.seed != 0 {
        plan.seed = common.seed;
        plan.plan.train.seed = common.seed;
    }
    let (spec, source) = load_model(&plan.source_model).with_context(|| format!("loading {}", plan.source_model.display()))?;
    let net = Network::new(spec.clone())?;
    let ds = load_data(&plan.dataset)?;
    let target = if plan.fraction >= 1.0 {
        ds
    } else {
        split(&ds, plan.fraction, plan.seed)?.0
    };
    if target.is_empty() {
        bail!("fraction {} leaves no finetuning data", plan.fraction);
    }
    let set = TrainSet::from_dataset(&net, &augment(&target)?)?;
    let outcome = transfer_train(&net, &spec, &source, &set, &plan.plan)?;
    save_model(&spec, &outcome.state, &plan.out)?;
    println!(
        "TF_{}: {} samples, final loss {:.6e} -> {}",
        plan.plan.k_fixed,
        set.len(),
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        plan.out.display()
    );
    Ok(())
}

fn select_cmd(common: &Common, data: &Path, k: Option<usize>) -> Result<()> {
    let from_config = match &common.config {
        Some(p) => KeyValues::load(p)?.get("k")?,
        None => None,
    };
    let k = k.or(from_config).ok_or_else(|| usage("give --k or a config with `k`"))?;
    let out = common.out()?;
    let ds = load_data(data)?;
    let picked = select_samples(&ds, k, common.seed)?;
    write_indices(out, &picked)?;
    println!("selected {} of {} samples -> {}", picked.len(), ds.len(), out.display());
    Ok(())
}

fn eval_cmd(common: &Common, model: &Path, data: &Path, test_half: bool) -> Result<()> {
    let ds = load_data(data)?;
    let litho = match &common.config {
        Some(p) => LithoConfig::load(p)?,
        None => LithoConfig::preset_by_tag(&ds.litho_tag)
            .ok_or_else(|| usage(format!("no built-in config for `{}`; pass --config", ds.litho_tag)))?,
    };
    let (spec, state) = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    let net = Network::new(spec)?;
    let test = if test_half {
        augment(&split(&ds, 0.5, common.seed)?.1)?
    } else {
        ds
    };
    let report = cd_rms(&test, &net, &state, litho.rule.contact_width())?;
    let fraction = if test_half { 0.5 } else { 1.0 };
    let csv = format!(
        "{}\n{}\n",
        EvalReport::CSV_HEADER,
        report.csv_row(&test.litho_tag, fraction, common.seed)
    );
    match &common.out {
        Some(out) => write_text(out, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn sweep_cmd(common: &Common, schemes: Option<&str>, single_seed: bool) -> Result<()> {
    let path = common.config()?;
    let mut kv = KeyValues::load(path)?;
    if let Some(s) = schemes {
        kv.set("schemes", s);
    }
    let mut cfg = ExperimentConfig::from_kv(&kv)?;
    if single_seed {
        cfg.seeds = vec![common.seed];
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: String| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut data = HashMap::new();
    for side in ["source", "target"] {
        let (Some(ds_path), Some(cfg_path)) = (
            kv.get::<String>(&format!("{side}_data"))?,
            kv.get::<String>(&format!("{side}_config"))?,
        ) else {
            continue;
        };
        let litho = LithoConfig::load(resolve(cfg_path))?;
        let tag = if side == "source" { &cfg.source_tag } else { &cfg.target_tag };
        if data.contains_key(tag) {
            continue;
        }
        let dataset = load_data(&resolve(ds_path))?;
        data.insert(tag.clone(), SweepData { dataset, litho });
    }
    let result = run_sweep(&cfg, &data)?;
    let out = common.out()?;
    result.write(out)?;
    for w in result.fidelity_warnings() {
        eprintln!("warning: {w}");
    }
    println!("{} runs -> {}", result.runs.len(), out.display());
    Ok(())
}

fn check_bound_cmd(
    common: &Common,
    data: &Path,
    k: usize,
    pool: usize,
    instances: usize,
    tol: f64,
    max_epochs: usize,
) -> Result<()> {
    let litho = LithoConfig::load(common.config()?)?;
    if k == 0 || k > pool {
        return Err(usage(format!("need 0 < k <= pool, got k = {k}, pool = {pool}")));
    }
    let ds = load_data(data)?;
    if ds.augmented {
        bail!("{}: pools are drawn from un-augmented datasets", data.display());
    }
    if ds.len() < pool {
        bail!("{} has {} samples, fewer than the pool size {pool}", data.display(), ds.len());
    }
    let mut csv = String::from("instance,seed,lhs,rhs,holds,probe_lhs,probe_holds,selected_loss,epochs\n");
    let mut held = 0;
    for i in 0..instances {
        let seed = common.seed + i as u64;
        let order = draw_pool(ds.len(), pool, seed);
        let inst = bound_instance(&ds.subset(&order), &litho.resist, k, seed, tol, max_epochs)?;
        held += inst.report.holds as usize;
        writeln!(
            csv,
            "{i},{seed},{},{},{},{},{},{},{}",
            inst.report.lhs,
            inst.report.rhs,
            inst.report.holds,
            inst.probe.lhs,
            inst.probe.holds,
            inst.report.selected_loss,
            inst.epochs
        )
        .expect("writing to a String");
    }
    match &common.out {
        Some(out) => write_text(out, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("bound held in {held}/{instances} instances");
    Ok(())
}

/// `pool` distinct sample indices, shuffled by `seed`, in ascending order.
fn draw_pool(n: usize, pool: usize, seed: u64) -> Vec<usize> {
    let mut rng = litho_core::rng::SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut picked = idx[..pool].to_vec();
    picked.sort_unstable();
    picked
}
