//! `mocse`: train classifiers, attack them, export corruptions, evaluate and
//! compare reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mocse_core::attack::{pgd, AttackConfig, Norm};
use mocse_core::data::checkpoint::{load_checkpoint, save_checkpoint};
use mocse_core::data::config::Config;
use mocse_core::data::ppm::write_ppm;
use mocse_core::data::{unstack, Dataset};
use mocse_core::eval::{
    accuracy, comparison_csv, comparison_table, emit_report, export_corruptions, EvalReport,
    SEVERITIES,
};
use mocse_core::experiment::{evaluate, manifest};
use mocse_core::model::{argmax, Model, ModelKind};
use mocse_core::par;
use mocse_core::selftest;
use mocse_core::train::train;
use mocse_corrupt::CorruptionKind;
use ndgrad::Primitive;

#[derive(Parser)]
#[command(
    name = "mocse",
    version,
    about = "Class-specific expert mixtures under corruption and attack"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Attack a checkpoint on test images and export the pairs.
    Attack(AttackArgs),
    /// Export the corrupted test set as a PPM tree.
    Corrupt(CorruptArgs),
    /// Clean, corruption and adversarial accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Side-by-side comparison of evaluation reports.
    Report(ReportArgs),
    /// Finite-difference gradient checks.
    Gradcheck(FaultArgs),
    /// Every internal consistency check.
    Selftest(FaultArgs),
}

#[derive(Args)]
struct Common {
    /// Configuration file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (overrides the file's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<(Config, u64)> {
        let cfg = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => Config::default(),
        };
        let seed = self.seed.unwrap_or(cfg.seed);
        println!(
            "seed {seed}, config hash {}, {} thread(s)",
            cfg.hash(),
            par::threads()
        );
        Ok((cfg, seed))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// standard, mocse or moe (overrides `model.kind`).
    #[arg(long)]
    model: Option<ModelKind>,
    /// Train on PGD examples.
    #[arg(long)]
    adversarial: bool,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV; `<out>.csv` when absent.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Continue from this checkpoint's parameters and optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct AttackOverrides {
    /// inf or 2.
    #[arg(long)]
    norm: Option<Norm>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    no_random_start: bool,
}

impl AttackOverrides {
    fn apply(&self, mut a: AttackConfig) -> Result<AttackConfig> {
        a.norm = self.norm.unwrap_or(a.norm);
        a.delta = self.delta.unwrap_or(a.delta);
        a.alpha = self.alpha.unwrap_or(a.alpha);
        a.iterations = self.iterations.unwrap_or(a.iterations);
        a.target = self.target.or(a.target);
        a.random_start &= !self.no_random_start;
        a.validate()?;
        Ok(a)
    }
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    attack: AttackOverrides,
    /// Number of test images, from the start of the split.
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Directory for `<i>_clean.ppm`, `<i>_adv.ppm` and `deltas.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorruptArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// `all` or a comma-separated list of corruption names.
    #[arg(long, default_value = "all")]
    kinds: String,
    /// Comma-separated severities; 0 exports the quantized clean images.
    #[arg(long, value_delimiter = ',', default_values_t = SEVERITIES)]
    severities: Vec<u8>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    /// `onfly` or a directory written by `mocse corrupt`.
    #[arg(long, default_value = "onfly")]
    corruptions: String,
    /// Skip the adversarial evaluation.
    #[arg(long)]
    no_attack: bool,
    /// Model name in the report; the checkpoint's file stem when absent.
    #[arg(long)]
    id: Option<String>,
    /// Report path (TOML).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Two or more reports; the first is the baseline.
    #[arg(long, num_args = 2.., required = true)]
    reports: Vec<PathBuf>,
    /// Output prefix: writes `<out>.txt` and `<out>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FaultArgs {
    /// Corrupt this primitive's backward rule (e.g. conv2d).
    #[arg(long, value_parser = parse_primitive)]
    inject_fault: Option<Primitive>,
}

fn parse_primitive(s: &str) -> Result<Primitive, String> {
    Primitive::from_name(s).ok_or_else(|| format!("unknown primitive `{s}`"))
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let (mut cfg, seed) = a.common.resolve()?;
    if let Some(kind) = a.model {
        cfg.model.kind = kind;
    }
    let (train_set, test) = cfg.datasets(seed)?;
    let tc = cfg.train_config(seed, a.adversarial);
    let (mut model, resume) = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.model.kind() != cfg.model.kind {
                bail!(
                    "{} holds a {} model, not {}",
                    p.display(),
                    ck.model.kind(),
                    cfg.model.kind
                );
            }
            (ck.model, ck.state)
        }
        None => {
            let mc = cfg.model_config(
                cfg.model.kind,
                train_set.num_classes(),
                train_set.image_shape(),
            );
            (Model::init(mc, seed)?, None)
        }
    };
    println!(
        "training {} ({} parameters) on {} images, {} epochs{}",
        model.kind(),
        model.param_count(),
        train_set.len(),
        tc.epochs,
        if a.adversarial { ", adversarial" } else { "" }
    );
    let every = tc.checkpoint_every;
    let out = train(
        &mut model,
        &train_set,
        Some(&test),
        &tc,
        resume,
        &mut |r, m, state| {
            println!(
                "epoch {:>3}  lr {:.5}  loss {:.4}  held-out {}",
                r.epoch,
                r.learning_rate,
                r.train_loss,
                r.val_acc
                    .map_or("-".into(), |v| format!("{:.2}%", 100.0 * v))
            );
            if every > 0 && state.epoch % every as u64 == 0 {
                save_checkpoint(&a.out, m, Some(state))?;
            }
            Ok(())
        },
    )?;
    save_checkpoint(&a.out, &model, Some(&out.state))?;
    let history = a
        .history
        .clone()
        .unwrap_or_else(|| with_ext(&a.out, ".csv"));
    out.history.write_csv(&history)?;
    println!("held-out accuracy {:.2}%", 100.0 * accuracy(&model, &test)?);
    println!("wrote {} and {}", a.out.display(), history.display());
    Ok(())
}

fn test_split(cfg: &Config, seed: u64) -> Result<Dataset> {
    Ok(cfg.datasets(seed)?.1)
}

fn run_attack(a: &AttackArgs) -> Result<()> {
    let (cfg, seed) = a.common.resolve()?;
    let model = load_checkpoint(&a.ckpt)?.model;
    let attack = a.attack.apply(AttackConfig {
        seed: cfg.attack.seed ^ seed,
        ..cfg.attack
    })?;
    let test = test_split(&cfg, seed)?;
    let n = a.count.min(test.len());
    if n == 0 {
        bail!("--count must be positive");
    }
    let idx: Vec<usize> = (0..n).collect();
    let (x, labels) = test.batch::<f32>(&idx)?;
    let adv = pgd(&model, &x, &labels, &attack)?;
    let classes = model.num_classes();
    let clean_pred: Vec<usize> = model
        .logits(&x)?
        .data()
        .chunks(classes)
        .map(argmax)
        .collect();
    let adv_pred: Vec<usize> = model
        .logits(&adv)?
        .data()
        .chunks(classes)
        .map(argmax)
        .collect();

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let clean_imgs = unstack(&x)?;
    let adv_imgs = unstack(&adv)?;
    let mut deltas = String::from("index,label,clean_pred,adv_pred,distance\n");
    let mut correct = 0;
    for i in 0..n {
        write_ppm(a.out.join(format!("{i}_clean.ppm")), &clean_imgs[i])?;
        write_ppm(a.out.join(format!("{i}_adv.ppm")), &adv_imgs[i])?;
        let d = adv_imgs[i]
            .data()
            .iter()
            .zip(clean_imgs[i].data())
            .map(|(&p, &q)| f64::from(p) - f64::from(q));
        let dist = attack.norm.measure(d);
        deltas.push_str(&format!(
            "{i},{},{},{},{dist:.9}\n",
            labels[i], clean_pred[i], adv_pred[i]
        ));
        correct += usize::from(adv_pred[i] == labels[i]);
    }
    let path = a.out.join("deltas.csv");
    fs::write(&path, deltas).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} attack, delta {}, {} iterations: robust accuracy {:.2}% on {n} images",
        attack.norm,
        attack.delta,
        attack.iterations,
        100.0 * correct as f64 / n as f64
    );
    Ok(())
}

fn parse_kinds(s: &str) -> Result<Vec<CorruptionKind>> {
    if s == "all" {
        return Ok(CorruptionKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| {
            k.trim()
                .parse::<CorruptionKind>()
                .map_err(anyhow::Error::from)
        })
        .collect()
}

fn run_corrupt(a: &CorruptArgs) -> Result<()> {
    let (cfg, seed) = a.common.resolve()?;
    let kinds = parse_kinds(&a.kinds)?;
    if let Some(s) = a.severities.iter().find(|&&s| s > 5) {
        bail!("severity {s} out of range 0..=5");
    }
    let m = manifest(&cfg)?;
    let corruption_seed = cfg.eval.corruption_seed.unwrap_or(seed);
    let test = test_split(&cfg, seed)?;
    export_corruptions(
        &test,
        &m,
        corruption_seed,
        &a.out,
        &kinds,
        &a.severities,
        par::threads(),
    )?;
    let path = a.out.join("manifest.sha256");
    fs::write(&path, format!("{}  seed {corruption_seed}\n", m.hash()))
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} kinds x {} severities x {} images to {} (manifest {})",
        kinds.len(),
        a.severities.len(),
        test.len(),
        a.out.display(),
        m.hash()
    );
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (mut cfg, seed) = a.common.resolve()?;
    cfg.eval.robust &= !a.no_attack;
    let model = load_checkpoint(&a.ckpt)?.model;
    let test = test_split(&cfg, seed)?;
    let dir = match a.corruptions.as_str() {
        "onfly" => None,
        d => Some(Path::new(d)),
    };
    let id = match &a.id {
        Some(id) => id.clone(),
        None => a
            .ckpt
            .file_stem()
            .map_or("model".into(), |s| s.to_string_lossy().into_owned()),
    };
    let report = evaluate(&cfg, &[(id.as_str(), &model)], &test, seed, dir)?.remove(0);
    emit_report(&report, &a.out)?;
    println!(
        "clean {:.2}%, corruption average {:.2}%",
        100.0 * report.clean_acc,
        100.0 * report.overall_avg
    );
    if let Some(r) = &report.robust {
        println!(
            "robust {:.2}% ({} delta {})",
            100.0 * r.accuracy,
            r.attack.norm,
            r.attack.delta
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let reports: Vec<EvalReport> = a
        .reports
        .iter()
        .map(|p| EvalReport::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    let mut names: Vec<String> = Vec::new();
    for r in &reports {
        let base = r.model_id.clone();
        let mut name = base.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{base}#{k}");
            k += 1;
        }
        names.push(name);
    }
    for r in &reports {
        println!(
            "{}: seed {}, manifest {}",
            r.model_id, r.seed, r.manifest_hash
        );
        if r.dataset_id != reports[0].dataset_id || r.manifest_hash != reports[0].manifest_hash {
            eprintln!(
                "warning: {} was computed on different data or corruptions than {}",
                r.model_id, reports[0].model_id
            );
        }
    }
    let cols: Vec<(&str, &EvalReport)> = names.iter().map(String::as_str).zip(&reports).collect();
    let table = comparison_table(&cols)?;
    print!("{table}");
    let (txt, csv) = (with_ext(&a.out, ".txt"), with_ext(&a.out, ".csv"));
    fs::write(&txt, &table).with_context(|| format!("writing {}", txt.display()))?;
    fs::write(&csv, comparison_csv(&cols)?)
        .with_context(|| format!("writing {}", csv.display()))?;
    println!("wrote {} and {}", txt.display(), csv.display());
    Ok(())
}

/// Prints the checks; fails naming the first one that did not pass.
fn report_checks(checks: &[selftest::Check]) -> Result<()> {
    for c in checks {
        println!("{c}");
    }
    match checks.iter().find(|c| !c.passed) {
        Some(c) => bail!("check `{}` failed: {}", c.name, c.detail),
        None => Ok(()),
    }
}

fn run_gradcheck(a: &FaultArgs) -> Result<()> {
    println!("fixed seeds, {} thread(s)", par::threads());
    report_checks(&[selftest::gradients(a.inject_fault)])
}

fn run_selftest(a: &FaultArgs) -> Result<()> {
    println!("fixed seeds, {} thread(s)", par::threads());
    report_checks(&selftest::run(&selftest::Options {
        fault: a.inject_fault,
        threads: par::threads(),
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Attack(a) => run_attack(a),
        Command::Corrupt(a) => run_corrupt(a),
        Command::Eval(a) => run_eval(a),
        Command::Report(a) => run_report(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Selftest(a) => run_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
