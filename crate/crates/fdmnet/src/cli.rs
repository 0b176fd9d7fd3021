//! Command-line entry points.
//!
//! Subcommands: `demo fig1`, `demo fig2`, `data generate`, `train`, `eval`,
//! `gradcheck`, `ablate`. Every run assembles one [`RunConfig`] from
//! defaults, then `--config FILE`, then `--set key=value` overrides, then
//! `--seed`. Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, RunConfig};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::io::img;
use crate::model::Model;
use crate::spectral::{self, RadialBand};
use crate::tensor::Tensor;
use crate::trainer::Trainer;
use crate::{ablate, eval, gradcheck};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFICATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fdmnet",
    about = "Frequency-domain modality-invariant feature learning",
    after_long_help = config::help_text()
)]
struct Cli {
    /// Key=value config file applied over the defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Single key=value override, repeatable; see --help for the keys
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed, overriding the `seed` config key
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Spectral decomposition demos on one image
    Demo {
        #[command(subcommand)]
        figure: DemoCmd,
    },
    /// Synthetic dataset tools
    Data {
        #[command(subcommand)]
        action: DataCmd,
    },
    /// Train a model; writes per-epoch checkpoints and log.csv
    Train(TrainArgs),
    /// Score a checkpoint on the test split (the config must describe the
    /// trained architecture)
    Eval(EvalArgs),
    /// Finite-difference verification of every gradient family
    Gradcheck(GradcheckArgs),
    /// Train the six component combinations and compare them
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Amplitude-only and phase-only reconstructions
    Fig1(Fig1Args),
    /// Low, mid, and high radial-band reconstructions
    Fig2(Fig2Args),
}

#[derive(Args)]
struct Fig1Args {
    /// Input PNG; a bundled procedural sample is rendered when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "out/demo")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Fig2Args {
    /// Input PNG; a bundled procedural sample is rendered when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "out/demo")]
    out_dir: PathBuf,
    /// Low/mid and mid/high radius cutoffs, e.g. 0.1,0.4
    #[arg(long, value_name = "LO,HI")]
    bands: Option<String>,
}

#[derive(Subcommand)]
enum DataCmd {
    /// Render the synthetic corpus as PNGs plus manifest.csv
    Generate(GenerateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "out/dataset")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "out/train")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Where to write report.csv; omitted = print only
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also train a fresh modality classifier on train-split embeddings and
    /// report its held-out accuracy
    #[arg(long)]
    probe: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per operation family
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

#[derive(Args)]
struct AblateArgs {
    /// Where to write ablation.csv; omitted = print only
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seeds per combination, drawn as seed, seed+1, ...
    #[arg(long, default_value_t = 3)]
    seeds: usize,
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args())
}

fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match assemble(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(&cli.cmd, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

/// Usage-level errors (bad keys, bad values, unreadable config) exit 1;
/// everything else that escapes execution is a runtime failure.
fn classify(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn assemble(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.finalize()
}

fn execute(cmd: &Cmd, cfg: &RunConfig) -> Result<i32> {
    match cmd {
        Cmd::Demo { figure: DemoCmd::Fig1(args) } => demo_fig1(args, cfg),
        Cmd::Demo { figure: DemoCmd::Fig2(args) } => demo_fig2(args, cfg),
        Cmd::Data { action: DataCmd::Generate(args) } => data_generate(args, cfg),
        Cmd::Train(args) => train(args, cfg),
        Cmd::Eval(args) => eval_checkpoint(args, cfg),
        Cmd::Gradcheck(args) => run_gradcheck(args, cfg),
        Cmd::Ablate(args) => run_ablation(args, cfg),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// The demo input: a file when given, otherwise a deterministic render of
/// identity 0 at the configured image size.
fn demo_input(input: &Option<PathBuf>, cfg: &RunConfig) -> Result<Tensor> {
    match input {
        Some(path) => img::read_image(path),
        None => Ok(data::identity_render(&cfg.data, 0)),
    }
}

fn write_rescaled(path: &Path, image: &Tensor) -> Result<()> {
    img::write_image(path, &spectral::display_rescale(image))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn demo_fig1(args: &Fig1Args, cfg: &RunConfig) -> Result<i32> {
    let image = demo_input(&args.input, cfg)?;
    ensure_dir(&args.out_dir)?;
    img::write_image(&args.out_dir.join("input.png"), &image)?;
    println!("wrote {}", args.out_dir.join("input.png").display());
    write_rescaled(&args.out_dir.join("amp_only.png"), &spectral::amplitude_only(&image)?)?;
    write_rescaled(&args.out_dir.join("phase_only.png"), &spectral::phase_only(&image)?)?;
    Ok(EXIT_OK)
}

fn parse_bands(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parsed: Option<(f64, f64)> = match parts.as_slice() {
        [lo, hi] => lo.parse().ok().zip(hi.parse().ok()),
        _ => None,
    };
    parsed.ok_or_else(|| Error::Config(format!("--bands expects LO,HI in (0,1), got {s:?}")))
}

fn demo_fig2(args: &Fig2Args, cfg: &RunConfig) -> Result<i32> {
    let (lo, hi) = match &args.bands {
        Some(s) => parse_bands(s)?,
        None => cfg.demo_bands,
    };
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::Config(format!(
            "band cutoffs must satisfy 0 < low < high < 1, got {lo}, {hi}"
        )));
    }
    let image = demo_input(&args.input, cfg)?;
    ensure_dir(&args.out_dir)?;
    img::write_image(&args.out_dir.join("input.png"), &image)?;
    println!("wrote {}", args.out_dir.join("input.png").display());
    for (name, band) in [
        ("low.png", RadialBand::new(0.0, lo)?),
        ("mid.png", RadialBand::new(lo, hi)?),
        ("high.png", RadialBand::new(hi, 1.0)?),
    ] {
        write_rescaled(&args.out_dir.join(name), &spectral::band_filter(&image, &band)?)?;
    }
    Ok(EXIT_OK)
}

fn data_generate(args: &GenerateArgs, cfg: &RunConfig) -> Result<i32> {
    let dataset = Dataset::generate(&cfg.data)?;
    dataset.write_to(&args.out_dir)?;
    println!(
        "wrote {} images and manifest.csv to {}",
        dataset.samples.len(),
        args.out_dir.display()
    );
    Ok(EXIT_OK)
}

fn train(args: &TrainArgs, cfg: &RunConfig) -> Result<i32> {
    let dataset = Dataset::generate(&cfg.data)?;
    let model = Model::new(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(
        model,
        &dataset,
        cfg.schedule.clone(),
        cfg.weights,
        cfg.seed,
    )?;
    trainer.gray_identity_loss = cfg.gray_identity_loss;
    ensure_dir(&args.out_dir)?;
    let report = trainer.fit(Some(&args.out_dir))?;
    if let Some(last) = report.epochs.last() {
        println!(
            "epoch {}: L_id {:.4} L_cc {:.4} L_con {:.4} L_e {:.4} L_m {:.4} disc_acc {:.2}",
            last.epoch, last.l_id, last.l_cc, last.l_con, last.l_e, last.l_m, last.disc_acc
        );
    }
    println!(
        "wrote log.csv and {} checkpoints to {}",
        report.epochs.len() + 1,
        args.out_dir.display()
    );
    Ok(EXIT_OK)
}

fn eval_checkpoint(args: &EvalArgs, cfg: &RunConfig) -> Result<i32> {
    let dataset = Dataset::generate(&cfg.data)?;
    let mut model = Model::new(&cfg.model, cfg.seed)?;
    model.load_checkpoint(&args.checkpoint)?;
    let report = eval::evaluate(&model, &dataset, cfg.eval_splits, cfg.seed)?;
    print!("{}", report.to_table());
    if args.probe {
        let train_emb = eval::embed_split(&model, &dataset, data::Split::Train)?;
        let test_emb = eval::embed_split(&model, &dataset, data::Split::Test)?;
        let acc = eval::modality_probe(
            &train_emb,
            &test_emb,
            cfg.model.disc_hidden,
            200,
            0.05,
            cfg.seed,
        )?;
        println!("modality probe accuracy: {acc:.3}");
    }
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        let path = dir.join("report.csv");
        std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

fn run_gradcheck(args: &GradcheckArgs, cfg: &RunConfig) -> Result<i32> {
    let reports = gradcheck::run_standard(args.instances, cfg.seed)?;
    println!(
        "{:<22} {:>9} {:>8} {:>12}  status",
        "family", "instances", "checks", "max rel err"
    );
    let mut failures = 0;
    for r in &reports {
        println!(
            "{:<22} {:>9} {:>8} {:>12.3e}  {}",
            r.name,
            r.instances,
            r.checks,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} of {} families exceed {:.0e}", reports.len(), gradcheck::REL_TOL);
        return Ok(EXIT_VERIFICATION);
    }
    println!("all {} families within {:.0e}", reports.len(), gradcheck::REL_TOL);
    Ok(EXIT_OK)
}

fn run_ablation(args: &AblateArgs, cfg: &RunConfig) -> Result<i32> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| cfg.seed + i).collect();
    let rows = ablate::run(cfg, &seeds, |line| eprintln!("{line}"))?;
    print!("{}", ablate::to_table(&rows));
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        let path = dir.join("ablation.csv");
        std::fs::write(&path, ablate::to_csv(&rows)).map_err(|e| Error::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_flag_overrides_config_key() {
        let cli = Cli::try_parse_from([
            "fdmnet", "gradcheck", "--seed", "7", "--set", "seed=99",
        ])
        .unwrap();
        let cfg = assemble(&cli).unwrap();
        assert_eq!(cfg.seed, 7);
        let cli = Cli::try_parse_from(["fdmnet", "gradcheck", "--set", "seed=99"]).unwrap();
        assert_eq!(assemble(&cli).unwrap().seed, 99);
    }

    #[test]
    fn missing_config_file_is_a_usage_error_naming_the_path() {
        let code = run_from(["fdmnet", "train", "--config", "missing.cfg"]);
        assert_eq!(code, EXIT_USAGE);
        let cli = Cli::try_parse_from(["fdmnet", "train", "--config", "missing.cfg"]).unwrap();
        let err = assemble(&cli).unwrap_err();
        assert!(format!("{err}").contains("missing.cfg"));
    }

    #[test]
    fn unknown_flags_and_keys_exit_with_usage() {
        assert_eq!(run_from(["fdmnet", "explode"]), EXIT_USAGE);
        assert_eq!(run_from(["fdmnet", "gradcheck", "--set", "no.such=1"]), EXIT_USAGE);
    }

    #[test]
    fn band_strings_parse_or_reject() {
        assert_eq!(parse_bands("0.1, 0.4").unwrap(), (0.1, 0.4));
        assert!(parse_bands("0.1").is_err());
        assert!(parse_bands("a,b").is_err());
        assert_eq!(classify(&parse_bands("x").unwrap_err()), EXIT_USAGE);
        assert_eq!(
            classify(&Error::Numerical("boom".into())),
            EXIT_RUNTIME
        );
    }

    #[test]
    fn demo_fig1_writes_all_three_images() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("fig1");
        let code = run_from([
            "fdmnet",
            "demo",
            "fig1",
            "--out-dir",
            out.to_str().unwrap(),
            "--set",
            "data.height=16",
            "--set",
            "data.width=8",
        ]);
        assert_eq!(code, EXIT_OK);
        for name in ["input.png", "amp_only.png", "phase_only.png"] {
            assert!(out.join(name).is_file(), "missing {name}");
        }
    }

    #[test]
    fn demo_fig2_writes_three_bands() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("fig2");
        let code = run_from([
            "fdmnet",
            "demo",
            "fig2",
            "--bands",
            "0.2,0.6",
            "--out-dir",
            out.to_str().unwrap(),
            "--set",
            "data.height=16",
            "--set",
            "data.width=8",
        ]);
        assert_eq!(code, EXIT_OK);
        for name in ["low.png", "mid.png", "high.png"] {
            assert!(out.join(name).is_file(), "missing {name}");
        }
        assert_eq!(
            run_from(["fdmnet", "demo", "fig2", "--bands", "0.6,0.2"]),
            EXIT_USAGE
        );
    }
}
