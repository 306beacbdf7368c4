//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when validation or verification fails, 2 on
//! usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use mbcnn::data::{load_pairs, write_pairs};
use mbcnn::dct::Passband;
use mbcnn::io::{load_checkpoint, read_image, write_image, RunConfig};
use mbcnn::metrics::{mean_metrics, metrics_csv, MetricsRow};
use mbcnn::net::{Ablation, Model};
use mbcnn::train::{log_csv, train};
use mbcnn::verify::gradient_suite;
use mbcnn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mbcnn",
    version,
    about = "Multi-scale bandpass CNN for image demoireing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training and validation pairs of a config.
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model; writes checkpoints and the epoch log to `out_dir`.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Restore one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Average the outputs for the four 90° rotations (square inputs).
        #[arg(long)]
        self_ensemble: bool,
        #[arg(long, value_parser = parse_ablation)]
        ablate: Option<Ablation>,
    },
    /// PSNR and SSIM over a directory of pairs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        self_ensemble: bool,
        #[arg(long, value_parser = parse_ablation)]
        ablate: Option<Ablation>,
    },
    /// Run the analytic-versus-numeric gradient suite.
    Gradcheck,
    /// Dump every learned passband as a PNG grid and a CSV.
    ExportPassbands {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_model(ckpt: &Path, ablate: Option<Ablation>) -> Result<Model> {
    let model = load_checkpoint(ckpt)?;
    Ok(match ablate {
        Some(mode) => model.ablate(mode),
        None => model,
    })
}

fn synth(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (train_set, val_set) = cfg
        .generate()?
        .ok_or_else(|| Error::Config("synth needs a \"procedural\" data section".into()))?;
    let train_dir = cfg
        .data
        .train_dir
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("train"));
    let val_dir = cfg
        .data
        .val_dir
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("val"));
    write_pairs(&train_dir, &train_set)?;
    write_pairs(&val_dir, &val_set)?;
    println!(
        "wrote {} pairs to {} and {} pairs to {}",
        train_set.len(),
        train_dir.display(),
        val_set.len(),
        val_dir.display()
    );
    Ok(())
}

fn run_train(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (train_set, val_set) = cfg.datasets()?;
    let model = Model::build(&cfg.arch_config()?, cfg.train.seed)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    println!(
        "training {} ({} parameters) on {} pairs, validating on {}",
        model.config.name,
        model.param_count(),
        train_set.len(),
        val_set.len()
    );
    let report = train(
        model,
        &cfg.train,
        &cfg.loss,
        &train_set,
        &val_set,
        Some(&cfg.out_dir),
    )?;
    print!("{}", log_csv(&report.log));
    println!("best validation PSNR {:.3} dB", report.best_psnr);
    Ok(())
}

fn infer(
    ckpt: &Path,
    input: &Path,
    out: &Path,
    self_ensemble: bool,
    ablate: Option<Ablation>,
) -> Result<()> {
    let model = load_model(ckpt, ablate)?;
    let image = read_image(input)?;
    write_image(&model.infer(&image, self_ensemble)?, out)
}

fn eval(
    ckpt: &Path,
    data: &Path,
    csv: &Path,
    self_ensemble: bool,
    ablate: Option<Ablation>,
) -> Result<()> {
    let model = load_model(ckpt, ablate)?;
    let pairs = load_pairs(data)?;
    let rows = pairs
        .par_iter()
        .map(|p| {
            MetricsRow::compute(
                p.id.clone(),
                &model.infer(&p.moire, self_ensemble)?.clamp(0.0, 1.0),
                &p.clean,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::write(csv, metrics_csv(&rows)).map_err(|e| Error::Io {
        path: csv.to_owned(),
        source: e,
    })?;
    let (psnr, ssim) = mean_metrics(&rows);
    println!("{} pairs: PSNR {psnr:.3} dB, SSIM {ssim:.4}", rows.len());
    Ok(())
}

fn gradcheck() -> Result<bool> {
    let checks = gradient_suite()?;
    for c in &checks {
        println!(
            "{} {:<32} {:.3e}",
            if c.passed() { "ok  " } else { "FAIL" },
            c.name,
            c.error
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

fn export_passbands(ckpt: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(ckpt)?;
    for name in model.passband_names() {
        let stem = name.trim_end_matches("/theta").replace('/', "_");
        let theta = model.params.get(&name).expect("listed by the model");
        Passband::from_tensor(theta)?.export(out, &stem)?;
        println!("{}", out.join(format!("{stem}.png")).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth { config } => synth(&config).map(|_| true),
        Command::Train { config } => run_train(&config).map(|_| true),
        Command::Infer {
            ckpt,
            input,
            out,
            self_ensemble,
            ablate,
        } => infer(&ckpt, &input, &out, self_ensemble, ablate).map(|_| true),
        Command::Eval {
            ckpt,
            data,
            csv,
            self_ensemble,
            ablate,
        } => eval(&ckpt, &data, &csv, self_ensemble, ablate).map(|_| true),
        Command::Gradcheck => gradcheck(),
        Command::ExportPassbands { ckpt, out } => export_passbands(&ckpt, &out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
