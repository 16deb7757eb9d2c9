//! Command-line front end. Exit codes: 0 success, 1 operational failure,
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dataset::{build, BuildPlan, Manifest, Split};
use crate::error::{Error, Result};
use crate::imaging::{read_image, resize_cubic, write_image, CUBIC_A};
use crate::labeling::SubjectScores;
use crate::metrics::{evaluate, feature_distance_report, GroupBy};
use crate::model::{build_model, predict, ModelConfig};
use crate::selftest;
use crate::service::{self, AppState, RatingStore};
use crate::trainer::{load_model, load_samples, predict_all, train_test_records, RunConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "sriqa", version, about = "Super-resolution image quality workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupArg {
    Class,
    Content,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run DS-SR over every source of a build plan and write a manifest.
    BuildDataset {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve rating sessions for a manifest until finalized.
    Rate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 25)]
        subjects: usize,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with the browser UI; a minimal page is served otherwise.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Label a manifest from a subject scores file.
    Label {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train a model; writes a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one HR image (with its LR reference).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        lr: Option<PathBuf>,
    },
    /// Correlate model predictions with manifest labels.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = GroupArg::Class)]
        group_by: GroupArg,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        /// Map predictions through a fitted 4-parameter logistic first.
        #[arg(long)]
        logistic: bool,
        /// Also report pooled HR/LR feature distances.
        #[arg(long)]
        feature_distance: bool,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in oracle suites.
    Selftest,
    /// Cubic upscaler obeying the external SR plugin contract.
    SrBicubic {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = CUBIC_A, allow_hyphen_values = true)]
        a: f64,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::BuildDataset { plan, out } => {
            let plan: BuildPlan = read_json(&plan)?;
            let report = build(&plan, &out)?;
            eprintln!(
                "{} records, {} files written, {} groups already complete",
                report.records.len(),
                report.files_written,
                report.groups_skipped
            );
            for (group, msg) in &report.failures {
                eprintln!("group {group} failed: {msg}");
            }
            println!("{}", report.manifest_path.display());
            Ok(if report.failures.is_empty() { 0 } else { 1 })
        }
        Command::Rate {
            manifest,
            port,
            subjects,
            host,
            ui,
        } => {
            let store = RatingStore::open(&manifest, subjects, service::default_seed())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            let out = rt.block_on(async {
                let addr = format!("{host}:{port}");
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .map_err(|e| Error::io(&addr, e))?;
                eprintln!("rating service on http://{}", listener.local_addr().map_err(|e| Error::io(&addr, e))?);
                service::serve(listener, AppState::new(store, ui)).await
            })?;
            print_json(&out)?;
            Ok(0)
        }
        Command::Label { scores, manifest } => {
            let scores: Vec<SubjectScores> = read_json(&scores)?;
            let out = service::write_labels(&manifest, &scores)?;
            print_json(&out)?;
            Ok(0)
        }
        Command::Train {
            manifest,
            config,
            out,
        } => {
            let cfg: RunConfig = match config {
                Some(p) => read_json(&p)?,
                None => RunConfig::default(),
            };
            cmd_train(&manifest, &cfg, &out)
        }
        Command::Predict { model, hr, lr } => {
            let params = load_model(&model)?;
            let hr = read_image(&hr)?;
            let lr = lr.map(|p| read_image(&p)).transpose()?;
            println!("{:.6}", predict(&params, &hr, lr.as_ref())?);
            Ok(0)
        }
        Command::Evaluate {
            manifest,
            model,
            group_by,
            split,
            logistic,
            feature_distance,
            json,
        } => {
            let params = load_model(&model)?;
            let mut m = Manifest::load(&manifest)?;
            m.records.retain(|r| match split {
                SplitArg::All => true,
                SplitArg::Train => r.split == Split::Train,
                SplitArg::Test => r.split == Split::Test,
            });
            let samples = load_samples(&m, &m.records, params.config.use_lr_reference)?;
            let pred = predict_all(&params, &samples)?;
            let group_by = match group_by {
                GroupArg::Class => GroupBy::Class,
                GroupArg::Content => GroupBy::Content,
            };
            let report = evaluate(&m.records, &pred, group_by, logistic)?;
            eprint!("{}", report.to_table());
            let mut doc = serde_json::json!({ "report": report, "predictions": pred });
            if feature_distance {
                doc["feature_distance"] = serde_json::to_value(feature_distance_report(&params, &m)?)?;
            }
            match json {
                Some(p) => std::fs::write(&p, serde_json::to_vec_pretty(&doc)?).map_err(|e| Error::io(&p, e))?,
                None => print_json(&doc)?,
            }
            Ok(0)
        }
        Command::Gradcheck { width, seed } => {
            let seed = seed.unwrap_or_else(service::default_seed);
            let config = ModelConfig {
                width_c: width,
                head_units: vec![32, 16, 8, 1],
                ..ModelConfig::default()
            };
            let results = selftest::gradient_suite(&config, seed)?;
            let mut worst: f64 = 0.0;
            for r in &results {
                println!("{:<28} {:.3e}", r.name, r.value);
                worst = worst.max(r.value);
            }
            println!("max relative error {worst:.3e}");
            Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
        }
        Command::Selftest => {
            let results = selftest::run_all(service::default_seed())?;
            for r in &results {
                println!(
                    "{} {:<36} {:.3e} (limit {:.0e})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.value,
                    r.threshold
                );
            }
            Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
        }
        Command::SrBicubic {
            input,
            out,
            width,
            height,
            a,
        } => {
            let img = read_image(&input)?;
            write_image(&out, &resize_cubic(&img, width, height, a)?)?;
            Ok(0)
        }
    }
}

fn cmd_train(manifest_path: &Path, cfg: &RunConfig, out: &Path) -> Result<i32> {
    let manifest = Manifest::load(manifest_path)?;
    let mut trainer = match &cfg.resume {
        Some(ckpt) => {
            let mut t = Trainer::resume(ckpt)?;
            t.config.max_steps = cfg.train.max_steps;
            t
        }
        None => Trainer::new(build_model(&cfg.model, cfg.train.seed)?, cfg.train.clone())?,
    };
    let with_lr = trainer.params.config.use_lr_reference;
    let (train, test) = train_test_records(&manifest.records, cfg.split_ratio, trainer.config.seed)?;
    let train_set = load_samples(&manifest, &train, with_lr)?;
    let test_set = load_samples(&manifest, &test, with_lr)?;
    eprintln!(
        "training on {} samples, holding out {}, from step {}",
        train_set.len(),
        test_set.len(),
        trainer.step()
    );
    trainer.run(&train_set, &test_set, Some(out), |t| {
        let s = t.step();
        if s % 100 == 0 {
            if let Some(l) = t.log.steps.last() {
                eprintln!("step {s} loss {:.6}", l.loss);
            }
        }
    })?;
    let summary = serde_json::json!({
        "checkpoint": out,
        "steps": trainer.step(),
        "final_loss": trainer.log.steps.last().map(|s| s.loss),
        "evals": trainer.log.evals,
        "wall_clock_secs": trainer.log.wall_clock_secs,
    });
    print_json(&summary)?;
    Ok(0)
}
