//! Trains the desk-width model on the miniature set until the training
//! split is fitted (content-averaged PLCC >= 0.95, checked every 50 steps)
//! and reports held-out correlations.
//!
//! cargo run --release --example train_disq [max_steps] [weights_out]

use sriqa::dataset::Manifest;
use sriqa::metrics::{evaluate, GroupBy};
use sriqa::model::{build_model, save_weights, ModelConfig};
use sriqa::synth::{build_mini_dataset, MiniSpec};
use sriqa::trainer::{load_samples, predict_all, split_dataset, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let max_steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let out = args.next().map(std::path::PathBuf::from);

    let dir = tempfile::tempdir()?;
    let mini = build_mini_dataset(&MiniSpec::default(), dir.path())?;
    let manifest = Manifest::load(&mini.manifest_path)?;
    let (train_recs, test_recs) = split_dataset(&manifest.records, 0.8, 0)?;
    let train = load_samples(&manifest, &train_recs, true)?;
    let test = load_samples(&manifest, &test_recs, true)?;

    let config = TrainConfig {
        max_steps,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(build_model(&ModelConfig::default(), 0)?, config)?;
    let started = std::time::Instant::now();
    trainer.run_until(&train, &[], None, |t| {
        if t.step() % 50 != 0 {
            return Ok(false);
        }
        let report = evaluate(&train_recs, &predict_all(&t.params, &train)?, GroupBy::Content, false)?;
        let loss = t.log.steps.last().map_or(f64::NAN, |s| s.loss);
        println!("step {:>4}  loss {loss:.4}  train PLCC {:.4}", t.step(), report.average.plcc);
        Ok(report.average.plcc >= 0.95)
    })?;
    println!("stopped at step {} after {:.0?}", trainer.step(), started.elapsed());

    let held = evaluate(&test_recs, &predict_all(&trainer.params, &test)?, GroupBy::Content, false)?;
    eprint!("{}", held.to_table());
    if let Some(path) = out {
        save_weights(&path, &trainer.params)?;
        println!("weights -> {}", path.display());
    }
    Ok(())
}
