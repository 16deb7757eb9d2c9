#![allow(dead_code)]

pub mod oracle;

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sriqa::dataset::{
    build, sample_id, BuildPlan, ContentClass, FactorCap, MethodSpec, SampleRecord, SourceSpec, Split,
};
use sriqa::imaging::{write_image, ImageRGB, ScaleFactor};
use sriqa::labeling::{anchor_iteration, label_manifest};
use sriqa::synth::{simulate_panel, synthetic_content, PanelSpec};

/// In-memory records for `groups` contents, iterations `1..=t_max`.
pub fn records(groups: usize, t_max: u32) -> Vec<SampleRecord> {
    let f = ScaleFactor::new(2.0).unwrap();
    (0..groups)
        .flat_map(|g| {
            (1..=t_max).map(move |t| {
                let content = format!("g{g:03}");
                let id = sample_id(&content, "bicubic", f, t);
                SampleRecord {
                    hr_path: format!("images/{id}.ppm").into(),
                    lr_path: format!("images/{id}__lr.ppm").into(),
                    sample_id: id,
                    content_id: content,
                    content_class: ContentClass::ALL[g % 6],
                    sr_method: "bicubic".into(),
                    factor: f,
                    iteration: t,
                    imos: None,
                    split: Split::Unassigned,
                }
            })
        })
        .collect()
}

pub struct LabelTrial {
    pub exact_rejection: bool,
    pub rmse: f64,
}

/// One simulated panel over 30 groups with decay rates in [0.1, 0.5]:
/// 23 honest subjects (σ = 0.5) and 2 random scorers rate each group's
/// anchor image once.
pub fn labeling_trial(seed: u64) -> LabelTrial {
    let t_max = 7;
    let recs = records(30, t_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1);
    let b: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..0.5)).collect();
    let k = anchor_iteration(t_max);
    let anchors: Vec<(String, f64)> = recs
        .iter()
        .filter(|r| r.iteration == k)
        .enumerate()
        .map(|(g, r)| (r.sample_id.clone(), (-b[g] * k as f64).exp()))
        .collect();
    let panel = simulate_panel(
        &anchors,
        &PanelSpec {
            seed,
            ..PanelSpec::default()
        },
    );
    let out = label_manifest(&recs, &panel).expect("panel labels");
    let rejected: HashSet<&str> = out.rejected.iter().map(String::as_str).collect();
    let planted: HashSet<&str> = ["outlier-00", "outlier-01"].into_iter().collect();
    let se: f64 = out
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let truth = (-b[i / t_max as usize] * r.iteration as f64).exp();
            (r.imos.unwrap() - truth).powi(2)
        })
        .sum();
    LabelTrial {
        exact_rejection: rejected == planted,
        rmse: (se / out.records.len() as f64).sqrt(),
    }
}

/// Writes `n` small synthetic sources and returns their specs.
pub fn small_sources(dir: &Path, n: usize, size: usize) -> Vec<SourceSpec> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let class = ContentClass::ALL[i % 6];
            let path = dir.join(format!("src{i:03}.ppm"));
            write_image(&path, &synthetic_content(class, i as u64, size, size)).unwrap();
            SourceSpec {
                path,
                content_id: format!("src{i:03}"),
                content_class: class,
            }
        })
        .collect()
}

/// A built dataset of `n` contents at factor 2 with iterations `1..=cap`.
pub fn small_dataset(dir: &Path, n: usize, size: usize, cap: u32) -> std::path::PathBuf {
    let mut plan = BuildPlan::new(small_sources(&dir.join("originals"), n, size), vec![MethodSpec::builtin("bicubic")]);
    plan.factors = vec![FactorCap {
        factor: ScaleFactor::new(2.0).unwrap(),
        cap,
    }];
    build(&plan, dir).unwrap().manifest_path
}

pub fn gray(w: usize, h: usize, v: u8) -> ImageRGB {
    ImageRGB::filled(w, h, [v, v, v])
}
