//! Procedural source images, simulated rating panels and the miniature
//! training set used by tests and examples.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{build, BuildPlan, ContentClass, FactorCap, GroupKey, MethodSpec, SampleRecord, SourceSpec};
use crate::error::Result;
use crate::imaging::{write_image, ImageRGB, ScaleFactor};
use crate::labeling::{attach_labels, DecayCurve, SubjectScores};

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// A textured RGB image whose look depends on `class`; different seeds give
/// different scenes of the same kind. All classes carry fine detail so that
/// repeated resampling visibly degrades them.
pub fn synthetic_content(class: ContentClass, seed: u64, width: usize, height: usize) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_4d_2a);
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    let fx = rng.random_range(0.15..0.9);
    let fy = rng.random_range(0.15..0.9);
    let phase = rng.random_range(0.0..2.0 * PI);
    let amp = rng.random_range(30.0..70.0);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(3..8))
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(6.0..(width as f64 / 3.0).max(7.0)),
                [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
            )
        })
        .collect();
    let noise: Vec<f64> = (0..width * height)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let cell = rng.random_range(6..14) as f64;

    ImageRGB::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let n = noise[y * width + x];
        let mut c = base;
        let tex = match class {
            ContentClass::Animals => {
                // fur: fine oriented strokes
                amp * ((fx * 2.5 * xf + 0.3 * yf + phase).sin() * (0.7 * yf).sin()) + 25.0 * n
            }
            ContentClass::Buildings => {
                // facade grid with hard edges
                let gx = (xf / cell).floor() as i64;
                let gy = (yf / cell).floor() as i64;
                let edge = (xf % cell) < 1.5 || (yf % cell) < 1.5;
                if edge {
                    -amp
                } else if (gx + gy) % 2 == 0 {
                    amp * 0.6
                } else {
                    -amp * 0.3
                }
            }
            ContentClass::Humans => {
                // smooth shapes with a fine fabric weave
                amp * 0.5 * ((xf + yf) * fx * 2.0).sin().signum() + 12.0 * n
            }
            ContentClass::Sports => {
                // field stripes and lines
                let stripe = ((yf * fy * 0.5 + phase).sin() > 0.0) as i32 as f64;
                amp * (stripe - 0.5) + 40.0 * ((xf * 1.3).sin() * (yf * 1.3).cos()).powi(8)
            }
            ContentClass::Plants => {
                // leaf veins: crossing high-frequency ridges
                amp * ((xf * fx * 3.0).sin().abs() - (yf * fy * 3.0).cos().abs()) + 20.0 * n
            }
            ContentClass::Scenery => {
                // sky gradient over a rough horizon
                let horizon = height as f64 * 0.5 + 10.0 * (xf * fx * 0.2 + phase).sin();
                if yf < horizon {
                    -amp * (yf / horizon) + 8.0 * n
                } else {
                    amp * 0.5 + 35.0 * n + 20.0 * (xf * 2.1).sin()
                }
            }
        };
        for (ch, v) in c.iter_mut().enumerate() {
            *v += tex * (1.0 - 0.25 * ch as f64);
        }
        for &(bx, by, r, col) in &blobs {
            let d = ((xf - bx).powi(2) + (yf - by).powi(2)).sqrt();
            if d < r {
                let w = if matches!(class, ContentClass::Humans) {
                    0.6 * (1.0 - d / r)
                } else {
                    0.45
                };
                for ch in 0..3 {
                    c[ch] = c[ch] * (1.0 - w) + col[ch] * w;
                }
            }
        }
        [clamp_u8(c[0]), clamp_u8(c[1]), clamp_u8(c[2])]
    })
}

/// Settings of a miniature DS-SR dataset with synthetic labels.
#[derive(Clone, Debug)]
pub struct MiniSpec {
    pub contents: usize,
    pub size: usize,
    pub factor: f64,
    pub cap: u32,
    pub b_range: (f64, f64),
    pub seed: u64,
}

impl Default for MiniSpec {
    fn default() -> Self {
        Self {
            contents: 16,
            size: 128,
            factor: 2.0,
            cap: 7,
            b_range: (0.1, 0.5),
            seed: 0,
        }
    }
}

pub struct MiniDataset {
    pub manifest_path: std::path::PathBuf,
    pub records: Vec<SampleRecord>,
    pub curves: Vec<DecayCurve>,
}

/// Builds `spec.contents` synthetic sources with the builtin bicubic method
/// under `dir` and labels every group from a decay rate drawn uniformly
/// from `spec.b_range`.
pub fn build_mini_dataset(spec: &MiniSpec, dir: &Path) -> Result<MiniDataset> {
    let src_dir = dir.join("originals");
    std::fs::create_dir_all(&src_dir).map_err(|e| crate::Error::io(&src_dir, e))?;
    let mut sources = Vec::new();
    for i in 0..spec.contents {
        let class = ContentClass::ALL[i % ContentClass::ALL.len()];
        let img = synthetic_content(class, spec.seed.wrapping_mul(1000).wrapping_add(i as u64), spec.size, spec.size);
        let path = src_dir.join(format!("content{i:03}.ppm"));
        write_image(&path, &img)?;
        sources.push(SourceSpec {
            path,
            content_id: format!("content{i:03}"),
            content_class: class,
        });
    }
    let factor = ScaleFactor::new(spec.factor)?;
    let mut plan = BuildPlan::new(sources, vec![MethodSpec::builtin("bicubic")]);
    plan.factors = vec![FactorCap {
        factor,
        cap: spec.cap,
    }];
    let report = build(&plan, dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xb_0b);
    let curves: Vec<DecayCurve> = (0..spec.contents)
        .map(|i| DecayCurve {
            group: GroupKey {
                content_id: format!("content{i:03}"),
                sr_method: "bicubic".into(),
                factor,
            },
            b: rng.random_range(spec.b_range.0..spec.b_range.1),
        })
        .collect();
    let records = attach_labels(&report.records, &curves)?;
    crate::dataset::write_manifest(&report.manifest_path, &records)?;
    Ok(MiniDataset {
        manifest_path: report.manifest_path,
        records,
        curves,
    })
}

/// A simulated rating panel: honest subjects score `10·truth + N(0, σ)`
/// (clamped to [0, 10]); outliers score uniformly at random.
#[derive(Clone, Debug)]
pub struct PanelSpec {
    pub honest: usize,
    pub outliers: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self {
            honest: 23,
            outliers: 2,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Scores for `(sample_id, true quality in [0, 1])` pairs. Outlier subjects
/// are named `outlier-NN`, honest ones `subject-NN`.
pub fn simulate_panel(samples: &[(String, f64)], spec: &PanelSpec) -> Vec<SubjectScores> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma >= 0");
    let mut out = Vec::new();
    for i in 0..spec.honest {
        let scores = samples
            .iter()
            .map(|(id, q)| {
                let s = (10.0 * q + noise.sample(&mut rng)).clamp(0.0, 10.0);
                (id.clone(), (s * 10.0).round() / 10.0)
            })
            .collect();
        out.push(SubjectScores {
            subject_id: format!("subject-{i:02}"),
            scores,
        });
    }
    for i in 0..spec.outliers {
        let scores = samples
            .iter()
            .map(|(id, _)| (id.clone(), (rng.random_range(0.0..=10.0f64) * 10.0).round() / 10.0))
            .collect();
        out.push(SubjectScores {
            subject_id: format!("outlier-{i:02}"),
            scores,
        });
    }
    out
}
