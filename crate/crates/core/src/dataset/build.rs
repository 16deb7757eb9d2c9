use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{sample_id, source_path, write_manifest, ContentClass, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::imaging::{
    ds_sr_iterate, encode_image, read_image, BuiltinCubic, ExternalSr, ScaleFactor, Upscaler,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub path: PathBuf,
    pub content_id: String,
    pub content_class: ContentClass,
}

/// An SR method: a builtin (`bicubic`, `bicubic-sharp`) when `program` is
/// absent, otherwise an external plugin command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
    /// Restricts the method to these factors; all plan factors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<ScaleFactor>>,
}

impl MethodSpec {
    pub fn builtin(name: &str) -> Self {
        Self {
            name: name.into(),
            program: None,
            args: Vec::new(),
            factors: None,
        }
    }

    pub fn upscaler(&self) -> Result<Box<dyn Upscaler>> {
        match &self.program {
            Some(program) => Ok(Box::new(ExternalSr {
                name: self.name.clone(),
                program: program.clone(),
                args: self.args.clone(),
            })),
            None => builtin_upscaler(&self.name)
                .map(|b| Box::new(b) as Box<dyn Upscaler>)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown builtin SR method `{}` (builtins: bicubic, bicubic-sharp)",
                        self.name
                    ))
                }),
        }
    }

    fn uses(&self, factor: ScaleFactor) -> bool {
        self.factors.as_ref().is_none_or(|f| f.contains(&factor))
    }
}

pub fn builtin_upscaler(name: &str) -> Option<BuiltinCubic> {
    match name {
        "bicubic" => Some(BuiltinCubic::bicubic()),
        "bicubic-sharp" => Some(BuiltinCubic {
            name: name.into(),
            a: -0.75,
        }),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorCap {
    pub factor: ScaleFactor,
    pub cap: u32,
}

fn default_factors() -> Vec<FactorCap> {
    [(1.5, 8), (2.0, 7), (2.7, 6)]
        .into_iter()
        .map(|(f, cap)| FactorCap {
            factor: ScaleFactor::new(f).expect("valid"),
            cap,
        })
        .collect()
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub sources: Vec<SourceSpec>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_factors")]
    pub factors: Vec<FactorCap>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl BuildPlan {
    pub fn new(sources: Vec<SourceSpec>, methods: Vec<MethodSpec>) -> Self {
        Self {
            sources,
            methods,
            factors: default_factors(),
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.factors.iter().find(|f| f.cap == 0) {
            return Err(Error::Config(format!("factor {} has cap 0", f.factor)));
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.sources {
            if !ids.insert(&s.content_id) || s.content_id.contains(['/', '\\']) {
                return Err(Error::Config(format!("bad or duplicate content_id `{}`", s.content_id)));
            }
        }
        Ok(())
    }

    /// Number of records a complete build produces.
    pub fn expected_records(&self) -> usize {
        let per_source: u32 = self
            .methods
            .iter()
            .flat_map(|m| self.factors.iter().filter(|f| m.uses(f.factor)))
            .map(|f| f.cap)
            .sum();
        self.sources.len() * per_source as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuildReport {
    pub manifest_path: PathBuf,
    pub records: Vec<SampleRecord>,
    pub files_written: usize,
    pub groups_skipped: usize,
    /// `(group id, error message)` for groups whose SR step failed.
    pub failures: Vec<(String, String)>,
}

const STATE_FILE: &str = "build_state.json";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_matches(path: &Path, hash: &str) -> bool {
    std::fs::read(path).is_ok_and(|b| sha256_hex(&b) == hash)
}

/// Writes `bytes` unless an identical file is already there; returns the
/// content hash and whether a write happened.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<(String, bool)> {
    let hash = sha256_hex(bytes);
    if file_matches(path, &hash) {
        return Ok((hash, false));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok((hash, true))
}

struct GroupJob<'a> {
    source: &'a SourceSpec,
    method: &'a MethodSpec,
    factor: ScaleFactor,
    cap: u32,
}

struct GroupOutput {
    records: Vec<SampleRecord>,
    hashes: Vec<(String, String)>,
    written: usize,
    skipped: bool,
}

fn group_records(job: &GroupJob) -> Vec<SampleRecord> {
    (1..=job.cap)
        .map(|t| {
            let id = sample_id(&job.source.content_id, &job.method.name, job.factor, t);
            SampleRecord {
                hr_path: Path::new("images").join(format!("{id}.ppm")),
                lr_path: Path::new("images").join(format!("{id}__lr.ppm")),
                sample_id: id,
                content_id: job.source.content_id.clone(),
                content_class: job.source.content_class,
                sr_method: job.method.name.clone(),
                factor: job.factor,
                iteration: t,
                imos: None,
                split: Split::Unassigned,
            }
        })
        .collect()
}

fn run_group(
    job: &GroupJob,
    out_dir: &Path,
    state: &BTreeMap<String, String>,
) -> Result<GroupOutput> {
    let records = group_records(job);
    let paths: Vec<String> = records
        .iter()
        .flat_map(|r| [r.hr_path.clone(), r.lr_path.clone()])
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    let complete = paths.iter().all(|p| {
        state
            .get(p)
            .is_some_and(|h| file_matches(&out_dir.join(p), h))
    });
    if complete {
        let hashes = paths.iter().map(|p| (p.clone(), state[p].clone())).collect();
        return Ok(GroupOutput {
            records,
            hashes,
            written: 0,
            skipped: true,
        });
    }

    let src = read_image(&out_dir.join(source_path(&job.source.content_id)))?;
    let sr = job.method.upscaler()?;
    let steps = ds_sr_iterate(&src, job.factor, job.cap as usize, sr.as_ref())?;
    let mut hashes = Vec::new();
    let mut written = 0;
    for (rec, step) in records.iter().zip(&steps) {
        for (rel, img) in [(&rec.hr_path, &step.hr), (&rec.lr_path, &step.lr)] {
            let (hash, wrote) = write_if_changed(&out_dir.join(rel), &encode_image(img))?;
            written += wrote as usize;
            hashes.push((rel.to_string_lossy().into_owned(), hash));
        }
    }
    Ok(GroupOutput {
        records,
        hashes,
        written,
        skipped: false,
    })
}

/// Runs every (source, method, factor) group to its iteration cap under
/// `out_dir`, writing `manifest.jsonl` there.
///
/// Reruns skip groups whose files are already present with the recorded
/// hashes. A failing group is reported and left out of the manifest; the
/// rest of the build continues.
pub fn build(plan: &BuildPlan, out_dir: &Path) -> Result<BuildReport> {
    plan.validate()?;
    for sub in ["images", "sources"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let state_path = out_dir.join(STATE_FILE);
    let mut state: BTreeMap<String, String> = match std::fs::read(&state_path) {
        Ok(b) => serde_json::from_slice(&b).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };

    let mut report = BuildReport {
        manifest_path: out_dir.join("manifest.jsonl"),
        ..BuildReport::default()
    };
    for s in &plan.sources {
        let img = read_image(&s.path)?;
        let rel = source_path(&s.content_id);
        let (hash, wrote) = write_if_changed(&out_dir.join(&rel), &encode_image(&img))?;
        report.files_written += wrote as usize;
        state.insert(rel.to_string_lossy().into_owned(), hash);
    }

    let jobs: Vec<GroupJob> = plan
        .sources
        .iter()
        .flat_map(|source| {
            plan.methods.iter().flat_map(move |method| {
                plan.factors
                    .iter()
                    .filter(|f| method.uses(f.factor))
                    .map(move |f| GroupJob {
                        source,
                        method,
                        factor: f.factor,
                        cap: f.cap,
                    })
            })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outputs: Vec<Result<GroupOutput>> =
        pool.install(|| jobs.par_iter().map(|j| run_group(j, out_dir, &state)).collect());

    for (job, out) in jobs.iter().zip(outputs) {
        match out {
            Ok(g) => {
                report.files_written += g.written;
                report.groups_skipped += g.skipped as usize;
                state.extend(g.hashes);
                report.records.extend(g.records);
            }
            Err(e) => {
                let id = format!(
                    "{}__{}__f{}",
                    job.source.content_id, job.method.name, job.factor
                );
                report.failures.push((id, e.to_string()));
            }
        }
    }

    std::fs::write(&state_path, serde_json::to_vec_pretty(&state)?)
        .map_err(|e| Error::io(&state_path, e))?;
    write_manifest(&report.manifest_path, &report.records)?;
    Ok(report)
}
