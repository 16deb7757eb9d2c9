//! Dataset manifests and the DS-SR dataset builder.

mod build;

pub use build::{build, builtin_upscaler, BuildPlan, BuildReport, FactorCap, MethodSpec, SourceSpec};

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ScaleFactor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentClass {
    Animals,
    Buildings,
    Humans,
    Sports,
    Plants,
    Scenery,
}

impl ContentClass {
    pub const ALL: [ContentClass; 6] = [
        ContentClass::Animals,
        ContentClass::Buildings,
        ContentClass::Humans,
        ContentClass::Sports,
        ContentClass::Plants,
        ContentClass::Scenery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentClass::Animals => "animals",
            ContentClass::Buildings => "buildings",
            ContentClass::Humans => "humans",
            ContentClass::Sports => "sports",
            ContentClass::Plants => "plants",
            ContentClass::Scenery => "scenery",
        }
    }
}

impl fmt::Display for ContentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

/// One (HR, LR) pair of a manifest. Paths are relative to the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub content_id: String,
    pub content_class: ContentClass,
    pub sr_method: String,
    pub factor: ScaleFactor,
    pub iteration: u32,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub imos: Option<f64>,
    pub split: Split,
}

/// (content, SR method, factor): the records sharing one decay curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupKey {
    pub content_id: String,
    pub sr_method: String,
    pub factor: ScaleFactor,
}

impl GroupKey {
    /// Stable string form, used for map keys and file names.
    pub fn id(&self) -> String {
        format!("{}__{}__f{}", self.content_id, self.sr_method, self.factor)
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl SampleRecord {
    pub fn group(&self) -> GroupKey {
        GroupKey {
            content_id: self.content_id.clone(),
            sr_method: self.sr_method.clone(),
            factor: self.factor,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Error::Record {
            record: self.sample_id.clone(),
            message: m,
        };
        if self.iteration == 0 {
            return Err(fail("iteration must be >= 1".into()));
        }
        if let Some(q) = self.imos {
            if !(0.0..=1.0).contains(&q) {
                return Err(fail(format!("imos {q} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn sample_id(content_id: &str, method: &str, factor: ScaleFactor, iteration: u32) -> String {
    format!("{content_id}__{method}__f{factor}__t{iteration}")
}

/// Where the pristine copy of a content is kept, relative to the manifest.
pub fn source_path(content_id: &str) -> PathBuf {
    Path::new("sources").join(format!("{content_id}.ppm"))
}

/// A manifest loaded from disk together with the directory its paths are
/// relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                record: format!("{}:{}", path.display(), n + 1),
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        check_records(&records)?;
        Ok(Self {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
        })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.dir.join(rel)
    }
}

/// Checks per-record invariants and the uniqueness of
/// (content, method, factor, iteration).
pub fn check_records(records: &[SampleRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert((r.group().id(), r.iteration)) {
            return Err(Error::Record {
                record: r.sample_id.clone(),
                message: "duplicate (content, method, factor, iteration)".into(),
            });
        }
    }
    Ok(())
}

pub fn encode_manifest(records: &[SampleRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let bytes = encode_manifest(records)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Groups in first-appearance order, each with its record indices.
pub fn groups(records: &[SampleRecord]) -> Vec<(GroupKey, Vec<usize>)> {
    let mut out: Vec<(GroupKey, Vec<usize>)> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = r.group();
        match index.get(&key.id()) {
            Some(&g) => out[g].1.push(i),
            None => {
                index.insert(key.id(), out.len());
                out.push((key, vec![i]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(content: &str, t: u32) -> SampleRecord {
        let f = ScaleFactor::new(2.0).unwrap();
        let id = sample_id(content, "bicubic", f, t);
        SampleRecord {
            hr_path: format!("images/{id}.ppm").into(),
            lr_path: format!("images/{id}__lr.ppm").into(),
            sample_id: id,
            content_id: content.into(),
            content_class: ContentClass::Plants,
            sr_method: "bicubic".into(),
            factor: f,
            iteration: t,
            imos: Some(0.5),
            split: Split::Unassigned,
        }
    }

    #[test]
    fn jsonl_field_names() {
        let line = String::from_utf8(encode_manifest(&[rec("c1", 3)]).unwrap()).unwrap();
        for field in [
            "\"sample_id\"",
            "\"content_id\"",
            "\"content_class\":\"plants\"",
            "\"sr_method\"",
            "\"factor\":2.0",
            "\"iteration\":3",
            "\"hr_path\"",
            "\"lr_path\"",
            "\"imos\":0.5",
            "\"split\":\"unassigned\"",
        ] {
            assert!(line.contains(field), "{field} missing from {line}");
        }
        assert!(line.contains("c1__bicubic__f2__t3"));
    }

    #[test]
    fn duplicates_rejected() {
        assert!(check_records(&[rec("a", 1), rec("a", 2)]).is_ok());
        assert!(check_records(&[rec("a", 1), rec("a", 1)]).is_err());
    }

    #[test]
    fn imos_range_checked() {
        let mut r = rec("a", 1);
        r.imos = Some(1.5);
        assert!(check_records(&[r]).is_err());
    }

    #[test]
    fn groups_keep_order() {
        let g = groups(&[rec("b", 1), rec("a", 1), rec("b", 2)]);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0.content_id, "b");
        assert_eq!(g[0].1, vec![0, 2]);
    }
}
