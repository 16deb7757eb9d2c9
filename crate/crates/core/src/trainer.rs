//! Content-disjoint splitting, the Adam training loop and checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Manifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::imaging::read_image;
use crate::metrics::{plcc, srcc};
use crate::model::{
    batch_loss_and_gradient, decode_weights, encode_weights, ModelConfig, ModelParams, PatchInput,
};
use crate::tensor::{AdamState, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables periodic held-out evaluation.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            lambda: 5e-4,
            batch_size: 4,
            max_steps: 2000,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.lambda >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "need eta > 0, lambda >= 0, batch_size >= 1; got {}, {}, {}",
                self.eta, self.lambda, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub step: u64,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalLog>,
    pub wall_clock_secs: f64,
}

/// Splits by content: the first `round(ratio · #contents)` contents of a
/// seeded shuffle go to training, the rest to test.
pub fn split_dataset(
    records: &[SampleRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut contents: Vec<&str> = records.iter().map(|r| r.content_id.as_str()).collect();
    contents.sort_unstable();
    contents.dedup();
    if contents.len() < 2 {
        return Err(Error::Config(format!(
            "splitting needs at least 2 contents, got {}",
            contents.len()
        )));
    }
    contents.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * contents.len() as f64).round() as usize).clamp(1, contents.len() - 1);
    let train_set: std::collections::HashSet<&str> = contents[..n_train].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in records {
        if train_set.contains(r.content_id.as_str()) {
            train.push(SampleRecord {
                split: Split::Train,
                ..r.clone()
            });
        } else {
            test.push(SampleRecord {
                split: Split::Test,
                ..r.clone()
            });
        }
    }
    Ok((train, test))
}

/// A labeled sample with its patches in memory.
#[derive(Clone, Debug)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub input: PatchInput,
    pub imos: f64,
}

/// Reads and patches every record; LR images are loaded only when
/// `with_lr` is set.
pub fn load_samples(manifest: &Manifest, records: &[SampleRecord], with_lr: bool) -> Result<Vec<LoadedSample>> {
    records
        .iter()
        .map(|r| {
            let fail = |e: Error| Error::Record {
                record: r.sample_id.clone(),
                message: e.to_string(),
            };
            let imos = r.imos.ok_or_else(|| fail(Error::Label("record has no imos".into())))?;
            let hr = read_image(&manifest.resolve(&r.hr_path)).map_err(fail)?;
            let lr = if with_lr {
                Some(read_image(&manifest.resolve(&r.lr_path)).map_err(fail)?)
            } else {
                None
            };
            Ok(LoadedSample {
                record: r.clone(),
                input: PatchInput::from_images(&hr, lr.as_ref()).map_err(fail)?,
                imos,
            })
        })
        .collect()
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Training indices of `step`: sample position `p = step·B + j` maps to
/// entry `p mod n` of the shuffle for epoch `p div n`.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch_size)
        .map(|j| {
            let p = step * batch_size as u64 + j as u64;
            let epoch = p / n as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch)));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[(p % n as u64) as usize]
        })
        .collect()
}

pub fn predict_all(params: &ModelParams, samples: &[LoadedSample]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| params.predict_patches(&s.input))
        .collect()
}

/// Training state that can be checkpointed and resumed bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.eta, &params);
        Ok(Self {
            log: TrainLog {
                seed: config.seed,
                ..TrainLog::default()
            },
            params,
            adam,
            config,
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// One Adam step on the batch scheduled for the current step count.
    pub fn train_step(&mut self, train: &[LoadedSample]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let step = self.adam.step;
        let idx = batch_indices(self.config.seed, step, self.config.batch_size, train.len());
        let inputs: Vec<&PatchInput> = idx.iter().map(|&i| &train[i].input).collect();
        let targets: Vec<f64> = idx.iter().map(|&i| train[i].imos).collect();
        let seeds: Vec<u64> = (0..idx.len())
            .map(|j| mix(mix(self.config.seed ^ 0xd2_0b, step), j as u64))
            .collect();
        let eval = batch_loss_and_gradient(&self.params, &inputs, &targets, self.config.lambda, &seeds)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: step + 1 });
        }
        self.adam.apply(&mut self.params, &eval.gradient)?;
        self.log.steps.push(StepLog {
            step: self.adam.step,
            loss: eval.loss,
        });
        Ok(eval.loss)
    }

    /// Trains until `config.max_steps`, evaluating on `held_out` and writing
    /// `checkpoint` at the configured cadences (and once at the end).
    pub fn run(
        &mut self,
        train: &[LoadedSample],
        held_out: &[LoadedSample],
        checkpoint: Option<&Path>,
        mut progress: impl FnMut(&Trainer),
    ) -> Result<()> {
        self.run_until(train, held_out, checkpoint, |t| {
            progress(t);
            Ok(false)
        })
        .map(|_| ())
    }

    /// Like [`Trainer::run`], but `stop` is consulted after every step and
    /// training ends early once it returns true. Returns whether it did.
    pub fn run_until(
        &mut self,
        train: &[LoadedSample],
        held_out: &[LoadedSample],
        checkpoint: Option<&Path>,
        mut stop: impl FnMut(&Trainer) -> Result<bool>,
    ) -> Result<bool> {
        let mut stopped = false;
        let start = Instant::now();
        let base_clock = self.log.wall_clock_secs;
        while self.adam.step < self.config.max_steps {
            self.train_step(train)?;
            let s = self.adam.step;
            if self.config.eval_every > 0 && s % self.config.eval_every == 0 && !held_out.is_empty() {
                let pred = predict_all(&self.params, held_out)?;
                let truth: Vec<f64> = held_out.iter().map(|h| h.imos).collect();
                self.log.evals.push(EvalLog {
                    step: s,
                    plcc: plcc(&pred, &truth).ok(),
                    srcc: srcc(&pred, &truth).ok(),
                });
            }
            self.log.wall_clock_secs = base_clock + start.elapsed().as_secs_f64();
            if let Some(path) = checkpoint {
                if self.config.checkpoint_every > 0 && s % self.config.checkpoint_every == 0 {
                    self.save(path)?;
                }
            }
            if stop(self)? {
                stopped = true;
                break;
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(stopped)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(self)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn resume(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_checkpoint(&bytes, path)
    }
}

/// Convenience wrapper: trains a copy of `model` from scratch.
pub fn train(
    train_set: &[LoadedSample],
    model: &ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    let mut t = Trainer::new(model.clone(), config.clone())?;
    t.run(train_set, &[], None, |_| {})?;
    Ok((t.params, t.log))
}

const ADAM_MAGIC: &[u8; 4] = b"ADAM";

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    eta: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    train: TrainConfig,
    log: TrainLog,
    tensors: Vec<(String, usize)>,
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Weight file, then `ADAM`, a u32 header length, a JSON header and the
/// exact f64 parameters, first and second moments; finally the first 8
/// bytes of the SHA-256 of everything before them.
pub fn encode_checkpoint(t: &Trainer) -> Result<Vec<u8>> {
    let mut out = encode_weights(&t.params)?;
    let tensors = t.params.tensors();
    let header = AdamHeader {
        step: t.adam.step,
        eta: t.adam.eta,
        beta1: t.adam.beta1,
        beta2: t.adam.beta2,
        epsilon: t.adam.epsilon,
        train: t.config.clone(),
        log: t.log.clone(),
        tensors: tensors.iter().map(|p| (p.name.clone(), p.values.len())).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &tensors {
        push_f64s(&mut out, p.values);
    }
    for m in &t.adam.m {
        push_f64s(&mut out, m);
    }
    for v in &t.adam.v {
        push_f64s(&mut out, v);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest[..8]);
    Ok(out)
}

fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Trainer> {
    if bytes.len() < 8 {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if Sha256::digest(body)[..8] != *sum {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let (mut params, mut pos) = decode_weights(body)?;
    let bad = |m: &str| Error::WeightFormat(format!("checkpoint: {m}"));
    if body.get(pos..pos + 4) != Some(ADAM_MAGIC.as_slice()) {
        return Err(bad("missing ADAM section"));
    }
    pos += 4;
    let len = u32::from_le_bytes(
        body.get(pos..pos + 4)
            .ok_or_else(|| bad("truncated"))?
            .try_into()
            .expect("4 bytes"),
    ) as usize;
    pos += 4;
    let header: AdamHeader = serde_json::from_slice(body.get(pos..pos + len).ok_or_else(|| bad("truncated"))?)?;
    pos += len;

    let mut read = |n: usize| -> Result<Vec<f64>> {
        let raw = body.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated tensors"))?;
        pos += 8 * n;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    {
        let tensors = params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(bad("tensor count mismatch"));
        }
    }
    for (t, (name, n)) in params.tensors_mut().into_iter().zip(&header.tensors) {
        if t.name != *name || t.values.len() != *n {
            return Err(bad(&format!("tensor {name} does not match {}", t.name)));
        }
        t.values.copy_from_slice(&read(*n)?);
    }
    let mut m = Vec::new();
    for (_, n) in &header.tensors {
        m.push(read(*n)?);
    }
    let mut v = Vec::new();
    for (_, n) in &header.tensors {
        v.push(read(*n)?);
    }
    if pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Trainer {
        params,
        adam: AdamState {
            step: header.step,
            m,
            v,
            eta: header.eta,
            beta1: header.beta1,
            beta2: header.beta2,
            epsilon: header.epsilon,
        },
        config: header.train,
        log: header.log,
    })
}

/// Model checkpoint or bare weight file.
pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (params, used) = decode_weights(&bytes)?;
    if used == bytes.len() {
        return Ok(params);
    }
    decode_checkpoint(&bytes, path).map(|t| t.params)
}

/// Everything the `train` command reads from its config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Used when the manifest carries no train/test assignment.
    pub split_ratio: f64,
    /// Resume from this checkpoint instead of building a fresh model.
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_ratio: 0.8,
            resume: None,
        }
    }
}

/// Train and test records: the manifest's own assignment when present,
/// otherwise a seeded content-disjoint split.
pub fn train_test_records(
    records: &[SampleRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if records.iter().any(|r| r.split != Split::Unassigned) {
        let train = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
        let test = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
        return Ok((train, test));
    }
    split_dataset(records, ratio, seed)
}
