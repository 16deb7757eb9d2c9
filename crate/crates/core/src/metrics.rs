//! Correlation metrics, grouped evaluation and feature-distance analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{source_path, Manifest, SampleRecord};
use crate::error::{Error, Result};
use crate::imaging::read_image;
use crate::model::{ModelParams, PooledFeatures, Stream};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} values", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b by direct pair enumeration.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut s, mut px, mut py) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sx = (x[i] - x[j]).signum() as i64 * (x[i] != x[j]) as i64;
            let sy = (y[i] - y[j]).signum() as i64 * (y[i] != y[j]) as i64;
            s += sx * sy;
            px += sx.abs();
            py += sy.abs();
        }
    }
    if px == 0 || py == 0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((s as f64 / ((px as f64) * (py as f64)).sqrt()).clamp(-1.0, 1.0))
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's merge-sort algorithm).
pub fn krcc_fast(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();

    let n1 = tied_pairs(&xs);
    let mut n3 = 0;
    let mut run = 1u64;
    for i in 1..=idx.len() {
        if i < idx.len() && xs[i] == xs[i - 1] && ys[i] == ys[i - 1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(idx.len()));
    let n2 = tied_pairs(&ys);
    let n0 = n * (n - 1) / 2;
    if n0 == n1 || n0 == n2 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((s as f64 / denom).clamp(-1.0, 1.0))
}

/// Four-parameter logistic `(b1 − b2) / (1 + exp(−(x − b3)/|b4|)) + b2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic4 {
    pub b: [f64; 4],
}

impl Logistic4 {
    pub fn eval(&self, x: f64) -> f64 {
        let [b1, b2, b3, b4] = self.b;
        (b1 - b2) / (1.0 + (-(x - b3) / b4.abs().max(1e-12)).exp()) + b2
    }

    /// Levenberg–Marquardt least-squares fit of `y ≈ f(x)`.
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        check_pair(x, y)?;
        let (ymin, ymax) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
        let mut p = Self {
            b: [ymax, ymin, mx, sx],
        };
        let sse = |m: &Self| x.iter().zip(y).map(|(a, b)| (m.eval(*a) - b).powi(2)).sum::<f64>();
        let mut cost = sse(&p);
        let mut mu = 1e-3;
        for _ in 0..200 {
            let mut jtj = [[0.0; 4]; 4];
            let mut jtr = [0.0; 4];
            for (&xi, &yi) in x.iter().zip(y) {
                let r = p.eval(xi) - yi;
                let mut jac = [0.0; 4];
                for (k, jk) in jac.iter_mut().enumerate() {
                    let h = 1e-7 * p.b[k].abs().max(1e-3);
                    let mut q = p;
                    q.b[k] += h;
                    *jk = (q.eval(xi) - p.eval(xi)) / h;
                }
                for a in 0..4 {
                    jtr[a] += jac[a] * r;
                    for b in 0..4 {
                        jtj[a][b] += jac[a] * jac[b];
                    }
                }
            }
            let mut improved = false;
            while mu < 1e12 {
                let mut a = jtj;
                for (k, row) in a.iter_mut().enumerate() {
                    row[k] += mu * (1.0 + jtj[k][k]);
                }
                let Some(step) = solve4(a, jtr.map(|v| -v)) else {
                    mu *= 10.0;
                    continue;
                };
                let mut q = p;
                for k in 0..4 {
                    q.b[k] += step[k];
                }
                let c = sse(&q);
                if c.is_finite() && c < cost {
                    p = q;
                    improved = cost - c > 1e-15 * cost.max(1e-300);
                    cost = c;
                    mu = (mu * 0.3).max(1e-12);
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        Ok(p)
    }
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let piv = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 4];
    for c in (0..4).rev() {
        let s: f64 = (c + 1..4).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    #[default]
    Class,
    Content,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub plcc: f64,
    pub srcc: f64,
    pub krcc: f64,
}

impl Coefficients {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            plcc: plcc(pred, truth)?,
            srcc: srcc(pred, truth)?,
            krcc: krcc(pred, truth)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: String,
    pub n: usize,
    #[serde(flatten)]
    pub coefficients: Coefficients,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedGroup {
    pub group: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group_by: GroupBy,
    pub logistic: bool,
    pub groups: Vec<GroupResult>,
    pub excluded: Vec<ExcludedGroup>,
    /// Arithmetic mean over the included groups.
    pub average: Coefficients,
    /// All samples in one group; absent if undefined.
    pub pooled: Option<Coefficients>,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>5} {:>8} {:>8} {:>8}", "group", "n", "PLCC", "SRCC", "KRCC");
        let row = |s: &mut String, name: &str, n: usize, c: &Coefficients| {
            let _ = writeln!(
                s,
                "{:<24} {:>5} {:>8.4} {:>8.4} {:>8.4}",
                name, n, c.plcc, c.srcc, c.krcc
            );
        };
        for g in &self.groups {
            row(&mut s, &g.group, g.n, &g.coefficients);
        }
        let n_in: usize = self.groups.iter().map(|g| g.n).sum();
        row(&mut s, "average", n_in, &self.average);
        if let Some(p) = &self.pooled {
            row(&mut s, "pooled", self.n_samples, p);
        }
        for e in &self.excluded {
            let _ = writeln!(s, "{:<24} {:>5} excluded: {}", e.group, e.n, e.reason);
        }
        s
    }
}

/// Correlations between `predictions` and the records' imos, computed per
/// group and averaged over groups with at least two samples and a defined
/// correlation. With `logistic`, predictions are first mapped through a
/// four-parameter logistic fitted on all samples.
pub fn evaluate(
    records: &[SampleRecord],
    predictions: &[f64],
    group_by: GroupBy,
    logistic: bool,
) -> Result<EvalReport> {
    if records.len() != predictions.len() {
        return Err(Error::Dimension(format!(
            "{} records, {} predictions",
            records.len(),
            predictions.len()
        )));
    }
    let truth: Vec<f64> = records
        .iter()
        .map(|r| {
            r.imos.ok_or_else(|| Error::Record {
                record: r.sample_id.clone(),
                message: "no imos label".into(),
            })
        })
        .collect::<Result<_>>()?;
    let mapped: Vec<f64> = if logistic {
        let f = Logistic4::fit(predictions, &truth)?;
        predictions.iter().map(|&p| f.eval(p)).collect()
    } else {
        predictions.to_vec()
    };

    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = match group_by {
            GroupBy::Class => r.content_class.to_string(),
            GroupBy::Content => r.content_id.clone(),
        };
        by_group.entry(key).or_default().push(i);
    }
    let mut groups = Vec::new();
    let mut excluded = Vec::new();
    for (group, idx) in by_group {
        let p: Vec<f64> = idx.iter().map(|&i| mapped[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
        if idx.len() < 2 {
            excluded.push(ExcludedGroup {
                group,
                n: idx.len(),
                reason: "fewer than 2 samples".into(),
            });
            continue;
        }
        match Coefficients::compute(&p, &t) {
            Ok(c) => groups.push(GroupResult {
                group,
                n: idx.len(),
                coefficients: c,
            }),
            Err(e) => excluded.push(ExcludedGroup {
                group,
                n: idx.len(),
                reason: e.to_string(),
            }),
        }
    }
    if groups.is_empty() {
        return Err(Error::UndefinedCorrelation("no group has a defined correlation".into()));
    }
    let k = groups.len() as f64;
    let average = Coefficients {
        plcc: groups.iter().map(|g| g.coefficients.plcc).sum::<f64>() / k,
        srcc: groups.iter().map(|g| g.coefficients.srcc).sum::<f64>() / k,
        krcc: groups.iter().map(|g| g.coefficients.krcc).sum::<f64>() / k,
    };
    Ok(EvalReport {
        group_by,
        logistic,
        groups,
        excluded,
        average,
        pooled: Coefficients::compute(&mapped, &truth).ok(),
        n_samples: records.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistance {
    pub sample_id: String,
    pub iteration: u32,
    pub imos: Option<f64>,
    /// Mean squared difference of pooled HR and LR features.
    pub mse_hl: f64,
    /// Euclidean norm of the same difference.
    pub norm_hl: f64,
    /// Mean squared difference between the pristine source's pooled HR
    /// features and this sample's pooled LR features.
    pub mse_pristine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistanceReport {
    pub samples: Vec<FeatureDistance>,
    /// Spearman correlation of `norm_hl` with imos over labeled samples.
    pub srcc_norm_imos: Option<f64>,
    /// Among samples with iteration ≥ 3, the fraction whose pristine MSE is
    /// below their own MSE.
    pub pristine_closer_fraction: Option<f64>,
    pub n_degraded: usize,
}

fn diff_stats(h: &PooledFeatures, l: &PooledFeatures) -> (f64, f64) {
    let ss: f64 = h
        .tensor
        .data()
        .iter()
        .zip(l.tensor.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (ss / h.tensor.len() as f64, ss.sqrt())
}

pub fn feature_distance_report(model: &ModelParams, manifest: &Manifest) -> Result<FeatureDistanceReport> {
    if !model.config.use_lr_reference {
        return Err(Error::Config("feature distances need a model with an LR stream".into()));
    }
    let mut pristine: BTreeMap<String, PooledFeatures> = BTreeMap::new();
    let mut samples = Vec::new();
    for r in &manifest.records {
        let hr = read_image(&manifest.resolve(&r.hr_path))?;
        let lr = read_image(&manifest.resolve(&r.lr_path))?;
        let f_h = model.pooled(&hr, Stream::Hr)?;
        let f_l = model.pooled(&lr, Stream::Lr)?;
        if !pristine.contains_key(&r.content_id) {
            let src = read_image(&manifest.resolve(&source_path(&r.content_id)))?;
            pristine.insert(r.content_id.clone(), model.pooled(&src, Stream::Hr)?);
        }
        let (mse_hl, norm_hl) = diff_stats(&f_h, &f_l);
        let (mse_pristine, _) = diff_stats(&pristine[&r.content_id], &f_l);
        samples.push(FeatureDistance {
            sample_id: r.sample_id.clone(),
            iteration: r.iteration,
            imos: r.imos,
            mse_hl,
            norm_hl,
            mse_pristine,
        });
    }
    let labeled: Vec<&FeatureDistance> = samples.iter().filter(|s| s.imos.is_some()).collect();
    let norms: Vec<f64> = labeled.iter().map(|s| s.norm_hl).collect();
    let imos: Vec<f64> = labeled.iter().map(|s| s.imos.unwrap()).collect();
    let degraded: Vec<&FeatureDistance> = samples.iter().filter(|s| s.iteration >= 3).collect();
    let closer = degraded.iter().filter(|s| s.mse_pristine < s.mse_hl).count();
    Ok(FeatureDistanceReport {
        srcc_norm_imos: srcc(&norms, &imos).ok(),
        pristine_closer_fraction: (!degraded.is_empty()).then(|| closer as f64 / degraded.len() as f64),
        n_degraded: degraded.len(),
        samples,
    })
}
