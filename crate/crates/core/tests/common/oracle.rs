//! Reference implementations written independently of the library. Each
//! function runs seeded random cases and returns the worst absolute error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sriqa::metrics::{krcc, krcc_fast, plcc, srcc};
use sriqa::model::{pool_features, PoolingMode};
use sriqa::tensor::{layer_forward, LayerParams, LayerSpec, Tensor4};

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_vec(shape, randn(rng, shape.iter().product())).unwrap()
}

fn worst(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn conv3x3(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    for _ in 0..cases {
        let (n, h, w) = (rng.random_range(1..4), rng.random_range(1..10), rng.random_range(1..10));
        let (ci, co) = (rng.random_range(1..6), rng.random_range(1..6));
        let spec = LayerSpec::Conv3x3 {
            in_channels: ci,
            out_channels: co,
        };
        let p = LayerParams {
            weight: randn(&mut rng, 9 * ci * co),
            bias: randn(&mut rng, co),
        };
        let x = tensor(&mut rng, [n, h, w, ci]);
        let (y, _) = layer_forward(&spec, Some(&p), &x, false, &mut rng).unwrap();
        let mut want = Vec::new();
        for b in 0..n {
            for r in 0..h {
                for c in 0..w {
                    for o in 0..co {
                        let mut acc = p.bias[o];
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (rr, cc) = (r as i64 + dy, c as i64 + dx);
                                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                                    continue;
                                }
                                let k = ((dy + 1) * 3 + dx + 1) as usize;
                                for i in 0..ci {
                                    acc += p.weight[(k * ci + i) * co + o] * x.at(b, rr as usize, cc as usize, i);
                                }
                            }
                        }
                        want.push(acc);
                    }
                }
            }
        }
        err = err.max(worst(y.data(), &want));
    }
    err
}

pub fn maxpool2(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    for _ in 0..cases {
        let (n, h, w, c) = (
            rng.random_range(1..4),
            2 * rng.random_range(1..6),
            2 * rng.random_range(1..6),
            rng.random_range(1..5),
        );
        let x = tensor(&mut rng, [n, h, w, c]);
        let (y, _) = layer_forward(&LayerSpec::Maxpool2, None, &x, false, &mut rng).unwrap();
        let mut want = Vec::new();
        for b in 0..n {
            for r in 0..h / 2 {
                for q in 0..w / 2 {
                    for ch in 0..c {
                        want.push(
                            x.at(b, 2 * r, 2 * q, ch)
                                .max(x.at(b, 2 * r + 1, 2 * q, ch))
                                .max(x.at(b, 2 * r, 2 * q + 1, ch))
                                .max(x.at(b, 2 * r + 1, 2 * q + 1, ch)),
                        );
                    }
                }
            }
        }
        err = err.max(worst(y.data(), &want));
    }
    err
}

pub fn dense(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    for _ in 0..cases {
        let (n, i, o) = (rng.random_range(1..4), rng.random_range(1..20), rng.random_range(1..10));
        let spec = LayerSpec::Dense {
            in_units: i,
            out_units: o,
        };
        let p = LayerParams {
            weight: randn(&mut rng, i * o),
            bias: randn(&mut rng, o),
        };
        let x = tensor(&mut rng, [n, 1, 1, i]);
        let (y, _) = layer_forward(&spec, Some(&p), &x, false, &mut rng).unwrap();
        let mut want = Vec::new();
        for b in 0..n {
            for u in 0..o {
                want.push(p.bias[u] + (0..i).map(|k| x.item(b)[k] * p.weight[k * o + u]).sum::<f64>());
            }
        }
        err = err.max(worst(y.data(), &want));
    }
    err
}

/// Mean, max and min over the patch axis, slice by slice.
pub fn joint_pooling(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..7);
        let x = tensor(&mut rng, [n, 8, 8, 3]);
        let p = pool_features(&x, PoolingMode::Joint).unwrap().tensor;
        assert_eq!(p.shape(), [3, 8, 8, 3]);
        let mut want = vec![0.0; p.len()];
        let k = x.item_len();
        for j in 0..k {
            let col: Vec<f64> = (0..n).map(|i| x.item(i)[j]).collect();
            want[j] = col.iter().sum::<f64>() / n as f64;
            want[k + j] = col.iter().cloned().fold(f64::MIN, f64::max);
            want[2 * k + j] = col.iter().cloned().fold(f64::MAX, f64::min);
        }
        err = err.max(worst(p.data(), &want));
    }
    err
}

pub fn pearson_textbook(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn counting_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn tau_b_textbook(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (x[i] - x[j], y[i] - y[j]);
            if a == 0.0 {
                tx += 1.0;
            }
            if b == 0.0 {
                ty += 1.0;
            }
            if a * b > 0.0 {
                conc += 1.0;
            } else if a * b < 0.0 {
                disc += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (conc - disc) / ((n0 - tx) * (n0 - ty)).sqrt()
}

pub struct CorrelationCheck {
    pub worst: f64,
    pub checked: usize,
    /// Constant inputs that were not rejected.
    pub accepted_constant: usize,
}

/// PLCC, SRCC and both Kendall implementations on tie-heavy vectors.
pub fn correlations(seed: u64, cases: usize) -> CorrelationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CorrelationCheck {
        worst: 0.0,
        checked: 0,
        accepted_constant: 0,
    };
    for _ in 0..cases {
        let len = rng.random_range(2..=50);
        // Coarse values force plenty of ties.
        let levels = rng.random_range(2..12);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 * 0.37).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 - 3.0).collect();
        let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
        if constant(&x) || constant(&y) {
            if plcc(&x, &y).is_ok() || srcc(&x, &y).is_ok() {
                out.accepted_constant += 1;
            }
            continue;
        }
        out.checked += 1;
        let s = pearson_textbook(&counting_ranks(&x), &counting_ranks(&y));
        let t = tau_b_textbook(&x, &y);
        for e in [
            plcc(&x, &y).unwrap() - pearson_textbook(&x, &y),
            srcc(&x, &y).unwrap() - s,
            krcc(&x, &y).unwrap() - t,
            krcc_fast(&x, &y).unwrap() - t,
        ] {
            out.worst = out.worst.max(e.abs());
        }
    }
    out
}
