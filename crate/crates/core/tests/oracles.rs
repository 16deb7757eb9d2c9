//! Fast kernels against straightforward reference implementations written
//! independently here.

mod common;

use common::oracle;
use sriqa::imaging::{resize_bicubic, ImageRGB};
use sriqa::metrics::{krcc, plcc, srcc};

const TOL: f64 = 1e-12;

#[test]
fn conv3x3_matches_loop() {
    let e = oracle::conv3x3(11, 100);
    assert!(e <= TOL, "{e}");
}

#[test]
fn maxpool_and_dense_match_loops() {
    assert_eq!(oracle::maxpool2(12, 100), 0.0);
    let e = oracle::dense(12, 100);
    assert!(e <= TOL, "{e}");
}

#[test]
fn joint_pooling_matches_loop() {
    let e = oracle::joint_pooling(13, 100);
    assert!(e <= TOL, "{e}");
}

#[test]
fn correlations_match_direct_formulas() {
    let c = oracle::correlations(14, 1000);
    assert!(c.worst <= TOL, "{}", c.worst);
    assert_eq!(c.accepted_constant, 0);
    assert!(c.checked > 900);
}

#[test]
fn fixed_correlation_values() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((plcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    assert!((srcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    assert!((krcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((plcc(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!(plcc(&x, &[5.0; 4]).is_err());
}

fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

#[test]
fn ramp_upscale_matches_pixel_oracle() {
    let src = ImageRGB::from_fn(4, 4, |x, y| [(x * 60) as u8, (y * 70) as u8, (x * 20 + y * 40) as u8]);
    let out = resize_bicubic(&src, 8, 8).unwrap();
    let axis = |o: usize| -> Vec<(usize, f64)> {
        let s = (o as f64 + 0.5) * 0.5 - 0.5;
        let f = s.floor();
        (-1..=2)
            .map(|k| {
                let i = (f as i64 + k).clamp(0, 3) as usize;
                (i, keys(s - (f + k as f64)))
            })
            .collect()
    };
    for oy in 0..8 {
        for ox in 0..8 {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(iy, wy) in &axis(oy) {
                    for &(ix, wx) in &axis(ox) {
                        acc += wy * wx * src.pixel(ix, iy)[c] as f64;
                    }
                }
                let want = acc.round().clamp(0.0, 255.0) as u8;
                assert_eq!(out.pixel(ox, oy)[c], want, "({ox},{oy}) channel {c}");
            }
        }
    }
}
