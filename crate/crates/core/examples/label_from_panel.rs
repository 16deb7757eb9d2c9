//! Labels a handful of image groups from one simulated panel: screening,
//! normalization, one decay fit per group, propagation to every iteration.

use sriqa::dataset::{ContentClass, SampleRecord, Split};
use sriqa::imaging::ScaleFactor;
use sriqa::labeling::{anchor_iteration, fit_decay, label_curve, label_manifest, Anchor};
use sriqa::synth::{simulate_panel, PanelSpec};

fn main() -> sriqa::Result<()> {
    let b = fit_decay(&[Anchor { k: 1, imos: 0.7769 }])?;
    let curve: Vec<String> = label_curve(b, 4).iter().map(|q| format!("{q:.4}")).collect();
    println!("anchor (1, 0.7769): b = {b:.6}, Q(0..=4) = {}", curve.join(" "));

    let t_max = 7;
    let truth = [0.12, 0.2, 0.31, 0.44];
    let factor = ScaleFactor::new(2.0)?;
    let mut records = Vec::new();
    for (g, _) in truth.iter().enumerate() {
        for t in 1..=t_max {
            let content = format!("c{g}");
            records.push(SampleRecord {
                sample_id: sriqa::dataset::sample_id(&content, "bicubic", factor, t),
                content_id: content.clone(),
                content_class: ContentClass::ALL[g],
                sr_method: "bicubic".into(),
                factor,
                iteration: t,
                hr_path: format!("images/{content}_{t}.ppm").into(),
                lr_path: format!("images/{content}_{t}__lr.ppm").into(),
                imos: None,
                split: Split::Unassigned,
            });
        }
    }
    let k = anchor_iteration(t_max);
    let anchors: Vec<(String, f64)> = records
        .iter()
        .filter(|r| r.iteration == k)
        .zip(truth)
        .map(|(r, b)| (r.sample_id.clone(), (-b * k as f64).exp()))
        .collect();
    let panel = simulate_panel(&anchors, &PanelSpec::default());
    let out = label_manifest(&records, &panel)?;
    println!("{} subjects, rejected {:?}", panel.len(), out.rejected);
    for (curve, b) in out.curves.iter().zip(truth) {
        println!("{}: fitted b {:.4}, true b {b:.4}", curve.group, curve.b);
    }
    Ok(())
}
