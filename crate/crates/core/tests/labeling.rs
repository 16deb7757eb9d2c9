mod common;

use sriqa::labeling::{anchor_iteration, fit_decay, label_curve, label_manifest, Anchor, SubjectScores};

#[test]
fn single_anchor_reproduces_published_curve() {
    let b = fit_decay(&[Anchor { k: 1, imos: 0.7769 }]).unwrap();
    assert!((b - 0.252_443_637).abs() < 1e-9);
    let q = label_curve(b, 3);
    assert!((q[1] - 0.7769).abs() < 1e-12);
    assert!((q[2] - 0.6036).abs() < 1e-3);
}

#[test]
fn workload_one_anchor_per_group() {
    for t_max in [6, 7, 8] {
        let recs = common::records(1, t_max);
        let k = anchor_iteration(t_max);
        let anchor = recs.iter().find(|r| r.iteration == k).unwrap();
        let panel: Vec<SubjectScores> = (0..5)
            .map(|s| SubjectScores {
                subject_id: format!("s{s}"),
                scores: [(anchor.sample_id.clone(), 6.0)].into_iter().collect(),
            })
            .collect();
        let out = label_manifest(&recs, &panel).unwrap();
        assert_eq!(out.records.len(), t_max as usize);
        assert!(out.records.iter().all(|r| r.imos.is_some()));
    }
}

#[test]
fn panels_recover_planted_outliers_and_curves() {
    let trials: Vec<_> = (0..20).map(common::labeling_trial).collect();
    let exact = trials.iter().filter(|t| t.exact_rejection).count();
    assert!(exact >= 19, "{exact}/20 exact");
    assert!(trials.iter().all(|t| t.rmse <= 0.06));
}

#[test]
fn too_few_subjects_is_an_error() {
    let recs = common::records(1, 3);
    let panel: Vec<SubjectScores> = (0..4)
        .map(|s| SubjectScores {
            subject_id: format!("s{s}"),
            scores: [(recs[1].sample_id.clone(), 5.0)].into_iter().collect(),
        })
        .collect();
    assert!(label_manifest(&recs, &panel).is_err());
}
