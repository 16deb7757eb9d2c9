//! Drives the rating store the way the HTTP handlers do: sessions pull
//! tasks in their own order, post scores, and the panel is finalized into
//! a labeled manifest.

use sriqa::service::{plan_tasks, RatingStore};
use sriqa::synth::{build_mini_dataset, MiniSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let spec = MiniSpec {
        contents: 4,
        size: 64,
        ..MiniSpec::default()
    };
    let mini = build_mini_dataset(&spec, dir.path())?;
    let manifest = sriqa::dataset::Manifest::load(&mini.manifest_path)?;
    println!("{} rating tasks", plan_tasks(&manifest)?.len());

    let mut store = RatingStore::open(&mini.manifest_path, 5, 1)?;
    for rater in 0..5 {
        let sid = store.create_session(format!("rater {rater}"))?;
        let mut order = Vec::new();
        while let Some((task, _)) = store.next_task(sid)? {
            order.push(task.task_id.clone());
            let score = 4.0 + order.len() as f64 + 0.2 * rater as f64;
            let id = task.task_id.clone();
            store.submit(sid, &id, score)?;
        }
        println!("session {sid}: {}", order.join(" "));
    }
    let done = store.finalize()?;
    println!("rejected {:?}", done.rejected_subjects);
    for c in &done.curves {
        println!("{} b = {:.4}", c.group, c.b);
    }
    println!("labels -> {}", done.manifest_path.display());
    Ok(())
}
