use bcalign_core::consumer::{build_labels, first_test_version, Split, Subject};
use bcalign_core::graph::generate_synthetic;
use bcalign_core::{InteractionGraph, SyntheticSpec, TaskId, VersionSchedule};

fn graph() -> InteractionGraph {
    generate_synthetic(&SyntheticSpec {
        seed: 2,
        num_users: 120,
        num_items: 50,
        num_interactions: 4000,
        feature_dim: 10,
        latent_dim: 3,
    })
    .unwrap()
}

/// Labels recomputed by scanning every edge against the time windows.
fn brute_force(task: TaskId, g: &InteractionGraph, s: &VersionSchedule, split: Split) -> (usize, Vec<(Subject, u8)>) {
    let (version, label_k) = match (split, task) {
        (Split::Train, _) => (0, 0),
        (Split::Validation, TaskId::UserActivity | TaskId::UserPositiveActivity) => (1, 1),
        (Split::Validation, _) => (0, 0),
        (Split::Test(k), _) => (k, k),
    };
    let t_snap = s.time(version).unwrap();
    let (lo, hi) = (s.time(label_k).unwrap(), s.time(label_k + 1).unwrap());
    let edges = g.interactions();
    let in_snap_user = |u: u32| edges.iter().any(|e| e.user == u && e.time <= t_snap);
    let in_snap_item = |i: u32| edges.iter().any(|e| e.item == i && e.time <= t_snap);
    let ratings_until = |i: u32, t: f64| -> Vec<f64> {
        edges.iter().filter(|e| e.item == i && e.time <= t).map(|e| e.rating as f64).collect()
    };
    let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;

    let examples = match task {
        TaskId::UserActivity | TaskId::UserPositiveActivity => (0..g.num_users() as u32)
            .filter(|&u| in_snap_user(u))
            .map(|u| {
                let active = edges.iter().any(|e| {
                    e.user == u && e.time > lo && e.time <= hi && (task == TaskId::UserActivity || e.rating >= 4)
                });
                (Subject::User(u), active as u8)
            })
            .collect(),
        TaskId::ItemRatingAvg | TaskId::ItemRatingStd => {
            let t0 = s.time(0).unwrap();
            let mut avgs: Vec<f64> = (0..g.num_items() as u32)
                .map(|i| ratings_until(i, t0))
                .filter(|r| r.len() > 10)
                .map(|r| mean(&r))
                .collect();
            avgs.sort_by(f64::total_cmp);
            let n = avgs.len();
            let median = if n % 2 == 1 { avgs[n / 2] } else { (avgs[n / 2 - 1] + avgs[n / 2]) / 2.0 };
            let horizon = if split == Split::Train { lo } else { hi };
            (0..g.num_items() as u32)
                .filter(|&i| in_snap_item(i) && ratings_until(i, t_snap).len() > 10)
                .map(|i| {
                    let r = ratings_until(i, horizon);
                    let m = mean(&r);
                    let y = if task == TaskId::ItemRatingAvg {
                        m > median
                    } else {
                        (r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / r.len() as f64).sqrt() > 1.0
                    };
                    (Subject::Item(i), y as u8)
                })
                .collect()
        }
        TaskId::EdgeRating => edges
            .iter()
            .filter(|e| {
                if split == Split::Train {
                    e.time <= t_snap
                } else {
                    e.time > lo && e.time <= hi && in_snap_user(e.user) && in_snap_item(e.item)
                }
            })
            .map(|e| (Subject::Pair(e.user, e.item), (e.rating >= 4) as u8))
            .collect(),
    };
    (version, examples)
}

#[test]
fn labels_match_brute_force() {
    let g = graph();
    let s = VersionSchedule::standard();
    for task in TaskId::ALL {
        let mut splits = vec![Split::Train, Split::Validation];
        splits.extend((first_test_version(task)..=s.last_version()).map(Split::Test));
        for split in splits {
            let (version, want) = brute_force(task, &g, &s, split);
            let got = build_labels(task, &g, &s, split).unwrap();
            assert_eq!(got.version, version, "{task} {split:?}");
            assert_eq!(got.examples, want, "{task} {split:?}");
        }
    }
}

#[test]
fn user_tasks_cannot_be_tested_at_version_one() {
    let g = graph();
    let s = VersionSchedule::standard();
    assert!(build_labels(TaskId::UserActivity, &g, &s, Split::Test(1)).is_err());
    assert!(build_labels(TaskId::EdgeRating, &g, &s, Split::Test(1)).is_ok());
}
