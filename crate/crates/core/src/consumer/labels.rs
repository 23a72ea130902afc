//! Label construction for the five rating-derived tasks.

use serde::{Deserialize, Serialize};

use super::TaskId;
use crate::error::{Error, Result};
use crate::graph::{snapshot_at, InteractionGraph, VersionSchedule};

pub const POSITIVE_RATING: u8 = 4;
pub const STD_THRESHOLD: f64 = 1.0;
/// Items need strictly more reviews than this to be labelled.
pub const MIN_REVIEWS: usize = 10;

/// What a consumer model sees for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subject {
    User(u32),
    Item(u32),
    Pair(u32, u32),
}

/// Which role a label set plays for the consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    /// Prediction time `t_k`.
    Test(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExamples {
    pub task: TaskId,
    /// Snapshot whose embeddings the examples are scored on.
    pub version: usize,
    pub examples: Vec<(Subject, u8)>,
}

impl LabeledExamples {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|(_, y)| *y == 1).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|&(_, y)| y).collect()
    }
}

/// First test version for `task` (user tasks predict activity of users
/// that already exist, so they start one version later).
pub fn first_test_version(task: TaskId) -> usize {
    match task {
        TaskId::UserActivity | TaskId::UserPositiveActivity => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct RatingStats {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

impl RatingStats {
    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Population standard deviation.
    fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.count as f64 - m * m).max(0.0).sqrt()
    }
}

fn item_stats(graph: &InteractionGraph, t: f64) -> Vec<RatingStats> {
    let mut stats = vec![RatingStats::default(); graph.num_items()];
    for e in &graph.interactions()[..graph.count_until(t)] {
        let s = &mut stats[e.item as usize];
        let r = e.rating as f64;
        s.count += 1;
        s.sum += r;
        s.sum_sq += r * r;
    }
    stats
}

/// Median of the average rating over items with more than
/// [`MIN_REVIEWS`] reviews up to `t_0`; frozen for all versions.
pub fn median_item_rating(graph: &InteractionGraph, schedule: &VersionSchedule) -> Result<f64> {
    let mut avgs: Vec<f64> = item_stats(graph, schedule.time(0)?)
        .iter()
        .filter(|s| s.count > MIN_REVIEWS)
        .map(RatingStats::mean)
        .collect();
    if avgs.is_empty() {
        return Err(Error::Validation(format!("no item has more than {MIN_REVIEWS} reviews at t_0")));
    }
    avgs.sort_by(f64::total_cmp);
    let n = avgs.len();
    Ok(if n % 2 == 1 {
        avgs[n / 2]
    } else {
        0.5 * (avgs[n / 2 - 1] + avgs[n / 2])
    })
}

pub fn build_labels(task: TaskId, graph: &InteractionGraph, schedule: &VersionSchedule, split: Split) -> Result<LabeledExamples> {
    let last = schedule.last_version();
    // (embedding snapshot, version whose (t_k, t_{k+1}] window labels the examples)
    let (version, label_k) = match split {
        Split::Train => (0, 0),
        Split::Validation => match task {
            TaskId::UserActivity | TaskId::UserPositiveActivity => (1, 1),
            _ => (0, 0),
        },
        Split::Test(k) => {
            let first = first_test_version(task);
            if k < first || k > last {
                return Err(Error::range("test version", k, format!("{first}..={last} for {}", task.key())));
            }
            (k, k)
        }
    };
    if version > last {
        return Err(Error::range("version", version, format!("0..={last}")));
    }

    let snapshot = snapshot_at(graph, schedule, version)?;
    let t_now = schedule.time(label_k)?;
    let t_next = schedule.time(label_k + 1)?;
    let window = graph.count_until(t_now)..graph.count_until(t_next);
    let edges = graph.interactions();

    let examples: Vec<(Subject, u8)> = match task {
        TaskId::UserActivity | TaskId::UserPositiveActivity => {
            let positive_only = task == TaskId::UserPositiveActivity;
            let mut active = vec![false; graph.num_users()];
            for e in &edges[window] {
                if !positive_only || e.rating >= POSITIVE_RATING {
                    active[e.user as usize] = true;
                }
            }
            snapshot
                .users
                .iter()
                .map(|&u| (Subject::User(u), active[u as usize] as u8))
                .collect()
        }
        TaskId::ItemRatingAvg | TaskId::ItemRatingStd => {
            let eligible = item_stats(graph, snapshot.time);
            // Training labels use ratings up to t_0; every other split looks one version ahead.
            let horizon = if split == Split::Train { t_now } else { t_next };
            let labels = item_stats(graph, horizon);
            let median = if task == TaskId::ItemRatingAvg {
                median_item_rating(graph, schedule)?
            } else {
                0.0
            };
            snapshot
                .items
                .iter()
                .filter(|&&i| eligible[i as usize].count > MIN_REVIEWS)
                .map(|&i| {
                    let s = labels[i as usize];
                    let y = match task {
                        TaskId::ItemRatingAvg => s.mean() > median,
                        _ => s.std() > STD_THRESHOLD,
                    };
                    (Subject::Item(i), y as u8)
                })
                .collect()
        }
        TaskId::EdgeRating => {
            let range = if split == Split::Train { snapshot.edge_indices() } else { window };
            edges[range]
                .iter()
                .filter(|e| snapshot.contains_user(e.user) && snapshot.contains_item(e.item))
                .map(|e| (Subject::Pair(e.user, e.item), (e.rating >= POSITIVE_RATING) as u8))
                .collect()
        }
    };

    if examples.is_empty() {
        return Err(Error::Validation(format!(
            "no eligible examples for {} ({split:?})",
            task.key()
        )));
    }
    Ok(LabeledExamples { task, version, examples })
}
