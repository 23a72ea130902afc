//! Timestamped user–item interaction graph and its version snapshots.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist::{self, ArtifactKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    /// Fraction of all edges observed up to and including this one.
    pub time: f64,
    pub rating: u8,
}

/// A named block of the item feature vector, e.g. brands or subcategories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    feature_groups: Vec<FeatureGroup>,
    /// Sorted active feature indices per item (multi-hot, sparse).
    item_features: Vec<Vec<u32>>,
    interactions: Vec<Interaction>,
    user_tokens: Vec<String>,
    item_tokens: Vec<String>,
}

impl InteractionGraph {
    pub fn new(
        num_users: usize,
        num_items: usize,
        feature_groups: Vec<FeatureGroup>,
        item_features: Vec<Vec<u32>>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        let graph = InteractionGraph {
            num_users,
            num_items,
            feature_groups,
            item_features,
            interactions,
            user_tokens: (0..num_users).map(|u| format!("u{u}")).collect(),
            item_tokens: (0..num_items).map(|i| format!("i{i}")).collect(),
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.item_features.len() != self.num_items {
            return fail(format!(
                "{} feature rows for {} items",
                self.item_features.len(),
                self.num_items
            ));
        }
        let dim = self.feature_dim();
        for (i, row) in self.item_features.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("item {i}: feature indices not strictly increasing"));
            }
            if row.iter().any(|&f| f as usize >= dim) {
                return fail(format!("item {i}: feature index beyond dimension {dim}"));
            }
        }
        let mut seen = HashSet::with_capacity(self.interactions.len());
        let mut prev = f64::NEG_INFINITY;
        for (n, e) in self.interactions.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.time) {
                return fail(format!("interaction {n}: time {} outside [0,1]", e.time));
            }
            if e.time < prev {
                return fail(format!("interaction {n}: not sorted by time"));
            }
            prev = e.time;
            if !(1..=5).contains(&e.rating) {
                return fail(format!("interaction {n}: rating {} outside 1..5", e.rating));
            }
            if e.user as usize >= self.num_users || e.item as usize >= self.num_items {
                return fail(format!("interaction {n}: endpoint out of range"));
            }
            if !seen.insert((e.user, e.item, e.time.to_bits())) {
                return fail(format!("interaction {n}: duplicate (user, item, time)"));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn feature_groups(&self) -> &[FeatureGroup] {
        &self.feature_groups
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_groups.iter().map(|g| g.size).sum()
    }

    pub fn item_feature_indices(&self, item: u32) -> &[u32] {
        &self.item_features[item as usize]
    }

    pub fn user_token(&self, user: u32) -> &str {
        &self.user_tokens[user as usize]
    }

    pub fn item_token(&self, item: u32) -> &str {
        &self.item_tokens[item as usize]
    }

    /// Dense `num_items × feature_dim` multi-hot matrix.
    pub fn item_feature_matrix(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.num_items, self.feature_dim()));
        for (i, row) in self.item_features.iter().enumerate() {
            for &f in row {
                x[[i, f as usize]] = 1.0;
            }
        }
        x
    }

    /// Number of interactions with `time <= t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.interactions.partition_point(|e| e.time <= t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(path, ArtifactKind::Graph, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let graph: InteractionGraph = persist::load(path, ArtifactKind::Graph)?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            num_users: self.num_users,
            num_items: self.num_items,
            num_interactions: self.interactions.len(),
            feature_groups: self.feature_groups.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub feature_groups: Vec<FeatureGroup>,
}

/// Update timestamps `t_0 < … < t_K`, all inside `(0, 1)`; `t_{K+1} = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionSchedule {
    timestamps: Vec<f64>,
}

impl VersionSchedule {
    pub fn new(timestamps: Vec<f64>) -> Result<Self> {
        if timestamps.len() < 2 {
            return Err(Error::Validation(
                "schedule needs at least two timestamps".into(),
            ));
        }
        if timestamps.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Validation(
                "schedule timestamps must lie in (0, 1)".into(),
            ));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "schedule timestamps must be strictly increasing".into(),
            ));
        }
        Ok(VersionSchedule { timestamps })
    }

    /// `t_0 = 0.5, 0.6, …, t_4 = 0.9`.
    pub fn standard() -> Self {
        VersionSchedule {
            timestamps: vec![0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }

    /// Index of the last version, `K`.
    pub fn last_version(&self) -> usize {
        self.timestamps.len() - 1
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// `t_k` for `0 <= k <= K + 1`.
    pub fn time(&self, k: usize) -> Result<f64> {
        match k.cmp(&self.timestamps.len()) {
            std::cmp::Ordering::Less => Ok(self.timestamps[k]),
            std::cmp::Ordering::Equal => Ok(1.0),
            std::cmp::Ordering::Greater => Err(Error::range(
                "version",
                k,
                format!("0..={}", self.timestamps.len()),
            )),
        }
    }

    fn check_version(&self, k: usize) -> Result<()> {
        if k > self.last_version() {
            return Err(Error::range(
                "version",
                k,
                format!("0..={}", self.last_version()),
            ));
        }
        Ok(())
    }
}

/// All edges up to `t_k` and the nodes they touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub version: usize,
    pub time: f64,
    /// Interactions are time-sorted, so the edge set is a prefix.
    pub edges: Range<usize>,
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl Snapshot {
    pub fn edge_indices(&self) -> Range<usize> {
        self.edges.clone()
    }

    pub fn contains_user(&self, user: u32) -> bool {
        self.users.binary_search(&user).is_ok()
    }

    pub fn contains_item(&self, item: u32) -> bool {
        self.items.binary_search(&item).is_ok()
    }
}

pub fn snapshot_at(graph: &InteractionGraph, schedule: &VersionSchedule, k: usize) -> Result<Snapshot> {
    schedule.check_version(k)?;
    let time = schedule.time(k)?;
    Ok(snapshot_until(graph, time, k))
}

/// Snapshot of all edges with `time <= t`, tagged with `version`.
pub fn snapshot_until(graph: &InteractionGraph, t: f64, version: usize) -> Snapshot {
    let end = graph.count_until(t);
    let mut users = vec![false; graph.num_users()];
    let mut items = vec![false; graph.num_items()];
    for e in &graph.interactions()[..end] {
        users[e.user as usize] = true;
        items[e.item as usize] = true;
    }
    let collect = |mask: Vec<bool>| {
        mask.into_iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i as u32))
            .collect()
    };
    Snapshot {
        version,
        time: t,
        edges: 0..end,
        users: collect(users),
        items: collect(items),
    }
}

/// Edges with `t_k < time <= t_{k+1}`.
pub fn delta_edges(graph: &InteractionGraph, schedule: &VersionSchedule, k: usize) -> Result<Range<usize>> {
    schedule.check_version(k)?;
    let start = graph.count_until(schedule.time(k)?);
    let end = graph.count_until(schedule.time(k + 1)?);
    Ok(start..end)
}

/// Delimited-text layout of the edge list and item-feature files.
#[derive(Debug, Clone, Copy)]
pub struct EdgeListFormat {
    pub delimiter: u8,
    pub has_header: bool,
    /// Separator between subcategory tokens inside the third feature column.
    pub list_separator: char,
}

impl Default for EdgeListFormat {
    fn default() -> Self {
        EdgeListFormat {
            delimiter: b',',
            has_header: false,
            list_separator: '|',
        }
    }
}

fn intern(map: &mut HashMap<String, u32>, tokens: &mut Vec<String>, token: &str) -> u32 {
    if let Some(&id) = map.get(token) {
        return id;
    }
    let id = tokens.len() as u32;
    map.insert(token.to_string(), id);
    tokens.push(token.to_string());
    id
}

fn reader(path: &Path, format: &EdgeListFormat, flexible: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(flexible)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        })
}

/// Reads an edge list (`user, item, raw_timestamp, rating`) and an optional
/// item-feature file (`item, brand, sub1|sub2|…`).
///
/// Raw timestamps are replaced by `rank / N` over a stable sort, so the
/// i-th edge in time order gets time `i / N`.
pub fn ingest(edges_path: &Path, features_path: Option<&Path>, format: &EdgeListFormat) -> Result<InteractionGraph> {
    let mut user_ids = HashMap::new();
    let mut item_ids = HashMap::new();
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    let mut raw: Vec<(i64, u32, u32, u8)> = Vec::new();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: edges_path.to_path_buf(),
        line,
        message,
    };

    for record in reader(edges_path, format, false)?.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", record.len())));
        }
        let time: i64 = record[2]
            .parse()
            .map_err(|_| parse_err(line, format!("bad timestamp {:?}", &record[2])))?;
        let rating: i64 = record[3]
            .parse()
            .map_err(|_| parse_err(line, format!("bad rating {:?}", &record[3])))?;
        if !(1..=5).contains(&rating) {
            return Err(Error::Validation(format!(
                "{}: line {line}: rating {rating} outside 1..5",
                edges_path.display()
            )));
        }
        let u = intern(&mut user_ids, &mut user_tokens, &record[0]);
        let i = intern(&mut item_ids, &mut item_tokens, &record[1]);
        raw.push((time, u, i, rating as u8));
    }
    if raw.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no interactions",
            edges_path.display()
        )));
    }

    // Stable: ties keep input order.
    raw.sort_by_key(|r| r.0);
    let n = raw.len() as f64;
    let interactions = raw
        .iter()
        .enumerate()
        .map(|(rank, &(_, user, item, rating))| Interaction {
            user,
            item,
            time: (rank + 1) as f64 / n,
            rating,
        })
        .collect();

    let num_items = item_tokens.len();
    let (feature_groups, item_features) = match features_path {
        Some(path) => read_features(path, format, &item_ids, num_items)?,
        None => (Vec::new(), vec![Vec::new(); num_items]),
    };

    let graph = InteractionGraph {
        num_users: user_tokens.len(),
        num_items,
        feature_groups,
        item_features,
        interactions,
        user_tokens,
        item_tokens,
    };
    graph.validate()?;
    Ok(graph)
}

fn read_features(
    path: &Path,
    format: &EdgeListFormat,
    item_ids: &HashMap<String, u32>,
    num_items: usize,
) -> Result<(Vec<FeatureGroup>, Vec<Vec<u32>>)> {
    let mut brand_ids = HashMap::new();
    let mut brands = Vec::new();
    let mut sub_ids = HashMap::new();
    let mut subs = Vec::new();
    let mut per_item: Vec<(Option<u32>, Vec<u32>)> = vec![(None, Vec::new()); num_items];

    for record in reader(path, format, true)?.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.is_empty() || record.len() > 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected 1 to 3 fields, found {}", record.len()),
            });
        }
        // Items never interacted with are not part of the graph.
        let Some(&item) = item_ids.get(&record[0]) else {
            continue;
        };
        let entry = &mut per_item[item as usize];
        if let Some(brand) = record.get(1).filter(|b| !b.is_empty()) {
            entry.0 = Some(intern(&mut brand_ids, &mut brands, brand));
        }
        if let Some(list) = record.get(2) {
            for sub in list.split(format.list_separator).map(str::trim).filter(|s| !s.is_empty()) {
                let id = intern(&mut sub_ids, &mut subs, sub);
                if !entry.1.contains(&id) {
                    entry.1.push(id);
                }
            }
        }
    }

    let offset = brands.len() as u32;
    let features = per_item
        .into_iter()
        .map(|(brand, subs)| {
            let mut row: Vec<u32> = brand.into_iter().chain(subs.into_iter().map(|s| s + offset)).collect();
            row.sort_unstable();
            row
        })
        .collect();
    let groups = vec![
        FeatureGroup {
            name: "brand".into(),
            size: brands.len(),
        },
        FeatureGroup {
            name: "subcategory".into(),
            size: subs.len(),
        },
    ];
    Ok((groups, features))
}

/// Parameters of the planted low-rank generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
}

/// Planted low-rank user–item affinity model with drifting user tastes.
///
/// Items carry latent vectors revealed through their multi-hot features
/// (the top random projections of the latent); users carry a latent that
/// drifts linearly in time, and item popularity drifts linearly too. Each
/// interaction picks an arrived user by activity weight and an arrived item
/// by softmax affinity. Ratings depend on item quality, item-specific noise
/// and affinity, so the rating-derived labels are predictable from item
/// features.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<InteractionGraph> {
    let SyntheticSpec {
        seed,
        num_users,
        num_items,
        num_interactions,
        feature_dim,
        latent_dim,
    } = *spec;
    if num_users == 0 || num_items == 0 || num_interactions == 0 || feature_dim == 0 || latent_dim == 0 {
        return Err(Error::Validation("synthetic counts must be positive".into()));
    }
    if latent_dim > feature_dim {
        return Err(Error::Validation(format!(
            "latent_dim {latent_dim} exceeds feature_dim {feature_dim}"
        )));
    }

    const AFFINITY_SCALE: f64 = 2.5;
    const DRIFT_SCALE: f64 = 0.8;
    const POPULARITY_DRIFT: f64 = 2.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let latent = |rng: &mut ChaCha8Rng, n: usize| -> Array2<f64> {
        Array2::from_shape_fn((n, latent_dim), |_| normal(rng))
    };

    let users = latent(&mut rng, num_users);
    let drift = latent(&mut rng, num_users) * DRIFT_SCALE;
    let items = latent(&mut rng, num_items);
    let projection = latent(&mut rng, feature_dim);

    let active_per_item = (feature_dim / 6).max(1);
    let mut item_features = Vec::with_capacity(num_items);
    for i in 0..num_items {
        let v = items.row(i);
        let mut proj: Vec<(f64, u32)> = (0..feature_dim)
            .map(|f| (projection.row(f).dot(&v), f as u32))
            .collect();
        proj.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut row: Vec<u32> = proj[..active_per_item].iter().map(|p| p.1).collect();
        row.sort_unstable();
        item_features.push(row);
    }

    let norm = (latent_dim as f64).sqrt();
    let activity: Vec<f64> = (0..num_users)
        .map(|u| (0.5 * users[[u, 0]] + 0.5 * normal(&mut rng)).exp())
        .collect();
    let popularity: Vec<f64> = (0..num_items).map(|_| 0.5 * normal(&mut rng)).collect();
    let arrival = |rng: &mut ChaCha8Rng, n: usize, early: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < early {
                    0.0
                } else {
                    rng.random::<f64>() * 0.85
                }
            })
            .collect()
    };
    let user_arrival = arrival(&mut rng, num_users, 0.5);
    let item_arrival = arrival(&mut rng, num_items, 0.7);
    let item_quality: Vec<f64> = (0..num_items).map(|i| 0.8 * items[[i, 1 % latent_dim]]).collect();
    let item_noise: Vec<f64> = (0..num_items)
        .map(|i| 0.4 + 1.4 / (1.0 + (-2.0 * items[[i, 2 % latent_dim]]).exp()))
        .collect();

    // Popularity moves independently of the features, so a frozen encoder goes stale.
    let pop_drift: Vec<f64> = (0..num_items).map(|_| POPULARITY_DRIFT * normal(&mut rng)).collect();
    let mut interactions = Vec::with_capacity(num_interactions);
    let mut logits = vec![0.0; num_items];
    let mut taste = vec![0.0; latent_dim];
    for n in 0..num_interactions {
        let t = n as f64 / num_interactions as f64;

        let total: f64 = (0..num_users)
            .filter(|&u| user_arrival[u] <= t)
            .map(|u| activity[u])
            .sum();
        // The earliest arrivals are at t = 0, so `total > 0`.
        let mut pick = rng.random::<f64>() * total;
        let mut user = 0;
        for u in (0..num_users).filter(|&u| user_arrival[u] <= t) {
            user = u;
            pick -= activity[u];
            if pick <= 0.0 {
                break;
            }
        }
        for (d, slot) in taste.iter_mut().enumerate() {
            *slot = users[[user, d]] + t * drift[[user, d]];
        }

        let mut max = f64::NEG_INFINITY;
        for (i, logit) in logits.iter_mut().enumerate() {
            *logit = if item_arrival[i] <= t {
                let dot: f64 = (0..latent_dim).map(|d| taste[d] * items[[i, d]]).sum();
                AFFINITY_SCALE * dot / norm + popularity[i] + t * pop_drift[i]
            } else {
                f64::NEG_INFINITY
            };
            max = max.max(*logit);
        }
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut item = 0;
        for (i, l) in logits.iter().enumerate() {
            if *l == f64::NEG_INFINITY {
                continue;
            }
            item = i;
            pick -= (l - max).exp();
            if pick <= 0.0 {
                break;
            }
        }

        let affinity = (logits[item] - popularity[item] - t * pop_drift[item]) / AFFINITY_SCALE;
        let raw = 3.6 + item_quality[item] + 0.4 * affinity + item_noise[item] * normal(&mut rng);
        let rating = raw.round().clamp(1.0, 5.0) as u8;

        interactions.push(Interaction {
            user: user as u32,
            item: item as u32,
            time: (n + 1) as f64 / num_interactions as f64,
            rating,
        });
    }

    InteractionGraph::new(
        num_users,
        num_items,
        vec![FeatureGroup {
            name: "synthetic".into(),
            size: feature_dim,
        }],
        item_features,
        interactions,
    )
}
