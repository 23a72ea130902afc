//! Runs methods over the version schedule and scores them.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::metrics::{alignment_error, recall_at_k};
use crate::compat::{error_growth_trace, to_version, GrowthTrace, TransformRegistry};
use crate::consumer::{
    build_labels, evaluate_consumer, first_test_version, train_consumer, ConsumerGrid, ConsumerModel, LabeledExamples,
    Split, TaskId,
};
use crate::encoder::{encode_all, EmbeddingTable, EncoderParams, EncoderSchedule, GraphView, NodeId};
use crate::error::{Error, Result};
use crate::graph::{delta_edges, snapshot_at, InteractionGraph, Snapshot, VersionSchedule};
use crate::method::{Maintenance, Method};
use crate::tensor::derive_seed;
use crate::training::{train_version_on, EpochLog, TrainConfig, VersionInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub architecture: EncoderSchedule,
    pub train: TrainConfig,
    pub consumer: ConsumerGrid,
    /// Consumer models trained per task; unintended scores are averaged over them.
    pub consumer_seeds: usize,
    pub recall_cutoff: usize,
    pub tasks: Vec<TaskId>,
    /// Record the multi-step error for every version pair (Keep-Latest only).
    pub growth_trace: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            architecture: EncoderSchedule::default(),
            train: TrainConfig::default(),
            consumer: ConsumerGrid::default(),
            consumer_seeds: 3,
            recall_cutoff: 50,
            tasks: TaskId::ALL.to_vec(),
            growth_trace: true,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.consumer.validate()?;
        self.architecture.base(1).validate()?;
        if self.recall_cutoff == 0 {
            return Err(Error::Validation("recall_cutoff must be >= 1".into()));
        }
        if self.consumer_seeds == 0 && !self.tasks.is_empty() {
            return Err(Error::Validation("consumer_seeds must be >= 1 when tasks are evaluated".into()));
        }
        Ok(())
    }
}

/// Snapshots, graph views and held-out edges shared by every method.
pub struct BenchmarkData<'g> {
    pub graph: &'g InteractionGraph,
    pub schedule: VersionSchedule,
    pub snapshots: Vec<Snapshot>,
    pub views: Vec<GraphView>,
    /// `E_{k+1} \ E_k` restricted to nodes of snapshot `k`.
    pub eval_edges: Vec<Vec<(u32, u32)>>,
    /// `(user, item)` pairs of `E_k`, masked from the ranking.
    pub seen: Vec<HashSet<(u32, u32)>>,
}

impl<'g> BenchmarkData<'g> {
    pub fn new(graph: &'g InteractionGraph, schedule: &VersionSchedule) -> Result<Self> {
        let mut snapshots = Vec::new();
        let mut views = Vec::new();
        let mut eval_edges = Vec::new();
        let mut seen = Vec::new();
        for k in 0..=schedule.last_version() {
            let snap = snapshot_at(graph, schedule, k)?;
            let edges = &graph.interactions()[delta_edges(graph, schedule, k)?];
            eval_edges.push(
                edges
                    .iter()
                    .filter(|e| snap.contains_user(e.user) && snap.contains_item(e.item))
                    .map(|e| (e.user, e.item))
                    .collect(),
            );
            seen.push(graph.interactions()[snap.edge_indices()].iter().map(|e| (e.user, e.item)).collect());
            views.push(GraphView::new(graph, &snap));
            snapshots.push(snap);
        }
        Ok(BenchmarkData {
            graph,
            schedule: schedule.clone(),
            snapshots,
            views,
            eval_edges,
            seen,
        })
    }

    pub fn last_version(&self) -> usize {
        self.schedule.last_version()
    }

    pub fn snapshot_nodes(&self, k: usize) -> Vec<NodeId> {
        let s = &self.snapshots[k];
        s.users
            .iter()
            .map(|&u| NodeId::User(u))
            .chain(s.items.iter().map(|&i| NodeId::Item(i)))
            .collect()
    }
}

/// Metrics of one method at one version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionMetrics {
    pub version: usize,
    /// Dimension of the served model's embeddings.
    pub dim: usize,
    pub recall: f64,
    /// ROC-AUC per consumer seed, for every task tested at this version.
    pub unintended: BTreeMap<TaskId, Vec<f64>>,
    /// Mean L2 distance of the served ver-0 embeddings from `M_0`'s; `None` at `k = 0`.
    pub alignment_error: Option<f64>,
}

impl VersionMetrics {
    pub fn unintended_mean(&self, task: TaskId) -> Option<f64> {
        self.unintended
            .get(&task)
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub versions: Vec<VersionMetrics>,
    /// Every trained `M_k` (analysis needs them all even for Keep-Latest).
    pub encoders: Vec<EncoderParams>,
    /// Each `M_k` on snapshot `k`.
    pub tables: Vec<EmbeddingTable>,
    pub registry: Option<TransformRegistry>,
    pub log: Vec<EpochLog>,
    pub growth: Option<GrowthTrace>,
}

/// The Keep-All run plus everything derived from `M_0` that other methods
/// are scored against.
#[derive(Debug, Clone)]
pub struct Reference {
    /// The config the reference was built with.
    pub config: BenchmarkConfig,
    pub run: MethodRun,
    /// `M_0` on snapshot `k`: the exact ver-0 embeddings at every version.
    pub z0_tables: Vec<EmbeddingTable>,
    pub consumers: BTreeMap<TaskId, Vec<ConsumerModel>>,
    pub test_labels: BTreeMap<(TaskId, usize), LabeledExamples>,
    /// Tasks that could not be set up, with the reason.
    pub skipped_tasks: Vec<(TaskId, String)>,
}

type TrainedVersions = (Vec<EncoderParams>, Vec<EmbeddingTable>, Option<TransformRegistry>, Vec<EpochLog>);

/// `keep_all`: the reference encoders, reused for `M_0` and by post-hoc methods.
fn train_all_versions(
    data: &BenchmarkData<'_>,
    method: Method,
    config: &BenchmarkConfig,
    keep_all: Option<(&[EncoderParams], &[EmbeddingTable])>,
) -> Result<TrainedVersions> {
    let spec = method.spec();
    let keep_latest = spec.maintenance == Maintenance::KeepLatest;
    let mut registry = keep_latest.then(TransformRegistry::new);
    let empty = TransformRegistry::new();
    let mut encoders: Vec<EncoderParams> = Vec::new();
    let mut tables = Vec::new();
    let mut log = Vec::new();
    for k in 0..=data.last_version() {
        if k == 0 {
            if let Some((enc, table)) = keep_all {
                // M_0 only depends on the intended loss and the seed.
                encoders.push(enc[0].clone());
                tables.push(table[0].clone());
                continue;
            }
        }
        let artifacts = train_version_on(&VersionInputs {
            k,
            graph: data.graph,
            snapshot: &data.snapshots[k],
            view: &data.views[k],
            prev_snapshot: k.checked_sub(1).map(|p| &data.snapshots[p]),
            prev_encoder: encoders.last(),
            intended_encoder: keep_all.map(|(enc, _)| &enc[k]),
            registry: registry.as_ref().unwrap_or(&empty),
            method: spec,
            architecture: &config.architecture,
            config: &config.train,
        })?;
        if let (Some(reg), Some(b)) = (registry.as_mut(), artifacts.transform.clone()) {
            reg.register(b)?;
        }
        log.extend(artifacts.log);
        encoders.push(artifacts.encoder);
        tables.push(artifacts.table);
    }
    Ok((encoders, tables, registry, log))
}

/// Trains Keep-All, the ver-0 tables and the shared consumers.
pub fn prepare_reference(data: &BenchmarkData<'_>, config: &BenchmarkConfig) -> Result<Reference> {
    config.validate()?;
    let (encoders, tables, _, log) = train_all_versions(data, Method::KeepAll, config, None)?;
    let m0 = &encoders[0];
    let z0_tables = data
        .views
        .iter()
        .map(|v| encode_all(m0, v))
        .collect::<Result<Vec<_>>>()?;

    let mut consumers = BTreeMap::new();
    let mut test_labels = BTreeMap::new();
    let mut skipped_tasks = Vec::new();
    for &task in &config.tasks {
        match prepare_task(data, config, task, &z0_tables) {
            Ok((models, labels)) => {
                consumers.insert(task, models);
                test_labels.extend(labels);
            }
            Err(e) if e.is_input_error() || matches!(e, Error::DegenerateMetric(_)) => {
                skipped_tasks.push((task, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }

    let mut reference = Reference {
        config: config.clone(),
        run: MethodRun {
            method: Method::KeepAll,
            versions: Vec::new(),
            encoders,
            tables,
            registry: None,
            log,
            growth: None,
        },
        z0_tables,
        consumers,
        test_labels,
        skipped_tasks,
    };
    reference.run.versions = score_versions(data, config, &reference, &reference.run)?;
    Ok(reference)
}

type TaskSetup = (Vec<ConsumerModel>, Vec<((TaskId, usize), LabeledExamples)>);

fn prepare_task(data: &BenchmarkData<'_>, config: &BenchmarkConfig, task: TaskId, z0: &[EmbeddingTable]) -> Result<TaskSetup> {
    let train = build_labels(task, data.graph, &data.schedule, Split::Train)?;
    let valid = build_labels(task, data.graph, &data.schedule, Split::Validation)?;
    if valid.positives() == 0 || valid.positives() == valid.len() {
        return Err(Error::DegenerateMetric(format!("{task} validation labels are single-class")));
    }
    let mut models = Vec::with_capacity(config.consumer_seeds);
    for s in 0..config.consumer_seeds {
        let seed = derive_seed(config.train.seed, s, 0xC0);
        models.push(train_consumer(&z0[train.version], &train, &z0[valid.version], &valid, &config.consumer, seed)?);
    }
    let mut labels = Vec::new();
    for k in first_test_version(task)..=data.last_version() {
        // Single-class or empty test sets leave this (task, version) unscored.
        if let Ok(l) = build_labels(task, data.graph, &data.schedule, Split::Test(k)) {
            if l.positives() > 0 && l.positives() < l.len() {
                labels.push(((task, k), l));
            }
        }
    }
    Ok((models, labels))
}

/// The table `M_k` of `run` would serve as ver-0 embeddings at version `k`.
fn served_ver0(reference: &Reference, run: &MethodRun, k: usize) -> Result<EmbeddingTable> {
    let spec = run.method.spec();
    match spec.maintenance {
        Maintenance::KeepAll => Ok(reference.z0_tables[k].clone()),
        Maintenance::KeepM0 => match run.method {
            Method::FixM0 => Ok(reference.z0_tables[k].clone()),
            _ => Ok(run.tables[k].clone()),
        },
        Maintenance::KeepLatest => {
            if k == 0 {
                Ok(run.tables[0].clone())
            } else {
                let registry = run
                    .registry
                    .as_ref()
                    .ok_or_else(|| Error::State(format!("{} has no transform registry", run.method)))?;
                to_version(registry, &run.tables[k], 0)
            }
        }
    }
}

fn score_versions(data: &BenchmarkData<'_>, config: &BenchmarkConfig, reference: &Reference, run: &MethodRun) -> Result<Vec<VersionMetrics>> {
    let mut out = Vec::with_capacity(data.last_version() + 1);
    for k in 0..=data.last_version() {
        let intended = if run.method == Method::FixM0 {
            &reference.z0_tables[k]
        } else {
            &run.tables[k]
        };
        let recall = recall_at_k(
            intended,
            &data.eval_edges[k],
            config.recall_cutoff,
            &data.snapshots[k].items,
            &data.seen[k],
        )?;
        let ver0 = served_ver0(reference, run, k)?;
        let alignment = if k == 0 {
            None
        } else {
            Some(alignment_error(&ver0, &reference.z0_tables[k], &data.snapshot_nodes(k))?)
        };
        let mut unintended = BTreeMap::new();
        for (task, models) in &reference.consumers {
            if let Some(labels) = reference.test_labels.get(&(*task, k)) {
                let aucs = models
                    .iter()
                    .map(|m| evaluate_consumer(m, &ver0, labels))
                    .collect::<Result<Vec<_>>>()?;
                unintended.insert(*task, aucs);
            }
        }
        out.push(VersionMetrics {
            version: k,
            dim: intended.dim(),
            recall,
            unintended,
            alignment_error: alignment,
        });
    }
    Ok(out)
}

/// Trains and scores one method against a prepared reference. `config`
/// may differ from the reference's only in `train.lambda`.
pub fn run_method(data: &BenchmarkData<'_>, config: &BenchmarkConfig, reference: &Reference, method: Method) -> Result<MethodRun> {
    config.validate()?;
    let mut same_but_lambda = config.clone();
    same_but_lambda.train.lambda = reference.config.train.lambda;
    if same_but_lambda != reference.config {
        return Err(Error::State(format!(
            "{method} config differs from the reference's in more than lambda"
        )));
    }
    if method == Method::KeepAll {
        return Ok(reference.run.clone());
    }
    let keep_all = (&reference.run.encoders[..], &reference.run.tables[..]);
    let (encoders, tables, registry, log) = train_all_versions(data, method, config, Some(keep_all))?;
    let mut run = MethodRun {
        method,
        versions: Vec::new(),
        encoders,
        tables,
        registry,
        log,
        growth: None,
    };
    run.versions = score_versions(data, config, reference, &run)?;
    if config.growth_trace {
        if let Some(registry) = &run.registry {
            let last = data.last_version();
            let same_inputs = run
                .encoders
                .iter()
                .map(|e| encode_all(e, &data.views[last]))
                .collect::<Result<Vec<_>>>()?;
            run.growth = Some(error_growth_trace(registry, &same_inputs, &data.snapshot_nodes(last))?);
        }
    }
    Ok(run)
}

/// Runs `methods` (Keep-All is always included first) on `workers` threads.
pub fn run_benchmark(
    graph: &InteractionGraph,
    schedule: &VersionSchedule,
    methods: &[Method],
    config: &BenchmarkConfig,
    workers: usize,
) -> Result<(Reference, Vec<MethodRun>)> {
    let data = BenchmarkData::new(graph, schedule)?;
    let reference = prepare_reference(&data, config)?;
    let runs = run_methods(&data, config, &reference, methods, workers)
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<Vec<_>>>()?;
    Ok((reference, runs))
}

/// Method runs are independent, so they parallelise without changing
/// results. Each method's outcome is returned separately so one failure
/// does not discard the others.
pub fn run_methods(
    data: &BenchmarkData<'_>,
    config: &BenchmarkConfig,
    reference: &Reference,
    methods: &[Method],
    workers: usize,
) -> Vec<(Method, Result<MethodRun>)> {
    let mut todo: Vec<Method> = vec![Method::KeepAll];
    todo.extend(methods.iter().copied().filter(|&m| m != Method::KeepAll));
    let workers = workers.max(1).min(todo.len());
    if workers == 1 {
        return todo.into_iter().map(|m| (m, run_method(data, config, reference, m))).collect();
    }
    let mut results: Vec<Option<Result<MethodRun>>> = (0..todo.len()).map(|_| None).collect();
    let per_worker = todo.len().div_ceil(workers);
    std::thread::scope(|scope| {
        for (methods, slots) in todo.chunks(per_worker).zip(results.chunks_mut(per_worker)) {
            scope.spawn(move || {
                for (m, slot) in methods.iter().zip(slots.iter_mut()) {
                    *slot = Some(run_method(data, config, reference, *m));
                }
            });
        }
    });
    todo.into_iter()
        .zip(results)
        .map(|(m, r)| (m, r.expect("every slot is filled")))
        .collect()
}
