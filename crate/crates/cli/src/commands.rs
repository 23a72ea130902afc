//! The five subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bcalign_core::compat::to_version;
use bcalign_core::evaluation::{prepare_reference, render_summary, run_methods, write_method_artifacts, write_run, BenchmarkData};
use bcalign_core::graph::{generate_synthetic, ingest, EdgeListFormat, GraphStats};
use bcalign_core::{EmbeddingTable, Error, InteractionGraph, Method, MethodRun, SummaryRow, SyntheticSpec, TransformRegistry};

use crate::config::{output_dir, ResolvedRun, RunConfig};
use crate::CliError;

/// Marker file written into a run directory that stopped on an error.
pub const FAILURE_MARKER: &str = "FAILED";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

/// Table-1-shaped description of a graph.
pub fn render_stats(stats: &GraphStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "users         {}", stats.num_users);
    let _ = writeln!(out, "items         {}", stats.num_items);
    let _ = writeln!(out, "interactions  {}", stats.num_interactions);
    let dims: Vec<String> = stats.feature_groups.iter().map(|g| format!("{}={}", g.name, g.size)).collect();
    let total: usize = stats.feature_groups.iter().map(|g| g.size).sum();
    let _ = writeln!(out, "feature dim   {total} ({})", dims.join(" + "));
    out
}

fn write_graph(graph: &InteractionGraph, out: &Path) -> Result<String, CliError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    graph.save(out).map_err(CliError::runtime)?;
    let stats = render_stats(&graph.stats());
    let stats_path = out.with_extension("stats.txt");
    fs::write(&stats_path, &stats).map_err(|e| io_err(&stats_path, e))?;
    Ok(stats)
}

pub struct IngestArgs<'a> {
    pub edges: &'a Path,
    pub features: Option<&'a Path>,
    pub out: &'a Path,
    pub delimiter: char,
    pub header: bool,
}

pub fn cmd_ingest(args: &IngestArgs<'_>) -> Result<String, CliError> {
    for p in std::iter::once(args.edges).chain(args.features) {
        if !p.is_file() {
            return Err(CliError::config(format!("file not found: {}", p.display())));
        }
    }
    if !args.delimiter.is_ascii() {
        return Err(CliError::config(format!("delimiter {:?} is not a single byte", args.delimiter)));
    }
    let format = EdgeListFormat {
        delimiter: args.delimiter as u8,
        has_header: args.header,
        ..Default::default()
    };
    let graph = ingest(args.edges, args.features, &format).map_err(CliError::input)?;
    write_graph(&graph, args.out)
}

pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<String, CliError> {
    let graph = generate_synthetic(spec).map_err(CliError::input)?;
    write_graph(&graph, out)
}

/// Scalar overrides given on the command line.
#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub lambda_sweep: Option<Vec<f64>>,
    pub methods: Option<Vec<String>>,
    pub workers: usize,
}

/// What `cmd_run` produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// One summary per λ value (a single entry without a sweep).
    pub reports: Vec<(Option<f64>, Vec<SummaryRow>)>,
}

pub fn cmd_run(config_path: &Path, overrides: &RunOverrides) -> Result<RunOutcome, CliError> {
    let mut config = RunConfig::load(config_path)?;
    if overrides.seed.is_some() {
        config.seed = overrides.seed;
    }
    if let Some(e) = overrides.epochs {
        config.benchmark.train.epochs = e;
    }
    if let Some(l) = overrides.lambda {
        config.benchmark.train.lambda = l;
    }
    if let Some(s) = &overrides.lambda_sweep {
        config.lambda_sweep = s.clone();
    }
    if let Some(m) = &overrides.methods {
        config.methods = m.clone();
    }
    let dir = output_dir(overrides.output.as_deref(), &config, config_path);
    let run = config.validate()?;
    let graph = run.config.dataset.load()?;

    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let marker = dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?;
    }
    let resolved = toml::to_string(&run.config).map_err(|e| CliError::runtime(format!("serialising config: {e}")))?;
    fs::write(dir.join("config.toml"), resolved).map_err(|e| io_err(&dir, e))?;
    fs::write(dir.join("graph_stats.txt"), render_stats(&graph.stats())).map_err(|e| io_err(&dir, e))?;

    let result = execute(&run, &graph, &dir, overrides.workers);
    if let Err(e) = &result {
        // Best effort: the original error matters more than a failed marker write.
        let _ = fs::write(&marker, format!("{}\n", e.message));
    }
    Ok(RunOutcome { dir, reports: result? })
}

fn execute(
    run: &ResolvedRun,
    graph: &InteractionGraph,
    dir: &Path,
    workers: usize,
) -> Result<Vec<(Option<f64>, Vec<SummaryRow>)>, CliError> {
    let data = BenchmarkData::new(graph, &run.schedule).map_err(CliError::input)?;
    let base = &run.config.benchmark;
    let reference = prepare_reference(&data, base).map_err(CliError::runtime)?;
    write_method_artifacts(&dir.join(Method::KeepAll.key()), &reference.run).map_err(CliError::runtime)?;

    let sweep: Vec<Option<f64>> = if run.config.lambda_sweep.is_empty() {
        vec![None]
    } else {
        run.config.lambda_sweep.iter().copied().map(Some).collect()
    };
    let mut reports = Vec::new();
    for lambda in sweep {
        let mut config = base.clone();
        let target = match lambda {
            Some(l) => {
                config.train.lambda = l;
                dir.join(format!("lambda_{l}"))
            }
            None => dir.to_path_buf(),
        };
        let outcomes = run_methods(&data, &config, &reference, &run.methods, workers);
        let mut done: Vec<MethodRun> = Vec::new();
        let mut failures = Vec::new();
        for (method, outcome) in outcomes {
            match outcome {
                Ok(r) => done.push(r),
                Err(e) => failures.push(format!("{}: {e}", method.key())),
            }
        }
        let rows = write_run(&target, &reference, &done).map_err(CliError::runtime)?;
        if !failures.is_empty() {
            return Err(CliError::runtime(failures.join("\n")));
        }
        reports.push((lambda, rows));
    }
    if reports.len() > 1 {
        fs::write(dir.join("lambda_sweep.csv"), sweep_csv(&reports)?).map_err(|e| io_err(dir, e))?;
    }
    Ok(reports)
}

fn sweep_csv(reports: &[(Option<f64>, Vec<SummaryRow>)]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::runtime(format!("writing sweep table: {e}"));
    w.write_record(["lambda", "method", "intended_degradation", "unintended_degradation", "alignment_error"])
        .map_err(fail)?;
    for (lambda, rows) in reports {
        for r in rows {
            w.write_record([
                lambda.map_or_else(String::new, |l| l.to_string()),
                r.method.key().to_string(),
                r.intended_degradation.to_string(),
                r.unintended_degradation.map_or_else(String::new, |u| u.to_string()),
                r.alignment_error.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::runtime(format!("writing sweep table: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the version-`target` compatible table for `table_path` and returns its path.
pub fn cmd_convert(table_path: &Path, registry_path: &Path, target: usize, out: &Path) -> Result<EmbeddingTable, CliError> {
    let table = EmbeddingTable::load(table_path).map_err(CliError::input)?;
    let registry = TransformRegistry::load(registry_path).map_err(CliError::input)?;
    let converted = to_version(&registry, &table, target).map_err(CliError::input)?;
    converted.save(out).map_err(CliError::runtime)?;
    Ok(converted)
}

/// Renders the summary of a run directory, including every λ sub-run.
pub fn cmd_report(dir: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    let mut found = false;
    let marker = dir.join(FAILURE_MARKER);
    if let Ok(why) = fs::read_to_string(&marker) {
        let _ = writeln!(out, "run FAILED:\n{why}");
    }
    let summary = dir.join("summary.csv");
    if summary.is_file() {
        out.push_str(&render_summary(&read_summary(&summary)?));
        found = true;
    }
    let mut subdirs: Vec<(f64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let l = name.strip_prefix("lambda_")?.parse::<f64>().ok()?;
            Some((l, e.path()))
        })
        .collect();
    subdirs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (l, sub) in subdirs {
        let path = sub.join("summary.csv");
        if path.is_file() {
            let _ = writeln!(out, "\nlambda = {l}");
            out.push_str(&render_summary(&read_summary(&path)?));
            found = true;
        }
    }
    if !found {
        return Err(CliError::config(format!("no summary.csv under {}", dir.display())));
    }
    Ok(out)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let fail = |e: csv::Error| CliError::config(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(fail)?;
    r.deserialize().collect::<Result<Vec<SummaryRow>, _>>().map_err(fail)
}

/// Exit-code class of a library error raised while running.
pub fn classify(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        3
    }
}
