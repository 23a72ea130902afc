//! The run configuration file: one TOML document per benchmark run.

use std::path::{Path, PathBuf};

use bcalign_core::graph::{generate_synthetic, ingest, EdgeListFormat};
use bcalign_core::{BenchmarkConfig, InteractionGraph, Method, SyntheticSpec, VersionSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the directory that relative run outputs go under.
pub const RUN_ROOT_ENV: &str = "BCALIGN_RUN_ROOT";

/// Where the interaction graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A graph written by `bcalign ingest` or `bcalign synth`.
    Graph { path: PathBuf },
    /// Delimited edge list plus optional item-feature file.
    Files {
        edges: PathBuf,
        features: Option<PathBuf>,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default)]
        header: bool,
    },
    Synthetic(SyntheticSpec),
}

fn default_delimiter() -> char {
    ','
}

fn default_timestamps() -> Vec<f64> {
    VersionSchedule::standard().timestamps().to_vec()
}

fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.key().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Update timestamps `t_0 < ... < t_K` in normalised time.
    #[serde(default = "default_timestamps")]
    pub timestamps: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Run directory; relative paths resolve under `BCALIGN_RUN_ROOT` when set.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `benchmark.train.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    /// One full report per value; empty means a single run at `benchmark.train.lambda`.
    #[serde(default)]
    pub lambda_sweep: Vec<f64>,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

/// A config after validation, with every path resolved.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub schedule: VersionSchedule,
    pub methods: Vec<Method>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_relative_to(base);
        Ok(config)
    }

    /// Makes dataset paths relative to the config file's directory absolute.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSource::Graph { path } => fix(path),
            DatasetSource::Files { edges, features, .. } => {
                fix(edges);
                if let Some(f) = features {
                    fix(f);
                }
            }
            DatasetSource::Synthetic(_) => {}
        }
    }

    /// Checks every field and reports all problems at once, one per line.
    pub fn validate(mut self) -> Result<ResolvedRun, CliError> {
        let mut problems = Vec::new();
        if let Some(seed) = self.seed {
            self.benchmark.train.seed = seed;
        }
        let schedule = VersionSchedule::new(self.timestamps.clone())
            .map_err(|e| problems.push(format!("timestamps: {e}")))
            .ok();
        let mut methods = Vec::new();
        if self.methods.is_empty() {
            problems.push("methods: at least one method is required".into());
        }
        for (i, name) in self.methods.iter().enumerate() {
            match name.parse::<Method>() {
                Ok(m) if methods.contains(&m) => problems.push(format!("methods[{i}]: {name:?} listed twice")),
                Ok(m) => methods.push(m),
                Err(_) => problems.push(format!(
                    "methods[{i}]: unknown method {name:?} (expected one of {})",
                    Method::ALL.map(|m| m.key()).join(", ")
                )),
            }
        }
        for (i, l) in self.lambda_sweep.iter().enumerate() {
            if !(*l >= 0.0) || !l.is_finite() {
                problems.push(format!("lambda_sweep[{i}]: {l} must be a finite value >= 0"));
            }
        }
        if let Err(e) = self.benchmark.validate() {
            problems.push(format!("benchmark: {e}"));
        }
        let missing = |field: &str, p: &Path, problems: &mut Vec<String>| {
            if !p.is_file() {
                problems.push(format!("{field}: file not found: {}", p.display()));
            }
        };
        match &self.dataset {
            DatasetSource::Graph { path } => missing("dataset.path", path, &mut problems),
            DatasetSource::Files { edges, features, delimiter, .. } => {
                missing("dataset.edges", edges, &mut problems);
                if let Some(f) = features {
                    missing("dataset.features", f, &mut problems);
                }
                if !delimiter.is_ascii() {
                    problems.push(format!("dataset.delimiter: {delimiter:?} is not a single-byte character"));
                }
            }
            DatasetSource::Synthetic(spec) => {
                if spec.num_users == 0 || spec.num_items == 0 || spec.num_interactions == 0 {
                    problems.push("dataset: synthetic counts must be positive".into());
                }
                if spec.latent_dim == 0 || spec.latent_dim > spec.feature_dim {
                    problems.push("dataset: synthetic latent_dim must be in 1..=feature_dim".into());
                }
            }
        }
        match schedule {
            Some(schedule) if problems.is_empty() => Ok(ResolvedRun {
                config: self,
                schedule,
                methods,
            }),
            _ => Err(CliError::config(problems.join("\n"))),
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<InteractionGraph, CliError> {
        let graph = match self {
            DatasetSource::Graph { path } => InteractionGraph::load(path),
            DatasetSource::Files {
                edges,
                features,
                delimiter,
                header,
            } => ingest(
                edges,
                features.as_deref(),
                &EdgeListFormat {
                    delimiter: *delimiter as u8,
                    has_header: *header,
                    ..Default::default()
                },
            ),
            DatasetSource::Synthetic(spec) => generate_synthetic(spec),
        };
        graph.map_err(CliError::input)
    }
}

/// The run directory: explicit flag, else the config's `output_dir`, else
/// `runs/<config stem>`; relative results go under `BCALIGN_RUN_ROOT` if set.
pub fn output_dir(flag: Option<&Path>, config: &RunConfig, config_path: &Path) -> PathBuf {
    let chosen = flag.map(Path::to_path_buf).or_else(|| config.output_dir.clone()).unwrap_or_else(|| {
        let stem = config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        Path::new("runs").join(stem)
    });
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if chosen.is_relative() => PathBuf::from(root).join(chosen),
        _ => chosen,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    const SYNTH: &str = r#"
        [dataset]
        kind = "synthetic"
        seed = 1
        num_users = 50
        num_items = 20
        num_interactions = 500
        feature_dim = 8
        latent_dim = 4
    "#;

    #[test]
    fn defaults_fill_everything_but_the_dataset() {
        let c = parse(SYNTH);
        assert_eq!(c.methods.len(), 9);
        assert_eq!(c.timestamps, VersionSchedule::standard().timestamps());
        let r = c.validate().unwrap();
        assert_eq!(r.methods[0], Method::KeepAll);
        assert_eq!(r.schedule.last_version(), 4);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<RunConfig>(&format!("{SYNTH}\nbogus = 1\n")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn validation_names_every_bad_field() {
        let mut c = parse(SYNTH);
        c.methods = vec!["bc_aligner".into(), "nope".into()];
        c.timestamps = vec![0.5, 0.4];
        c.lambda_sweep = vec![-1.0];
        let msg = c.validate().unwrap_err().message;
        assert!(msg.contains("methods[1]"), "{msg}");
        assert!(msg.contains("timestamps"), "{msg}");
        assert!(msg.contains("lambda_sweep[0]"), "{msg}");
    }

    #[test]
    fn missing_dataset_file_is_named() {
        let c = parse("[dataset]\nkind = \"files\"\nedges = \"/nonexistent/e.csv\"\n");
        let msg = c.validate().unwrap_err().message;
        assert!(msg.contains("dataset.edges") && msg.contains("/nonexistent/e.csv"), "{msg}");
    }

    #[test]
    fn seed_override_reaches_the_trainer() {
        let mut c = parse(SYNTH);
        c.seed = Some(42);
        assert_eq!(c.validate().unwrap().config.benchmark.train.seed, 42);
    }
}
