//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7                    # mandatory; drives every random stream
//! output_dir = "out"          # relative to the config file; --out overrides
//! emit_traces = false         # include solver traces in compare reports
//!
//! [solver]                    # settings shared by every fit
//! max_iters = 2000
//! lambda_floor = 0.0
//! forward = "total"           # or "empirical"
//!
//! [models]                    # configurations used by fit/compare/transfer
//! fit_mode = "mtl"            # model fitted by the `fit` subcommand
//! from_grid = false           # compare/transfer: use grid-search winners
//! independent = { epsilon = 0.2, xi = 0.01, n_windows = 2 }
//! mtl = { epsilon = 0.2, xi = 0.01, n_windows = 2 }
//!
//! [search]                    # defaults give the standard grid
//! epsilons = [1.0, 0.3, 0.1, 0.03]
//! xis = [0.1, 0.01, 0.001]
//! window_counts = [1, 2, ..., 16]
//! folds = 5
//! strategy = "staged"         # or "exhaustive"
//! initial_windows = 6
//! refine_epsilons = [0.3, 0.2, 0.1]
//!
//! [data]
//! source = "synthetic"        # or "files" / "spectra", see DataSource
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{
    SamplingMode, SyntheticPopulationSpec, DEFAULT_N_AVG, DEFAULT_N_INTERMEDIATE,
    DEFAULT_TEST_PER_CLASS, DEFAULT_TRAIN_PER_CLASS,
};
use crate::error::{Error, Result};
use crate::experiment::{
    GridSpec, ModelKind, ModelSpec, SearchStrategy, SolverDefaults, DEFAULT_EPSILONS,
    DEFAULT_FOLDS, DEFAULT_INITIAL_WINDOWS, DEFAULT_REFINE_EPSILONS, DEFAULT_XIS,
};

/// Tags mixed into the experiment seed for each consumer.
pub const SEED_TAG_DATA: u64 = 1;
pub const SEED_TAG_SEARCH: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Not echoed: where results go does not change them.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_traces: bool,
    #[serde(default)]
    pub solver: SolverDefaults,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub search: SearchConfig,
    pub data: DataSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default = "default_fit_mode")]
    pub fit_mode: ModelKind,
    #[serde(default)]
    pub from_grid: bool,
    #[serde(default = "default_model")]
    pub independent: ModelSpec,
    #[serde(default = "default_model")]
    pub mtl: ModelSpec,
}

fn default_fit_mode() -> ModelKind {
    ModelKind::Mtl
}

fn default_model() -> ModelSpec {
    ModelSpec {
        epsilon: 0.2,
        xi: 0.01,
        n_windows: 2,
    }
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            fit_mode: default_fit_mode(),
            from_grid: false,
            independent: default_model(),
            mtl: default_model(),
        }
    }
}

impl ModelsConfig {
    pub fn spec(&self, kind: ModelKind) -> ModelSpec {
        match kind {
            ModelKind::Independent => self.independent,
            ModelKind::Mtl => self.mtl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub epsilons: Vec<f64>,
    pub xis: Vec<f64>,
    pub window_counts: Vec<usize>,
    pub folds: usize,
    pub strategy: SearchStrategy,
    pub initial_windows: usize,
    pub refine_epsilons: Vec<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            xis: DEFAULT_XIS.to_vec(),
            window_counts: (1..=16).collect(),
            folds: DEFAULT_FOLDS,
            strategy: SearchStrategy::Staged,
            initial_windows: DEFAULT_INITIAL_WINDOWS,
            refine_epsilons: DEFAULT_REFINE_EPSILONS.to_vec(),
        }
    }
}

impl SearchConfig {
    pub fn grid(&self, seed: u64, solver: SolverDefaults) -> GridSpec {
        GridSpec {
            epsilons: self.epsilons.clone(),
            xis: self.xis.clone(),
            window_counts: self.window_counts.clone(),
            folds: self.folds,
            seed,
            strategy: self.strategy,
            initial_windows: self.initial_windows,
            refine_epsilons: self.refine_epsilons.clone(),
            solver,
        }
    }
}

/// Where the tasks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated modal population; `population.seed` is replaced by a value
    /// derived from the experiment seed. With `unseen_task` the last generated
    /// task is held out for transfer.
    Synthetic {
        population: SyntheticPopulationSpec,
        n_test_per_class: usize,
        #[serde(default)]
        unseen_task: bool,
    },
    /// Dataset files, already split.
    Files {
        tasks: Vec<FileTask>,
        #[serde(default)]
        unseen: Option<FileUnseen>,
    },
    /// Measured mean spectra per class, expanded by Monte-Carlo sampling.
    Spectra {
        #[serde(default = "default_n_avg")]
        n_avg: u32,
        #[serde(default = "default_n_intermediate")]
        n_intermediate: usize,
        #[serde(default)]
        sampling: SamplingMode,
        #[serde(default = "default_train_per_class")]
        n_train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        n_test_per_class: usize,
        /// Analysed band; the whole file when absent.
        #[serde(default)]
        band_hz: Option<(f64, f64)>,
        tasks: Vec<SpectraTask>,
        #[serde(default)]
        unseen: Option<SpectraTask>,
    },
}

fn default_n_avg() -> u32 {
    DEFAULT_N_AVG
}

fn default_n_intermediate() -> usize {
    DEFAULT_N_INTERMEDIATE
}

fn default_train_per_class() -> usize {
    DEFAULT_TRAIN_PER_CLASS
}

fn default_test_per_class() -> usize {
    DEFAULT_TEST_PER_CLASS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTask {
    pub id: String,
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileUnseen {
    pub id: String,
    pub test: PathBuf,
    /// Unlabelled samples of the unseen task used for its scaling statistics;
    /// the test samples themselves when absent.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraTask {
    pub id: String,
    /// Spectrum of the undamaged (label 0) state.
    pub class0: PathBuf,
    /// Spectrum of the damaged (label 1) state.
    pub class1: PathBuf,
}

impl ExperimentConfig {
    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates without touching the file system paths.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate_values()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = &mut self.output_dir {
            fix(out);
        }
        match &mut self.data {
            DataSource::Synthetic { .. } => {}
            DataSource::Files { tasks, unseen } => {
                for t in tasks {
                    fix(&mut t.train);
                    fix(&mut t.test);
                }
                if let Some(u) = unseen {
                    fix(&mut u.test);
                    if let Some(r) = &mut u.reference {
                        fix(r);
                    }
                }
            }
            DataSource::Spectra { tasks, unseen, .. } => {
                for t in tasks.iter_mut().chain(unseen.as_mut()) {
                    fix(&mut t.class0);
                    fix(&mut t.class1);
                }
            }
        }
    }

    fn validate_values(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        for (kind, spec) in [
            (ModelKind::Independent, self.models.independent),
            (ModelKind::Mtl, self.models.mtl),
        ] {
            spec.validate()
                .map_err(|e| Error::Config(format!("models.{kind}: {e}")))?;
        }
        self.search
            .grid(self.seed, self.solver)
            .validate()
            .map_err(|e| Error::Config(format!("search: {e}")))?;
        match &self.data {
            DataSource::Synthetic {
                population,
                n_test_per_class,
                unseen_task,
            } => {
                population.validate().map_err(cfg_err)?;
                let needed = if *unseen_task { 2 } else { 1 };
                if population.n_tasks < needed {
                    return Err(Error::Config(format!(
                        "synthetic population needs at least {needed} tasks"
                    )));
                }
                if *n_test_per_class == 0 || *n_test_per_class >= population.n_samples {
                    return Err(Error::Config(format!(
                        "n_test_per_class must be in 1..{}",
                        population.n_samples
                    )));
                }
            }
            DataSource::Files { tasks, unseen } => {
                check_ids(
                    tasks
                        .iter()
                        .map(|t| t.id.as_str())
                        .chain(unseen.iter().map(|u| u.id.as_str())),
                )?;
            }
            DataSource::Spectra {
                tasks,
                unseen,
                n_train_per_class,
                n_test_per_class,
                n_intermediate,
                band_hz,
                ..
            } => {
                check_ids(tasks.iter().chain(unseen).map(|t| t.id.as_str()))?;
                if *n_train_per_class == 0 || *n_test_per_class == 0 || *n_intermediate < 2 {
                    return Err(Error::Config(
                        "spectra: sample counts must be positive and n_intermediate at least 2"
                            .into(),
                    ));
                }
                if let Some((lo, hi)) = band_hz {
                    if !(lo < hi) {
                        return Err(Error::Config(format!("spectra: empty band {lo}..{hi}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full validation including existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        for p in self.input_files() {
            if !p.is_file() {
                return Err(Error::Config(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn input_files(&self) -> Vec<&Path> {
        match &self.data {
            DataSource::Synthetic { .. } => Vec::new(),
            DataSource::Files { tasks, unseen } => {
                tasks
                    .iter()
                    .flat_map(|t| [t.train.as_path(), t.test.as_path()])
                    .chain(unseen.iter().flat_map(|u| {
                        std::iter::once(u.test.as_path()).chain(u.reference.as_deref())
                    }))
                    .collect()
            }
            DataSource::Spectra { tasks, unseen, .. } => tasks
                .iter()
                .chain(unseen)
                .flat_map(|t| [t.class0.as_path(), t.class1.as_path()])
                .collect(),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.search.grid(
            crate::datagen::derive_seed(self.seed, &[SEED_TAG_SEARCH]),
            self.solver,
        )
    }

    /// The configuration as TOML, every default filled in.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("echo: {e}")))
    }
}

fn check_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    let mut any = false;
    for id in ids {
        any = true;
        if id.is_empty() || id.contains(['/', '\\', ',', '"', '\n']) {
            return Err(Error::Config(format!("task id '{id}' is not a plain name")));
        }
        if !seen.insert(id) {
            return Err(Error::Config(format!("duplicate task id '{id}'")));
        }
    }
    if !any {
        return Err(Error::Config("no tasks configured".into()));
    }
    Ok(())
}
