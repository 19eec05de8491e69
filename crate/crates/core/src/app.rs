//! Subcommands behind the command-line tool.
//!
//! Every command writes `config_echo.toml` (the resolved configuration) next
//! to its results; nothing is written outside the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, SEED_TAG_DATA};
use crate::datagen::{
    crop_band, derive_seed, normalize_spectrum, split_per_class, synth_population,
    task_from_spectra, SpectrumLine,
};
use crate::error::{Error, Result, ResultExt};
use crate::experiment::{
    grid_search, run_comparison, train, transfer_report, GridResult, ModelKind, ModelSpec,
    TrainedModel, TransferRow,
};
use crate::io::{
    emit_weight_plot_table, grid_table_rows, load_dataset, load_spectrum, save_dataset, trace_rows,
    weight_rows, write_json, write_table, write_text, ReportBundle,
};
use crate::model::TaskDataset;

pub const CONFIG_ECHO_FILE: &str = "config_echo.toml";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const WEIGHT_PLOT_FILE: &str = "weights_plot.csv";
pub const TRACE_FILE: &str = "traces.csv";
pub const GRID_TABLE_FILE: &str = "grid.csv";
pub const GRID_JSON_FILE: &str = "grid.json";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const TRANSFER_TABLE_FILE: &str = "transfer.csv";
pub const TRANSFER_JSON_FILE: &str = "transfer.json";
pub const DATASET_DIR: &str = "datasets";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Generate,
    Fit,
    Grid,
    Compare,
    Transfer,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Failure of a run, split by who has to fix it.
#[derive(Debug)]
pub enum RunError {
    /// Bad invocation or configuration (exit 1).
    Usage(Error),
    /// Failure while executing a valid configuration (exit 2).
    Runtime(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            RunError::Usage(e) | RunError::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error())
    }
}

/// Tasks ready for the experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<TaskDataset>,
    pub test: Vec<TaskDataset>,
    pub unseen: Option<UnseenTask>,
}

#[derive(Debug, Clone)]
pub struct UnseenTask {
    pub test: TaskDataset,
    pub reference: Option<TaskDataset>,
}

/// Loads the configuration, applies overrides and runs `command`.
pub fn run(
    config_path: &Path,
    command: Command,
    overrides: &Overrides,
) -> std::result::Result<PathBuf, RunError> {
    let mut cfg = ExperimentConfig::load(config_path)
        .map_err(|e| RunError::Usage(e.context(format!("loading {}", config_path.display()))))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.output_dir {
        cfg.output_dir = Some(out.clone());
    }
    let out = cfg.output_dir.clone().ok_or_else(|| {
        RunError::Usage(Error::Config(
            "no output_dir in config and no --out given".into(),
        ))
    })?;
    if command == Command::Transfer && !has_unseen(&cfg.data) {
        return Err(RunError::Usage(Error::Config(
            "transfer needs an unseen task in [data]".into(),
        )));
    }
    if overrides.threads == Some(0) {
        return Err(RunError::Usage(Error::invalid(
            "--threads must be positive",
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(overrides.threads.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Runtime(Error::invalid(format!("thread pool: {e}"))))?;
    pool.install(|| execute(&cfg, command, &out))
        .map_err(RunError::Runtime)?;
    Ok(out)
}

fn has_unseen(data: &DataSource) -> bool {
    match data {
        DataSource::Synthetic { unseen_task, .. } => *unseen_task,
        DataSource::Files { unseen, .. } => unseen.is_some(),
        DataSource::Spectra { unseen, .. } => unseen.is_some(),
    }
}

/// Runs one command with an already validated configuration.
pub fn execute(cfg: &ExperimentConfig, command: Command, out: &Path) -> Result<()> {
    let data = prepare_data(cfg).context("data")?;
    write_text(&out.join(CONFIG_ECHO_FILE), &cfg.echo()?)?;
    match command {
        Command::Generate => generate(&data, out),
        Command::Fit => fit_command(cfg, &data, out),
        Command::Grid => {
            let results = grids(cfg, &data)?;
            write_table(&out.join(GRID_TABLE_FILE), &grid_table_rows(&results))?;
            write_json(&out.join(GRID_JSON_FILE), &results)
        }
        Command::Compare => compare(cfg, &data, out),
        Command::Transfer => transfer(cfg, &data, out),
    }
}

fn generate(data: &PreparedData, out: &Path) -> Result<()> {
    let dir = out.join(DATASET_DIR);
    for (tr, te) in data.train.iter().zip(&data.test) {
        save_dataset(&dir.join(format!("{}_train.csv", tr.task_id())), tr)?;
        save_dataset(&dir.join(format!("{}_test.csv", te.task_id())), te)?;
    }
    if let Some(u) = &data.unseen {
        save_dataset(
            &dir.join(format!("{}_unseen_test.csv", u.test.task_id())),
            &u.test,
        )?;
        if let Some(r) = &u.reference {
            save_dataset(
                &dir.join(format!("{}_unseen_reference.csv", r.task_id())),
                r,
            )?;
        }
    }
    Ok(())
}

fn fit_command(cfg: &ExperimentConfig, data: &PreparedData, out: &Path) -> Result<()> {
    let kind = cfg.models.fit_mode;
    let model = train(&data.train, kind, &cfg.models.spec(kind), &cfg.solver).context("fit")?;
    let models = [model];
    write_table(
        &out.join(WEIGHTS_FILE),
        &weight_rows(&models, data.train[0].feature_freqs()),
    )?;
    write_table(&out.join(TRACE_FILE), &trace_rows(&models))
}

fn grids(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Vec<GridResult>> {
    let grid = cfg.grid();
    [ModelKind::Independent, ModelKind::Mtl]
        .iter()
        .map(|&mode| {
            grid_search(&data.train, &grid, mode).context(&format!("grid search ({mode})"))
        })
        .collect()
}

type ModelConfigs = Vec<(ModelKind, ModelSpec)>;

/// Configurations for compare/transfer: from the config, or the grid winners.
fn model_configs(
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(ModelConfigs, Vec<GridResult>)> {
    if cfg.models.from_grid {
        let results = grids(cfg, data)?;
        let configs = results.iter().map(|r| (r.mode, r.best.spec())).collect();
        Ok((configs, results))
    } else {
        let configs = [ModelKind::Independent, ModelKind::Mtl]
            .iter()
            .map(|&k| (k, cfg.models.spec(k)))
            .collect();
        Ok((configs, Vec::new()))
    }
}

fn compare(cfg: &ExperimentConfig, data: &PreparedData, out: &Path) -> Result<()> {
    let (configs, grid) = model_configs(cfg, data)?;
    let (report, models) =
        run_comparison(&data.train, &configs, &data.test, &cfg.solver).context("compare")?;
    let traces = cfg.emit_traces.then(|| trace_rows(&models));
    if let Some(t) = &traces {
        write_table(&out.join(TRACE_FILE), t)?;
    }
    write_table(&out.join(SUMMARY_FILE), &report.summary)?;
    emit_weight_plot_table(&out.join(WEIGHT_PLOT_FILE), &report)?;
    if !grid.is_empty() {
        write_table(&out.join(GRID_TABLE_FILE), &grid_table_rows(&grid))?;
    }
    let bundle = ReportBundle {
        config: cfg.clone(),
        summary: report.summary,
        grid,
        active_weights: report.active_weights,
        transfer: Vec::new(),
        traces,
    };
    write_json(&out.join(REPORT_FILE), &bundle)
}

fn transfer(cfg: &ExperimentConfig, data: &PreparedData, out: &Path) -> Result<()> {
    let unseen = data
        .unseen
        .as_ref()
        .ok_or_else(|| Error::Config("transfer needs an unseen task".into()))?;
    let (configs, _) = model_configs(cfg, data)?;
    let models = configs
        .iter()
        .map(|(k, s)| train(&data.train, *k, s, &cfg.solver))
        .collect::<Result<Vec<TrainedModel>>>()
        .context("transfer training")?;
    let rows: Vec<TransferRow> =
        transfer_report(&models, &unseen.test, unseen.reference.as_ref()).context("transfer")?;
    write_table(&out.join(TRANSFER_TABLE_FILE), &rows)?;
    write_json(&out.join(TRANSFER_JSON_FILE), &rows)
}

/// Builds training, test and unseen sets from the configured source.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let data_seed = derive_seed(cfg.seed, &[SEED_TAG_DATA]);
    match &cfg.data {
        DataSource::Synthetic {
            population,
            n_test_per_class,
            unseen_task,
        } => {
            let mut spec = population.clone();
            spec.seed = data_seed;
            let pop = synth_population(&spec)?;
            let (mut train, mut test) = pop.split(*n_test_per_class)?;
            let unseen = if *unseen_task {
                let (r, t) = (train.pop(), test.pop());
                Some(UnseenTask {
                    test: t.expect("validated task count"),
                    reference: r,
                })
            } else {
                None
            };
            Ok(PreparedData {
                train,
                test,
                unseen,
            })
        }
        DataSource::Files { tasks, unseen } => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for t in tasks {
                train.push(load_dataset(&t.train)?.with_task_id(t.id.clone()));
                test.push(load_dataset(&t.test)?.with_task_id(t.id.clone()));
            }
            let unseen = unseen
                .as_ref()
                .map(|u| -> Result<UnseenTask> {
                    Ok(UnseenTask {
                        test: load_dataset(&u.test)?.with_task_id(u.id.clone()),
                        reference: u
                            .reference
                            .as_ref()
                            .map(|r| load_dataset(r).map(|d| d.with_task_id(u.id.clone())))
                            .transpose()?,
                    })
                })
                .transpose()?;
            Ok(PreparedData {
                train,
                test,
                unseen,
            })
        }
        DataSource::Spectra {
            n_avg,
            n_intermediate,
            sampling,
            n_train_per_class,
            n_test_per_class,
            band_hz,
            tasks,
            unseen,
        } => {
            let read = |p: &Path| -> Result<Vec<SpectrumLine>> {
                let lines = load_spectrum(p, *n_avg)?;
                let lines = match band_hz {
                    Some((lo, hi)) => crop_band(&lines, *lo, *hi)?,
                    None => lines,
                };
                normalize_spectrum(&lines)
            };
            let expand =
                |l: usize, t: &crate::config::SpectraTask| -> Result<(TaskDataset, TaskDataset)> {
                    let task = task_from_spectra(
                        &t.id,
                        &read(&t.class0)?,
                        &read(&t.class1)?,
                        n_train_per_class + n_test_per_class,
                        *n_intermediate,
                        derive_seed(data_seed, &[l as u64]),
                        *sampling,
                    )?;
                    split_per_class(&task, *n_test_per_class)
                };
            let (train, test) = tasks
                .iter()
                .enumerate()
                .map(|(l, t)| expand(l, t))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            let unseen = unseen
                .as_ref()
                .map(|u| {
                    expand(tasks.len(), u).map(|(r, t)| UnseenTask {
                        test: t,
                        reference: Some(r),
                    })
                })
                .transpose()?;
            Ok(PreparedData {
                train,
                test,
                unseen,
            })
        }
    }
}
