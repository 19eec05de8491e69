//! Dataset, spectrum and report files.
//!
//! Datasets are comma-separated with a header `label,<freq>,<freq>,...`; one
//! sample per row. Numbers are written in Rust's shortest round-trip form, so
//! save followed by load reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::SpectrumLine;
use crate::error::{Error, Result};
use crate::experiment::{
    ActiveWeight, EvaluationReport, GridResult, GridRow, ModelKind, SearchStage, SummaryRow,
    TrainedModel, TransferRow,
};
use crate::model::TaskDataset;
use crate::solver::StepKind;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, format!("unreadable record ({e})"))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a dataset file; the task id is the file stem.
pub fn load_dataset(path: &Path) -> Result<TaskDataset> {
    let task_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&read_text(path)?, path, &task_id)
}

/// Parses dataset text; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path, task_id: &str) -> Result<TaskDataset> {
    let mut records = csv_reader(text).into_records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_err(path, 1, "malformed header: file is empty")),
    };
    if header.get(0).map(str::trim) != Some("label") {
        return Err(parse_err(
            path,
            1,
            "malformed header: first column must be 'label'",
        ));
    }
    if header.len() < 2 {
        return Err(parse_err(path, 1, "malformed header: no feature columns"));
    }
    let freqs = header
        .iter()
        .skip(1)
        .enumerate()
        .map(|(c, name)| {
            name.trim().parse::<f64>().map_err(|_| {
                parse_err(
                    path,
                    1,
                    format!(
                        "malformed header: column {} name '{name}' is not a frequency",
                        c + 2
                    ),
                )
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = freqs.len();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != m + 1 {
            return Err(parse_err(
                path,
                line,
                format!(
                    "inconsistent row width: {} cells, header has {}",
                    rec.len(),
                    m + 1
                ),
            ));
        }
        labels.push(match rec[0].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(parse_err(path, line, "non-binary label")),
        });
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(path, line, format!("non-numeric cell in column {}", c + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line,
                    format!("non-finite cell in column {}", c + 1),
                ));
            }
            values.push(v);
        }
    }
    let n = labels.len();
    let x = Array2::from_shape_vec((n, m), values).map_err(|e| Error::dim(e.to_string()))?;
    TaskDataset::new(task_id, x, labels, freqs).map_err(|e| e.context(path.display().to_string()))
}

pub fn format_dataset(data: &TaskDataset) -> String {
    let mut out = String::from("label");
    for f in data.feature_freqs() {
        out.push(',');
        out.push_str(&fmt_f64(*f));
    }
    out.push('\n');
    for (row, y) in data.features().rows().into_iter().zip(data.labels()) {
        out.push_str(if *y == 1 { "1" } else { "0" });
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, data: &TaskDataset) -> Result<()> {
    write_text(path, &format_dataset(data))
}

/// Reads a measured spectrum with header `freq_hz,h_mean,coherence` (any
/// column order). Every line gets the same averaging count `n_avg`.
pub fn load_spectrum(path: &Path, n_avg: u32) -> Result<Vec<SpectrumLine>> {
    let text = read_text(path)?;
    let mut records = csv_reader(&text).into_records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_err(path, 1, "malformed header: file is empty")),
    };
    let col = |name: &str| {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| {
            parse_err(
                path,
                1,
                format!("malformed header: missing column '{name}'"),
            )
        })
    };
    let (cf, ch, cg) = (col("freq_hz")?, col("h_mean")?, col("coherence")?);
    let mut lines = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!(
                    "inconsistent row width: {} cells, header has {}",
                    rec.len(),
                    header.len()
                ),
            ));
        }
        let num = |c: usize| {
            rec[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("non-numeric cell in column {}", c + 1)))
        };
        let entry = SpectrumLine::new(num(cf)?, num(ch)?, num(cg)?, n_avg)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        lines.push(entry);
    }
    if lines.is_empty() {
        return Err(parse_err(path, 1, "spectrum has no rows"));
    }
    Ok(lines)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

/// Serializes rows as a delimited table with a header; an empty slice gives a
/// header-only table.
pub fn format_table<T: Serialize + TableHeader>(rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(T::HEADER)
        .map_err(|e| Error::invalid(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_table<T: Serialize + TableHeader>(path: &Path, rows: &[T]) -> Result<()> {
    write_text(path, &format_table(rows)?)
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Column names of a flat row type. The csv writer only derives headers from
/// the first row, which would leave empty tables without one.
pub trait TableHeader {
    const HEADER: &'static [&'static str];
}

impl TableHeader for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "mode",
        "window",
        "task",
        "task_index",
        "freq_lo_hz",
        "freq_hi_hz",
        "f1",
        "gini",
        "n_active",
        "lambda_final",
        "epsilon",
        "xi",
        "n_windows",
    ];
}

impl TableHeader for TransferRow {
    const HEADER: &'static [&'static str] = &["mode", "window", "source_task", "target_task", "f1"];
}

/// One vertical line of a weight overlay plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPlotRow {
    pub freq_hz: f64,
    pub weight: f64,
    pub task: String,
    pub mode: ModelKind,
    pub window: usize,
}

impl TableHeader for WeightPlotRow {
    const HEADER: &'static [&'static str] = &["freq_hz", "weight", "task", "mode", "window"];
}

pub fn weight_plot_rows(active: &[ActiveWeight]) -> Vec<WeightPlotRow> {
    active
        .iter()
        .filter(|a| a.weight != 0.0)
        .map(|a| WeightPlotRow {
            freq_hz: a.freq_hz,
            weight: a.weight,
            task: a.task.clone(),
            mode: a.mode,
            window: a.window,
        })
        .collect()
}

/// Writes the nonzero weights of `report` as a plot table.
pub fn emit_weight_plot_table(path: &Path, report: &EvaluationReport) -> Result<()> {
    write_table(path, &weight_plot_rows(&report.active_weights))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTableRow {
    pub mode: ModelKind,
    pub stage: SearchStage,
    pub epsilon: f64,
    pub xi: f64,
    pub n_windows: usize,
    pub mean_f1: f64,
    pub mean_gini: f64,
    pub best: bool,
}

impl TableHeader for GridTableRow {
    const HEADER: &'static [&'static str] = &[
        "mode",
        "stage",
        "epsilon",
        "xi",
        "n_windows",
        "mean_f1",
        "mean_gini",
        "best",
    ];
}

pub fn grid_table_rows(results: &[GridResult]) -> Vec<GridTableRow> {
    let mut rows = Vec::new();
    for res in results {
        let mut marked = false;
        for r in &res.table {
            let best = !marked && same_point(r, &res.best);
            marked |= best;
            rows.push(GridTableRow {
                mode: res.mode,
                stage: r.stage,
                epsilon: r.epsilon,
                xi: r.xi,
                n_windows: r.n_windows,
                mean_f1: r.mean_f1,
                mean_gini: r.mean_gini,
                best,
            });
        }
    }
    rows
}

fn same_point(a: &GridRow, b: &GridRow) -> bool {
    a.epsilon == b.epsilon && a.xi == b.xi && a.n_windows == b.n_windows && a.stage == b.stage
}

/// One accepted solver step, tagged with the model it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub mode: ModelKind,
    pub window: usize,
    /// Task the fit was trained on (independent) or `all` (joint).
    pub fit: String,
    pub iteration: usize,
    pub kind: StepKind,
    pub feature: usize,
    pub task: usize,
    pub sign: i8,
    pub total_loss_before: f64,
    pub empirical_loss_after: f64,
    pub total_loss_after: f64,
    pub lambda_after: f64,
}

impl TableHeader for TraceRow {
    const HEADER: &'static [&'static str] = &[
        "mode",
        "window",
        "fit",
        "iteration",
        "kind",
        "feature",
        "task",
        "sign",
        "total_loss_before",
        "empirical_loss_after",
        "total_loss_after",
        "lambda_after",
    ];
}

pub fn trace_rows(models: &[TrainedModel]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for model in models {
        for (w, window) in model.windows.iter().enumerate() {
            for (k, fit) in window.fits().into_iter().enumerate() {
                let name = match model.kind {
                    ModelKind::Independent => model.task_ids[k].clone(),
                    ModelKind::Mtl => "all".to_string(),
                };
                rows.extend(fit.trace.steps.iter().map(|s| TraceRow {
                    mode: model.kind,
                    window: w,
                    fit: name.clone(),
                    iteration: s.iteration,
                    kind: s.kind,
                    feature: model.plan.ranges[w].start + s.feature,
                    task: s.task,
                    sign: s.sign,
                    total_loss_before: s.total_loss_before,
                    empirical_loss_after: s.empirical_loss_after,
                    total_loss_after: s.total_loss_after,
                    lambda_after: s.lambda_after,
                }));
            }
        }
    }
    rows
}

/// Every weight (zero or not) of trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub mode: ModelKind,
    pub window: usize,
    pub task: String,
    pub feature_index: usize,
    pub freq_hz: f64,
    pub weight: f64,
}

impl TableHeader for WeightRow {
    const HEADER: &'static [&'static str] = &[
        "mode",
        "window",
        "task",
        "feature_index",
        "freq_hz",
        "weight",
    ];
}

pub fn weight_rows(models: &[TrainedModel], freqs: &[f64]) -> Vec<WeightRow> {
    let mut rows = Vec::new();
    for model in models {
        for (w, range) in model.plan.ranges.iter().enumerate() {
            for (l, task) in model.task_ids.iter().enumerate() {
                let (fit, col) = model.windows[w].column_for(l);
                for (j, &v) in fit.weights.column(col).iter().enumerate() {
                    rows.push(WeightRow {
                        mode: model.kind,
                        window: w,
                        task: task.clone(),
                        feature_index: range.start + j,
                        freq_hz: freqs[range.start + j],
                        weight: v,
                    });
                }
            }
        }
    }
    rows
}

/// Everything a `compare` run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    /// Configuration with every default resolved.
    pub config: ExperimentConfig,
    pub summary: Vec<SummaryRow>,
    pub grid: Vec<GridResult>,
    pub active_weights: Vec<ActiveWeight>,
    #[serde(default)]
    pub transfer: Vec<TransferRow>,
    #[serde(default)]
    pub traces: Option<Vec<TraceRow>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path() -> &'static Path {
        Path::new("data.csv")
    }

    #[test]
    fn three_rows_two_features() {
        let d = parse_dataset("label,10,20.5\n0,1.5,2\n1,-3,4e-3\n0,0,0\n", path(), "t").unwrap();
        assert_eq!((d.n_samples(), d.n_features()), (3, 2));
        assert_eq!(d.feature_freqs(), &[10.0, 20.5]);
        assert_eq!(d.labels(), &[0, 1, 0]);
        assert_eq!(d.features()[[1, 1]], 4e-3);
        assert_eq!(d.task_id(), "t");
    }

    fn err_text(text: &str) -> String {
        parse_dataset(text, path(), "t").unwrap_err().to_string()
    }

    #[test]
    fn parse_errors_are_distinct_and_line_numbered() {
        assert_eq!(
            err_text("label,10\n0,1\n2,1\n"),
            "data.csv: non-binary label, line 3"
        );
        assert!(err_text("lbl,10\n0,1\n").contains("malformed header"));
        assert!(err_text("label,ten\n0,1\n").contains("malformed header"));
        assert!(err_text("").contains("malformed header"));
        let e = err_text("label,10,20\n0,1,2\n1,x,2\n");
        assert!(
            e.contains("non-numeric cell in column 2") && e.ends_with("line 3"),
            "{e}"
        );
        let e = err_text("label,10,20\n0,1,2\n1,2\n");
        assert!(
            e.contains("inconsistent row width") && e.ends_with("line 3"),
            "{e}"
        );
        // decreasing frequencies violate the dataset invariant
        assert!(parse_dataset("label,20,10\n0,1,2\n1,2,3\n", path(), "t").is_err());
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let x = array![
            [0.1 + 0.2, -1e-300],
            [std::f64::consts::PI, 12345.678e10],
            [-0.0, 1.0]
        ];
        let d = TaskDataset::new("t", x, vec![1, 0, 1], vec![33.75, 34.0625]).unwrap();
        let back = parse_dataset(&format_dataset(&d), path(), "t").unwrap();
        assert_eq!(back, d);
        for (a, b) in back.features().iter().zip(d.features()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/task7.csv");
        let d = TaskDataset::new("task7", array![[1.0], [2.0]], vec![0, 1], vec![5.0]).unwrap();
        save_dataset(&p, &d).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
        assert!(matches!(
            load_dataset(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn spectrum_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_text(&p, "coherence,freq_hz,h_mean\n0.8,10,2\n1,20,3\n").unwrap();
        let s = load_spectrum(&p, 6).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(
            (s[0].freq_hz, s[0].h_mean, s[0].coherence, s[0].n_avg),
            (10.0, 2.0, 0.8, 6)
        );
        write_text(&p, "freq_hz,h_mean\n1,2\n").unwrap();
        assert!(load_spectrum(&p, 6)
            .unwrap_err()
            .to_string()
            .contains("coherence"));
        write_text(&p, "freq_hz,h_mean,coherence\n1,2,1.5\n").unwrap();
        assert!(load_spectrum(&p, 6)
            .unwrap_err()
            .to_string()
            .ends_with("line 2"));
    }

    fn active(weight: f64, task: &str) -> ActiveWeight {
        ActiveWeight {
            mode: ModelKind::Mtl,
            window: 0,
            task: task.into(),
            feature_index: 3,
            freq_hz: 40.5,
            weight,
        }
    }

    #[test]
    fn weight_plot_table_rows() {
        let empty = EvaluationReport::default();
        assert_eq!(
            format_table(&weight_plot_rows(&empty.active_weights)).unwrap(),
            "freq_hz,weight,task,mode,window\n"
        );
        let one = EvaluationReport {
            active_weights: vec![active(0.4, "a")],
            ..EvaluationReport::default()
        };
        assert_eq!(
            format_table(&weight_plot_rows(&one.active_weights)).unwrap(),
            "freq_hz,weight,task,mode,window\n40.5,0.4,a,mtl,0\n"
        );
        let shared = vec![active(0.4, "a"), active(-0.2, "b"), active(0.0, "c")];
        let rows = weight_plot_rows(&shared);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.freq_hz == 40.5));
    }

    #[test]
    fn tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let rows = weight_plot_rows(&[active(0.4, "a"), active(-0.6000000000000001, "b")]);
        write_table(&p, &rows).unwrap();
        assert_eq!(read_table::<WeightPlotRow>(&p).unwrap(), rows);
    }
}
