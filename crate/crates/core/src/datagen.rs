//! Training-set construction from averaged FRF measurements, frequency
//! windows, and a synthetic modal population used in place of measured data.
//!
//! A measured FRF is a single averaged curve. Its per-frequency uncertainty is
//! estimated from the coherence, `sigma = sqrt(1 - g^2) / (|g| sqrt(2 n)) * |H|`,
//! and Gaussian draws around the curve give as many samples as needed.

use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskDataset;

/// Averages behind each measured FRF value in the tail-plane data.
pub const DEFAULT_N_AVG: u32 = 6;
pub const DEFAULT_N_INTERMEDIATE: usize = 10_000;
pub const DEFAULT_TRAIN_PER_CLASS: usize = 750;
pub const DEFAULT_TEST_PER_CLASS: usize = 250;

/// Class means closer than this fraction of the peak difference are not
/// counted as discriminative, even with zero noise.
pub const GROUND_TRUTH_REL_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLine {
    pub freq_hz: f64,
    pub h_mean: f64,
    pub coherence: f64,
    pub n_avg: u32,
}

impl SpectrumLine {
    pub fn new(freq_hz: f64, h_mean: f64, coherence: f64, n_avg: u32) -> Result<Self> {
        if !(coherence > 0.0 && coherence <= 1.0) {
            return Err(Error::invalid(format!(
                "coherence must lie in (0, 1], got {coherence} at {freq_hz} Hz"
            )));
        }
        if n_avg == 0 {
            return Err(Error::invalid("number of averages must be at least 1"));
        }
        if !freq_hz.is_finite() || !h_mean.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite spectrum line ({freq_hz} Hz, {h_mean})"
            )));
        }
        Ok(Self {
            freq_hz,
            h_mean,
            coherence,
            n_avg,
        })
    }
}

/// Standard deviation of an averaged FRF value estimated from its coherence.
pub fn coherence_std(line: &SpectrumLine) -> Result<f64> {
    let g = line.coherence;
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::invalid(format!(
            "coherence must lie in (0, 1], got {g}"
        )));
    }
    if line.n_avg == 0 {
        return Err(Error::invalid("number of averages must be at least 1"));
    }
    let n = f64::from(line.n_avg);
    Ok((1.0 - g * g).sqrt() / (g.abs() * (2.0 * n).sqrt()) * line.h_mean.abs())
}

/// Divides every response by the largest magnitude in the spectrum.
pub fn normalize_spectrum(lines: &[SpectrumLine]) -> Result<Vec<SpectrumLine>> {
    let peak = lines.iter().map(|l| l.h_mean.abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::invalid("cannot normalise an all-zero spectrum"));
    }
    Ok(lines
        .iter()
        .map(|l| SpectrumLine {
            h_mean: l.h_mean / peak,
            ..*l
        })
        .collect())
}

/// Lines with `lo <= freq <= hi`.
pub fn crop_band(lines: &[SpectrumLine], lo: f64, hi: f64) -> Result<Vec<SpectrumLine>> {
    let kept: Vec<_> = lines
        .iter()
        .filter(|l| l.freq_hz >= lo && l.freq_hz <= hi)
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "no spectrum lines in band [{lo}, {hi}] Hz"
        )));
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draw an intermediate set, re-estimate mean and spread from it, then
    /// draw the output from the re-estimated Gaussian.
    #[default]
    TwoStage,
    /// Draw the output directly from the coherence-based Gaussian.
    OneStage,
}

/// SplitMix64 finaliser, used to derive independent seeds from a base seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut x = seed;
    for &t in tags {
        x ^= t
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(x << 6)
            .wrapping_add(x >> 2);
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

fn line_rng(seed: u64, line: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(line as u64);
    rng
}

/// Draws `n_out` samples of the whole spectrum (`n_out x M`). Each frequency
/// uses its own RNG stream derived from `seed`, so columns are independent of
/// how many lines are generated.
pub fn monte_carlo_expand(
    spectrum: &[SpectrumLine],
    n_intermediate: usize,
    n_out: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Array2<f64>> {
    if spectrum.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if n_out == 0 {
        return Err(Error::invalid("n_out must be at least 1"));
    }
    if mode == SamplingMode::TwoStage && n_intermediate < 2 {
        return Err(Error::invalid(format!(
            "two-stage sampling needs at least 2 intermediate draws, got {n_intermediate}"
        )));
    }
    let mut out = Array2::zeros((n_out, spectrum.len()));
    for (j, line) in spectrum.iter().enumerate() {
        let sd = coherence_std(line)?;
        let mut rng = line_rng(seed, j);
        let (mean, sd) = match mode {
            SamplingMode::OneStage => (line.h_mean, sd),
            SamplingMode::TwoStage => {
                let draws: Vec<f64> = (0..n_intermediate)
                    .map(|_| gaussian(&mut rng, line.h_mean, sd))
                    .collect();
                // centred on the measured value, so zero spread reproduces it exactly
                let n = n_intermediate as f64;
                let offset = draws.iter().map(|d| d - line.h_mean).sum::<f64>() / n;
                let var = draws
                    .iter()
                    .map(|d| (d - line.h_mean - offset).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                (line.h_mean + offset, var.sqrt())
            }
        };
        for i in 0..n_out {
            out[[i, j]] = gaussian(&mut rng, mean, sd);
        }
    }
    Ok(out)
}

fn gaussian<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Builds a two-class task from one averaged spectrum per class. Both spectra
/// must share the frequency grid. Samples alternate class 0 / class 1.
pub fn task_from_spectra(
    task_id: &str,
    class0: &[SpectrumLine],
    class1: &[SpectrumLine],
    n_per_class: usize,
    n_intermediate: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<TaskDataset> {
    if class0.len() != class1.len()
        || class0
            .iter()
            .zip(class1)
            .any(|(a, b)| a.freq_hz != b.freq_hz)
    {
        return Err(Error::dim(format!(
            "task '{task_id}': class spectra have different frequency grids"
        )));
    }
    let a = monte_carlo_expand(
        class0,
        n_intermediate,
        n_per_class,
        derive_seed(seed, &[0]),
        mode,
    )?;
    let b = monte_carlo_expand(
        class1,
        n_intermediate,
        n_per_class,
        derive_seed(seed, &[1]),
        mode,
    )?;
    interleave_classes(task_id, &a, &b, class0.iter().map(|l| l.freq_hz).collect())
}

fn interleave_classes(
    task_id: &str,
    class0: &Array2<f64>,
    class1: &Array2<f64>,
    freqs: Vec<f64>,
) -> Result<TaskDataset> {
    let n = class0.nrows();
    let m = class0.ncols();
    let mut x = Array2::zeros((2 * n, m));
    let mut y = Vec::with_capacity(2 * n);
    for i in 0..n {
        x.row_mut(2 * i).assign(&class0.row(i));
        x.row_mut(2 * i + 1).assign(&class1.row(i));
        y.push(0);
        y.push(1);
    }
    TaskDataset::new(task_id, x, y, freqs)
}

/// Contiguous, near-equal partition of the feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub n_windows: usize,
    pub ranges: Vec<Range<usize>>,
}

/// Splits `m` features into `n_windows` consecutive blocks; when the split is
/// uneven the first `m % n_windows` blocks get one extra feature.
pub fn window_split(m: usize, n_windows: usize) -> Result<WindowPlan> {
    if n_windows == 0 || m == 0 {
        return Err(Error::invalid("need at least one feature and one window"));
    }
    if n_windows > m {
        return Err(Error::invalid(format!(
            "{n_windows} windows requested for only {m} features"
        )));
    }
    let base = m / n_windows;
    let extra = m % n_windows;
    let mut ranges = Vec::with_capacity(n_windows);
    let mut start = 0;
    for w in 0..n_windows {
        let len = base + usize::from(w < extra);
        ranges.push(start..start + len);
        start += len;
    }
    Ok(WindowPlan { n_windows, ranges })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalComponent {
    pub natural_freq_hz: f64,
    pub damping: f64,
    pub amplitude: f64,
}

impl ModalComponent {
    /// Magnitude of a single-degree-of-freedom receptance at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let r = freq_hz / self.natural_freq_hz;
        let a = 1.0 - r * r;
        let b = 2.0 * self.damping * r;
        self.amplitude / (a * a + b * b).sqrt()
    }

    fn shifted(&self, shift_hz: f64) -> Self {
        Self {
            natural_freq_hz: self.natural_freq_hz + shift_hz,
            ..*self
        }
    }
}

fn default_coherence() -> f64 {
    1.0
}

fn default_n_avg() -> u32 {
    DEFAULT_N_AVG
}

/// Two classes of a small population of nominally identical structures.
///
/// Class 1 differs from class 0 by shifting the natural frequencies of the
/// structural `modes` by `class_shift_hz`; those differences are shared by
/// all tasks. Each task additionally gets its own low-frequency modes inside
/// `nuisance_band_hz` (standing in for rig and boundary effects), shifted by
/// `nuisance_shift_hz` between classes, so they separate the classes of that
/// task only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPopulationSpec {
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    pub n_freqs: usize,
    pub modes: Vec<ModalComponent>,
    pub class_shift_hz: Vec<f64>,
    pub n_tasks: usize,
    pub nuisance_band_hz: (f64, f64),
    pub nuisance_modes_per_task: usize,
    pub nuisance_amplitude: f64,
    pub nuisance_damping: f64,
    pub nuisance_shift_hz: f64,
    pub noise_sd: f64,
    /// Constant coherence applied on top of `noise_sd`; 1 adds nothing.
    #[serde(default = "default_coherence")]
    pub coherence: f64,
    #[serde(default = "default_n_avg")]
    pub n_avg: u32,
    /// Samples per class per task.
    pub n_samples: usize,
    /// Experiment configs overwrite this with a value derived from their own
    /// seed.
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticPopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_freqs < 2 || !(self.freq_max_hz > self.freq_min_hz) || !(self.freq_min_hz > 0.0) {
            return bad(
                "synthetic grid needs n_freqs >= 2 and 0 < freq_min_hz < freq_max_hz".into(),
            );
        }
        if self.class_shift_hz.len() != self.modes.len() {
            return bad(format!(
                "{} class shifts for {} modes",
                self.class_shift_hz.len(),
                self.modes.len()
            ));
        }
        let all_damping = self
            .modes
            .iter()
            .map(|m| m.damping)
            .chain((self.nuisance_modes_per_task > 0).then_some(self.nuisance_damping));
        for d in all_damping {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("damping ratio {d} outside (0, 1)"));
            }
        }
        for m in &self.modes {
            if !(m.natural_freq_hz > 0.0) {
                return bad(format!(
                    "natural frequency {} must be positive",
                    m.natural_freq_hz
                ));
            }
        }
        let (lo, hi) = self.nuisance_band_hz;
        if self.nuisance_modes_per_task > 0 && !(hi > lo && lo > 0.0) {
            return bad(format!("nuisance band ({lo}, {hi}) is empty"));
        }
        if self.n_samples == 0 || self.n_tasks == 0 {
            return bad("need at least one task and one sample per class".into());
        }
        if !(self.noise_sd >= 0.0) || !(self.coherence > 0.0 && self.coherence <= 1.0) {
            return bad("noise_sd must be >= 0 and coherence in (0, 1]".into());
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let step = (self.freq_max_hz - self.freq_min_hz) / (self.n_freqs - 1) as f64;
        (0..self.n_freqs)
            .map(|i| self.freq_min_hz + step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub tasks: Vec<TaskDataset>,
    /// Features where the structural class curves differ, shared by all tasks.
    pub ground_truth: Vec<usize>,
    /// Per task, features inside the nuisance band.
    pub nuisance_features: Vec<usize>,
    /// Per task, the natural frequencies of that task's nuisance modes.
    pub nuisance_modes_hz: Vec<Vec<f64>>,
}

impl SyntheticPopulation {
    /// Splits every task into `(train, test)`, keeping the last
    /// `n_test_per_class` samples of each class for testing.
    pub fn split(&self, n_test_per_class: usize) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for t in &self.tasks {
            let (tr, te) = split_per_class(t, n_test_per_class)?;
            train.push(tr);
            test.push(te);
        }
        Ok((train, test))
    }
}

/// Keeps the last `n_test_per_class` samples of each class for testing.
pub fn split_per_class(
    data: &TaskDataset,
    n_test_per_class: usize,
) -> Result<(TaskDataset, TaskDataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let idx: Vec<usize> = (0..data.n_samples())
            .filter(|&i| data.labels()[i] == class)
            .collect();
        if idx.len() <= n_test_per_class {
            return Err(Error::invalid(format!(
                "task '{}': class {class} has {} samples, cannot hold out {n_test_per_class}",
                data.task_id(),
                idx.len()
            )));
        }
        let cut = idx.len() - n_test_per_class;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select_samples(&train)?, data.select_samples(&test)?))
}

fn curve(modes: &[ModalComponent], freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| modes.iter().map(|m| m.magnitude(f)).sum())
        .collect()
}

/// Places each task's nuisance modes in disjoint slots of the nuisance band.
fn nuisance_placement(spec: &SyntheticPopulationSpec) -> Vec<Vec<f64>> {
    let per = spec.nuisance_modes_per_task;
    let slots = per * spec.n_tasks;
    if slots == 0 {
        return vec![Vec::new(); spec.n_tasks];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x6e75_6973]));
    let mut order: Vec<usize> = (0..slots).collect();
    for i in (1..slots).rev() {
        let k = rng.random_range(0..=i);
        order.swap(i, k);
    }
    let (lo, hi) = spec.nuisance_band_hz;
    let width = (hi - lo) / slots as f64;
    let mut out = vec![Vec::with_capacity(per); spec.n_tasks];
    for (slot_pos, &slot) in order.iter().enumerate() {
        let jitter: f64 = rng.random_range(0.25..0.75);
        out[slot_pos / per].push(lo + width * (slot as f64 + jitter));
    }
    for v in &mut out {
        v.sort_by(f64::total_cmp);
    }
    out
}

/// Generates a balanced two-class population. Deterministic per seed.
pub fn synth_population(spec: &SyntheticPopulationSpec) -> Result<SyntheticPopulation> {
    spec.validate()?;
    let freqs = spec.frequencies();
    let base0 = spec.modes.clone();
    let base1: Vec<ModalComponent> = spec
        .modes
        .iter()
        .zip(&spec.class_shift_hz)
        .map(|(m, &s)| m.shifted(s))
        .collect();
    let structural0 = curve(&base0, &freqs);
    let structural1 = curve(&base1, &freqs);
    let diffs: Vec<f64> = structural0
        .iter()
        .zip(&structural1)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let peak = diffs.iter().copied().fold(0.0, f64::max);
    let threshold = spec.noise_sd.max(GROUND_TRUTH_REL_FLOOR * peak);
    let ground_truth = diffs
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > threshold)
        .map(|(j, _)| j)
        .collect();
    let (lo, hi) = spec.nuisance_band_hz;
    let nuisance_features = if spec.nuisance_modes_per_task > 0 {
        (0..freqs.len())
            .filter(|&j| freqs[j] >= lo && freqs[j] <= hi)
            .collect()
    } else {
        Vec::new()
    };

    let placement = nuisance_placement(spec);
    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for (l, nuisance_hz) in placement.iter().enumerate() {
        let nuisance = |shift: f64| -> Vec<ModalComponent> {
            nuisance_hz
                .iter()
                .map(|&f| ModalComponent {
                    natural_freq_hz: f + shift,
                    damping: spec.nuisance_damping,
                    amplitude: spec.nuisance_amplitude,
                })
                .collect()
        };
        let class_curves = [
            add(&structural0, &curve(&nuisance(0.0), &freqs)),
            add(
                &structural1,
                &curve(&nuisance(spec.nuisance_shift_hz), &freqs),
            ),
        ];
        let samples: Vec<Array2<f64>> = class_curves
            .iter()
            .enumerate()
            .map(|(c, mean)| {
                sample_curve(spec, mean, derive_seed(spec.seed, &[l as u64, c as u64]))
            })
            .collect::<Result<_>>()?;
        tasks.push(interleave_classes(
            &format!("task{}", l + 1),
            &samples[0],
            &samples[1],
            freqs.clone(),
        )?);
    }
    Ok(SyntheticPopulation {
        tasks,
        ground_truth,
        nuisance_features,
        nuisance_modes_hz: placement,
    })
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sample_curve(spec: &SyntheticPopulationSpec, mean: &[f64], seed: u64) -> Result<Array2<f64>> {
    let sds = mean
        .iter()
        .map(|&h| {
            let line = SpectrumLine::new(1.0, h, spec.coherence, spec.n_avg)?;
            let c = coherence_std(&line)?;
            Ok((spec.noise_sd * spec.noise_sd + c * c).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((spec.n_samples, mean.len()));
    for i in 0..spec.n_samples {
        for j in 0..mean.len() {
            out[[i, j]] = if sds[j] == 0.0 {
                mean[j]
            } else {
                Normal::new(mean[j], sds[j])
                    .map_err(|e| Error::invalid(format!("gaussian: {e}")))?
                    .sample(&mut rng)
            };
        }
    }
    Ok(out)
}
