#![allow(dead_code)]

use std::path::PathBuf;

use sparse_mtl::datagen::{ModalComponent, SyntheticPopulationSpec};

pub fn bundled_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

/// Two structural modes, the upper one shifted by damage, plus two
/// task-specific nuisance modes per task below 80 Hz.
pub fn shared_population(seed: u64, n_tasks: usize, noise_sd: f64) -> SyntheticPopulationSpec {
    SyntheticPopulationSpec {
        freq_min_hz: 30.0,
        freq_max_hz: 220.0,
        n_freqs: 64,
        modes: vec![
            ModalComponent {
                natural_freq_hz: 110.0,
                damping: 0.03,
                amplitude: 1.0,
            },
            ModalComponent {
                natural_freq_hz: 170.0,
                damping: 0.03,
                amplitude: 1.0,
            },
        ],
        class_shift_hz: vec![0.0, 3.0],
        n_tasks,
        nuisance_band_hz: (35.0, 80.0),
        nuisance_modes_per_task: 2,
        nuisance_amplitude: 0.6,
        nuisance_damping: 0.03,
        nuisance_shift_hz: 3.0,
        noise_sd,
        coherence: 1.0,
        n_avg: 6,
        n_samples: 100,
        seed,
    }
}
