#![allow(dead_code)]

use std::path::Path;

use fusion::config::{Config, SplitKind};
use fusion::synth::{generate_dataset, SynthConfig};
use tempfile::TempDir;

/// Synthetic dataset in a fresh temporary directory.
pub fn dataset(classes: usize, per_class: usize, seed: u64) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { classes, per_class, ..SynthConfig::default() };
    generate_dataset(&cfg, seed, dir.path()).unwrap();
    dir
}

/// Small network over `data`: width 1/8, 16 px inputs, T=4.
pub fn tiny_config(data: &Path) -> Config {
    let mut c = Config::default();
    c.data.path = data.to_string_lossy().into_owned();
    c.model.width_multiplier = 0.125;
    c.model.map_size = 16;
    c.model.clip_size = 16;
    c.model.clip_length = 4;
    c.train.batch_size = 4;
    c.train.epochs = 2;
    c.train.validation_fraction = 0.1;
    c.data.split = SplitKind::CrossView;
    c
}
