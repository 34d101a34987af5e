#![allow(dead_code)]

use mfeae_core::corpus::{make_synthetic_splits, SyntheticSplits};
use mfeae_core::trainkit::{TrainConfig, TrainInputs};
use mfeae_core::EventInstance;

/// A backbone small enough for many repeated runs.
pub fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    let b = &mut c.model.backbone;
    b.d_model = 16;
    b.n_heads = 2;
    b.n_layers = 1;
    b.d_ff = 32;
    b.max_encoder_len = 64;
    b.max_decoder_len = 32;
    c.batch_size = 4;
    c.epochs = 5;
    c
}

/// Four training, dev and test instances per dataset.
pub fn tiny_fixture(seed: u64) -> SyntheticSplits {
    make_synthetic_splits(seed, 4, 4, 4, 4, 0.5)
}

pub fn inputs(s: &SyntheticSplits) -> TrainInputs<'_> {
    TrainInputs {
        d1_train: &s.d1.train,
        d1_dev: &s.d1.dev,
        d2_train: &s.d2.train,
        d2_dev: &s.d2.dev,
    }
}

pub fn with_format(data: &[EventInstance], format_id: u8) -> Vec<EventInstance> {
    data.iter()
        .cloned()
        .map(|mut i| {
            i.format_id = format_id;
            i
        })
        .collect()
}
