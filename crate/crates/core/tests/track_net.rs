//! Cost and shape properties of the tracking network through its public
//! interface.

mod common;

use common::{min_seconds, rng};
use gptrack::net::cell::linear_attention;
use gptrack::phantom::{generate, PhantomSpec};
use gptrack::trainer::{TrainConfig, Trainer};
use gptrack::{Tape, Tensor};
use rand::Rng;

fn attention_seconds(patches: usize, channels: usize) -> f64 {
    let mut r = rng(41);
    let mut t = |shape: &[usize]| Tensor::<f32>::from_fn(shape, |_| r.random_range(-0.5..0.5));
    let x = t(&[patches, 2 * channels]);
    let w: Vec<_> = (0..3).map(|_| t(&[2 * channels, 2 * channels])).collect();
    min_seconds(41, || {
        let tape = Tape::new();
        let vars: Vec<_> = w.iter().map(|w| tape.constant(w)).collect();
        let y = linear_attention(&tape.constant(&x), &vars[0], &vars[1], &vars[2]).unwrap();
        std::hint::black_box(y.data()[0]);
    })
}

#[test]
fn attention_cost_is_linear_in_patch_count() {
    attention_seconds(64, 32);
    let ratio = attention_seconds(128, 32) / attention_seconds(64, 32);
    assert!((1.6..=2.6).contains(&ratio), "ratio {ratio}");
}

#[test]
fn one_model_tracks_sequences_of_any_length() {
    let config = TrainConfig {
        model: gptrack::trainer::ModelConfig {
            channels: 8,
            layers: 1,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(config, &[32, 32]).unwrap();
    let spec = PhantomSpec::with_size(32, 16, 12, 0.12, 0.02);
    let s = generate(&spec, 3).unwrap();
    for len in [2, 3, 7, 12] {
        let frames = Tensor::new(&[len, 32, 32], s.frames.data()[..len * 32 * 32].to_vec()).unwrap();
        let tracked = trainer.model.track(&frames).unwrap();
        assert_eq!(tracked.steps.len(), len - 1);
        assert_eq!(tracked.lagrangian.len(), len);
        assert!(tracked.lagrangian.iter().all(|u| u.tensor().is_finite()));
    }
}
