#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use tensor_energy::accountant::Footprint;
use tensor_energy::model::{DevicePowerTrace, Duration, EventTrace, Qtn};
use tensor_energy::synth::{self, DurationRange, PowerModel, SynthOutput, SynthSpec};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub const MAX_EVENTS: usize = 50;
pub const MAX_SAMPLES: usize = 50;
pub const MAX_TICKS: u64 = 100_000;

const DEVICE_POOL: [&str; 4] = ["cpu:0", "gpu:0", "gpu:1", "cpu:1"];

fn random_power(rng: &mut impl Rng) -> PowerModel {
    match rng.gen_range(0..3) {
        0 => PowerModel::Constant {
            watts: rng.gen_range(0.5..150.0),
        },
        1 => PowerModel::TwoPhase {
            low: rng.gen_range(0.0..40.0),
            high: rng.gen_range(40.0..200.0),
            switch_ts: rng.gen_range(0..2_000),
        },
        _ => PowerModel::Ramp {
            w0: rng.gen_range(1.0..50.0),
            slope: rng.gen_range(-1e4..1e5),
        },
    }
}

/// A random synth instance within the oracle bounds: at most 50 events,
/// 50 power samples in total and 10^5 flattened ticks.
pub fn random_instance(rng: &mut impl Rng) -> (SynthSpec, SynthOutput) {
    loop {
        let n_devices = rng.gen_range(1..=3);
        let mut devices: Vec<String> = DEVICE_POOL.iter().map(|s| s.to_string()).collect();
        devices.shuffle(rng);
        devices.truncate(n_devices);
        let backward = rng.gen_bool(0.5);
        let per_step_cap = MAX_EVENTS / if backward { 2 } else { 1 };
        let layers = rng.gen_range(1..=4u32);
        let tensors_per_layer = rng.gen_range(1..=(per_step_cap as u32 / layers).clamp(1, 8));
        let steps = rng.gen_range(1..=(per_step_cap as u32 / (layers * tensors_per_layer)).clamp(1, 3));
        let min = rng.gen_range(1..=100);
        let spread = rng.gen_range(1..=1_500);
        let mut spec = SynthSpec {
            seed: rng.gen(),
            devices,
            layers,
            tensors_per_layer,
            steps,
            backward,
            duration: DurationRange {
                min,
                max: min + rng.gen_range(0..=spread),
            },
            concurrency: rng.gen_range(1..=4),
            power: random_power(rng),
            sampling_period: 1,
            power_start: rng.gen_range(0..=30),
            fraction: if rng.gen_bool(0.3) { rng.gen_range(0.0..=1.0) } else { 1.0 },
        };
        // Event placement does not depend on the sampling period, so the
        // horizon can be measured first and the period chosen to respect
        // the sample budget.
        let events = synth::generate_events(&spec).expect("valid spec");
        if events.flattened_ticks() > MAX_TICKS {
            continue;
        }
        let horizon = events.iter().map(|e| e.last_tick()).max().unwrap_or(0);
        let budget = (MAX_SAMPLES / spec.devices.len()) as u64 - 2;
        let floor = (horizon.saturating_sub(spec.power_start)) / budget + 1;
        spec.sampling_period = rng.gen_range(floor..=floor * 4);
        let out = synth::generate(&spec).expect("valid spec");
        if out.events.len() <= MAX_EVENTS
            && out.power.sample_count() <= MAX_SAMPLES
            && out.events.flattened_ticks() <= MAX_TICKS
        {
            return (spec, out);
        }
    }
}

/// Energy drawn while any op was active: for each device with power, the
/// set of ticks covered by at least one of its events, each charged the
/// most recent sample at or before it (the earliest sample before the
/// first one) times the tick length.
pub fn brute_force_active_energy(events: &EventTrace, power: &DevicePowerTrace, tick: Duration) -> f64 {
    let mut active: BTreeMap<_, BTreeSet<u64>> = BTreeMap::new();
    for e in events.iter() {
        active.entry(e.device).or_default().extend(e.ts.0..=e.last_tick());
    }
    let mut total = 0.0;
    for (device, ticks) in active {
        let Some(samples) = power.get(&device) else {
            continue;
        };
        for t in ticks {
            let sample = samples
                .iter()
                .rev()
                .find(|s| s.ts.0 <= t)
                .unwrap_or(&samples[0]);
            total += sample.effective_watts() * tick.as_secs_f64();
        }
    }
    total
}

pub const KEY_POOL: [&str; 12] = [
    "bert/embeddings/word_embeddings/Gather",
    "bert/embeddings/LayerNorm/add",
    "bert/encoder/layer_0/attention/self/query/MatMul",
    "bert/encoder/layer_0/attention/self/Softmax",
    "bert/encoder/layer_1/attention/self/query/MatMul",
    "bert/encoder/layer_1/intermediate/dense/MatMul",
    "bert/encoder/layer_11/output/dense/MatMul",
    "bert/pooler/dense/Tanh",
    "gradients/bert/encoder/layer_0/attention/self/query/MatMul_grad",
    "gradients/bert/encoder/layer_1/output/dense/MatMul_grad",
    "loss/Softmax",
    "Adam/update",
];

/// A random footprint over a random subset (at least `min_keys`) of the key pool.
pub fn random_footprint(rng: &mut impl Rng, min_keys: usize) -> Footprint {
    let n = rng.gen_range(min_keys..=KEY_POOL.len());
    let mut keys = KEY_POOL.to_vec();
    keys.shuffle(rng);
    keys.into_iter()
        .take(n)
        .map(|k| (Qtn::parse(k).unwrap(), rng.gen_range(0.0..1_000.0)))
        .collect()
}

/// A footprint whose values are not all equal (so its PCC is defined).
pub fn random_varied_footprint(rng: &mut impl Rng, min_keys: usize) -> Footprint {
    loop {
        let f = random_footprint(rng, min_keys.max(2));
        let first = f.iter().next().map(|(_, v)| v).unwrap();
        if f.iter().any(|(_, v)| v != first) {
            return f;
        }
    }
}
