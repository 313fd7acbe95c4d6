//! Seeded synthetic event/power traces with known footprints.
//!
//! Generated names follow a BERT-like layout
//! (`bert/encoder/layer_<i>/<site>`, and `gradients/...` for the backward
//! pass) so summarization, diagrams and pass splitting all see realistic
//! keys. The expected footprint is always computed by the flattening
//! reference accountant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{aggregate, gen_footprint_naive, AccountingOptions, Footprint};
use crate::model::{DeviceId, DevicePowerTrace, EventTrace, PowerSample, Qtn, TensorEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth spec field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("invalid synth spec: {0}")]
    Parse(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Inclusive bounds for event durations in µs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationRange {
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerModel {
    Constant { watts: f64 },
    /// `low` before `switch_ts`, `high` from it on.
    TwoPhase { low: f64, high: f64, switch_ts: u64 },
    /// `w0 + slope * t` with `t` in seconds.
    Ramp { w0: f64, slope: f64 },
}

impl PowerModel {
    pub fn watts_at(&self, ts: u64) -> f64 {
        match *self {
            PowerModel::Constant { watts } => watts,
            PowerModel::TwoPhase {
                low,
                high,
                switch_ts,
            } => {
                if ts < switch_ts {
                    low
                } else {
                    high
                }
            }
            PowerModel::Ramp { w0, slope } => (w0 + slope * ts as f64 * 1e-6).max(0.0),
        }
    }
}

fn default_steps() -> u32 {
    1
}

fn default_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Device labels; each event lands on one of them at random.
    pub devices: Vec<String>,
    pub layers: u32,
    pub tensors_per_layer: u32,
    #[serde(default = "default_steps")]
    pub steps: u32,
    /// Also emit a `gradients/...` backward pass per step.
    #[serde(default)]
    pub backward: bool,
    pub duration: DurationRange,
    /// Roughly how many events overlap on one device; each event advances
    /// its device cursor by `(dur + 1) / concurrency` ticks.
    pub concurrency: u32,
    pub power: PowerModel,
    /// Power sampling period in µs.
    pub sampling_period: u64,
    /// Timestamp of the first power sample.
    #[serde(default)]
    pub power_start: u64,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec =
            serde_json::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }

    pub fn validate(&self) -> Result<Vec<DeviceId>, SynthError> {
        if self.devices.is_empty() {
            return Err(invalid("devices", "at least one device is required"));
        }
        let devices = self
            .devices
            .iter()
            .map(|d| d.parse::<DeviceId>().map_err(|e| invalid("devices", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        for (field, value) in [
            ("layers", self.layers),
            ("tensors_per_layer", self.tensors_per_layer),
            ("steps", self.steps),
            ("concurrency", self.concurrency),
        ] {
            if value < 1 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.duration.min < 1 {
            return Err(invalid("duration", "min must be at least 1 µs"));
        }
        if self.duration.max < self.duration.min {
            return Err(invalid("duration", "max must not be below min"));
        }
        if self.sampling_period < 1 {
            return Err(invalid("sampling_period", "must be at least 1 µs"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(invalid("fraction", "must lie in [0, 1]"));
        }
        let watts_ok = |w: f64| w.is_finite() && w >= 0.0;
        let power_ok = match self.power {
            PowerModel::Constant { watts } => watts_ok(watts),
            PowerModel::TwoPhase { low, high, .. } => watts_ok(low) && watts_ok(high),
            PowerModel::Ramp { w0, slope } => watts_ok(w0) && slope.is_finite(),
        };
        if !power_ok {
            return Err(invalid("power", "watts must be finite and non-negative"));
        }
        Ok(devices)
    }
}

const SITES: [&str; 8] = [
    "attention/self/query/MatMul",
    "attention/self/key/MatMul",
    "attention/self/value/MatMul",
    "attention/self/Softmax",
    "attention/output/dense/MatMul",
    "intermediate/dense/MatMul",
    "output/dense/MatMul",
    "output/LayerNorm/batchnorm/add",
];

fn site_name(index: u32) -> String {
    let base = SITES[index as usize % SITES.len()];
    match index as usize / SITES.len() {
        0 => base.to_string(),
        round => format!("{base}_{round}"),
    }
}

fn op_name(backward: bool, layer: u32, site: u32) -> Qtn {
    let prefix = if backward { "gradients/" } else { "" };
    Qtn::parse(&format!(
        "{prefix}bert/encoder/layer_{layer}/{}",
        site_name(site)
    ))
    .expect("generated names are well formed")
}

/// A generated trace pair with its reference footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub events: EventTrace,
    pub power: DevicePowerTrace,
    pub expected: Footprint,
}

/// The event trace alone; event placement does not depend on the power
/// model or sampling period.
pub fn generate_events(spec: &SynthSpec) -> Result<EventTrace, SynthError> {
    let devices = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cursors = vec![0u64; devices.len()];
    let mut events = Vec::new();

    for _ in 0..spec.steps {
        let passes: &[bool] = if spec.backward { &[false, true] } else { &[false] };
        for &backward in passes {
            let layers: Vec<u32> = if backward {
                (0..spec.layers).rev().collect()
            } else {
                (0..spec.layers).collect()
            };
            for layer in layers {
                for site in 0..spec.tensors_per_layer {
                    let d = rng.gen_range(0..devices.len());
                    let dur = rng.gen_range(spec.duration.min..=spec.duration.max);
                    let start = cursors[d];
                    cursors[d] += (dur + 1) / u64::from(spec.concurrency);
                    let event = TensorEvent::new(start, dur, devices[d], op_name(backward, layer, site))
                        .map_err(|e| invalid("duration", e.to_string()))?;
                    events.push(event);
                }
            }
        }
    }
    Ok(EventTrace::new(events))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    let devices = spec.validate()?;
    let events = generate_events(spec)?;
    let horizon = events.iter().map(|e| e.last_tick()).max().unwrap_or(0);
    let mut power = DevicePowerTrace::new();
    for device in &devices {
        let mut samples = Vec::new();
        let mut ts = spec.power_start;
        loop {
            let sample = PowerSample::with_fraction(ts, spec.power.watts_at(ts), spec.fraction)
                .map_err(|e| invalid("power", e.to_string()))?;
            samples.push(sample);
            if ts > horizon {
                break;
            }
            ts += spec.sampling_period;
        }
        power
            .insert(*device, samples)
            .map_err(|e| invalid("devices", e.to_string()))?;
    }

    let (ticks, _) = gen_footprint_naive(&events, &power, AccountingOptions::default())
        .map_err(|e| invalid("devices", e.to_string()))?;
    Ok(SynthOutput {
        expected: aggregate(&ticks),
        events,
        power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprint::summarize;

    fn base_spec() -> SynthSpec {
        SynthSpec {
            seed: 7,
            devices: vec!["cpu:0".into()],
            layers: 1,
            tensors_per_layer: 1,
            steps: 1,
            backward: false,
            duration: DurationRange { min: 9, max: 9 },
            concurrency: 1,
            power: PowerModel::Constant { watts: 1.0 },
            sampling_period: 4,
            power_start: 0,
            fraction: 1.0,
        }
    }

    #[test]
    fn single_event_closed_form() {
        let out = generate(&base_spec()).unwrap();
        assert_eq!(out.events.len(), 1);
        let (_, joules) = out.expected.iter().next().unwrap();
        assert!((joules - 10e-6).abs() < 1e-18);
    }

    #[test]
    fn full_overlap_halves() {
        let spec = SynthSpec {
            tensors_per_layer: 2,
            concurrency: 1000,
            ..base_spec()
        };
        let out = generate(&spec).unwrap();
        assert_eq!(out.events.events[0].ts, out.events.events[1].ts);
        let values: Vec<f64> = out.expected.iter().map(|(_, v)| v).collect();
        assert_eq!(values.len(), 2);
        assert_eq!(values[0], values[1]);
        assert!((values[0] - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            devices: vec!["cpu:0".into(), "gpu:0".into()],
            layers: 3,
            tensors_per_layer: 4,
            duration: DurationRange { min: 1, max: 40 },
            concurrency: 3,
            power: PowerModel::Ramp { w0: 5.0, slope: 1e4 },
            ..base_spec()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().events, generate(&other).unwrap().events);
    }

    #[test]
    fn summarized_key_count() {
        let spec = SynthSpec {
            layers: 4,
            tensors_per_layer: 11,
            backward: true,
            steps: 2,
            ..base_spec()
        };
        let out = generate(&spec).unwrap();
        assert_eq!(out.events.len(), 2 * 2 * 4 * 11);
        assert_eq!(summarize(&out.expected).len(), 11 * 2);
    }

    #[test]
    fn validation_names_fields() {
        let bad = SynthSpec { layers: 0, ..base_spec() };
        assert_eq!(
            generate(&bad).unwrap_err(),
            invalid("layers", "must be at least 1")
        );
        let bad = SynthSpec {
            duration: DurationRange { min: 5, max: 2 },
            ..base_spec()
        };
        assert!(matches!(generate(&bad), Err(SynthError::Invalid { field: "duration", .. })));
        let bad = SynthSpec {
            devices: vec!["tpu:0".into()],
            ..base_spec()
        };
        assert!(matches!(generate(&bad), Err(SynthError::Invalid { field: "devices", .. })));
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let spec = base_spec();
        assert_eq!(SynthSpec::from_json(&spec.to_json()).unwrap(), spec);
        let text = spec.to_json().replacen("\"seed\"", "\"sead\"", 1);
        let err = SynthSpec::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("sead"), "{err}");
    }
}
