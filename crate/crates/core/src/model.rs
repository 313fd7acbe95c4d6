//! Domain vocabulary shared by every other module.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

/// Segment reserved for summarized names. Raw traces must not contain it.
pub const RESERVED_SEGMENT: &str = "transformer";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("empty qualified tensor name")]
    EmptyName,
    #[error("invalid qualified tensor name {name:?}: segment {position} is empty")]
    EmptySegment { name: String, position: usize },
    #[error("invalid device label {0:?} (expected cpu:<n>, gpu:<n> or other:<n>)")]
    BadDevice(String),
    #[error("duration must be at least 1 µs, got {0}")]
    NonPositiveDuration(u64),
    #[error("event at {ts} with duration {dur} overflows the timestamp range")]
    EventOverflow { ts: u64, dur: u64 },
    #[error("power must be finite and non-negative, got {0}")]
    BadPower(f64),
    #[error("attribution fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("duplicate power timestamp {ts} on device {device}")]
    DuplicateSample { device: DeviceId, ts: u64 },
}

/// Microseconds since an arbitrary per-trace epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn micros(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A strictly positive span in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(u64);

impl Duration {
    pub const MICROSECOND: Duration = Duration(1);
    pub const SECOND: Duration = Duration(1_000_000);

    pub fn from_micros(micros: u64) -> Result<Self, ModelError> {
        if micros == 0 {
            return Err(ModelError::NonPositiveDuration(micros));
        }
        Ok(Duration(micros))
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }
}

impl Default for Duration {
    fn default() -> Self {
        Duration::MICROSECOND
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceKind {
    Cpu,
    Gpu,
    Other,
}

impl DeviceKind {
    fn prefix(self) -> &'static str {
        match self {
            DeviceKind::Cpu => "cpu",
            DeviceKind::Gpu => "gpu",
            DeviceKind::Other => "other",
        }
    }
}

/// An executing device, rendered as `cpu:0`, `gpu:1`, `other:2`.
///
/// Parsing is case-insensitive and tolerates surrounding whitespace; the
/// rendered label is always the lowercase normal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId {
    pub kind: DeviceKind,
    pub index: u32,
}

impl DeviceId {
    pub const fn new(kind: DeviceKind, index: u32) -> Self {
        DeviceId { kind, index }
    }

    pub const fn cpu(index: u32) -> Self {
        DeviceId::new(DeviceKind::Cpu, index)
    }

    pub const fn gpu(index: u32) -> Self {
        DeviceId::new(DeviceKind::Gpu, index)
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Normalizes a raw label into its canonical lowercase form.
    pub fn normalize(raw: &str) -> Result<String, ModelError> {
        raw.parse::<DeviceId>().map(|d| d.label())
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.prefix(), self.index)
    }
}

impl FromStr for DeviceId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadDevice(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        let (kind, index) = lower.split_once(':').ok_or_else(bad)?;
        let kind = match kind {
            "cpu" => DeviceKind::Cpu,
            "gpu" => DeviceKind::Gpu,
            "other" => DeviceKind::Other,
            _ => return Err(bad()),
        };
        if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index = index.parse::<u32>().map_err(|_| bad())?;
        Ok(DeviceId { kind, index })
    }
}

/// Qualified tensor name: composite-layer path plus terminal tensor.
///
/// Stored as the full segment list (tensor last) next to the rendered
/// shorthand, behind a shared pointer so clones are cheap. Ordering is the
/// byte order of the shorthand, so sorted maps keyed by `Qtn` iterate in
/// the same order as their rendered keys.
#[derive(Clone)]
pub struct Qtn(Arc<QtnInner>);

struct QtnInner {
    rendered: String,
    segments: Vec<String>,
}

impl Qtn {
    /// Builds a name from a path and a tensor, validating every segment.
    pub fn new<P, S>(path: P, tensor: &str) -> Result<Self, ModelError>
    where
        P: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut segments: Vec<String> = path.into_iter().map(Into::into).collect();
        segments.push(tensor.to_string());
        Qtn::from_segments(segments)
    }

    pub fn from_segments(segments: Vec<String>) -> Result<Self, ModelError> {
        if segments.is_empty() {
            return Err(ModelError::EmptyName);
        }
        let name = segments.join("/");
        for (i, seg) in segments.iter().enumerate() {
            if seg.is_empty() || seg.contains('/') {
                return Err(ModelError::EmptySegment {
                    name,
                    position: i + 1,
                });
            }
        }
        Ok(Qtn::from_valid(name, segments))
    }

    fn from_valid(rendered: String, segments: Vec<String>) -> Self {
        Qtn(Arc::new(QtnInner { rendered, segments }))
    }

    /// Parses the slash-joined shorthand (`bert/encoder/layer_0/MatMul`).
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        if s.is_empty() {
            return Err(ModelError::EmptyName);
        }
        let segments: Vec<String> = s.split('/').map(str::to_string).collect();
        if let Some(pos) = segments.iter().position(String::is_empty) {
            return Err(ModelError::EmptySegment {
                name: s.to_string(),
                position: pos + 1,
            });
        }
        Ok(Qtn::from_valid(s.to_string(), segments))
    }

    pub fn render(&self) -> String {
        self.0.rendered.clone()
    }

    pub fn as_str(&self) -> &str {
        &self.0.rendered
    }

    pub fn path(&self) -> &[String] {
        let segments = self.segments();
        &segments[..segments.len() - 1]
    }

    pub fn tensor(&self) -> &str {
        self.segments().last().expect("qtn has at least one segment")
    }

    pub fn segments(&self) -> &[String] {
        &self.0.segments
    }

    pub fn contains_segment(&self, seg: &str) -> bool {
        self.segments().iter().any(|s| s == seg)
    }
}

impl PartialEq for Qtn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.rendered == other.0.rendered
    }
}

impl Eq for Qtn {}

impl Hash for Qtn {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.rendered.hash(state);
    }
}

impl fmt::Debug for Qtn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Qtn({:?})", self.0.rendered)
    }
}

impl Ord for Qtn {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rendered.as_bytes().cmp(other.0.rendered.as_bytes())
    }
}

impl PartialOrd for Qtn {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Qtn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.rendered)
    }
}

impl FromStr for Qtn {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Qtn::parse(s)
    }
}

/// One occurrence of a tensor operation covering ticks `ts ..= ts + dur`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEvent {
    pub ts: Timestamp,
    pub dur: Duration,
    pub device: DeviceId,
    pub op: Qtn,
}

impl TensorEvent {
    pub fn new(ts: u64, dur: u64, device: DeviceId, op: Qtn) -> Result<Self, ModelError> {
        let dur = Duration::from_micros(dur)?;
        // last tick plus one must stay representable for the sweep
        ts.checked_add(dur.micros())
            .and_then(|end| end.checked_add(1))
            .ok_or(ModelError::EventOverflow {
                ts,
                dur: dur.micros(),
            })?;
        Ok(TensorEvent {
            ts: Timestamp(ts),
            dur,
            device,
            op,
        })
    }

    /// Last covered tick (inclusive).
    pub fn last_tick(&self) -> u64 {
        self.ts.0 + self.dur.micros()
    }

    /// Number of covered ticks, `dur + 1`.
    pub fn tick_count(&self) -> u64 {
        self.dur.micros() + 1
    }
}

/// Events in ingestion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub events: Vec<TensorEvent>,
}

impl EventTrace {
    pub fn new(events: Vec<TensorEvent>) -> Self {
        EventTrace { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TensorEvent> {
        self.events.iter()
    }

    /// Sum of covered ticks over all events.
    pub fn flattened_ticks(&self) -> u64 {
        self.events.iter().map(TensorEvent::tick_count).sum()
    }
}

impl FromIterator<TensorEvent> for EventTrace {
    fn from_iter<I: IntoIterator<Item = TensorEvent>>(iter: I) -> Self {
        EventTrace::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub ts: Timestamp,
    pub watts: f64,
    pub fraction: f64,
}

impl PowerSample {
    pub fn new(ts: u64, watts: f64) -> Result<Self, ModelError> {
        PowerSample::with_fraction(ts, watts, 1.0)
    }

    pub fn with_fraction(ts: u64, watts: f64, fraction: f64) -> Result<Self, ModelError> {
        if !watts.is_finite() || watts < 0.0 {
            return Err(ModelError::BadPower(watts));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(ModelError::BadFraction(fraction));
        }
        Ok(PowerSample {
            ts: Timestamp(ts),
            watts,
            fraction,
        })
    }

    /// Power attributable to the monitored application.
    pub fn effective_watts(&self) -> f64 {
        self.watts * self.fraction
    }
}

/// Per-device power samples, sorted with unique timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DevicePowerTrace {
    traces: BTreeMap<DeviceId, Vec<PowerSample>>,
}

impl DevicePowerTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sorts `samples` and installs them for `device`, rejecting duplicate timestamps.
    pub fn insert(
        &mut self,
        device: DeviceId,
        mut samples: Vec<PowerSample>,
    ) -> Result<(), ModelError> {
        samples.sort_by_key(|s| s.ts);
        if let Some(w) = samples.windows(2).find(|w| w[0].ts == w[1].ts) {
            return Err(ModelError::DuplicateSample {
                device,
                ts: w[0].ts.0,
            });
        }
        if samples.is_empty() {
            self.traces.remove(&device);
        } else {
            self.traces.insert(device, samples);
        }
        Ok(())
    }

    pub fn from_samples<I>(samples: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (DeviceId, PowerSample)>,
    {
        let mut grouped: BTreeMap<DeviceId, Vec<PowerSample>> = BTreeMap::new();
        for (device, sample) in samples {
            grouped.entry(device).or_default().push(sample);
        }
        let mut trace = DevicePowerTrace::new();
        for (device, samples) in grouped {
            trace.insert(device, samples)?;
        }
        Ok(trace)
    }

    pub fn get(&self, device: &DeviceId) -> Option<&[PowerSample]> {
        self.traces.get(device).map(Vec::as_slice)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceId> {
        self.traces.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DeviceId, &[PowerSample])> {
        self.traces.iter().map(|(d, s)| (d, s.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.traces.values().map(Vec::len).sum()
    }
}
