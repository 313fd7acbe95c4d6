//! Trace-based alignment of tensor events with power samples.
//!
//! Two implementations live here. [`gen_footprint_naive`] flattens every
//! event into per-tick op multisets and splits each tick's energy equally
//! among the occurrences active at that tick, exactly as the reference
//! formulation does. It is kept as an oracle for small inputs.
//! [`gen_footprint_optimized`] produces the same footprint with a sweep over
//! event and sample boundaries, so its cost depends on the number of events
//! and samples rather than on event durations.
//!
//! Conventions shared by both paths:
//!
//! - an event starting at `ts` with duration `dur` covers ticks `ts ..= ts + dur`;
//! - a tick uses the latest sample at or before it; ticks before the first
//!   sample use the first sample and are counted as pre-sample ticks;
//! - concurrent identical ops are counted with multiplicity;
//! - ticks with no active op accrue nothing;
//! - devices without power samples contribute zero and are reported.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::model::{DeviceId, DevicePowerTrace, Duration, EventTrace, PowerSample, Qtn, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountError {
    #[error("no power samples to align against")]
    EmptySamples,
    #[error("cannot split tick energy among zero operations")]
    EmptyOps,
    #[error("none of the {0} device(s) in the event trace has a power trace")]
    NoCoveredDevice(usize),
    #[error("flattened trace would hold {ticks} ticks, above the limit of {limit}")]
    TooManyTicks { ticks: u64, limit: u64 },
    #[error("session window start {start} is after its end {end}")]
    BadWindow { start: u64, end: u64 },
}

/// Map from name to a non-negative quantity (joules for energy footprints).
///
/// Iteration order is the lexicographic order of the rendered names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Footprint(BTreeMap<Qtn, f64>);

impl Footprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &Qtn) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn insert(&mut self, key: Qtn, value: f64) -> Option<f64> {
        self.0.insert(key, value)
    }

    /// Adds `value` to the entry for `key`, creating it if needed.
    pub fn add(&mut self, key: Qtn, value: f64) {
        *self.0.entry(key).or_insert(0.0) += value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Qtn, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &Qtn> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn contains_key(&self, key: &Qtn) -> bool {
        self.0.contains_key(key)
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Footprint {
        self.iter().map(|(k, v)| (k.clone(), v * factor)).collect()
    }

    pub fn as_map(&self) -> &BTreeMap<Qtn, f64> {
        &self.0
    }

    pub fn into_map(self) -> BTreeMap<Qtn, f64> {
        self.0
    }

    /// Adds every entry of `other` into `self`.
    pub fn merge(&mut self, other: &Footprint) {
        for (k, v) in other.iter() {
            self.add(k.clone(), v);
        }
    }
}

impl FromIterator<(Qtn, f64)> for Footprint {
    fn from_iter<I: IntoIterator<Item = (Qtn, f64)>>(iter: I) -> Self {
        let mut f = Footprint::new();
        for (k, v) in iter {
            f.add(k, v);
        }
        f
    }
}

impl From<BTreeMap<Qtn, f64>> for Footprint {
    fn from(map: BTreeMap<Qtn, f64>) -> Self {
        Footprint(map)
    }
}

/// Multiset of ops active at one tick (name to occurrence count).
pub type OpMultiset = BTreeMap<Qtn, u32>;

/// Per device, per tick, the multiset of active ops.
pub type DeviceFlatTrace = BTreeMap<DeviceId, BTreeMap<u64, OpMultiset>>;

/// Per tick energy attribution, summed across devices.
pub type TickFootprint = BTreeMap<u64, Footprint>;

/// Inclusive accounting window in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl SessionWindow {
    pub fn new(start: u64, end: u64) -> Result<Self, AccountError> {
        if start > end {
            return Err(AccountError::BadWindow { start, end });
        }
        Ok(SessionWindow {
            start: Timestamp(start),
            end: Timestamp(end),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccountingOptions {
    /// Length of one tick; trace timestamps count ticks.
    pub tick_len: Duration,
    pub window: Option<SessionWindow>,
}

impl AccountingOptions {
    pub fn with_tick_len(tick_len: Duration) -> Self {
        AccountingOptions {
            tick_len,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccountingDiagnostics {
    /// Active ticks aligned to the earliest sample because none precedes them.
    pub pre_sample_ticks: u64,
    /// Active ticks on devices that have no power trace.
    pub uncovered_ticks: u64,
    /// Events shortened or dropped by the session window.
    pub clipped_events: u64,
    pub uncovered_devices: BTreeSet<DeviceId>,
}

impl AccountingDiagnostics {
    fn absorb(&mut self, other: AccountingDiagnostics) {
        self.pre_sample_ticks += other.pre_sample_ticks;
        self.uncovered_ticks += other.uncovered_ticks;
        self.clipped_events += other.clipped_events;
        self.uncovered_devices.extend(other.uncovered_devices);
    }
}

/// Result of aligning a tick with the sample timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub ts: Timestamp,
    /// The tick precedes every sample and was clamped to the earliest one.
    pub pre_sample: bool,
}

/// Largest sample timestamp `<= t`, clamped to the earliest sample when none qualifies.
pub fn now(t: Timestamp, samples: &[Timestamp]) -> Result<Alignment, AccountError> {
    let first = *samples.first().ok_or(AccountError::EmptySamples)?;
    let idx = samples.partition_point(|&s| s <= t);
    Ok(if idx == 0 {
        Alignment {
            ts: first,
            pre_sample: true,
        }
    } else {
        Alignment {
            ts: samples[idx - 1],
            pre_sample: false,
        }
    })
}

fn aligned_sample(t: u64, samples: &[PowerSample]) -> (&PowerSample, bool) {
    let idx = samples.partition_point(|s| s.ts.0 <= t);
    if idx == 0 {
        (&samples[0], true)
    } else {
        (&samples[idx - 1], false)
    }
}

/// Tick range `[first, last]` of an event after applying the window.
fn clipped_range(
    first: u64,
    last: u64,
    window: Option<SessionWindow>,
) -> (Option<(u64, u64)>, bool) {
    match window {
        None => (Some((first, last)), false),
        Some(w) => {
            let lo = first.max(w.start.0);
            let hi = last.min(w.end.0);
            let clipped = lo != first || hi != last;
            if lo > hi {
                (None, true)
            } else {
                (Some((lo, hi)), clipped)
            }
        }
    }
}

/// Expands each event into its covered ticks.
pub fn flatten(trace: &EventTrace) -> DeviceFlatTrace {
    flatten_within(trace, None).0
}

fn flatten_within(trace: &EventTrace, window: Option<SessionWindow>) -> (DeviceFlatTrace, u64) {
    let mut flat = DeviceFlatTrace::new();
    let mut clipped_events = 0;
    for event in trace.iter() {
        let (range, clipped) = clipped_range(event.ts.0, event.last_tick(), window);
        clipped_events += u64::from(clipped);
        let Some((lo, hi)) = range else { continue };
        let ticks = flat.entry(event.device).or_default();
        for tick in lo..=hi {
            *ticks
                .entry(tick)
                .or_default()
                .entry(event.op.clone())
                .or_insert(0) += 1;
        }
    }
    (flat, clipped_events)
}

/// Splits one tick's energy equally among the op occurrences in `ops`.
pub fn build_tick_footprint(
    ops: &OpMultiset,
    watts: f64,
    tick_len: Duration,
) -> Result<Footprint, AccountError> {
    let occurrences: u64 = ops.values().map(|&c| u64::from(c)).sum();
    if occurrences == 0 {
        return Err(AccountError::EmptyOps);
    }
    let share = watts * tick_len.as_secs_f64() / occurrences as f64;
    Ok(ops
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(op, &c)| (op.clone(), share * f64::from(c)))
        .collect())
}

/// Reference accountant: flatten, align every tick, split equally.
///
/// Memory and time grow with the total number of covered ticks; see
/// [`ensure_flattenable`] for a guard.
pub fn gen_footprint_naive(
    trace: &EventTrace,
    power: &DevicePowerTrace,
    opts: AccountingOptions,
) -> Result<(TickFootprint, AccountingDiagnostics), AccountError> {
    let (per_device, diag) = gen_footprint_naive_by_device(trace, power, opts)?;
    let mut ticks = TickFootprint::new();
    for device_ticks in per_device.values() {
        for (&tick, tf) in device_ticks {
            ticks.entry(tick).or_default().merge(tf);
        }
    }
    Ok((ticks, diag))
}

/// Reference accountant keeping each device's tick footprint separate.
pub fn gen_footprint_naive_by_device(
    trace: &EventTrace,
    power: &DevicePowerTrace,
    opts: AccountingOptions,
) -> Result<(BTreeMap<DeviceId, TickFootprint>, AccountingDiagnostics), AccountError> {
    check_coverage(trace, power)?;
    let (flat, clipped_events) = flatten_within(trace, opts.window);
    let mut diag = AccountingDiagnostics {
        clipped_events,
        ..Default::default()
    };
    let mut out = BTreeMap::new();
    for (device, per_tick) in &flat {
        let Some(samples) = power.get(device) else {
            diag.uncovered_ticks += per_tick.len() as u64;
            diag.uncovered_devices.insert(*device);
            continue;
        };
        let mut ticks = TickFootprint::new();
        for (&tick, ops) in per_tick {
            let (sample, pre) = aligned_sample(tick, samples);
            diag.pre_sample_ticks += u64::from(pre);
            let tf = build_tick_footprint(ops, sample.effective_watts(), opts.tick_len)?;
            ticks.insert(tick, tf);
        }
        out.insert(*device, ticks);
    }
    Ok((out, diag))
}

/// Sums per-tick attributions into a footprint.
pub fn aggregate(ticks: &TickFootprint) -> Footprint {
    let mut out = Footprint::new();
    for tf in ticks.values() {
        out.merge(tf);
    }
    out
}

/// Fails when flattening `trace` would exceed `limit` ticks.
pub fn ensure_flattenable(trace: &EventTrace, limit: u64) -> Result<(), AccountError> {
    let ticks = trace.flattened_ticks();
    if ticks > limit {
        return Err(AccountError::TooManyTicks { ticks, limit });
    }
    Ok(())
}

fn check_coverage(trace: &EventTrace, power: &DevicePowerTrace) -> Result<(), AccountError> {
    let devices: BTreeSet<DeviceId> = trace.iter().map(|e| e.device).collect();
    if !devices.is_empty() && !devices.iter().any(|d| power.get(d).is_some()) {
        return Err(AccountError::NoCoveredDevice(devices.len()));
    }
    Ok(())
}

/// Energy and occurrence time attributed on one device.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceAccount {
    /// Joules per op.
    pub energy: Footprint,
    /// Seconds per op, one tick per active occurrence.
    pub active_time: Footprint,
}

/// Event boundaries on one device, ops interned by first appearance.
#[derive(Default)]
struct DeviceBounds {
    names: Vec<Qtn>,
    index: HashMap<Qtn, usize>,
    /// `(tick, +1 | -1, op id)`; an event ending at `hi` closes at `hi + 1`.
    points: Vec<(u64, i64, usize)>,
}

/// Sweep-line accountant, returning attributions for each device that has power.
pub fn account_devices(
    trace: &EventTrace,
    power: &DevicePowerTrace,
    opts: AccountingOptions,
) -> Result<(BTreeMap<DeviceId, DeviceAccount>, AccountingDiagnostics), AccountError> {
    check_coverage(trace, power)?;

    let mut bounds: BTreeMap<DeviceId, DeviceBounds> = BTreeMap::new();
    let mut diag = AccountingDiagnostics::default();
    for event in trace.iter() {
        let (range, clipped) = clipped_range(event.ts.0, event.last_tick(), opts.window);
        diag.clipped_events += u64::from(clipped);
        let Some((lo, hi)) = range else { continue };
        let b = bounds.entry(event.device).or_default();
        let id = *b.index.entry(event.op.clone()).or_insert_with(|| {
            b.names.push(event.op.clone());
            b.names.len() - 1
        });
        b.points.push((lo, 1, id));
        b.points.push((hi + 1, -1, id));
    }

    let mut accounts = BTreeMap::new();
    for (device, b) in bounds {
        let (account, device_diag) =
            sweep_device(&b.names, b.points, power.get(&device), opts.tick_len);
        let mut device_diag = device_diag;
        if power.get(&device).is_some() {
            accounts.insert(device, account);
        } else {
            device_diag.uncovered_devices.insert(device);
        }
        diag.absorb(device_diag);
    }
    Ok((accounts, diag))
}

fn sweep_device(
    names: &[Qtn],
    mut points: Vec<(u64, i64, usize)>,
    samples: Option<&[PowerSample]>,
    tick_len: Duration,
) -> (DeviceAccount, AccountingDiagnostics) {
    let mut diag = AccountingDiagnostics::default();
    points.sort_unstable();

    let mut cuts: Vec<u64> = points.iter().map(|p| p.0).collect();
    if let Some(samples) = samples {
        cuts.extend(samples.iter().map(|s| s.ts.0));
    }
    cuts.sort_unstable();
    cuts.dedup();

    let tick_secs = tick_len.as_secs_f64();
    let mut counts = vec![0i64; names.len()];
    let mut active: BTreeSet<usize> = BTreeSet::new();
    let mut total: i64 = 0;
    let mut energy = vec![0.0f64; names.len()];
    let mut occupancy = vec![0.0f64; names.len()];
    let mut next_point = 0;

    for pair in cuts.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        while next_point < points.len() && points[next_point].0 == start {
            let (_, delta, id) = points[next_point];
            counts[id] += delta;
            total += delta;
            if counts[id] == 0 {
                active.remove(&id);
            } else {
                active.insert(id);
            }
            next_point += 1;
        }
        if total == 0 {
            continue;
        }
        let len = end - start;
        let Some(samples) = samples else {
            diag.uncovered_ticks += len;
            continue;
        };
        // samples only change at cut points, so `start` aligns the whole interval
        let (sample, pre) = aligned_sample(start, samples);
        if pre {
            diag.pre_sample_ticks += len;
        }
        let span = len as f64 * tick_secs;
        let interval_energy = sample.effective_watts() * span;
        for &id in &active {
            let c = counts[id] as f64;
            energy[id] += c * interval_energy / total as f64;
            occupancy[id] += c * span;
        }
    }

    let mut account = DeviceAccount::default();
    if samples.is_some() {
        for (id, name) in names.iter().enumerate() {
            account.energy.add(name.clone(), energy[id]);
            account.active_time.add(name.clone(), occupancy[id]);
        }
    }
    (account, diag)
}

/// Sweep-line accountant. Equivalent to `aggregate(gen_footprint_naive(..))`.
pub fn gen_footprint_optimized(
    trace: &EventTrace,
    power: &DevicePowerTrace,
    opts: AccountingOptions,
) -> Result<(Footprint, AccountingDiagnostics), AccountError> {
    let (accounts, diag) = account_devices(trace, power, opts)?;
    let mut tef = Footprint::new();
    for account in accounts.values() {
        tef.merge(&account.energy);
    }
    Ok((tef, diag))
}

/// Splits a footprint into forward and backward parts by first path segment.
pub fn split_passes(tef: &Footprint, backward_prefix: &str) -> (Footprint, Footprint) {
    let mut forward = Footprint::new();
    let mut backward = Footprint::new();
    for (k, v) in tef.iter() {
        let is_backward = k.path().first().is_some_and(|s| s == backward_prefix);
        if is_backward {
            backward.insert(k.clone(), v);
        } else {
            forward.insert(k.clone(), v);
        }
    }
    (forward, backward)
}
