//! Readers and writers for the on-disk formats.
//!
//! | file            | shape                                                     |
//! |-----------------|-----------------------------------------------------------|
//! | `events.jsonl`  | one `{"ts","dur","device","op"}` object per line          |
//! | `power.csv`     | header `device,ts,watts[,fraction]`                       |
//! | `tef.json`      | object mapping shorthand name to joules                   |
//! | `stpf.json`     | object mapping name to `{"watts","active_seconds"}`       |
//! | `edd.json`      | recursive `{name, kind, energy, share, children}`         |
//! | `edd.dot`       | one digraph; containment solid, dataflow dashed           |
//! | `matrix.csv`    | label row and column; empty cell for degenerate PCC       |
//! | `topology.jsonl`| one `{"parent","from","to"}` edge per line                |
//!
//! Writers are deterministic: keys are sorted and reals are printed with
//! nine significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::Footprint;
use crate::footprint::{DataflowEdge, Edd, EddNode, NodeKind, Stpf};
use crate::model::{
    DeviceId, DevicePowerTrace, EventTrace, PowerSample, Qtn, TensorEvent, RESERVED_SEGMENT,
};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Record {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}: {message}")]
    Document {
        source_name: String,
        message: String,
    },
    #[error("cannot write {value} as {format}")]
    Unsupported {
        value: &'static str,
        format: &'static str,
    },
}

impl IoError {
    fn record(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        IoError::Record {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    fn document(source_name: &str, message: impl Into<String>) -> Self {
        IoError::Document {
            source_name: source_name.to_string(),
            message: message.into(),
        }
    }

    /// Line number for record-level errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            IoError::Record { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Dot,
    Csv,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Dot => "dot",
            Format::Csv => "csv",
        }
    }
}

/// Strict readers fail on the first bad record; lenient ones skip and count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    pub lenient: bool,
}

/// A parsed value and the number of records skipped in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub skipped: usize,
}

/// Renders a real with nine significant digits, `%g` style.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (8 - exp) as usize;
    trim_fraction(&format!("{x:.decimals$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    let io = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------- events

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    ts: u64,
    dur: u64,
    device: String,
    op: String,
}

fn event_from_record(rec: EventRecord) -> Result<TensorEvent, String> {
    if rec.dur < 1 {
        return Err(format!("dur must be >= 1 µs, got {}", rec.dur));
    }
    let device: DeviceId = rec.device.parse().map_err(|e| format!("{e}"))?;
    let op = Qtn::parse(&rec.op).map_err(|e| format!("{e}"))?;
    if op.contains_segment(RESERVED_SEGMENT) {
        return Err(format!(
            "op {:?} uses the reserved segment {RESERVED_SEGMENT:?}",
            rec.op
        ));
    }
    TensorEvent::new(rec.ts, rec.dur, device, op).map_err(|e| e.to_string())
}

/// Parses newline-delimited event records.
pub fn parse_events(
    text: &str,
    source_name: &str,
    opts: ReadOptions,
) -> Result<Parsed<EventTrace>, IoError> {
    let mut events = Vec::new();
    let mut skipped = 0;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let parsed = if line.trim().is_empty() {
            Err("empty line".to_string())
        } else {
            serde_json::from_str::<EventRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(event_from_record)
        };
        match parsed {
            Ok(event) => events.push(event),
            Err(_) if opts.lenient => skipped += 1,
            Err(message) => return Err(IoError::record(source_name, lineno, message)),
        }
    }
    Ok(Parsed {
        value: EventTrace::new(events),
        skipped,
    })
}

pub fn read_events(path: &Path, opts: ReadOptions) -> Result<Parsed<EventTrace>, IoError> {
    parse_events(&read_file(path)?, &source_name(path), opts)
}

pub fn write_events(trace: &EventTrace) -> String {
    let mut out = String::new();
    for e in trace.iter() {
        let rec = EventRecord {
            ts: e.ts.0,
            dur: e.dur.micros(),
            device: e.device.label(),
            op: e.op.render(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- power

const POWER_HEADER: [&str; 3] = ["device", "ts", "watts"];

/// Parses `device,ts,watts[,fraction]` rows. Line numbers count the header as line 1.
pub fn parse_power(
    text: &str,
    source_name: &str,
    opts: ReadOptions,
) -> Result<Parsed<DevicePowerTrace>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IoError::record(source_name, 1, e.to_string()))?
        .clone();
    let header: Vec<&str> = headers.iter().collect();
    let has_fraction = match header.as_slice() {
        [d, t, w] if [*d, *t, *w] == POWER_HEADER => false,
        [d, t, w, f] if [*d, *t, *w] == POWER_HEADER && *f == "fraction" => true,
        _ => {
            return Err(IoError::record(
                source_name,
                1,
                format!(
                    "expected header \"device,ts,watts\" or \"device,ts,watts,fraction\", got {:?}",
                    header.join(",")
                ),
            ))
        }
    };
    let columns = if has_fraction { 4 } else { 3 };

    let mut grouped: BTreeMap<DeviceId, Vec<PowerSample>> = BTreeMap::new();
    let mut skipped = 0;
    for (idx, row) in reader.records().enumerate() {
        let parsed = row
            .map_err(|e| (idx + 2, e.to_string()))
            .and_then(|rec| {
                let line = rec.position().map_or(idx + 2, |p| p.line() as usize);
                parse_power_row(&rec, columns, &grouped).map_err(|m| (line, m))
            });
        match parsed {
            Ok((device, sample)) => grouped.entry(device).or_default().push(sample),
            Err(_) if opts.lenient => skipped += 1,
            Err((line, message)) => return Err(IoError::record(source_name, line, message)),
        }
    }

    let mut trace = DevicePowerTrace::new();
    for (device, samples) in grouped {
        trace
            .insert(device, samples)
            .map_err(|e| IoError::document(source_name, e.to_string()))?;
    }
    Ok(Parsed {
        value: trace,
        skipped,
    })
}

fn parse_power_row(
    rec: &csv::StringRecord,
    columns: usize,
    seen: &BTreeMap<DeviceId, Vec<PowerSample>>,
) -> Result<(DeviceId, PowerSample), String> {
    if rec.len() != columns {
        return Err(format!("expected {columns} fields, got {}", rec.len()));
    }
    let device: DeviceId = rec[0].parse().map_err(|e| format!("{e}"))?;
    let ts: u64 = rec[1]
        .parse()
        .map_err(|_| format!("ts {:?} is not a non-negative integer", &rec[1]))?;
    let watts: f64 = rec[2]
        .parse()
        .map_err(|_| format!("watts {:?} is not a number", &rec[2]))?;
    let fraction: f64 = if columns == 4 {
        rec[3]
            .parse()
            .map_err(|_| format!("fraction {:?} is not a number", &rec[3]))?
    } else {
        1.0
    };
    let sample = PowerSample::with_fraction(ts, watts, fraction).map_err(|e| e.to_string())?;
    if let Some(last) = seen.get(&device).and_then(|v| v.last()) {
        if last.ts.0 == ts {
            return Err(format!("duplicate timestamp {ts} for device {device}"));
        }
        if last.ts.0 > ts {
            return Err(format!(
                "timestamp {ts} for device {device} is not after the previous {}",
                last.ts.0
            ));
        }
    }
    Ok((device, sample))
}

pub fn read_power(path: &Path, opts: ReadOptions) -> Result<Parsed<DevicePowerTrace>, IoError> {
    parse_power(&read_file(path)?, &source_name(path), opts)
}

/// Writes the power trace grouped by device; the fraction column appears
/// only when some sample carries a fraction other than 1.
pub fn write_power(power: &DevicePowerTrace) -> String {
    let with_fraction = power
        .iter()
        .any(|(_, s)| s.iter().any(|p| p.fraction != 1.0));
    let mut out = String::from(if with_fraction {
        "device,ts,watts,fraction\n"
    } else {
        "device,ts,watts\n"
    });
    for (device, samples) in power.iter() {
        for s in samples {
            let _ = write!(out, "{device},{},{}", s.ts, fmt_real(s.watts));
            if with_fraction {
                let _ = write!(out, ",{}", fmt_real(s.fraction));
            }
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------- footprints

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

/// `{"name": joules, ...}` with sorted keys, one entry per line.
pub fn footprint_json(f: &Footprint) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in f.iter().enumerate() {
        out.push_str(if i == 0 { "\n  " } else { ",\n  " });
        let _ = write!(out, "{}: {}", json_string(&k.render()), fmt_real(v));
    }
    out.push_str(if f.is_empty() { "}\n" } else { "\n}\n" });
    out
}

/// `name,value` rows under a `name,value` header.
pub fn footprint_csv(f: &Footprint) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "value"]).expect("in-memory write");
    for (k, v) in f.iter() {
        w.write_record([k.render(), fmt_real(v)]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn write_tef(f: &Footprint, path: &Path, format: Format) -> Result<(), IoError> {
    let text = match format {
        Format::Json => footprint_json(f),
        Format::Csv => footprint_csv(f),
        Format::Dot => {
            return Err(IoError::Unsupported {
                value: "footprint",
                format: format.as_str(),
            })
        }
    };
    write_file(path, &text)
}

/// Summarized footprints share the footprint layout.
pub fn write_stef(f: &Footprint, path: &Path, format: Format) -> Result<(), IoError> {
    write_tef(f, path, format)
}

pub fn stpf_json(stpf: &Stpf) -> String {
    let mut out = String::from("{");
    for (i, (k, watts)) in stpf.power.iter().enumerate() {
        let secs = stpf.active_time.get(k).unwrap_or(0.0);
        out.push_str(if i == 0 { "\n  " } else { ",\n  " });
        let _ = write!(
            out,
            "{}: {{\"watts\": {}, \"active_seconds\": {}}}",
            json_string(&k.render()),
            fmt_real(watts),
            fmt_real(secs)
        );
    }
    out.push_str(if stpf.power.is_empty() { "}\n" } else { "\n}\n" });
    out
}

/// Parses a footprint object. Power-footprint entries contribute their `watts`.
pub fn parse_footprint(text: &str, source_name: &str) -> Result<Footprint, IoError> {
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| IoError::record(source_name, e.line(), e.to_string()))?;
    let mut out = Footprint::new();
    for (key, value) in raw {
        let name = Qtn::parse(&key)
            .map_err(|e| IoError::document(source_name, format!("key {key:?}: {e}")))?;
        let number = match &value {
            serde_json::Value::Object(obj) => obj.get("watts").and_then(|v| v.as_f64()),
            other => other.as_f64(),
        };
        match number {
            Some(v) if v.is_finite() && v >= 0.0 => {
                out.insert(name, v);
            }
            _ => {
                return Err(IoError::document(
                    source_name,
                    format!("key {key:?}: expected a non-negative number, got {value}"),
                ))
            }
        }
    }
    Ok(out)
}

pub fn read_footprint(path: &Path) -> Result<Footprint, IoError> {
    parse_footprint(&read_file(path)?, &source_name(path))
}

// ---------------------------------------------------------------- EDD

fn edd_json_node(node: &EddNode, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let _ = write!(
        out,
        "{pad}{{\"name\": {}, \"kind\": \"{}\", \"energy\": {}, \"share\": {}, \"children\": [",
        json_string(&node.name),
        node.kind.as_str(),
        fmt_real(node.energy),
        fmt_real(node.share)
    );
    if node.children.is_empty() {
        out.push(']');
    } else {
        out.push('\n');
        for (i, c) in node.children.iter().enumerate() {
            edd_json_node(c, depth + 1, out);
            out.push_str(if i + 1 < node.children.len() { ",\n" } else { "\n" });
        }
        let _ = write!(out, "{pad}]");
    }
    if !node.edges.is_empty() {
        out.push_str(", \"edges\": [");
        for (i, (from, to)) in node.edges.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "[{}, {}]", json_string(from), json_string(to));
        }
        out.push(']');
    }
    out.push('}');
}

pub fn edd_json(edd: &Edd) -> String {
    let mut out = String::new();
    edd_json_node(&edd.root, 0, &mut out);
    out.push('\n');
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Composite layers are rounded boxes, tensors ellipses.
pub fn edd_dot(edd: &Edd) -> String {
    let mut out = String::from("digraph edd {\n  node [fontname=\"Helvetica\"];\n");
    let mut next_id = 0usize;
    let mut edges = String::new();
    dot_node(&edd.root, &mut next_id, &mut out, &mut edges);
    out.push_str(&edges);
    out.push_str("}\n");
    out
}

fn dot_node(node: &EddNode, next_id: &mut usize, out: &mut String, edges: &mut String) -> usize {
    let id = *next_id;
    *next_id += 1;
    let shape = match node.kind {
        NodeKind::Composite => "shape=box, style=rounded",
        NodeKind::Tensor => "shape=ellipse",
    };
    let _ = writeln!(
        out,
        "  n{id} [label=\"{}\\n{} J\\n{}%\", {shape}];",
        dot_escape(&node.name),
        fmt_real(node.energy),
        fmt_real(node.share * 100.0)
    );
    let mut child_ids = BTreeMap::new();
    for child in &node.children {
        let cid = dot_node(child, next_id, out, edges);
        let _ = writeln!(edges, "  n{id} -> n{cid};");
        child_ids.insert(child.name.as_str(), cid);
    }
    for (from, to) in &node.edges {
        if let (Some(a), Some(b)) = (child_ids.get(from.as_str()), child_ids.get(to.as_str())) {
            let _ = writeln!(edges, "  n{a} -> n{b} [style=dashed, constraint=false];");
        }
    }
    id
}

pub fn write_edd(edd: &Edd, path: &Path, format: Format) -> Result<(), IoError> {
    let text = match format {
        Format::Json => edd_json(edd),
        Format::Dot => edd_dot(edd),
        Format::Csv => {
            return Err(IoError::Unsupported {
                value: "edd",
                format: format.as_str(),
            })
        }
    };
    write_file(path, &text)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    parent: String,
    from: String,
    to: String,
}

pub fn parse_topology(text: &str, source_name: &str) -> Result<Vec<DataflowEdge>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<EdgeRecord>(line)
                .map(|r| DataflowEdge {
                    parent: r.parent,
                    from: r.from,
                    to: r.to,
                })
                .map_err(|e| IoError::record(source_name, i + 1, e.to_string()))
        })
        .collect()
}

pub fn read_topology(path: &Path) -> Result<Vec<DataflowEdge>, IoError> {
    parse_topology(&read_file(path)?, &source_name(path))
}

// ---------------------------------------------------------------- matrices

pub fn matrix_csv(m: &SimilarityMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("").chain(m.labels.iter().map(String::as_str)).collect();
    w.write_record(&header).expect("in-memory write");
    for (label, row) in m.labels.iter().zip(&m.cells) {
        let cells = std::iter::once(label.clone())
            .chain(row.iter().map(|c| c.value.map(fmt_real).unwrap_or_default()));
        w.write_record(cells).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn matrix_json(m: &SimilarityMatrix) -> String {
    let mut out = format!(
        "{{\"metric\": \"{}\", \"labels\": {}, \"cells\": [",
        m.metric.as_str(),
        serde_json::to_string(&m.labels).expect("labels serialize")
    );
    for (i, row) in m.cells.iter().enumerate() {
        out.push_str(if i == 0 { "\n  [" } else { ",\n  [" });
        let cells: Vec<String> = row
            .iter()
            .map(|c| c.value.map(fmt_real).unwrap_or_else(|| "null".into()))
            .collect();
        out.push_str(&cells.join(", "));
        out.push(']');
    }
    out.push_str("\n]}\n");
    out
}

pub fn write_matrix(m: &SimilarityMatrix, path: &Path, format: Format) -> Result<(), IoError> {
    let text = match format {
        Format::Csv => matrix_csv(m),
        Format::Json => matrix_json(m),
        Format::Dot => {
            return Err(IoError::Unsupported {
                value: "matrix",
                format: format.as_str(),
            })
        }
    };
    write_file(path, &text)
}

/// A matrix read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTable {
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn parse_matrix_csv(text: &str, source_name: &str) -> Result<MatrixTable, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| IoError::document(source_name, "empty matrix"))?
        .map_err(|e| IoError::record(source_name, 1, e.to_string()))?;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut cells = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| IoError::record(source_name, line, e.to_string()))?;
        if row.get(0) != labels.get(i).map(String::as_str) {
            return Err(IoError::record(source_name, line, "row label does not match column label"));
        }
        let values = row
            .iter()
            .skip(1)
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| {
                        IoError::record(source_name, line, format!("bad cell {c:?}"))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        cells.push(values);
    }
    if cells.len() != labels.len() {
        return Err(IoError::document(
            source_name,
            format!("{} labels but {} rows", labels.len(), cells.len()),
        ));
    }
    Ok(MatrixTable { labels, cells })
}
