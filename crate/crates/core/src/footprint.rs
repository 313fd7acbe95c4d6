//! Views derived from raw tensor energy footprints: summarized footprints,
//! energy distribution diagrams, power footprints and top-k rankings.

use std::collections::BTreeMap;

use regex::Regex;
use thiserror::Error;

use crate::accountant::{account_devices, AccountError, AccountingOptions, Footprint};
use crate::model::{DevicePowerTrace, EventTrace, Qtn, RESERVED_SEGMENT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FootprintError {
    #[error("invalid layer pattern {pattern:?}: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("{path:?} is both a tensor and a composite layer")]
    NameCollision { path: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Account(#[from] AccountError),
}

pub const DEFAULT_LAYER_PATTERN: &str = "layer_[0-9]+";

/// Rewrites self-similar layer segments to the reserved `transformer` token.
///
/// The pattern must match a whole segment; it is anchored automatically.
#[derive(Debug, Clone)]
pub struct Summarizer {
    pattern: Regex,
    source: String,
}

impl Summarizer {
    pub fn new(pattern: &str) -> Result<Self, FootprintError> {
        let anchored = format!("^(?:{pattern})$");
        let regex = Regex::new(&anchored).map_err(|e| FootprintError::BadPattern {
            pattern: pattern.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Summarizer {
            pattern: regex,
            source: pattern.to_string(),
        })
    }

    pub fn pattern(&self) -> &str {
        &self.source
    }

    pub fn rewrite(&self, name: &Qtn) -> Qtn {
        if !name.segments().iter().any(|s| self.pattern.is_match(s)) {
            return name.clone();
        }
        let segments = name
            .segments()
            .iter()
            .map(|s| {
                if self.pattern.is_match(s) {
                    RESERVED_SEGMENT.to_string()
                } else {
                    s.clone()
                }
            })
            .collect();
        Qtn::from_segments(segments).expect("rewrite keeps segments non-empty")
    }

    /// Collapses matching layers; colliding keys sum.
    pub fn summarize(&self, tef: &Footprint) -> Footprint {
        tef.iter().map(|(k, v)| (self.rewrite(k), v)).collect()
    }
}

impl Default for Summarizer {
    fn default() -> Self {
        Summarizer::new(DEFAULT_LAYER_PATTERN).expect("default pattern compiles")
    }
}

/// Summarizes with the default `layer_<digits>` pattern.
pub fn summarize(tef: &Footprint) -> Footprint {
    Summarizer::default().summarize(tef)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Composite,
    Tensor,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Composite => "composite",
            NodeKind::Tensor => "tensor",
        }
    }
}

/// A dataflow edge between two siblings of the composite at `parent`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DataflowEdge {
    /// Slash-joined path of the enclosing composite; empty for the top level.
    pub parent: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EddNode {
    pub name: String,
    pub kind: NodeKind,
    pub energy: f64,
    /// Fraction of the parent's energy; 1 for the root.
    pub share: f64,
    /// Sorted by name.
    pub children: Vec<EddNode>,
    /// Dataflow edges among `children`, by name.
    pub edges: Vec<(String, String)>,
}

impl EddNode {
    pub fn child(&self, name: &str) -> Option<&EddNode> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(EddNode::node_count).sum::<usize>()
    }

    fn find_mut(&mut self, path: &[&str]) -> Option<&mut EddNode> {
        match path.split_first() {
            None => Some(self),
            Some((head, rest)) => self
                .children
                .iter_mut()
                .find(|c| c.name == *head)?
                .find_mut(rest),
        }
    }
}

/// Energy distribution diagram: containment tree with per-level shares.
#[derive(Debug, Clone, PartialEq)]
pub struct Edd {
    pub root: EddNode,
    /// Topology edges whose parent or endpoints were not found.
    pub unresolved_edges: usize,
}

/// Name of the synthetic root used when a footprint has several top-level nodes.
pub const PROGRAM_ROOT: &str = "program";

enum Trie {
    Tensor(f64),
    Composite(BTreeMap<String, Trie>),
}

impl Trie {
    fn into_node(self, name: String) -> EddNode {
        match self {
            Trie::Tensor(energy) => EddNode {
                name,
                kind: NodeKind::Tensor,
                energy,
                share: 0.0,
                children: Vec::new(),
                edges: Vec::new(),
            },
            Trie::Composite(map) => {
                let mut children: Vec<EddNode> =
                    map.into_iter().map(|(n, t)| t.into_node(n)).collect();
                let energy: f64 = children.iter().map(|c| c.energy).sum();
                for c in &mut children {
                    c.share = if energy > 0.0 { c.energy / energy } else { 0.0 };
                }
                EddNode {
                    name,
                    kind: NodeKind::Composite,
                    energy,
                    share: 0.0,
                    children,
                    edges: Vec::new(),
                }
            }
        }
    }
}

/// Rebuilds the hierarchical diagram of a footprint.
///
/// When every key shares one top-level composite, that composite is the
/// root; otherwise a synthetic [`PROGRAM_ROOT`] node holds the top level.
pub fn to_edd(tef: &Footprint, topology: Option<&[DataflowEdge]>) -> Result<Edd, FootprintError> {
    let mut top: BTreeMap<String, Trie> = BTreeMap::new();
    for (key, energy) in tef.iter() {
        let mut level = &mut top;
        let mut walked: Vec<&str> = Vec::new();
        for seg in key.path() {
            walked.push(seg);
            let slot = level
                .entry(seg.clone())
                .or_insert_with(|| Trie::Composite(BTreeMap::new()));
            level = match slot {
                Trie::Composite(map) => map,
                Trie::Tensor(_) => {
                    return Err(FootprintError::NameCollision {
                        path: walked.join("/"),
                    })
                }
            };
        }
        match level.get(key.tensor()) {
            Some(Trie::Composite(_)) => {
                return Err(FootprintError::NameCollision { path: key.render() })
            }
            _ => {
                level.insert(key.tensor().to_string(), Trie::Tensor(energy));
            }
        }
    }

    let mut root = Trie::Composite(top).into_node(PROGRAM_ROOT.to_string());
    let mut unresolved = 0;
    for edge in topology.unwrap_or_default() {
        let path: Vec<&str> = edge.parent.split('/').filter(|s| !s.is_empty()).collect();
        match root.find_mut(&path) {
            Some(node)
                if node.child(&edge.from).is_some() && node.child(&edge.to).is_some() =>
            {
                node.edges.push((edge.from.clone(), edge.to.clone()));
            }
            _ => unresolved += 1,
        }
    }

    let single_composite =
        root.children.len() == 1 && root.children[0].kind == NodeKind::Composite;
    let mut root = if single_composite {
        root.children.pop().expect("one child")
    } else {
        root
    };
    root.share = 1.0;
    Ok(Edd {
        root,
        unresolved_edges: unresolved,
    })
}

/// Summarized power footprint with the energy and active time it derives from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stpf {
    /// Watts per key: energy over active time.
    pub power: Footprint,
    /// Seconds per key, one tick per active occurrence.
    pub active_time: Footprint,
    /// Joules per key (the matching summarized energy footprint).
    pub energy: Footprint,
}

impl Stpf {
    /// Builds the power view from matching energy and active-time maps.
    pub fn from_parts(energy: Footprint, active_time: Footprint) -> Stpf {
        let mut out = Stpf::default();
        for (k, secs) in active_time.iter() {
            if secs <= 0.0 {
                continue;
            }
            let joules = energy.get(k).unwrap_or(0.0);
            out.power.insert(k.clone(), joules / secs);
            out.active_time.insert(k.clone(), secs);
            out.energy.insert(k.clone(), joules);
        }
        out
    }
}

/// Time-weighted mean power per summarized key.
pub fn compute_stpf(
    trace: &EventTrace,
    power: &DevicePowerTrace,
    opts: AccountingOptions,
    summarizer: &Summarizer,
) -> Result<Stpf, FootprintError> {
    let (accounts, _) = account_devices(trace, power, opts)?;
    let mut energy = Footprint::new();
    let mut active = Footprint::new();
    for account in accounts.values() {
        energy.merge(&account.energy);
        active.merge(&account.active_time);
    }
    Ok(Stpf::from_parts(
        summarizer.summarize(&energy),
        summarizer.summarize(&active),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopEntry {
    pub key: Qtn,
    pub value: f64,
    /// Sample standard deviation across runs; 0 for a single run.
    pub dispersion: f64,
}

/// Highest-valued keys of a single footprint.
pub fn top_k(f: &Footprint, k: usize) -> Result<Vec<TopEntry>, FootprintError> {
    top_k_runs(std::slice::from_ref(f), k)
}

/// Highest mean values across runs (missing keys count as 0), ties by key.
pub fn top_k_runs(runs: &[Footprint], k: usize) -> Result<Vec<TopEntry>, FootprintError> {
    if k == 0 {
        return Err(FootprintError::ZeroK);
    }
    let mut keys: Vec<&Qtn> = runs.iter().flat_map(|r| r.keys()).collect();
    keys.sort();
    keys.dedup();
    let n = runs.len() as f64;
    let mut entries: Vec<TopEntry> = keys
        .into_iter()
        .map(|key| {
            let values: Vec<f64> = runs.iter().map(|r| r.get(key).unwrap_or(0.0)).collect();
            let mean = values.iter().sum::<f64>() / n;
            let dispersion = if runs.len() > 1 {
                let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            TopEntry {
                key: key.clone(),
                value: mean,
                dispersion,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.key.cmp(&b.key)));
    entries.truncate(k);
    Ok(entries)
}
