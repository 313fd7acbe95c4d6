//! Acceptance suite. Each test checks one criterion, times it against its
//! budget and writes a single `PASS`/`FAIL` line straight to stderr so the
//! summary survives output capture.

mod common;

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration as WallTime, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_energy::accountant::{gen_footprint_optimized, AccountingOptions, Footprint};
use tensor_energy::footprint::{summarize, to_edd, top_k, EddNode, NodeKind, Summarizer};
use tensor_energy::io::{self, ReadOptions};
use tensor_energy::model::{Duration, Qtn};
use tensor_energy::similarity::{asss, assw, med, med_matrix, pcc, stability_matrix};

use common::*;

fn criterion(name: &str, budget: WallTime, check: impl FnOnce() -> Result<String, String>) {
    let start = Instant::now();
    let outcome = check();
    let elapsed = start.elapsed();
    let verdict = match &outcome {
        Ok(_) if elapsed > budget => Err(format!("took {elapsed:.2?}, budget {budget:?}")),
        Ok(detail) => Ok(detail.clone()),
        Err(e) => Err(e.clone()),
    };
    let line = match &verdict {
        Ok(detail) => format!("acceptance PASS {name}: {detail} [{elapsed:.2?} / {budget:?}]\n"),
        Err(e) => format!("acceptance FAIL {name}: {e} [{elapsed:.2?} / {budget:?}]\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(e) = verdict {
        panic!("{name}: {e}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

#[test]
fn fig7_pcc() {
    criterion("fig7-pcc", WallTime::from_secs(1), || {
        let a = io::read_footprint(&fixture("fig7_a.json")).map_err(|e| e.to_string())?;
        let b = io::read_footprint(&fixture("fig7_b.json")).map_err(|e| e.to_string())?;
        ensure(a.len() == 9 && b.len() == 9, || "fixture must have nine keys".into())?;
        let r = pcc(&a, &b).map_err(|e| e.to_string())?;
        let v = r.value.ok_or("degenerate")?;
        ensure((v - 0.9958).abs() <= 1e-4, || format!("pcc {v} not within 0.9958 ± 0.0001"))?;
        Ok(format!("pcc = {v:.6}"))
    });
}

#[test]
fn summarize_fixture() {
    criterion("summarize-two-layers", WallTime::from_secs(1), || {
        let tef = io::read_footprint(&fixture("summarize_pair.json")).map_err(|e| e.to_string())?;
        let stef = summarize(&tef);
        let key = Qtn::parse("bert/encoder/transformer/output/dense/MatMul").unwrap();
        ensure(stef.len() == 1, || format!("expected one entry, got {}", stef.len()))?;
        ensure(stef.get(&key) == Some(8.0), || format!("got {stef:?}"))?;
        Ok("5 + 3 -> 8 under transformer".into())
    });
}

#[test]
fn oracle_equivalence_and_conservation() {
    const INSTANCES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut instances = Vec::with_capacity(INSTANCES);
    let mut conservation_gap = 0.0f64;
    let mut conservation_failure = None;

    criterion("oracle-equivalence", WallTime::from_secs(60), || {
        let mut worst = 0.0f64;
        let mut ticks = 0u64;
        for i in 0..INSTANCES {
            let (spec, out) = random_instance(&mut rng);
            ticks += out.events.flattened_ticks();
            let (tef, _) = gen_footprint_optimized(&out.events, &out.power, AccountingOptions::default())
                .map_err(|e| format!("instance {i} (seed {}): {e}", spec.seed))?;
            let keys_a: Vec<&Qtn> = tef.keys().collect();
            let keys_b: Vec<&Qtn> = out.expected.keys().collect();
            ensure(keys_a == keys_b, || format!("instance {i} (seed {}): key sets differ", spec.seed))?;
            for (k, v) in tef.iter() {
                let expected = out.expected.get(k).unwrap();
                if !rel_close(v, expected, 1e-9) {
                    return Err(format!("instance {i} (seed {}): {k} {v} vs {expected}", spec.seed));
                }
                if expected != 0.0 {
                    worst = worst.max((v - expected).abs() / expected.abs());
                }
            }
            instances.push((tef, out));
        }
        Ok(format!("{INSTANCES} instances, {ticks} flattened ticks, worst rel error {worst:.1e}"))
    });

    criterion("conservation", WallTime::from_secs(60), || {
        for (i, (tef, out)) in instances.iter().enumerate() {
            let expected = brute_force_active_energy(&out.events, &out.power, Duration::MICROSECOND);
            let total = tef.total();
            if !rel_close(total, expected, 1e-9) {
                conservation_failure = Some(format!("instance {i}: {total} J vs {expected} J"));
                break;
            }
            if expected != 0.0 {
                conservation_gap = conservation_gap.max((total - expected).abs() / expected);
            }
        }
        match conservation_failure.take() {
            Some(e) => Err(e),
            None => Ok(format!("{} instances, worst rel gap {conservation_gap:.1e}", instances.len())),
        }
    });
}

#[test]
fn similarity_properties() {
    const CASES: usize = 200;
    criterion("similarity-properties", WallTime::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
        for i in 0..CASES {
            let a = random_varied_footprint(&mut rng, 2);
            let b = random_varied_footprint(&mut rng, 2);

            let ab = pcc(&a, &b).map_err(|e| e.to_string())?.value;
            let ba = pcc(&b, &a).map_err(|e| e.to_string())?.value;
            ensure(ab == ba, || format!("case {i}: pcc not symmetric: {ab:?} vs {ba:?}"))?;

            let c: f64 = rng.gen_range(1e-3..1e3);
            let scaled = pcc(&a.scaled(c), &b).map_err(|e| e.to_string())?.value;
            let (x, y) = (ab.unwrap(), scaled.unwrap());
            ensure((x - y).abs() <= 1e-9, || format!("case {i}: scaling by {c} moved pcc {x} -> {y}"))?;

            let mab = med(&a, &b).value.unwrap();
            let mba = med(&b, &a).value.unwrap();
            ensure((mab + mba).abs() <= 1e-9 * mab.abs().max(1.0), || {
                format!("case {i}: med not antisymmetric: {mab} vs {mba}")
            })?;

            let runs = rng.gen_range(1..=6);
            let same = vec![a.clone(); runs];
            for (n, r) in assw(&same, &a).map_err(|e| e.to_string())? {
                let v = r.value.unwrap();
                ensure((v - 1.0).abs() <= 1e-12, || format!("case {i}: assw({n}) = {v}"))?;
            }
        }

        let mut accepted = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
        while accepted < CASES {
            let (spec, out) = random_instance(&mut rng);
            let (tef, _) = gen_footprint_optimized(&out.events, &out.power, AccountingOptions::default())
                .map_err(|e| e.to_string())?;
            let stef = summarize(&tef);
            let first = stef.iter().next().map(|(_, v)| v);
            if stef.len() < 2 || stef.iter().all(|(_, v)| Some(v) == first) {
                continue;
            }
            let base = Duration::from_micros(spec.sampling_period).unwrap();
            let curve = asss(
                &out.events,
                &out.power,
                &[base],
                base,
                AccountingOptions::default(),
                &Summarizer::default(),
            )
            .map_err(|e| e.to_string())?;
            ensure(curve.len() == 1 && curve[0].1.value == Some(1.0), || {
                format!("seed {}: asss(base) = {:?}", spec.seed, curve)
            })?;
            accepted += 1;
        }
        Ok(format!(
            "{CASES} cases each: pcc symmetry, pcc scaling, med antisymmetry, assw identical = 1, asss(base) = 1"
        ))
    });
}

fn check_edd(node: &EddNode, path: &str) -> Result<(), String> {
    if node.kind == NodeKind::Tensor {
        return ensure(node.children.is_empty(), || format!("{path}: tensor with children"));
    }
    let sum: f64 = node.children.iter().map(|c| c.energy).sum();
    ensure(rel_close(sum, node.energy, 1e-9) || (sum == 0.0 && node.energy == 0.0), || {
        format!("{path}: children sum {sum} vs {}", node.energy)
    })?;
    let shares: f64 = node.children.iter().map(|c| c.share).sum();
    if node.energy > 0.0 {
        ensure((shares - 1.0).abs() <= 1e-9, || format!("{path}: shares sum to {shares}"))?;
    }
    for c in &node.children {
        check_edd(c, &format!("{path}/{}", c.name))?;
    }
    Ok(())
}

fn tied_footprint(rng: &mut impl Rng) -> Footprint {
    let mut keys = KEY_POOL.to_vec();
    keys.shuffle(rng);
    let n = rng.gen_range(1..=keys.len());
    keys.into_iter()
        .take(n)
        .map(|k| (Qtn::parse(k).unwrap(), f64::from(rng.gen_range(0..4u8))))
        .collect()
}

#[test]
fn structural_properties() {
    const CASES: usize = 200;
    criterion("structural-properties", WallTime::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
        for i in 0..CASES {
            let (_, out) = random_instance(&mut rng);
            let tef = if i % 2 == 0 { out.expected } else { random_footprint(&mut rng, 1) };

            let stef = summarize(&tef);
            ensure(summarize(&stef) == stef, || format!("case {i}: summarize not idempotent"))?;
            ensure(rel_close(stef.total(), tef.total(), 1e-12) || tef.total() == 0.0, || {
                format!("case {i}: mass {} -> {}", tef.total(), stef.total())
            })?;

            let edd = to_edd(&tef, None).map_err(|e| format!("case {i}: {e}"))?;
            ensure(rel_close(edd.root.energy, tef.total(), 1e-9) || tef.total() == 0.0, || {
                format!("case {i}: root {} vs total {}", edd.root.energy, tef.total())
            })?;
            check_edd(&edd.root, &edd.root.name).map_err(|e| format!("case {i}: {e}"))?;

            let tied = tied_footprint(&mut rng);
            let mut entries: Vec<(Qtn, f64)> = tied.iter().map(|(k, v)| (k.clone(), v)).collect();
            entries.shuffle(&mut rng);
            let reordered: Footprint = entries.into_iter().collect();
            let k = rng.gen_range(1..=tied.len() + 2);
            let top = top_k(&tied, k).map_err(|e| e.to_string())?;
            ensure(top == top_k(&reordered, k).map_err(|e| e.to_string())?, || {
                format!("case {i}: top_k depends on insertion order")
            })?;
            ensure(top.len() == k.min(tied.len()), || format!("case {i}: wrong length"))?;
            for w in top.windows(2) {
                let ordered = w[0].value > w[1].value || (w[0].value == w[1].value && w[0].key < w[1].key);
                ensure(ordered, || format!("case {i}: {} before {}", w[0].key, w[1].key))?;
            }
        }
        Ok(format!(
            "{CASES} cases each: summarize idempotence + mass, EDD subtree sums + share sums, top_k order"
        ))
    });
}

/// Malformed inputs with the line the strict reader must report (`None`
/// for whole-document errors) and a fragment of the expected message.
const MALFORMED: [(&str, Option<usize>, &str); 20] = [
    ("ev_bad_json.jsonl", Some(2), "EOF"),
    ("ev_dur_zero.jsonl", Some(1), "dur must be >= 1"),
    ("ev_unknown_field.jsonl", Some(3), "unknown field `pid`"),
    ("ev_missing_field.jsonl", Some(2), "missing field `op`"),
    ("ev_reserved_segment.jsonl", Some(2), "reserved segment"),
    ("ev_empty_segment.jsonl", Some(1), "segment 2 is empty"),
    ("ev_bad_device.jsonl", Some(2), "invalid device label \"tpu:0\""),
    ("ev_negative_ts.jsonl", Some(1), "invalid value"),
    ("ev_blank_line.jsonl", Some(2), "empty line"),
    ("ev_string_ts.jsonl", Some(4), "invalid type"),
    ("ev_overflow.jsonl", Some(1), "overflows"),
    ("pw_bad_header.csv", Some(1), "expected header"),
    ("pw_duplicate.csv", Some(3), "duplicate timestamp 0"),
    ("pw_non_monotone.csv", Some(4), "not after the previous 8"),
    ("pw_negative_watts.csv", Some(2), "non-negative"),
    ("pw_bad_fraction.csv", Some(3), "fraction must lie in [0, 1]"),
    ("pw_field_count.csv", Some(2), "expected 3 fields, got 4"),
    ("pw_bad_ts.csv", Some(2), "ts \"ten\""),
    ("pw_bad_device.csv", Some(4), "npu:0"),
    ("fp_syntax.json", Some(3), "key must be a string"),
];

fn read_malformed(name: &str) -> Result<(), io::IoError> {
    let path = fixture(&format!("malformed/{name}"));
    let strict = ReadOptions::default();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => io::read_events(&path, strict).map(drop),
        Some("csv") => io::read_power(&path, strict).map(drop),
        _ => io::read_footprint(&path).map(drop),
    }
}

type Writer<'a> = (&'static str, Box<dyn Fn() -> String + 'a>);

fn check_formats() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut checked = 0;
    for i in 0..50 {
        let (_, out) = random_instance(&mut rng);
        let stef = summarize(&out.expected);

        // Determinism: equal values, including ones rebuilt in another
        // insertion order, serialize to identical bytes.
        let mut entries: Vec<(Qtn, f64)> = out.expected.iter().map(|(k, v)| (k.clone(), v)).collect();
        entries.reverse();
        let rebuilt: Footprint = entries.into_iter().collect();
        ensure(io::footprint_json(&rebuilt) == io::footprint_json(&out.expected), || {
            format!("case {i}: footprint json depends on insertion order")
        })?;
        let edd = to_edd(&out.expected, None).map_err(|e| e.to_string())?;
        let mut labeled = vec![
            ("a".to_string(), random_varied_footprint(&mut rng, 2)),
            ("b".to_string(), random_varied_footprint(&mut rng, 2)),
        ];
        if stef.len() >= 2 {
            labeled.push(("c".to_string(), stef.clone()));
        }
        let writers: [Writer; 8] = [
            ("events", Box::new(|| io::write_events(&out.events))),
            ("power", Box::new(|| io::write_power(&out.power))),
            ("tef json", Box::new(|| io::footprint_json(&out.expected))),
            ("tef csv", Box::new(|| io::footprint_csv(&out.expected))),
            ("edd json", Box::new(|| io::edd_json(&edd))),
            ("edd dot", Box::new(|| io::edd_dot(&edd))),
            ("pcc matrix", Box::new(|| io::matrix_csv(&stability_matrix(&labeled).unwrap()))),
            ("med matrix", Box::new(|| io::matrix_json(&med_matrix(&labeled).unwrap()))),
        ];
        for (name, write) in &writers {
            ensure(write() == write(), || format!("case {i}: {name} writer not deterministic"))?;
        }

        // Round trips.
        let events_text = io::write_events(&out.events);
        let events = io::parse_events(&events_text, "events", ReadOptions::default())
            .map_err(|e| e.to_string())?
            .value;
        ensure(events == out.events, || format!("case {i}: events round trip"))?;

        let power_text = io::write_power(&out.power);
        let power = io::parse_power(&power_text, "power", ReadOptions::default())
            .map_err(|e| e.to_string())?
            .value;
        ensure(io::write_power(&power) == power_text, || format!("case {i}: power round trip"))?;
        ensure(power.sample_count() == out.power.sample_count(), || format!("case {i}: samples lost"))?;

        let tef_text = io::footprint_json(&out.expected);
        let tef = io::parse_footprint(&tef_text, "tef").map_err(|e| e.to_string())?;
        ensure(io::footprint_json(&tef) == tef_text, || format!("case {i}: tef round trip"))?;
        for (k, v) in out.expected.iter() {
            ensure(rel_close(tef.get(k).unwrap(), v, 1e-8) || v == 0.0, || format!("case {i}: {k} drifted"))?;
        }

        let matrix = stability_matrix(&labeled).map_err(|e| e.to_string())?;
        let table = io::parse_matrix_csv(&io::matrix_csv(&matrix), "matrix").map_err(|e| e.to_string())?;
        ensure(table.labels == matrix.labels, || format!("case {i}: matrix labels"))?;
        for (r, row) in table.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                let same = match (cell, matrix.value(r, c)) {
                    (Some(x), Some(y)) => rel_close(*x, y, 1e-8),
                    (None, None) => true,
                    _ => false,
                };
                ensure(same, || format!("case {i}: matrix cell ({r}, {c})"))?;
            }
        }
        checked += 1;
    }

    for (name, line, fragment) in MALFORMED {
        let err = match read_malformed(name) {
            Ok(()) => return Err(format!("{name}: accepted")),
            Err(e) => e,
        };
        let msg = err.to_string();
        ensure(err.line() == line, || format!("{name}: line {:?}, expected {line:?} ({msg})", err.line()))?;
        ensure(msg.contains(fragment), || format!("{name}: {msg:?} lacks {fragment:?}"))?;
        ensure(msg.contains(name), || format!("{name}: message does not name the file: {msg}"))?;
    }
    Ok(format!(
        "{checked} random traces through 8 writers and 4 round trips; {} malformed fixtures rejected at the right line",
        MALFORMED.len()
    ))
}

#[test]
fn format_suite() {
    criterion("formats", WallTime::from_secs(10), check_formats);
}

fn tenergy(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tenergy"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    if !out.status.success() {
        return Err(format!("tenergy {}: {:?}: {stderr}", args.join(" "), out.status.code()));
    }
    Ok(stderr)
}

fn same_bytes(actual: &Path, expected: &Path) -> Result<(), String> {
    let a = fs::read(actual).map_err(|e| format!("{}: {e}", actual.display()))?;
    let b = fs::read(expected).map_err(|e| format!("{}: {e}", expected.display()))?;
    ensure(a == b, || format!("{} differs from {}", actual.display(), expected.display()))
}

#[test]
fn cli_end_to_end() {
    criterion("cli-end-to-end", WallTime::from_secs(10), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
        let spec = fixture("e2e_spec.json").to_string_lossy().into_owned();

        tenergy(&["synth", "--spec", &spec, "--out", &d("run")])?;
        tenergy(&[
            "account",
            "--events", &d("run/events.jsonl"),
            "--power", &d("run/power.csv"),
            "--out", &d("run/tef.json"),
        ])?;
        same_bytes(&dir.path().join("run/tef.json"), &dir.path().join("run/expected_tef.json"))?;

        tenergy(&["summarize", "--tef", &d("run/tef.json"), "--format", "csv", "--out", &d("stef.csv")])?;
        same_bytes(&dir.path().join("stef.csv"), &fixture("golden/stef.csv"))?;

        tenergy(&["edd", "--tef", &d("run/tef.json"), "--out", &d("edd.dot")])?;
        same_bytes(&dir.path().join("edd.dot"), &fixture("golden/edd.dot"))?;

        let pair = tenergy(&["compare", &d("run/tef.json"), &d("run/expected_tef.json")])?;
        ensure(pair.contains("pcc = 1 "), || format!("self comparison printed {pair:?}"))?;

        fs::create_dir(dir.path().join("runs")).map_err(|e| e.to_string())?;
        tenergy(&["summarize", "--tef", &d("run/tef.json"), "--out", &d("runs/synth.json")])?;
        for name in ["fig7_a.json", "fig7_b.json"] {
            fs::copy(fixture(name), dir.path().join("runs").join(name)).map_err(|e| e.to_string())?;
        }
        tenergy(&["compare", "--matrix", &d("runs"), "--out", &d("matrix.csv")])?;
        same_bytes(&dir.path().join("matrix.csv"), &fixture("golden/matrix.csv"))?;

        Ok("synth -> account -> summarize -> edd -> compare match expected_tef.json and goldens".into())
    });
}
