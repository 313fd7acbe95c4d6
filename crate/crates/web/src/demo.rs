use serde_json::{json, Map, Value};

use tensor_energy::accountant::{gen_footprint_optimized, AccountingOptions, Footprint};
use tensor_energy::footprint::{to_edd, top_k, EddNode, Summarizer};
use tensor_energy::io::{self, ReadOptions};
use tensor_energy::model::Duration;
use tensor_energy::similarity::{asss, med, pcc};
use tensor_energy::synth::{generate, SynthSpec};

fn footprint_value(f: &Footprint) -> Value {
    Value::Object(
        f.iter()
            .map(|(k, v)| (k.render(), json!(v)))
            .collect::<Map<String, Value>>(),
    )
}

fn edd_value(node: &EddNode) -> Value {
    json!({
        "name": node.name,
        "kind": node.kind.as_str(),
        "energy": node.energy,
        "share": node.share,
        "children": node.children.iter().map(edd_value).collect::<Vec<_>>(),
    })
}

pub fn account(events: &str, power: &str, pattern: &str, k: usize) -> Result<String, String> {
    let read = ReadOptions::default();
    let trace = io::parse_events(events, "events", read).map_err(|e| e.to_string())?.value;
    let power = io::parse_power(power, "power", read).map_err(|e| e.to_string())?.value;
    let summarizer = Summarizer::new(pattern).map_err(|e| e.to_string())?;
    let (tef, diag) =
        gen_footprint_optimized(&trace, &power, AccountingOptions::default()).map_err(|e| e.to_string())?;
    let stef = summarizer.summarize(&tef);
    let edd = to_edd(&tef, None).map_err(|e| e.to_string())?;
    let top = top_k(&stef, k.max(1)).map_err(|e| e.to_string())?;
    Ok(json!({
        "tef": footprint_value(&tef),
        "stef": footprint_value(&stef),
        "edd": edd_value(&edd.root),
        "top": top.iter().map(|e| json!([e.key.render(), e.value])).collect::<Vec<_>>(),
        "diagnostics": {
            "pre_sample_ticks": diag.pre_sample_ticks,
            "uncovered_ticks": diag.uncovered_ticks,
            "clipped_events": diag.clipped_events,
        },
    })
    .to_string())
}

pub fn synth_traces(spec_json: &str) -> Result<String, String> {
    let spec = SynthSpec::from_json(spec_json).map_err(|e| e.to_string())?;
    let out = generate(&spec).map_err(|e| e.to_string())?;
    Ok(json!({
        "events": io::write_events(&out.events),
        "power": io::write_power(&out.power),
    })
    .to_string())
}

/// Periods are `base * f` for `f = 1..=max_factor`, with `base` the spec's sampling period.
pub fn asss_curve(spec_json: &str, max_factor: u32) -> Result<String, String> {
    let spec = SynthSpec::from_json(spec_json).map_err(|e| e.to_string())?;
    let out = generate(&spec).map_err(|e| e.to_string())?;
    let base = Duration::from_micros(spec.sampling_period).map_err(|e| e.to_string())?;
    let periods = (1..=u64::from(max_factor.max(1)))
        .map(|f| Duration::from_micros(spec.sampling_period * f))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let curve = asss(
        &out.events,
        &out.power,
        &periods,
        base,
        AccountingOptions::default(),
        &Summarizer::default(),
    )
    .map_err(|e| e.to_string())?;
    let points: Vec<Value> = curve
        .iter()
        .map(|(p, r)| json!([p.micros(), r.value]))
        .collect();
    Ok(json!({ "points": points }).to_string())
}

pub fn compare(a_json: &str, b_json: &str) -> Result<String, String> {
    let a = io::parse_footprint(a_json, "a").map_err(|e| e.to_string())?;
    let b = io::parse_footprint(b_json, "b").map_err(|e| e.to_string())?;
    let p = pcc(&a, &b).map_err(|e| e.to_string())?;
    let m = med(&a, &b);
    Ok(json!({
        "pcc": p.value,
        "med": m.value,
        "n_keys": p.n_keys,
    })
    .to_string())
}
