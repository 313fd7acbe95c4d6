use serde_json::Value;
use tensor_energy_web::demo::{account, asss_curve, compare, synth_traces};

const SPEC: &str = r#"{
    "seed": 3,
    "devices": ["cpu:0", "gpu:0"],
    "layers": 2,
    "tensors_per_layer": 3,
    "duration": {"min": 20, "max": 80},
    "concurrency": 2,
    "power": {"kind": "two_phase", "low": 20.0, "high": 90.0, "switch_ts": 150},
    "sampling_period": 8
}"#;

#[test]
fn account_round_trip_through_synth() {
    let traces: Value = serde_json::from_str(&synth_traces(SPEC).unwrap()).unwrap();
    let result = account(
        traces["events"].as_str().unwrap(),
        traces["power"].as_str().unwrap(),
        "layer_[0-9]+",
        5,
    )
    .unwrap();
    let v: Value = serde_json::from_str(&result).unwrap();
    assert_eq!(v["edd"]["name"], "bert");
    assert_eq!(v["stef"].as_object().unwrap().len(), 3);
    assert_eq!(v["top"].as_array().unwrap().len(), 3);
    let tef_total: f64 = v["tef"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    let edd_total = v["edd"]["energy"].as_f64().unwrap();
    assert!((tef_total - edd_total).abs() <= 1e-12 * edd_total);
}

#[test]
fn asss_curve_starts_at_one() {
    let v: Value = serde_json::from_str(&asss_curve(SPEC, 4).unwrap()).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    assert_eq!(points[0][0], 8);
    assert_eq!(points[0][1], 1.0);
}

#[test]
fn compare_reports_both_metrics() {
    let v: Value =
        serde_json::from_str(&compare(r#"{"a": 1, "b": 3}"#, r#"{"a": 2, "b": 6}"#).unwrap()).unwrap();
    assert!((v["pcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["med"], -2.0);
    assert_eq!(v["n_keys"], 2);
}

#[test]
fn errors_are_messages() {
    assert!(account("not json", "device,ts,watts\n", "layer_[0-9]+", 3)
        .unwrap_err()
        .contains("events:1"));
    assert!(compare("{}", "{}").unwrap_err().contains("at least 2 keys"));
}
