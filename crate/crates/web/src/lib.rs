//! Browser bindings for the tensor-energy demo page.
//!
//! Every export takes and returns JSON strings so the page needs no glue
//! beyond the generated module. The pure functions in [`demo`] carry the
//! logic and are tested natively.

use wasm_bindgen::prelude::*;

pub mod demo;

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Accounts an events.jsonl / power.csv pair.
///
/// Returns `{tef, stef, edd, top, diagnostics}`.
#[wasm_bindgen]
pub fn account(events_jsonl: &str, power_csv: &str, pattern: &str, k: usize) -> Result<String, JsValue> {
    to_js(demo::account(events_jsonl, power_csv, pattern, k))
}

/// Generates a synthetic trace pair from a spec (JSON) for the input boxes.
#[wasm_bindgen]
pub fn synth_traces(spec_json: &str) -> Result<String, JsValue> {
    to_js(demo::synth_traces(spec_json))
}

/// ASSS curve on a synthetic two-phase workload.
#[wasm_bindgen]
pub fn asss_curve(spec_json: &str, max_factor: u32) -> Result<String, JsValue> {
    to_js(demo::asss_curve(spec_json, max_factor))
}

/// PCC and MED of two footprint objects.
#[wasm_bindgen]
pub fn compare(a_json: &str, b_json: &str) -> Result<String, JsValue> {
    to_js(demo::compare(a_json, b_json))
}
