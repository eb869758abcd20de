//! Browser demos over the `floodmem` core. Every export takes plain values and
//! returns a JSON string; the `demo` module holds the same functions without
//! the bindings so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(r: Result<serde_json::Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

/// Awareness of one region between `start` and `end` (ISO dates), sampled
/// every `step_days`. `events` holds one ISO date per line.
#[wasm_bindgen(js_name = awarenessCurve)]
pub fn awareness_curve(events: &str, tau_days: u32, start: &str, end: &str, step_days: u32) -> Result<String, JsValue> {
    js(demo::awareness_curve(events, tau_days, start, end, step_days))
}

/// Global Moran's I and LISA classes for a row-major grid under rook contiguity.
#[wasm_bindgen(js_name = moranGrid)]
pub fn moran_grid(values: Vec<f64>, width: usize, n_perm: usize, seed: u32) -> Result<String, JsValue> {
    js(demo::moran_grid(&values, width, n_perm, u64::from(seed)))
}

/// Generate a synthetic market with a known risk discount and estimate it.
#[wasm_bindgen(js_name = syntheticFit)]
pub fn synthetic_fit(seed: u32, n_transactions: usize, beta_risk: f64) -> Result<String, JsValue> {
    js(demo::synthetic_fit(u64::from(seed), n_transactions, beta_risk))
}
