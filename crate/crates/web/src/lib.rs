//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers or JSON text and returns JSON text; the work happens in
//! [`demo`], which is ordinary Rust and tested natively.

pub mod demo;

use wasm_bindgen::prelude::*;

fn to_js<T: serde::Serialize>(r: c2a_core::Result<T>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// A few images and label maps from each domain of a small world.
#[wasm_bindgen]
pub fn world_preview(seed: u32, per_domain: u32) -> Result<String, JsValue> {
    to_js(demo::world_preview(seed as u64, per_domain as usize))
}

/// Sharpened cluster target, KL and clustering loss for a JSON matrix of
/// soft assignments (rows are renormalized), plus the lambda_c schedule.
#[wasm_bindgen]
pub fn explore_q(p_json: &str) -> Result<String, JsValue> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(p_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    to_js(demo::explore_q(&rows))
}

/// Short target_only and c2a_full runs on a small world; mIoU curves.
#[wasm_bindgen]
pub fn short_training(seed: u32, iters: u32) -> Result<String, JsValue> {
    to_js(demo::short_training(seed as u64, iters as u64))
}
