//! Browser demo: cluster and select a synthetic 3-D pool, draw it on a 2-D
//! equal-area projection, and score answer options.
//!
//! Every export takes and returns JSON strings. The same functions are
//! callable natively through [`api`], which is what the tests use.

use wasm_bindgen::prelude::*;

pub mod api;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Generates the pool described by `params` and returns its projected points.
#[wasm_bindgen]
pub fn generate(params: &str) -> Result<String, JsError> {
    to_js(api::generate_json(params))
}

/// Clusters the pool, locates the task centers and runs one selection method.
#[wasm_bindgen]
pub fn select(params: &str) -> Result<String, JsError> {
    to_js(api::select_json(params))
}

/// Scores answer options given per-token probabilities.
#[wasm_bindgen]
pub fn score(options: &str) -> Result<String, JsError> {
    to_js(api::score_json(options))
}
