use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = demoNetwork)]
pub fn demo_network(seed: u32) -> String {
    crate::demo_network(u64::from(seed))
}

#[wasm_bindgen(js_name = regionMap)]
pub fn region_map(net_json: &str, resolution: usize) -> Result<String, JsError> {
    js(crate::region_map(net_json, resolution))
}

#[wasm_bindgen(js_name = coverageRun)]
pub fn coverage_run(net_json: &str, request_json: &str) -> Result<String, JsError> {
    js(crate::coverage_run(net_json, request_json))
}

#[wasm_bindgen(js_name = lipschitzCompare)]
pub fn lipschitz_compare(
    net_json: &str,
    seed_json: &str,
    c: f64,
    delta: f64,
    rng_seed: u32,
) -> Result<String, JsError> {
    js(crate::lipschitz_compare(
        net_json,
        seed_json,
        c,
        delta,
        u64::from(rng_seed),
    ))
}
