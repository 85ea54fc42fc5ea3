//! Browser bindings for a few cheap pieces of `kinetic_chaos`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use kinetic_chaos::config::Config;
use kinetic_chaos::kernels::MollifierSpec;
use kinetic_chaos::noise::{sample_increment, NoiseSpec, Purpose, StreamKey};
use kinetic_chaos::params::{derive_rates, validate_hypothesis};
use wasm_bindgen::prelude::*;

fn js(e: kinetic_chaos::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Derived rates and hypothesis checks for a `key = value` config, as JSON.
#[wasm_bindgen]
pub fn rates_json(config_text: &str) -> Result<String, JsValue> {
    let cfg = Config::from_str_checked(config_text).map_err(js)?;
    let model = cfg.model().map_err(js)?;
    let kernel = cfg.kernel().map_err(js)?;
    let rates = derive_rates(&model, cfg.real("model.epsilon").map_err(js)?).map_err(js)?;
    let hypothesis = validate_hypothesis(&model, &kernel);
    let body = serde_json::json!({ "rates": rates, "hypothesis": hypothesis });
    Ok(body.to_string())
}

/// Histogram of `n` one-dimensional increments `L_t`, on `bins` equal cells
/// of `[-half_width, half_width]`, normalized as a density. The last two
/// entries are the fractions that fell below and above the window.
#[wasm_bindgen]
pub fn stable_histogram(
    alpha: f64,
    t: f64,
    n: u32,
    seed: u64,
    bins: u32,
    half_width: f64,
) -> Result<Vec<f64>, JsValue> {
    let spec = NoiseSpec::new(alpha, 1).map_err(js)?;
    if bins == 0 || !(half_width > 0.0) || !(t > 0.0) {
        return Err(JsValue::from_str("bins, half_width and t must be positive"));
    }
    let bins = bins as usize;
    let width = 2.0 * half_width / bins as f64;
    let mut out = vec![0.0; bins + 2];
    for i in 0..n as u64 {
        let key = StreamKey::new(seed, 0, i, 0, Purpose::Aux);
        let x = sample_increment(&spec, t, &key).map_err(js)?[0];
        let cell = ((x + half_width) / width).floor();
        if cell < 0.0 {
            out[bins] += 1.0;
        } else if cell >= bins as f64 {
            out[bins + 1] += 1.0;
        } else {
            out[cell as usize] += 1.0;
        }
    }
    let total = n.max(1) as f64;
    for (i, c) in out.iter_mut().enumerate() {
        *c /= if i < bins { total * width } else { total };
    }
    Ok(out)
}

/// Kinetic mollifier `Γ_t φ_N(x, v)` sampled row-major (`ix * nv + iv`) on
/// the cell centres of `[-lx, lx] × [-lv, lv]`.
#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn free_mollifier(
    alpha: f64,
    zeta: f64,
    n: u32,
    t: f64,
    nx: u32,
    nv: u32,
    lx: f64,
    lv: f64,
) -> Result<Vec<f64>, JsValue> {
    let m = MollifierSpec::new(alpha, 1, zeta, 1).map_err(js)?.scaled(n as usize);
    let (nx, nv) = (nx as usize, nv as usize);
    let (hx, hv) = (2.0 * lx / nx as f64, 2.0 * lv / nv as f64);
    let mut out = Vec::with_capacity(nx * nv);
    for ix in 0..nx {
        let x = -lx + (ix as f64 + 0.5) * hx;
        for iv in 0..nv {
            let v = -lv + (iv as f64 + 0.5) * hv;
            out.push(m.density(t, &[x], &[v]));
        }
    }
    Ok(out)
}
