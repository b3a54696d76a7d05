//! Browser bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string that the page parses; errors come back as
//! a thrown string. The `*_json` functions hold the logic and are plain Rust so
//! they can be tested natively.

use cvqkd_core::constellation::{
    build_grid, epsilon_a, epsilon_p_closed, epsilon_p_numeric, epsilon_tail, ConstellationSpec,
    DEFAULT_QUADRATURE_ORDER,
};
use cvqkd_core::covariance::{cross_deviation_bound, diag_deviation_bound};
use cvqkd_core::fock::TruncationPolicy;
use cvqkd_core::security::{
    f_continuity, rate_finite, Cardinality, ChannelModel, Reconciliation, SecurityParams,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest `b` the page will build a grid for.
const MAX_DEMO_BITS: u32 = 8;
/// Largest `b` for which the page asks for `epsilon_a`.
const MAX_EPS_A_BITS: u32 = 5;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Grid points (`[q, p, prob]` triples flattened) and preparation errors.
pub fn grid_json(mean_photons: f64, sigmas: f64, bits: u32) -> Result<String, String> {
    if bits > MAX_DEMO_BITS {
        return Err(format!(
            "the demo draws at most {MAX_DEMO_BITS} bits per quadrature"
        ));
    }
    let spec = ConstellationSpec::with_sigmas(mean_photons, sigmas, bits).map_err(err)?;
    let grid = build_grid(&spec).map_err(err)?;
    let eps_a = if bits <= MAX_EPS_A_BITS {
        Some(epsilon_a(&grid, &TruncationPolicy::default()).map_err(err)?)
    } else {
        None
    };
    let points: Vec<f64> = grid
        .points()
        .iter()
        .flat_map(|pt| [pt.q, pt.p, pt.prob])
        .collect();
    Ok(json!({
        "range": spec.range,
        "delta_a": spec.bin_width(),
        "epsilon_a": eps_a,
        "epsilon_p_closed": epsilon_p_closed(&spec),
        "epsilon_p_numeric": epsilon_p_numeric(&spec, DEFAULT_QUADRATURE_ORDER).map_err(err)?,
        "epsilon_tail": epsilon_tail(spec.range, spec.mean_photons),
        "points": points,
    })
    .to_string())
}

/// `r_n` over a geometric sweep of block sizes.
#[allow(clippy::too_many_arguments)]
pub fn key_rate_json(
    eta: f64,
    excess_noise: f64,
    mean_photons: f64,
    beta: f64,
    eps_s: f64,
    eps_a: f64,
    log2_ybar: u32,
    log10_n_min: f64,
    log10_n_max: f64,
    points: usize,
) -> Result<String, String> {
    if points < 2 || log10_n_max.partial_cmp(&log10_n_min) != Some(std::cmp::Ordering::Greater) {
        return Err("need at least two block sizes and n_max > n_min".into());
    }
    let ch = ChannelModel::from_excess_noise(eta, excess_noise).map_err(err)?;
    let card = Cardinality::from_log2(log2_ybar).map_err(err)?;
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let log_n = log10_n_min + (log10_n_max - log10_n_min) * i as f64 / (points - 1) as f64;
        let params = SecurityParams {
            eps_s,
            eps_h: eps_s,
            eps_a,
            eps_p: 0.0,
            block_size: 10f64.powf(log_n),
            cardinality: card,
            reconciliation: Reconciliation::Efficiency(beta),
            exact_lhl: false,
        };
        let rep = rate_finite(&ch, mean_photons, &params).map_err(err)?;
        rows.push(json!({
            "log10_n": log_n,
            "r_n": rep.r_n,
            "r_inf": rep.r_inf,
            "f_term": rep.components.f_term,
            "aep_correction": rep.components.aep_term / params.block_size.sqrt(),
        }));
    }
    Ok(serde_json::Value::Array(rows).to_string())
}

/// Covariance deviation bounds against `b`, plus the `f(eps_a)` curve.
pub fn bounds_json(
    mean_photons: f64,
    sigmas: f64,
    eta: f64,
    excess_noise: f64,
    b_max: u32,
    log2_ybar: u32,
) -> Result<String, String> {
    let ch = ChannelModel::from_excess_noise(eta, excess_noise).map_err(err)?;
    let sat = 6.0 * (ch.eta() * mean_photons + ch.excess_noise()).sqrt();
    let expected = ch.eta().sqrt() * mean_photons;
    let mut rows = Vec::new();
    for b in 1..=b_max.min(20) {
        let spec = ConstellationSpec::with_sigmas(mean_photons, sigmas, b).map_err(err)?;
        let closed = epsilon_p_closed(&spec);
        let numeric = epsilon_p_numeric(&spec, DEFAULT_QUADRATURE_ORDER).map_err(err)?;
        rows.push(json!({
            "b": b,
            "epsilon_p_closed": closed,
            "epsilon_p_numeric": numeric,
            "cross_ratio": cross_deviation_bound(closed, spec.range, sat, mean_photons) / expected,
            "cross_ratio_numeric": cross_deviation_bound(numeric, spec.range, sat, mean_photons) / expected,
        }));
    }
    let card = Cardinality::from_log2(log2_ybar).map_err(err)?;
    let mut f_curve = Vec::new();
    for i in 0..=60 {
        let eps = 10f64.powf(-8.0 + 6.0 * i as f64 / 60.0);
        f_curve.push(json!({
            "eps_a": eps,
            "f": f_continuity(eps, card).map_err(err)?,
            "diag_ratio": diag_deviation_bound(eps, sat) / (ch.eta() * mean_photons + ch.excess_noise()),
        }));
    }
    Ok(json!({ "saturation": sat, "rows": rows, "f_curve": f_curve }).to_string())
}

#[wasm_bindgen]
pub fn grid(mean_photons: f64, sigmas: f64, bits: u32) -> Result<String, JsValue> {
    grid_json(mean_photons, sigmas, bits).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn key_rate(
    eta: f64,
    excess_noise: f64,
    mean_photons: f64,
    beta: f64,
    eps_s: f64,
    eps_a: f64,
    log2_ybar: u32,
    log10_n_min: f64,
    log10_n_max: f64,
    points: usize,
) -> Result<String, JsValue> {
    key_rate_json(
        eta,
        excess_noise,
        mean_photons,
        beta,
        eps_s,
        eps_a,
        log2_ybar,
        log10_n_min,
        log10_n_max,
        points,
    )
    .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bounds(
    mean_photons: f64,
    sigmas: f64,
    eta: f64,
    excess_noise: f64,
    b_max: u32,
    log2_ybar: u32,
) -> Result<String, JsValue> {
    bounds_json(mean_photons, sigmas, eta, excess_noise, b_max, log2_ybar)
        .map_err(|e| JsValue::from_str(&e))
}
