//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use microsleep::conditioning::{fourier_bandpass, BandSpec};
use microsleep::embedding::{tsne, TsneConfig};
use microsleep::evaluation::{concatenated_report, format_report_table, KappaReport};
use microsleep::Label;
use wasm_bindgen::prelude::*;

pub fn bandpass_signal(signal: &[f64], rate_hz: f64) -> Result<Vec<f64>, String> {
    if signal.len() < 2 {
        return Err("need at least two samples".into());
    }
    let band = BandSpec::standard(rate_hz);
    fourier_bandpass(signal, &band).map_err(|e| e.to_string())
}

fn parse_label_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<Label>()
                .map(Label::code)
                .or_else(|_| t.parse::<usize>().ok().filter(|&c| c < 4).ok_or(()))
                .map_err(|_| format!("`{t}` is not one of W, MSE, MSEc, ED (or 0-3)"))
        })
        .collect()
}

/// Per-class kappa report for two whitespace- or comma-separated label lists.
pub fn kappa_report_text(pred: &str, reference: &str) -> Result<String, String> {
    let p = parse_label_list(pred)?;
    let r = parse_label_list(reference)?;
    if p.len() != r.len() {
        return Err(format!("{} predicted labels but {} reference labels", p.len(), r.len()));
    }
    let report: KappaReport = concatenated_report(&[(&p, &r)], 4).map_err(|e| e.to_string())?;
    Ok(format_report_table(&[("input".to_string(), report)]))
}

/// Row-major `n × 2` coordinates followed by the initial and final KL.
pub fn tsne_points(points: &[f64], dim: usize, perplexity: f64, iterations: usize, seed: u64) -> Result<Vec<f64>, String> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(format!("{} values do not form rows of {dim}", points.len()));
    }
    let cfg = TsneConfig { perplexity, iterations, ..TsneConfig::default() };
    let res = tsne(points, points.len() / dim, dim, &cfg, seed).map_err(|e| e.to_string())?;
    let mut out = res.coords;
    out.extend([res.kl_initial, res.kl_final]);
    Ok(out)
}

#[wasm_bindgen]
pub fn bandpass(signal: &[f64], rate_hz: f64) -> Result<Vec<f64>, JsError> {
    bandpass_signal(signal, rate_hz).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn kappa_report(pred: &str, reference: &str) -> Result<String, JsError> {
    kappa_report_text(pred, reference).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn embed_points(points: &[f64], dim: usize, perplexity: f64, iterations: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    tsne_points(points, dim, perplexity, iterations, u64::from(seed)).map_err(|e| JsError::new(&e))
}
