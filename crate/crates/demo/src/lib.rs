//! Browser bindings for three wordmine operations: query-by-example
//! alignment, attention similarity and saliency maps. Every export takes
//! plain text from form fields and returns a JSON string.

use serde_json::json;
use wasm_bindgen::prelude::*;

use wordmine::corpus::{ImageGrid, UnitSequence};
use wordmine::localizer::{binarize, quantile_threshold, saliency, to_gray};
use wordmine::qbe::{fit_align, Scoring};
use wordmine::scorer::{attention, similarity};
use wordmine::segmenter::{segment, segment_ids};

fn numbers<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("{what}: cannot parse {t:?}")))
        .collect()
}

/// One cell per line (or `;`), components separated by spaces or commas.
fn parse_grid(text: &str) -> Result<ImageGrid, String> {
    let rows: Vec<Vec<f64>> = text
        .split(['\n', ';'])
        .filter(|r| !r.trim().is_empty())
        .map(|r| numbers(r, "grid"))
        .collect::<Result<_, _>>()?;
    let cells = rows.len();
    let g = (cells as f64).sqrt().round() as usize;
    if g * g != cells {
        return Err(format!("{cells} cells do not form a square grid"));
    }
    let d = rows.first().map_or(0, Vec::len);
    ImageGrid::new("demo", g, d, rows.concat()).map_err(|e| e.to_string())
}

pub fn align_json(query: &str, target: &str, scoring: &str) -> Result<String, String> {
    let scoring: Scoring = scoring.parse().map_err(|e: wordmine::Error| e.to_string())?;
    let q = segment(&UnitSequence::new("query", numbers(query, "query")?)).map_err(|e| e.to_string())?;
    let t = segment(&UnitSequence::new("target", numbers(target, "target")?)).map_err(|e| e.to_string())?;
    let qi = segment_ids(&q);
    let ti = segment_ids(&t);
    let fit = fit_align(&qi, &ti, &scoring).map_err(|e| e.to_string())?;
    let span = t.frame_span(fit.start, fit.end);
    Ok(json!({
        "query_segments": qi,
        "target_segments": ti,
        "score": fit.score,
        "normalized": fit.score / qi.len() as f64,
        "segment_window": [fit.start, fit.end],
        "frame_span": [span.0, span.1],
    })
    .to_string())
}

pub fn attend_json(audio: &str, grid: &str) -> Result<String, String> {
    let a: Vec<f64> = numbers(audio, "audio")?;
    let g = parse_grid(grid)?;
    let att = attention(&a, &g).map_err(|e| e.to_string())?;
    let s = similarity(&a, &g).map_err(|e| e.to_string())?;
    Ok(json!({
        "grid_size": g.grid_size(),
        "weights": att.weights,
        "argmax": att.argmax,
        "raw": s.raw,
        "clamped": s.clamped,
    })
    .to_string())
}

pub fn saliency_json(audio: &str, grid: &str, size: usize, quantile: f64) -> Result<String, String> {
    let a: Vec<f64> = numbers(audio, "audio")?;
    let g = parse_grid(grid)?;
    let map = saliency(&a, &g, size, size).map_err(|e| e.to_string())?;
    let mask = binarize(&map, quantile).map_err(|e| e.to_string())?;
    let threshold = quantile_threshold(&map.values, quantile).map_err(|e| e.to_string())?;
    Ok(json!({
        "size": size,
        "threshold": threshold,
        "gray": to_gray(&map),
        "mask": mask.data.iter().map(|&b| b as u8).collect::<Vec<_>>(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn align(query: &str, target: &str, scoring: &str) -> Result<String, JsValue> {
    align_json(query, target, scoring).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn attend(audio: &str, grid: &str) -> Result<String, JsValue> {
    attend_json(audio, grid).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = saliency)]
pub fn saliency_map(audio: &str, grid: &str, size: usize, quantile: f64) -> Result<String, JsValue> {
    saliency_json(audio, grid, size, quantile).map_err(|e| JsValue::from_str(&e))
}
