//! Alignment heatmap export: per-token column maps rendered through the jet
//! colormap into binary PPM images, plus the raw alignment matrix as CSV.

use std::path::{Path, PathBuf};

use crate::data::manifest::Example;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::text::{tokenize, EmbeddingTable};
use crate::visual::{bilinear_resize, roi_selection_order, PremiseFeatures, GRID_SIZE, PREMISE_REGIONS};

/// Rendered heatmap edge length for grid and strip layouts.
pub const HEATMAP_SIZE: usize = 240;

/// Piecewise-linear jet colormap on [0, 1]: dark blue at 0, dark red at 1.
pub fn jet_color(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let ramp = |center: f64| (1.5 - (4.0 * t - center).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Nearest point on the jet curve, for reading intensities back out of
/// rendered pixels in tests.
pub fn jet_inverse(rgb: [u8; 3]) -> f64 {
    let target = [
        rgb[0] as f64 / 255.0,
        rgb[1] as f64 / 255.0,
        rgb[2] as f64 / 255.0,
    ];
    let mut best_t = 0.0;
    let mut best_dist = f64::INFINITY;
    for i in 0..=4096 {
        let t = i as f64 / 4096.0;
        let c = jet_color(t);
        let dist = (0..3).map(|k| (c[k] - target[k]).powi(2)).sum::<f64>();
        if dist < best_dist {
            best_dist = dist;
            best_t = t;
        }
    }
    best_t
}

/// Min-max normalization of one alignment column into [0, 1]; a constant
/// column maps to all 0.5.
pub fn normalize_column(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Binary P6 bytes: `P6\n<w> <h>\n255\n` then 3·w·h samples.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Parses a P6 image back into (width, height, samples).
pub fn parse_ppm(bytes: &[u8], path: &str) -> Result<(usize, usize, Vec<u8>)> {
    let header_end = bytes
        .windows(1)
        .enumerate()
        .scan(0usize, |newlines, (i, w)| {
            if w[0] == b'\n' {
                *newlines += 1;
            }
            Some((*newlines, i))
        })
        .find(|(n, _)| *n == 3)
        .map(|(_, i)| i + 1)
        .ok_or_else(|| Error::bad_format(path, "missing PPM header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::bad_format(path, "header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("P6") {
        return Err(Error::bad_format(path, "not a P6 file"));
    }
    let dims = lines
        .next()
        .ok_or_else(|| Error::bad_format(path, "missing dimensions"))?;
    let mut parts = dims.split_whitespace();
    let width: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::bad_format(path, "bad width"))?;
    let height: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::bad_format(path, "bad height"))?;
    if lines.next() != Some("255") {
        return Err(Error::bad_format(path, "maxval must be 255"));
    }
    let body = &bytes[header_end..];
    if body.len() != 3 * width * height {
        return Err(Error::bad_format(
            path,
            format!("expected {} samples, found {}", 3 * width * height, body.len()),
        ));
    }
    Ok((width, height, body.to_vec()))
}

fn to_rgb_bytes(tmap: &[f32]) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(tmap.len() * 3);
    for &t in tmap {
        let c = jet_color(t as f64);
        for channel in c {
            rgb.push((channel * 255.0).round() as u8);
        }
    }
    rgb
}

/// Normalized column laid out as a 6×6 grid (row-major, the feature
/// preparation order) and bilinearly upsampled to the heatmap size.
pub fn grid_intensity_map(column: &[f64]) -> Vec<f32> {
    assert_eq!(column.len(), GRID_SIZE * GRID_SIZE);
    let normalized = normalize_column(column);
    let small: Vec<f32> = normalized.iter().map(|&v| v as f32).collect();
    bilinear_resize(&small, GRID_SIZE, GRID_SIZE, 1, HEATMAP_SIZE, HEATMAP_SIZE)
}

fn strip_intensity_map(column: &[f64]) -> Vec<f32> {
    let normalized = normalize_column(column);
    let small: Vec<f32> = normalized.iter().map(|&v| v as f32).collect();
    bilinear_resize(&small, column.len(), 1, 1, HEATMAP_SIZE, HEATMAP_SIZE)
}

/// Box-composite layout for RoI features: each kept region's box is filled
/// with its jet color over a black canvas sized to the box extents; regions
/// are composited in ascending kept-row order and zero-padded rows are
/// skipped.
fn roi_rgb(
    column: &[f64],
    scores: &[f32],
    boxes: &[[f32; 4]],
) -> (usize, usize, Vec<u8>) {
    let order = roi_selection_order(scores);
    let width = boxes
        .iter()
        .map(|b| b[2].max(b[0]))
        .fold(1.0f32, f32::max)
        .ceil() as usize;
    let height = boxes
        .iter()
        .map(|b| b[3].max(b[1]))
        .fold(1.0f32, f32::max)
        .ceil() as usize;
    let normalized = normalize_column(column);
    let mut rgb = vec![0u8; 3 * width * height];
    for (row, &original) in order.iter().enumerate() {
        let b = boxes[original];
        let color = jet_color(normalized[row]);
        let bytes = [
            (color[0] * 255.0).round() as u8,
            (color[1] * 255.0).round() as u8,
            (color[2] * 255.0).round() as u8,
        ];
        let x0 = (b[0].max(0.0) as usize).min(width.saturating_sub(1));
        let y0 = (b[1].max(0.0) as usize).min(height.saturating_sub(1));
        let x1 = (b[2].max(0.0).ceil() as usize).clamp(x0 + 1, width);
        let y1 = (b[3].max(0.0).ceil() as usize).clamp(y0 + 1, height);
        for y in y0..y1 {
            for x in x0..x1 {
                let at = 3 * (y * width + x);
                rgb[at..at + 3].copy_from_slice(&bytes);
            }
        }
    }
    (width, height, rgb)
}

fn sanitize(token: &str) -> String {
    token
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub struct RenderedHeatmaps {
    pub images: Vec<PathBuf>,
    pub csv: PathBuf,
    pub tokens: Vec<String>,
}

/// Runs the forward pass on one example, captures the alignment matrix and
/// writes one PPM per hypothesis token plus a CSV of the raw matrix.
pub fn render_heatmaps<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    table: &EmbeddingTable,
    example: &Example,
    out_dir: &Path,
) -> Result<RenderedHeatmaps> {
    std::fs::create_dir_all(out_dir)?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = model.forward(
        &mut tape,
        &bound,
        &example.features,
        &example.hypothesis,
        table,
    )?;
    let alignment = out.alignment;
    let tokens = tokenize(&example.hypothesis, model.config().max_len)?;

    let mut images = Vec::with_capacity(tokens.len());
    for (j, token) in tokens.iter().enumerate() {
        let column: Vec<f64> = alignment.column(j).iter().map(|v| v.to_f64()).collect();
        let (width, height, rgb) = match &example.features {
            PremiseFeatures::Grid { .. } => {
                let tmap = grid_intensity_map(&column);
                (HEATMAP_SIZE, HEATMAP_SIZE, to_rgb_bytes(&tmap))
            }
            PremiseFeatures::Roi {
                scores,
                boxes: Some(boxes),
                ..
            } => roi_rgb(&column, scores, boxes),
            PremiseFeatures::Roi { boxes: None, .. } => {
                eprintln!(
                    "warning: example {} has RoI features without boxes; rendering a strip heatmap",
                    example.id
                );
                let tmap = strip_intensity_map(&column);
                (HEATMAP_SIZE, HEATMAP_SIZE, to_rgb_bytes(&tmap))
            }
        };
        let path = out_dir.join(format!("{}_tok{j}_{}.ppm", example.id, sanitize(token)));
        std::fs::write(&path, encode_ppm(width, height, &rgb))?;
        images.push(path);
    }

    let csv = out_dir.join(format!("{}_alignment.csv", example.id));
    let mut content = String::new();
    for i in 0..PREMISE_REGIONS {
        let row: Vec<String> = (0..tokens.len())
            .map(|j| format!("{}", alignment.at(i, j).to_f64()))
            .collect();
        content.push_str(&row.join(","));
        content.push('\n');
    }
    std::fs::write(&csv, content)?;

    Ok(RenderedHeatmaps {
        images,
        csv,
        tokens,
    })
}
