//! Premise path: precomputed grid or RoI features, normalized to a fixed
//! 36×d_p matrix, then encoded. The visual path has no positional encoding.

use crate::attention::AttEncParams;
use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Premise regions per image; grid features resize to GRID_SIZE² cells and
/// RoI features keep the top PREMISE_REGIONS by score.
pub const PREMISE_REGIONS: usize = 36;
pub const GRID_SIZE: usize = 6;

/// Precomputed image features as read from an AVEF file.
#[derive(Clone, Debug, PartialEq)]
pub enum PremiseFeatures {
    Grid {
        height: usize,
        width: usize,
        channels: usize,
        /// height × width × channels, row-major, channel-last.
        data: Vec<f32>,
    },
    Roi {
        count: usize,
        channels: usize,
        scores: Vec<f32>,
        /// Pixel-space x1,y1,x2,y2 per region, when the extractor kept them.
        boxes: Option<Vec<[f32; 4]>>,
        /// count × channels feature rows.
        features: Vec<f32>,
    },
}

impl PremiseFeatures {
    pub fn channels(&self) -> usize {
        match self {
            PremiseFeatures::Grid { channels, .. } => *channels,
            PremiseFeatures::Roi { channels, .. } => *channels,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PremiseFeatures::Grid { .. } => "grid",
            PremiseFeatures::Roi { .. } => "roi",
        }
    }

    /// Normalizes either kind to the fixed 36×d_p premise matrix.
    pub fn prepare<T: Scalar>(&self, expected_channels: usize) -> Result<Tensor<T>> {
        if self.channels() != expected_channels {
            return Err(Error::ChannelMismatch {
                got: self.channels(),
                expected: expected_channels,
            });
        }
        match self {
            PremiseFeatures::Grid {
                height,
                width,
                channels,
                data,
            } => prepare_grid_features(*height, *width, *channels, data),
            PremiseFeatures::Roi {
                count,
                channels,
                scores,
                features,
                ..
            } => prepare_roi_features(*count, *channels, scores, features),
        }
    }
}

/// Bilinear resize of a height×width×channels map with the half-pixel
/// convention: output cell i samples source coordinate (i+0.5)·in/out − 0.5,
/// clamped to [0, in−1].
pub fn bilinear_resize(
    data: &[f32],
    in_h: usize,
    in_w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    assert!(in_h >= 1 && in_w >= 1 && out_h >= 1 && out_w >= 1 && channels >= 1);
    assert_eq!(data.len(), in_h * in_w * channels);
    let mut out = vec![0.0f32; out_h * out_w * channels];
    let coord = |i: usize, in_size: usize, out_size: usize| -> (usize, usize, f32) {
        let src = ((i as f64 + 0.5) * in_size as f64 / out_size as f64 - 0.5)
            .clamp(0.0, (in_size - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(in_size - 1);
        (lo, hi, (src - lo as f64) as f32)
    };
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, in_h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, in_w, out_w);
            for c in 0..channels {
                let at = |y: usize, x: usize| data[(y * in_w + x) * channels + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(oy * out_w + ox) * channels + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Resizes a feature map to 6×6 and flattens the cells row-major into the
/// 36×d_p premise matrix.
pub fn prepare_grid_features<T: Scalar>(
    height: usize,
    width: usize,
    channels: usize,
    data: &[f32],
) -> Result<Tensor<T>> {
    if data.len() != height * width * channels || height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidShape {
            op: "prepare_grid_features",
            shape: vec![height, width, channels],
            reason: format!("have {} values", data.len()),
        });
    }
    let resized = bilinear_resize(data, height, width, channels, GRID_SIZE, GRID_SIZE);
    let converted: Vec<T> = resized.iter().map(|&v| T::from_f32(v)).collect();
    Tensor::new(vec![PREMISE_REGIONS, channels], converted)
}

/// Top-36 selection order: indices sorted by descending score, ties broken
/// by ascending original index. Shared with the box renderer so heatmaps and
/// features agree on which region is which.
pub fn roi_selection_order(scores: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(PREMISE_REGIONS);
    order
}

/// Keeps the top-36 rows by score (rank order), zero-padding when fewer than
/// 36 regions exist.
pub fn prepare_roi_features<T: Scalar>(
    count: usize,
    channels: usize,
    scores: &[f32],
    features: &[f32],
) -> Result<Tensor<T>> {
    if count == 0 || channels == 0 || scores.len() != count || features.len() != count * channels {
        return Err(Error::InvalidShape {
            op: "prepare_roi_features",
            shape: vec![count, channels],
            reason: format!("{} scores, {} values", scores.len(), features.len()),
        });
    }
    let order = roi_selection_order(scores);
    let mut data = Vec::with_capacity(PREMISE_REGIONS * channels);
    for &idx in &order {
        data.extend(features[idx * channels..(idx + 1) * channels].iter().map(|&v| T::from_f32(v)));
    }
    while data.len() < PREMISE_REGIONS * channels {
        data.push(T::ZERO);
    }
    Tensor::new(vec![PREMISE_REGIONS, channels], data)
}

/// Encodes a prepared 36×d_p premise matrix.
pub fn encode_premise<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams<T>,
    encoder: &AttEncParams,
    premise: &Tensor<T>,
) -> Result<Tensor<T>> {
    if premise.shape() != [PREMISE_REGIONS, encoder.input_dim()] {
        return Err(Error::ShapeMismatch {
            op: "encode_premise",
            left: premise.shape().to_vec(),
            right: vec![PREMISE_REGIONS, encoder.input_dim()],
        });
    }
    encoder.forward(tape, bound, premise)
}
