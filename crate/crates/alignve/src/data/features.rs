//! AVEF premise-feature files.
//!
//! Binary, little-endian: magic "AVEF", u32 version (1), u8 kind. Grid
//! (kind 0): u32 height, u32 width, u32 channels, then height·width·channels
//! f32 values row-major channel-last. RoI (kind 1): u32 count, u32 channels,
//! u8 has_boxes, count f32 scores, optionally count×4 f32 boxes
//! (x1,y1,x2,y2 in pixels), then count·channels f32 features.

use std::path::Path;

use super::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::visual::PremiseFeatures;

const MAGIC: &[u8; 4] = b"AVEF";
const VERSION: u32 = 1;

pub fn write_features(features: &PremiseFeatures) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.magic(MAGIC);
    w.u32(VERSION);
    match features {
        PremiseFeatures::Grid {
            height,
            width,
            channels,
            data,
        } => {
            w.u8(0);
            w.u32(*height as u32);
            w.u32(*width as u32);
            w.u32(*channels as u32);
            w.f32_slice(data);
        }
        PremiseFeatures::Roi {
            count,
            channels,
            scores,
            boxes,
            features,
        } => {
            w.u8(1);
            w.u32(*count as u32);
            w.u32(*channels as u32);
            w.u8(boxes.is_some() as u8);
            w.f32_slice(scores);
            if let Some(boxes) = boxes {
                for b in boxes {
                    w.f32_slice(b);
                }
            }
            w.f32_slice(features);
        }
    }
    w.finish()
}

pub fn read_features(bytes: &[u8], path: &str) -> Result<PremiseFeatures> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            got: version,
            expected: VERSION,
        });
    }
    let kind = r.u8()?;
    let features = match kind {
        0 => {
            let height = r.u32()? as usize;
            let width = r.u32()? as usize;
            let channels = r.u32()? as usize;
            if height == 0 || width == 0 || channels == 0 {
                return Err(Error::bad_format(path, "grid dimensions must be positive"));
            }
            let numel = r.checked_product(&[height, width, channels])?;
            let data = r.f32_vec(numel)?;
            PremiseFeatures::Grid {
                height,
                width,
                channels,
                data,
            }
        }
        1 => {
            let count = r.u32()? as usize;
            let channels = r.u32()? as usize;
            if count == 0 || channels == 0 {
                return Err(Error::bad_format(path, "roi dimensions must be positive"));
            }
            let has_boxes = match r.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::bad_format(path, format!("bad has_boxes flag {other}")))
                }
            };
            let scores = r.f32_vec(count)?;
            let boxes = if has_boxes {
                let raw = r.f32_vec(r.checked_product(&[count, 4])?)?;
                Some(raw.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
            } else {
                None
            };
            let numel = r.checked_product(&[count, channels])?;
            let features = r.f32_vec(numel)?;
            PremiseFeatures::Roi {
                count,
                channels,
                scores,
                boxes,
                features,
            }
        }
        other => return Err(Error::bad_format(path, format!("unknown feature kind {other}"))),
    };
    r.expect_end()?;
    Ok(features)
}

pub fn write_feature_file(path: &Path, features: &PremiseFeatures) -> Result<()> {
    std::fs::write(path, write_features(features))?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<PremiseFeatures> {
    let bytes = std::fs::read(path)?;
    read_features(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_fixture() -> PremiseFeatures {
        PremiseFeatures::Grid {
            height: 6,
            width: 6,
            channels: 8,
            data: (0..6 * 6 * 8).map(|v| v as f32 * 0.25).collect(),
        }
    }

    fn roi_fixture(with_boxes: bool) -> PremiseFeatures {
        PremiseFeatures::Roi {
            count: 3,
            channels: 4,
            scores: vec![0.9, 0.1, 0.5],
            boxes: with_boxes.then(|| vec![
                [0.0, 0.0, 10.0, 12.0],
                [5.0, 5.0, 9.0, 20.0],
                [1.0, 2.0, 3.0, 4.0],
            ]),
            features: (0..12).map(|v| v as f32 - 6.0).collect(),
        }
    }

    #[test]
    fn grid_round_trip_is_byte_identical() {
        let original = grid_fixture();
        let bytes = write_features(&original);
        let parsed = read_features(&bytes, "test").unwrap();
        assert_eq!(parsed, original);
        assert_eq!(write_features(&parsed), bytes);
    }

    #[test]
    fn roi_round_trip_recovers_boxes() {
        for with_boxes in [true, false] {
            let original = roi_fixture(with_boxes);
            let bytes = write_features(&original);
            let parsed = read_features(&bytes, "test").unwrap();
            assert_eq!(parsed, original);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = write_features(&grid_fixture());
        for cut in [0, 3, 4, 8, 9, 13, 20, bytes.len() - 1] {
            let err = read_features(&bytes[..cut], "test");
            assert!(err.is_err(), "cut at {cut} was accepted");
        }
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = write_features(&roi_fixture(true));
        bytes.push(0);
        assert!(read_features(&bytes, "test").is_err());
    }

    #[test]
    fn bad_magic_and_kind_are_rejected() {
        let mut bytes = write_features(&grid_fixture());
        bytes[0] = b'X';
        assert!(read_features(&bytes, "test").is_err());

        let mut bytes = write_features(&grid_fixture());
        bytes[8] = 9;
        assert!(read_features(&bytes, "test").is_err());
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        // Claims a 4-billion-cell grid with a 13-byte body.
        let mut w = ByteWriter::new();
        w.magic(MAGIC);
        w.u32(VERSION);
        w.u8(0);
        w.u32(u32::MAX);
        w.u32(u32::MAX);
        w.u32(u32::MAX);
        assert!(read_features(&w.finish(), "test").is_err());
    }
}
