//! Raw depth and mask rasters with JSON sidecars.
//!
//! A depth raster is `width * height` little-endian `f32` values, row-major,
//! with zero marking invalid pixels. Its sidecar (same path, `.json`
//! extension) holds the size and pinhole intrinsics. A mask raster is one
//! byte per pixel, 0 or 255, with a `{width, height}` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use groundmesh::depth::{BinaryMask, CameraIntrinsics, DepthImage};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DepthHeader {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct MaskHeader {
    width: usize,
    height: usize,
}

pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain structs serialize");
    fs::write(path, text + "\n").map_err(|e| BenchError::io(path, e))
}

fn read_raster(path: &Path, width: usize, height: usize, bytes_per_pixel: usize) -> Result<Vec<u8>> {
    let data = fs::read(path).map_err(|e| BenchError::io(path, e))?;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bytes_per_pixel))
        .ok_or_else(|| BenchError::parse(path, "raster dimensions overflow"))?;
    if data.len() != expected {
        return Err(BenchError::parse(
            path,
            format!(
                "raster holds {} bytes, header {width}x{height} needs {expected}",
                data.len()
            ),
        ));
    }
    Ok(data)
}

/// Reads a depth raster and the intrinsics from its sidecar.
pub fn read_depth(path: &Path) -> Result<(DepthImage, CameraIntrinsics)> {
    let side = sidecar_path(path);
    let h: DepthHeader = read_json(&side)?;
    let intr = CameraIntrinsics::new(h.fx, h.fy, h.cx, h.cy, h.width, h.height)
        .map_err(|e| BenchError::parse(&side, e.to_string()))?;
    let data = read_raster(path, h.width, h.height, 4)?;
    let values = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let depth = DepthImage::new(h.width, h.height, values).map_err(|e| BenchError::parse(path, e.to_string()))?;
    Ok((depth, intr))
}

/// Writes a depth raster (narrowed to `f32`) and its sidecar.
pub fn write_depth(path: &Path, depth: &DepthImage, intr: &CameraIntrinsics) -> Result<()> {
    if depth.width() != intr.width || depth.height() != intr.height {
        return Err(BenchError::Invalid(format!(
            "depth is {}x{}, intrinsics describe {}x{}",
            depth.width(),
            depth.height(),
            intr.width,
            intr.height
        )));
    }
    let bytes: Vec<u8> = depth.values().iter().flat_map(|&d| (d as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &DepthHeader {
            width: intr.width,
            height: intr.height,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
        },
    )
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let h: MaskHeader = read_json(&sidecar_path(path))?;
    let data = read_raster(path, h.width, h.height, 1)?;
    let mut values = Vec::with_capacity(data.len());
    for (i, &b) in data.iter().enumerate() {
        values.push(match b {
            0 => false,
            255 => true,
            other => {
                return Err(BenchError::parse(
                    path,
                    format!("pixel {i} has mask value {other}, expected 0 or 255"),
                ))
            }
        });
    }
    BinaryMask::new(h.width, h.height, values).map_err(|e| BenchError::parse(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes: Vec<u8> = mask.values().iter().map(|&m| if m { 255 } else { 0 }).collect();
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &MaskHeader {
            width: mask.width(),
            height: mask.height(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (DepthImage, CameraIntrinsics, BinaryMask) {
        let values = vec![0.0, 0.5, 1.25, 0.0, 3.0, 0.7f32 as f64];
        let depth = DepthImage::new(3, 2, values).unwrap();
        let intr = CameraIntrinsics::new(500.0, 510.0, 1.5, 1.0, 3, 2).unwrap();
        let mask = BinaryMask::new(3, 2, vec![true, false, true, true, false, true]).unwrap();
        (depth, intr, mask)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (depth, intr, mask) = sample();
        let dp = dir.path().join("d.raw");
        let mp = dir.path().join("m.raw");
        write_depth(&dp, &depth, &intr).unwrap();
        write_mask(&mp, &mask).unwrap();
        let (d2, i2) = read_depth(&dp).unwrap();
        assert_eq!(d2, depth);
        assert_eq!(i2, intr);
        assert_eq!(d2.valid_count(), 4);
        assert_eq!(read_mask(&mp).unwrap(), mask);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (depth, intr, mask) = sample();
        let dp = dir.path().join("d.raw");
        write_depth(&dp, &depth, &intr).unwrap();
        fs::write(&dp, [0u8; 20]).unwrap();
        let err = read_depth(&dp).unwrap_err();
        assert!(err.to_string().contains("needs 24"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let mp = dir.path().join("m.raw");
        write_mask(&mp, &mask).unwrap();
        fs::write(&mp, [0u8, 255, 7, 0, 0, 0]).unwrap();
        assert!(read_mask(&mp).unwrap_err().to_string().contains("pixel 2"));
    }

    #[test]
    fn missing_sidecar_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let dp = dir.path().join("nothing.raw");
        assert_eq!(read_depth(&dp).unwrap_err().exit_code(), 4);
    }
}
