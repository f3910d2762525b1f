//! `{"scale": s, "rotation": [9 row-major], "translation": [x, y, z]}` files.

use std::fs;
use std::path::Path;

use groundmesh::{Mat3, RigidScaleTransform, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformJson {
    pub scale: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidScaleTransform> for TransformJson {
    fn from(t: &RigidScaleTransform) -> Self {
        let tr = t.translation();
        Self {
            scale: t.scale(),
            rotation: t.rotation_row_major(),
            translation: [tr.x, tr.y, tr.z],
        }
    }
}

impl TransformJson {
    /// Validates the rotation and scale.
    pub fn to_transform(&self) -> groundmesh::Result<RigidScaleTransform> {
        RigidScaleTransform::new(
            self.scale,
            Mat3::from_row_slice(&self.rotation),
            Vec3::from(self.translation),
        )
    }
}

pub fn to_json_string(t: &RigidScaleTransform) -> String {
    serde_json::to_string_pretty(&TransformJson::from(t)).expect("plain struct serializes") + "\n"
}

pub fn parse_transform(text: &str) -> std::result::Result<RigidScaleTransform, String> {
    let raw: TransformJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
    raw.to_transform().map_err(|e| e.to_string())
}

pub fn read_transform(path: &Path) -> Result<RigidScaleTransform> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_transform(&text).map_err(|m| BenchError::parse(path, m))
}

pub fn write_transform(path: &Path, t: &RigidScaleTransform) -> Result<()> {
    fs::write(path, to_json_string(t)).map_err(|e| BenchError::io(path, e))
}
