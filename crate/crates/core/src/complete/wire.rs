//! JSON bodies of the completion HTTP protocol.
//!
//! Images travel as base64 RGBA PNG (mask in alpha), depth as base64 PFM.
//! `anchor_pose` and the camera fields on depth requests are optional
//! extensions; servers that do not need a camera may ignore them.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::camera::{from_row_major, row_major, Intrinsics, Pose, RelativeTransform};
use crate::grid::{ColorImage, DepthMap, Mask};
use crate::io::{decode_pfm, decode_png, encode_pfm, encode_png};
use crate::{CompletionError, Vec3};

pub const IMAGE_PATH: &str = "/v1/complete_image";
pub const DEPTH_PATH: &str = "/v1/complete_depth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseWire {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseWire {
    pub fn from_pose(p: &Pose) -> Self {
        Self {
            r: row_major(&p.rotation),
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }

    pub fn to_pose(&self) -> Pose {
        Pose {
            rotation: from_row_major(&self.r),
            translation: Vec3::from(self.t),
        }
    }
}

pub fn rel_to_wire(rel: &RelativeTransform) -> ([f64; 9], [f64; 3]) {
    (row_major(&rel.rotation), [rel.translation.x, rel.translation.y, rel.translation.z])
}

pub fn rel_from_wire(r: &[f64; 9], t: &[f64; 3]) -> RelativeTransform {
    RelativeTransform {
        rotation: from_row_major(r),
        translation: Vec3::from(*t),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRequestWire {
    pub anchor_png_b64: String,
    pub partial_png_b64: String,
    pub r_rel: [f64; 9],
    pub t_rel: [f64; 3],
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_pose: Option<PoseWire>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResponseWire {
    pub image_png_b64: String,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRequestWire {
    pub image_png_b64: String,
    pub partial_depth_pfm_b64: String,
    pub coverage_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_rel: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_rel: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_pose: Option<PoseWire>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthResponseWire {
    pub depth_pfm_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorWire {
    pub code: String,
    pub message: String,
}

fn malformed(what: &str, e: impl std::fmt::Display) -> CompletionError {
    CompletionError::MalformedResponse(format!("{what}: {e}"))
}

pub fn png_b64(color: &ColorImage, mask: &Mask) -> Result<String, CompletionError> {
    encode_png(color, mask)
        .map(|b| B64.encode(b))
        .map_err(|e| CompletionError::InvalidRequest(e.to_string()))
}

pub fn mask_b64(mask: &Mask) -> Result<String, CompletionError> {
    let white = mask.map(|&m| if m { [1.0; 3] } else { [0.0; 3] });
    png_b64(&white, mask)
}

pub fn pfm_b64(depth: &DepthMap) -> String {
    B64.encode(encode_pfm(depth))
}

/// Decode errors are reported as malformed data; servers map them to 400.
pub fn png_from_b64(s: &str) -> Result<(ColorImage, Mask), CompletionError> {
    let bytes = B64.decode(s).map_err(|e| malformed("base64", e))?;
    decode_png(&bytes).map_err(|e| malformed("png", e))
}

pub fn pfm_from_b64(s: &str) -> Result<DepthMap, CompletionError> {
    let bytes = B64.decode(s).map_err(|e| malformed("base64", e))?;
    decode_pfm(&bytes).map_err(|e| malformed("pfm", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::orbit_pose;

    #[test]
    fn pose_survives_json_bit_exactly() {
        let p = orbit_pose(37.3, 12.9, 3.0).unwrap();
        let json = serde_json::to_string(&PoseWire::from_pose(&p)).unwrap();
        let back: PoseWire = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_pose(), p);
        assert!(json.contains("\"R\""));
    }

    #[test]
    fn optional_camera_fields_are_omitted() {
        let req = DepthRequestWire {
            image_png_b64: String::new(),
            partial_depth_pfm_b64: String::new(),
            coverage_png_b64: String::new(),
            r_rel: None,
            t_rel: None,
            intrinsics: None,
            anchor_pose: None,
        };
        let json = serde_json::to_string(&req).unwrap();
        assert!(!json.contains("r_rel"));
        let minimal = r#"{"image_png_b64":"","partial_depth_pfm_b64":"","coverage_png_b64":""}"#;
        assert_eq!(serde_json::from_str::<DepthRequestWire>(minimal).unwrap(), req);
    }

    #[test]
    fn bad_base64_is_malformed() {
        assert!(matches!(png_from_b64("!!"), Err(CompletionError::MalformedResponse(_))));
        assert!(matches!(pfm_from_b64("AAAA"), Err(CompletionError::MalformedResponse(_))));
    }
}
