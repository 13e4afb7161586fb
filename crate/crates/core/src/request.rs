use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::params::{Canvas, GenerationParams, ParamsError, Rgb, MAX_PALETTE};
use crate::stage::StageKind;

/// Everything a backend needs to produce one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub stage: StageKind,
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub base_image: Option<Digest>,
    pub mask: Option<Digest>,
    pub control_image: Option<Digest>,
    pub seed: u64,
    pub params: GenerationParams,
    pub canvas: Canvas,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RequestError {
    #[error("mask given without a base image")]
    MaskWithoutBase,
    #[error("rough-stage request has a base image but neither a mask nor a control image")]
    RoughWithBase,
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Flat, fixed-order view serialized for hashing. Keys are lowercase, digests
/// are lowercase hex, absent values are `null`.
#[derive(Serialize)]
struct Canonical<'a> {
    stage: StageKind,
    prompt: &'a str,
    negative_prompt: Option<&'a str>,
    base_image: Option<&'a Digest>,
    mask: Option<&'a Digest>,
    control_image: Option<&'a Digest>,
    seed: u64,
    strength: f64,
    control_strength: f64,
    palette_hint: Option<&'a [Rgb]>,
    style_tags: Option<&'a [String]>,
    control_source: Option<&'a Canvas>,
    width: u32,
    height: u32,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        self.canvas.validate()?;
        if self.mask.is_some() && self.base_image.is_none() {
            return Err(RequestError::MaskWithoutBase);
        }
        if self.stage == StageKind::Rough
            && self.base_image.is_some()
            && self.mask.is_none()
            && self.control_image.is_none()
        {
            return Err(RequestError::RoughWithBase);
        }
        for (field, value) in [
            ("strength", self.params.strength),
            ("control_strength", self.params.control_strength),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RequestError::OutOfRange { field, value });
            }
        }
        if let Some(palette) = &self.params.palette_hint {
            if palette.len() > MAX_PALETTE {
                return Err(ParamsError::PaletteTooLong(palette.len()).into());
            }
        }
        Ok(())
    }

    /// Canonical serialization: compact JSON, fixed field order. Cache keys and
    /// the mock generator's seed are derived from these bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let view = Canonical {
            stage: self.stage,
            prompt: &self.prompt,
            negative_prompt: self.negative_prompt.as_deref(),
            base_image: self.base_image.as_ref(),
            mask: self.mask.as_ref(),
            control_image: self.control_image.as_ref(),
            seed: self.seed,
            strength: self.params.strength,
            control_strength: self.params.control_strength,
            palette_hint: self.params.palette_hint.as_deref(),
            style_tags: self.params.style_tags.as_deref(),
            control_source: self.params.control_source.as_ref(),
            width: self.canvas.width,
            height: self.canvas.height,
        };
        serde_json::to_vec(&view).expect("canonical request serializes")
    }

    pub fn canonical_digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }
}
