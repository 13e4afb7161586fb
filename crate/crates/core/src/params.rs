use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MAX_PALETTE: usize = 8;
pub const MAX_CANVAS_SIDE: u32 = 4096;
pub const DEFAULT_STRENGTH: f64 = 0.6;
pub const DEFAULT_CONTROL_STRENGTH: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub const DEFAULT: Canvas = Canvas {
        width: 512,
        height: 512,
    };

    pub fn new(width: u32, height: u32) -> Result<Self, ParamsError> {
        let canvas = Canvas { width, height };
        canvas.validate()?;
        Ok(canvas)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.width == 0
            || self.height == 0
            || self.width > MAX_CANVAS_SIDE
            || self.height > MAX_CANVAS_SIDE
        {
            return Err(ParamsError::Canvas(*self));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas::DEFAULT
    }
}

impl fmt::Display for Canvas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// An sRGB color, written `#rrggbb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", hex::encode(self.0))
    }
}

impl FromStr for Rgb {
    type Err = ParamsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix('#')
            .ok_or_else(|| ParamsError::Color(s.to_string()))?;
        let mut out = [0u8; 3];
        hex::decode_to_slice(body.to_ascii_lowercase(), &mut out)
            .map_err(|_| ParamsError::Color(s.to_string()))?;
        Ok(Rgb(out))
    }
}

impl Serialize for Rgb {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("canvas {0} out of range (1..={MAX_CANVAS_SIDE} per side)")]
    Canvas(Canvas),
    #[error("invalid color `{0}`, expected #rrggbb")]
    Color(String),
    #[error("palette hint has {0} colors, at most {MAX_PALETTE} allowed")]
    PaletteTooLong(usize),
}

/// Knobs handed to the image backend alongside the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    /// How far the output may move away from the base image; 0 keeps the base.
    pub strength: f64,
    pub control_strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette_hint: Option<Vec<Rgb>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_tags: Option<Vec<String>>,
    /// Original size of an attached control image that was rescaled to the canvas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_source: Option<Canvas>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            strength: DEFAULT_STRENGTH,
            control_strength: DEFAULT_CONTROL_STRENGTH,
            palette_hint: None,
            style_tags: None,
            control_source: None,
        }
    }
}

fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

impl GenerationParams {
    /// Clamps strengths into `[0, 1]` (NaN becomes 0) and checks the palette length.
    pub fn normalized(mut self) -> Result<Self, ParamsError> {
        self.strength = clamp_unit(self.strength);
        self.control_strength = clamp_unit(self.control_strength);
        if let Some(palette) = &self.palette_hint {
            if palette.len() > MAX_PALETTE {
                return Err(ParamsError::PaletteTooLong(palette.len()));
            }
        }
        Ok(self)
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.strength = clamp_unit(strength);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strengths_clamp() {
        let p = GenerationParams {
            strength: 1.7,
            control_strength: -0.2,
            ..Default::default()
        }
        .normalized()
        .unwrap();
        assert_eq!(p.strength, 1.0);
        assert_eq!(p.control_strength, 0.0);
        let nan = GenerationParams::default().with_strength(f64::NAN);
        assert_eq!(nan.strength, 0.0);
    }

    #[test]
    fn palette_limit() {
        let ok = GenerationParams {
            palette_hint: Some(vec![Rgb([0, 0, 0]); 8]),
            ..Default::default()
        };
        assert!(ok.normalized().is_ok());
        let too_long = GenerationParams {
            palette_hint: Some(vec![Rgb([0, 0, 0]); 9]),
            ..Default::default()
        };
        assert_eq!(
            too_long.normalized(),
            Err(ParamsError::PaletteTooLong(9))
        );
    }

    #[test]
    fn rgb_hex_form() {
        let c: Rgb = "#FF8000".parse().unwrap();
        assert_eq!(c, Rgb([255, 128, 0]));
        assert_eq!(c.to_string(), "#ff8000");
        assert!("ff8000".parse::<Rgb>().is_err());
        assert!("#ff80".parse::<Rgb>().is_err());
    }

    #[test]
    fn canvas_bounds() {
        assert!(Canvas::new(64, 64).is_ok());
        assert!(Canvas::new(0, 64).is_err());
        assert!(Canvas::new(64, MAX_CANVAS_SIDE + 1).is_err());
    }
}
