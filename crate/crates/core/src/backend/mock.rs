//! Deterministic stand-in for a diffusion server.
//!
//! Output is a pure function of the request's canonical bytes (plus the base
//! image and mask pixels it references):
//!
//! 1. hash the canonical request bytes with SHA-256;
//! 2. seed SplitMix64 with the first 8 digest bytes, big-endian;
//! 3. fill RGBA row-major; R, G, B take successive generator bytes (each
//!    64-bit output yields 8 bytes, least significant first), alpha is 255;
//! 4. with base and mask, copy base pixels wherever the mask bit is 0;
//! 5. with base and no mask, blend `base*(1-strength) + noise*strength` per
//!    channel, rounding half up.

use crate::backend::{Backend, BackendDescriptor, BackendError, BackendKind, BlobSource};
use crate::digest::Digest;
use crate::raster::{ImageBlob, MaskRegion, Rgba};
use crate::request::GenerationRequest;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

struct ByteStream {
    rng: SplitMix64,
    buf: [u8; 8],
    pos: usize,
}

impl ByteStream {
    fn new(seed: u64) -> Self {
        ByteStream {
            rng: SplitMix64::new(seed),
            buf: [0; 8],
            pos: 8,
        }
    }

    fn next(&mut self) -> u8 {
        if self.pos == 8 {
            self.buf = self.rng.next_u64().to_le_bytes();
            self.pos = 0;
        }
        let b = self.buf[self.pos];
        self.pos += 1;
        b
    }
}

/// Steps 1-3: the noise raster for a request, before any base-image mixing.
pub fn mock_fill(request: &GenerationRequest) -> Rgba {
    let digest = Digest::of(&request.canonical_bytes());
    let mut bytes = ByteStream::new(digest.leading_u64());
    let mut pixels = Vec::with_capacity(request.canvas.pixels() * 4);
    for _ in 0..request.canvas.pixels() {
        pixels.push(bytes.next());
        pixels.push(bytes.next());
        pixels.push(bytes.next());
        pixels.push(255);
    }
    Rgba {
        canvas: request.canvas,
        pixels,
    }
}

fn blend_channel(base: u8, noise: u8, strength: f64) -> u8 {
    let v = base as f64 * (1.0 - strength) + noise as f64 * strength;
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn mock_generate(
    request: &GenerationRequest,
    base: Option<&Rgba>,
    mask: Option<&MaskRegion>,
) -> Result<ImageBlob, BackendError> {
    request.validate()?;
    if request.base_image.is_some() != base.is_some() || request.mask.is_some() != mask.is_some() {
        return Err(BackendError::Config(
            "decoded inputs do not match the request's references".into(),
        ));
    }
    let mut out = mock_fill(request);
    match (base, mask) {
        (Some(base), Some(mask)) => {
            check_dims(request, base.canvas)?;
            check_dims(request, mask.canvas())?;
            for i in 0..request.canvas.pixels() {
                if !mask.get_index(i) {
                    out.pixels[i * 4..i * 4 + 4].copy_from_slice(base.pixel(i));
                }
            }
        }
        (Some(base), None) => {
            check_dims(request, base.canvas)?;
            let s = request.params.strength;
            for (o, b) in out.pixels.iter_mut().zip(base.pixels.iter()) {
                *o = blend_channel(*b, *o, s);
            }
        }
        (None, _) => {}
    }
    Ok(ImageBlob::from_rgba(&out)?)
}

fn check_dims(request: &GenerationRequest, actual: crate::params::Canvas) -> Result<(), BackendError> {
    if actual != request.canvas {
        return Err(BackendError::Config(format!(
            "input is {actual}, request canvas is {}",
            request.canvas
        )));
    }
    Ok(())
}

/// In-process backend wrapping [`mock_generate`]. Declares every capability.
#[derive(Debug, Clone)]
pub struct MockBackend {
    descriptor: BackendDescriptor,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend {
            descriptor: BackendDescriptor {
                name: "mock".into(),
                kind: BackendKind::Mock,
                endpoint: None,
                capabilities: BackendDescriptor::all_capabilities(),
            },
        }
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(
        &self,
        request: &GenerationRequest,
        blobs: &dyn BlobSource,
    ) -> Result<ImageBlob, BackendError> {
        self.precheck(request)?;
        let base = match &request.base_image {
            Some(d) => Some(decode_input(d, blobs, Rgba::decode_png)?),
            None => None,
        };
        let mask = match &request.mask {
            Some(d) => Some(decode_input(d, blobs, MaskRegion::from_png)?),
            None => None,
        };
        mock_generate(request, base.as_ref(), mask.as_ref())
    }
}

fn decode_input<T>(
    digest: &Digest,
    blobs: &dyn BlobSource,
    decode: impl FnOnce(&[u8]) -> Result<T, crate::raster::RasterError>,
) -> Result<T, BackendError> {
    let bytes = blobs.fetch(digest)?;
    decode(&bytes).map_err(|e| BackendError::Input {
        digest: *digest,
        reason: e.to_string(),
    })
}
