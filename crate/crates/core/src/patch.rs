//! Adversarial patch: an RGB texture plus a single-channel opacity mask.
//!
//! All values live in `[0, 1]`; opacity 0 is fully transparent and 1 fully
//! opaque. Patches are persisted in a full-precision binary container so an
//! optimization checkpoint reloads bit-exactly; the PNG preview is a lossy
//! 8-bit RGBA view for humans.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::quantize;

/// Mean of the Gaussian texture initialization.
pub const INIT_MEAN: f64 = 0.5;
/// Standard deviation of the Gaussian texture initialization.
pub const INIT_STD: f64 = 0.15;

const MAGIC: &[u8; 8] = b"VPATCH\0\x01";
const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    height: usize,
    width: usize,
    /// `height * width * 3`, row-major, interleaved RGB.
    texture: Vec<f64>,
    /// `height * width`, row-major.
    opacity: Vec<f64>,
}

impl Patch {
    /// Builds a patch from raw buffers, clamping every entry into `[0, 1]`.
    pub fn from_parts(
        height: usize,
        width: usize,
        texture: Vec<f64>,
        opacity: Vec<f64>,
    ) -> Result<Self> {
        check_dims(height, width)?;
        if texture.len() != height * width * 3 || opacity.len() != height * width {
            return Err(Error::PayloadMismatch(format!(
                "{}x{} patch needs {} texture and {} opacity values, got {} and {}",
                height,
                width,
                height * width * 3,
                height * width,
                texture.len(),
                opacity.len()
            )));
        }
        let mut p = Self {
            height,
            width,
            texture,
            opacity,
        };
        p.clamp_in_place();
        Ok(p)
    }

    pub fn uniform(height: usize, width: usize, rgb: [f64; 3], opacity: f64) -> Result<Self> {
        check_dims(height, width)?;
        check_unit("opacity", opacity)?;
        let texture = (0..height * width).flat_map(|_| rgb).collect();
        Self::from_parts(height, width, texture, vec![opacity; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn texture(&self) -> &[f64] {
        &self.texture
    }

    pub fn opacity(&self) -> &[f64] {
        &self.opacity
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.texture[i], self.texture[i + 1], self.texture[i + 2]]
    }

    #[inline]
    pub fn alpha(&self, row: usize, col: usize) -> f64 {
        self.opacity[row * self.width + col]
    }

    /// Same texture, every opacity texel set to `value`.
    pub fn with_constant_opacity(&self, value: f64) -> Result<Self> {
        check_unit("opacity", value)?;
        Ok(Self {
            opacity: vec![value; self.opacity.len()],
            ..self.clone()
        })
    }

    /// Applies `f` to texture and opacity buffers, then projects back into
    /// the unit box so the result is always a valid patch.
    pub fn map_buffers(&self, f: impl FnOnce(&mut [f64], &mut [f64])) -> Self {
        let mut out = self.clone();
        f(&mut out.texture, &mut out.opacity);
        out.clamp_in_place();
        out
    }

    fn clamp_in_place(&mut self) {
        for v in self.texture.iter_mut().chain(self.opacity.iter_mut()) {
            *v = clamp_unit(*v);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (self.texture.len() + self.opacity.len()));
        buf.extend_from_slice(MAGIC);
        for d in [self.height, self.width, self.height, self.width] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.texture.iter().chain(&self.opacity) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Parses the container layout: magic, four little-endian `u32`
    /// dimensions (texture h, w, opacity h, w), then `f64` texture values
    /// followed by `f64` opacity values.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedContainer(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::MalformedContainer("bad magic".into()));
        }
        let dim = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        };
        let (th, tw, oh, ow) = (dim(0), dim(1), dim(2), dim(3));
        if th == 0 || tw == 0 {
            return Err(Error::MalformedContainer(format!("zero texture size {th}x{tw}")));
        }
        if (th, tw) != (oh, ow) {
            return Err(Error::PayloadMismatch(format!(
                "texture is {th}x{tw} but opacity is {oh}x{ow}"
            )));
        }
        let n_tex = th * tw * 3;
        let n_op = oh * ow;
        let expected = HEADER_LEN + 8 * (n_tex + n_op);
        if bytes.len() != expected {
            return Err(Error::MalformedContainer(format!(
                "payload is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let texture: Vec<f64> = values.by_ref().take(n_tex).collect();
        let opacity: Vec<f64> = values.collect();
        if texture
            .iter()
            .chain(&opacity)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::MalformedContainer("value outside [0, 1]".into()));
        }
        Ok(Self {
            height: th,
            width: tw,
            texture,
            opacity,
        })
    }

    /// Lossy 8-bit RGBA view: RGB from the texture, A from the opacity.
    pub fn to_preview(&self) -> image::RgbaImage {
        image::RgbaImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (r, c) = (y as usize, x as usize);
            let t = self.texel(r, c);
            image::Rgba([
                quantize(t[0]),
                quantize(t[1]),
                quantize(t[2]),
                quantize(self.alpha(r, c)),
            ])
        })
    }

    pub fn save_preview(&self, path: &Path) -> Result<()> {
        self.to_preview()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

/// Gaussian-noise texture (mean [`INIT_MEAN`], stdev [`INIT_STD`], clamped)
/// with a constant opacity mask. Pure in its arguments.
pub fn init_patch(height: usize, width: usize, seed: u64, init_opacity: f64) -> Result<Patch> {
    check_dims(height, width)?;
    check_unit("initial opacity", init_opacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(INIT_MEAN, INIT_STD).expect("valid normal parameters");
    let texture = (0..height * width * 3)
        .map(|_| clamp_unit(normal.sample(&mut rng)))
        .collect();
    Patch::from_parts(height, width, texture, vec![init_opacity; height * width])
}

/// Box projection onto `[0, 1]`.
pub fn project_patch(p: &Patch) -> Patch {
    p.map_buffers(|_, _| {})
}

#[inline]
pub fn clamp_unit(v: f64) -> f64 {
    // NaN maps to 0 so a bad gradient cannot leak out of the box.
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "patch must be at least 1x1, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_unit(what: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("{what} {v} is outside [0, 1]")));
    }
    Ok(())
}

/// Where a patch is affixed: a sub-rectangle of a host quad's UV space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlacement {
    pub host_quad_id: String,
    /// `[u0, v0, u1, v1]` with `u0 < u1`, `v0 < v1`, all in `[0, 1]`.
    pub uv_rect: [f64; 4],
}

impl PatchPlacement {
    pub fn new(host_quad_id: impl Into<String>, uv_rect: [f64; 4]) -> Self {
        Self {
            host_quad_id: host_quad_id.into(),
            uv_rect,
        }
    }

    pub fn validate_rect(&self) -> Result<()> {
        let [u0, v0, u1, v1] = self.uv_rect;
        let ok = (0.0..=1.0).contains(&u0)
            && (0.0..=1.0).contains(&v0)
            && (0.0..=1.0).contains(&u1)
            && (0.0..=1.0).contains(&v1)
            && u0 < u1
            && v0 < v1;
        if !ok {
            return Err(Error::InvalidPlacement(format!(
                "uv_rect {:?} on `{}` must satisfy 0 <= u0 < u1 <= 1 and 0 <= v0 < v1 <= 1",
                self.uv_rect, self.host_quad_id
            )));
        }
        Ok(())
    }

    /// Maps a host-quad UV into continuous patch coordinates `(u, v)` in
    /// `[0, 1]`, or `None` when the point is outside the rectangle.
    #[inline]
    pub fn local_uv(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let [u0, v0, u1, v1] = self.uv_rect;
        if u < u0 || u > u1 || v < v0 || v > v1 {
            return None;
        }
        Some(((u - u0) / (u1 - u0), (v - v0) / (v1 - v0)))
    }
}

/// Sidecar metadata written next to every patch checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMetadata {
    pub seed: u64,
    pub stage: String,
    pub iterations: usize,
    pub init_mean: f64,
    pub init_std: f64,
    pub init_opacity: f64,
    pub config_hash: String,
}

impl PatchMetadata {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
