use std::path::Path;

use crate::error::{Error, Result};

pub const EAIV_MAGIC: &[u8; 4] = b"EAIV";
pub const EAIV_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;

/// Grayscale video, `frames × height × width` bytes in frame-major,
/// row-major order.
///
/// Frame rate is stored in integer millihertz, which is exactly what the
/// EAIV container carries.
#[derive(Clone, PartialEq, Eq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    fps_millis: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for VideoClip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "VideoClip({}x{}x{} @ {} fps)",
            self.frames,
            self.height,
            self.width,
            self.fps()
        )
    }
}

impl VideoClip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        fps: f64,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::param("fps", format!("must be positive, got {fps}")));
        }
        let millis = (fps * 1000.0).round();
        if millis < 1.0 || millis > u32::MAX as f64 {
            return Err(Error::param(
                "fps",
                format!("{fps} not representable in millihertz"),
            ));
        }
        Self::with_fps_millis(frames, height, width, millis as u32, pixels)
    }

    pub fn with_fps_millis(
        frames: usize,
        height: usize,
        width: usize,
        fps_millis: u32,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        for (name, v) in [("frames", frames), ("height", height), ("width", width)] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if fps_millis == 0 {
            return Err(Error::param("fps", "must be positive"));
        }
        if pixels.len() != frames * height * width {
            return Err(Error::Contract(format!(
                "pixel buffer has {} bytes, expected {frames}x{height}x{width}",
                pixels.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            fps_millis,
            pixels,
        })
    }

    /// Assembles a clip from whole frames of identical size.
    pub fn from_frames(
        height: usize,
        width: usize,
        fps_millis: u32,
        frames: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let n = frames.len();
        if frames.iter().any(|f| f.len() != height * width) {
            return Err(Error::Contract("frame size mismatch".into()));
        }
        Self::with_fps_millis(n, height, width, fps_millis, frames.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        1
    }

    pub fn fps(&self) -> f64 {
        self.fps_millis as f64 / 1000.0
    }

    pub fn fps_millis(&self) -> u32 {
        self.fps_millis
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> u8 {
        self.pixels[(t * self.height + y) * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// New clip built from the given frame indices (repeats allowed).
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            if i >= self.frames {
                return Err(Error::Index {
                    op: "select_frames",
                    index: i,
                    extent: self.frames,
                });
            }
            out.extend_from_slice(self.frame(i));
        }
        Self::with_fps_millis(indices.len(), self.height, self.width, self.fps_millis, out)
    }

    pub(crate) fn map_frames(&self, mut f: impl FnMut(&[u8]) -> Vec<u8>) -> Self {
        let pixels = (0..self.frames).flat_map(|t| f(self.frame(t))).collect();
        Self {
            pixels,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            frames: self.frames,
            height: self.height,
            width: self.width,
            fps_millis: self.fps_millis,
            pixels: Vec::new(),
        }
    }
}

pub fn encode_eaiv(clip: &VideoClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + clip.pixels.len());
    out.extend_from_slice(EAIV_MAGIC);
    for v in [
        EAIV_VERSION,
        clip.frames as u32,
        clip.height as u32,
        clip.width as u32,
        1,
        clip.fps_millis,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&clip.pixels);
    out
}

/// Parses an EAIV container. Three- and four-channel payloads are collapsed
/// to luminance (Rec. 601 weights, alpha ignored).
pub fn decode_eaiv(bytes: &[u8]) -> Result<VideoClip> {
    let fmt = |field, reason: String| Error::Format { field, reason };
    if bytes.len() < 4 || &bytes[..4] != EAIV_MAGIC {
        return Err(fmt("magic", "expected \"EAIV\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fmt(
            "header",
            format!("{} bytes, need {HEADER_LEN}", bytes.len()),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != EAIV_VERSION {
        return Err(fmt("version", format!("unsupported version {version}")));
    }
    let names = ["frames", "height", "width", "channels", "fps_millis"];
    let mut dims = [0usize; 5];
    for (i, name) in names.iter().enumerate() {
        let v = word(i + 1);
        if v == 0 {
            return Err(fmt(name, "must be nonzero".into()));
        }
        dims[i] = v as usize;
    }
    let [frames, height, width, channels, fps_millis] = dims;
    if !matches!(channels, 1 | 3 | 4) {
        return Err(fmt(
            "channels",
            format!("unsupported channel count {channels}"),
        ));
    }
    let expected = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| fmt("payload", "dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(fmt(
            "payload",
            format!(
                "truncated: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(fmt(
            "payload",
            format!(
                "{} trailing bytes after {expected}",
                payload.len() - expected
            ),
        ));
    }
    let pixels = if channels == 1 {
        payload.to_vec()
    } else {
        payload
            .chunks_exact(channels)
            .map(|px| {
                let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect()
    };
    VideoClip::with_fps_millis(frames, height, width, fps_millis as u32, pixels)
}

pub fn save_raw_video(clip: &VideoClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_eaiv(clip)).map_err(|e| Error::io(path, e))
}

pub fn load_raw_video(path: impl AsRef<Path>) -> Result<VideoClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_eaiv(&bytes)
}
