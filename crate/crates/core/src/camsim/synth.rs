//! Synthetic image content and the video container.

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraId, CaptureParams, ColorSpace, FieldOfView};

pub const VIDEO_MAGIC: &[u8; 4] = b"SDVD";
const JPEG_QUALITY: u8 = 80;

/// What gets stamped into the image comment segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamp {
    pub camera: CameraId,
    pub media_id: u64,
    pub frame: u32,
    pub time: f64,
    pub joints: [f64; 4],
}

impl Stamp {
    pub fn comment(&self) -> String {
        format!(
            "spacedream camera={} media={} frame={} t={:.3} q={:.4},{:.4},{:.4},{:.4}",
            self.camera.as_str(),
            self.media_id,
            self.frame,
            self.time,
            self.joints[0],
            self.joints[1],
            self.joints[2],
            self.joints[3]
        )
    }
}

/// Seeded gradient with a few random blobs, shifted by the joint positions.
fn render(seed: u64, p: &CaptureParams, stamp: &Stamp) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stamp.media_id.rotate_left(17) ^ stamp.frame as u64);
    let (w, h) = (p.width as usize, p.height as usize);
    let zoom = match p.field_of_view {
        FieldOfView::Wide => 1.0,
        FieldOfView::Linear => 1.5,
        FieldOfView::Narrow => 2.5,
    };
    let gain = if p.use_light { 1.0 } else { 0.7 };
    let phase: f64 = stamp.joints.iter().sum::<f64>();
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.25),
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            )
        })
        .collect();
    let channels = match p.color_space {
        ColorSpace::Rgb8 => 3,
        ColorSpace::Gray8 => 1,
    };
    let mut px = Vec::with_capacity(w * h * channels);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 / w as f64 - 0.5) / zoom + 0.5;
            let v = (y as f64 / h as f64 - 0.5) / zoom + 0.5;
            let mut rgb = [u, v, 0.5 + 0.5 * (phase + 4.0 * u).sin()];
            for (bx, by, r, c) in &blobs {
                let d2 = (u - bx).powi(2) + (v - by).powi(2);
                let k = (-d2 / (r * r)).exp();
                for i in 0..3 {
                    rgb[i] = rgb[i] * (1.0 - k) + c[i] * k;
                }
            }
            let rgb = rgb.map(|c| (c * gain * 255.0).clamp(0.0, 255.0) as u8);
            match p.color_space {
                ColorSpace::Rgb8 => px.extend_from_slice(&rgb),
                ColorSpace::Gray8 => {
                    px.push(((rgb[0] as u32 * 77 + rgb[1] as u32 * 150 + rgb[2] as u32 * 29) >> 8) as u8)
                }
            }
        }
    }
    px
}

/// Baseline JPEG with a COM segment right after SOI.
pub fn synth_jpeg(seed: u64, p: &CaptureParams, stamp: &Stamp) -> Vec<u8> {
    let px = render(seed, p, stamp);
    let mut enc_out = Vec::new();
    let color = match p.color_space {
        ColorSpace::Rgb8 => ExtendedColorType::Rgb8,
        ColorSpace::Gray8 => ExtendedColorType::L8,
    };
    JpegEncoder::new_with_quality(&mut enc_out, JPEG_QUALITY)
        .encode(&px, p.width, p.height, color)
        .expect("in-memory jpeg encode");
    insert_comment(&enc_out, stamp.comment().as_bytes())
}

fn insert_comment(jpeg: &[u8], text: &[u8]) -> Vec<u8> {
    let text = &text[..text.len().min(u16::MAX as usize - 2)];
    let mut out = Vec::with_capacity(jpeg.len() + text.len() + 4);
    out.extend_from_slice(&jpeg[..2]);
    out.extend_from_slice(&[0xFF, 0xFE]);
    out.extend_from_slice(&((text.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(text);
    out.extend_from_slice(&jpeg[2..]);
    out
}

/// Marker-level check: SOI first, EOI last, well-formed segment chain up to SOS.
pub fn is_valid_jpeg(b: &[u8]) -> bool {
    if b.len() < 4 || b[..2] != [0xFF, 0xD8] || b[b.len() - 2..] != [0xFF, 0xD9] {
        return false;
    }
    let mut i = 2;
    while i + 4 <= b.len() {
        if b[i] != 0xFF {
            return false;
        }
        let marker = b[i + 1];
        let len = u16::from_be_bytes([b[i + 2], b[i + 3]]) as usize;
        if len < 2 {
            return false;
        }
        if marker == 0xDA {
            return true;
        }
        i += 2 + len;
    }
    false
}

/// The COM segment text, if present.
pub fn jpeg_comment(b: &[u8]) -> Option<String> {
    if b.len() < 6 || b[2..4] != [0xFF, 0xFE] {
        return None;
    }
    let len = u16::from_be_bytes([b[4], b[5]]) as usize;
    let text = b.get(6..4 + len)?;
    String::from_utf8(text.to_vec()).ok()
}

/// `SDVD | version u8 | fps u16 | frames u32 | width u16 | height u16`, then
/// `len u32 | jpeg` per frame, all little endian.
pub fn encode_video(fps: u16, width: u32, height: u32, frames: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(VIDEO_MAGIC);
    out.push(1);
    out.extend_from_slice(&fps.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&(height as u16).to_le_bytes());
    for f in frames {
        out.extend_from_slice(&(f.len() as u32).to_le_bytes());
        out.extend_from_slice(f);
    }
    out
}

pub fn decode_video(b: &[u8]) -> Option<(u16, Vec<&[u8]>)> {
    if b.get(..4)? != VIDEO_MAGIC || *b.get(4)? != 1 {
        return None;
    }
    let fps = u16::from_le_bytes(b.get(5..7)?.try_into().ok()?);
    let n = u32::from_le_bytes(b.get(7..11)?.try_into().ok()?) as usize;
    let mut i = 15;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(b.get(i..i + 4)?.try_into().ok()?) as usize;
        frames.push(b.get(i + 4..i + 4 + len)?);
        i += 4 + len;
    }
    (i == b.len()).then_some((fps, frames))
}
