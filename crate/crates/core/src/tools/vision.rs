use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ToolError;

/// Pixel-coordinate box ordered `(x0, y0, x1, y1)` with `x0 < x1`, `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

/// One segmented instance. `rle` is a run-length encoding of the row-major
/// mask over the box: alternating background/foreground run lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub label: String,
    pub bbox: BoundingBox,
    pub rle: String,
}

/// Backend for perception and image synthesis tools.
pub trait VisionProvider: Send + Sync {
    fn locate(&self, image: &Path, query: &str) -> Result<Vec<BoundingBox>, ToolError>;
    fn detect_faces(&self, image: &Path) -> Result<Vec<BoundingBox>, ToolError>;
    fn segment(&self, image: &Path) -> Result<Vec<InstanceMask>, ToolError>;
    fn generate(&self, prompt: &str, out: &Path) -> Result<(), ToolError>;
    fn edit(&self, prompt: &str, image: &Path, out: &Path) -> Result<(), ToolError>;
}

/// Canned outputs seeded by a hash of the inputs. No model weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubVision;

const FRAME_W: u32 = 640;
const FRAME_H: u32 = 480;

fn read(path: &Path) -> Result<Vec<u8>, ToolError> {
    std::fs::read(path).map_err(|e| ToolError::Provider(format!("{}: {e}", path.display())))
}

fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn random_boxes(rng: &mut ChaCha8Rng, max: u32) -> Vec<BoundingBox> {
    let n = rng.random_range(1..=max);
    (0..n)
        .map(|_| {
            let x0 = rng.random_range(0..FRAME_W - 32);
            let y0 = rng.random_range(0..FRAME_H - 32);
            let x1 = rng.random_range(x0 + 16..=FRAME_W);
            let y1 = rng.random_range(y0 + 16..=FRAME_H);
            BoundingBox { x0, y0, x1, y1 }
        })
        .collect()
}

impl VisionProvider for StubVision {
    fn locate(&self, image: &Path, query: &str) -> Result<Vec<BoundingBox>, ToolError> {
        let bytes = read(image)?;
        Ok(random_boxes(&mut rng_for(&[b"locate", &bytes, query.as_bytes()]), 3))
    }

    fn detect_faces(&self, image: &Path) -> Result<Vec<BoundingBox>, ToolError> {
        let bytes = read(image)?;
        Ok(random_boxes(&mut rng_for(&[b"faces", &bytes]), 4))
    }

    fn segment(&self, image: &Path) -> Result<Vec<InstanceMask>, ToolError> {
        let bytes = read(image)?;
        let mut rng = rng_for(&[b"segment", &bytes]);
        let boxes = random_boxes(&mut rng, 3);
        Ok(boxes
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| {
                let area = (bbox.x1 - bbox.x0) * (bbox.y1 - bbox.y0);
                let mut runs = Vec::new();
                let mut left = area;
                while left > 0 {
                    let r = rng.random_range(1..=left.min(400));
                    runs.push(r.to_string());
                    left -= r;
                }
                InstanceMask { label: format!("instance_{}", i + 1), bbox, rle: runs.join(" ") }
            })
            .collect())
    }

    fn generate(&self, prompt: &str, out: &Path) -> Result<(), ToolError> {
        write_png(out, &Sha256::digest(prompt.as_bytes())[..3], prompt)
    }

    fn edit(&self, prompt: &str, image: &Path, out: &Path) -> Result<(), ToolError> {
        let src = read(image)?;
        let mut h = Sha256::new();
        h.update(&src);
        h.update(prompt.as_bytes());
        write_png(out, &h.finalize()[..3], prompt)
    }
}

pub(crate) fn format_boxes(boxes: &[BoundingBox]) -> String {
    let inner = boxes
        .iter()
        .map(|b| format!("[{}, {}, {}, {}]", b.x0, b.y0, b.x1, b.y1))
        .collect::<Vec<_>>()
        .join(", ");
    format!("[{inner}]")
}

pub(crate) fn format_masks(masks: &[InstanceMask]) -> String {
    serde_json::to_string(masks).expect("masks serialize")
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xedb8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn adler32(bytes: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in bytes {
        a = (a + x as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    let start = out.len();
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let crc = crc32(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

/// 1x1 RGB PNG of `rgb` with the prompt stored in a `tEXt` chunk.
fn png_bytes(rgb: &[u8], prompt: &str) -> Vec<u8> {
    let mut out = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    let mut ihdr = Vec::new();
    ihdr.extend_from_slice(&1u32.to_be_bytes());
    ihdr.extend_from_slice(&1u32.to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);
    chunk(&mut out, b"IHDR", &ihdr);
    let mut text = b"prompt\0".to_vec();
    text.extend(prompt.bytes().filter(|b| b.is_ascii() && *b != 0));
    chunk(&mut out, b"tEXt", &text);
    let raw = [0, rgb[0], rgb[1], rgb[2]];
    let mut z = vec![0x78, 0x01, 0x01, 0x04, 0x00, 0xfb, 0xff];
    z.extend_from_slice(&raw);
    z.extend_from_slice(&adler32(&raw).to_be_bytes());
    chunk(&mut out, b"IDAT", &z);
    chunk(&mut out, b"IEND", &[]);
    out
}

fn write_png(out: &Path, rgb: &[u8], prompt: &str) -> Result<(), ToolError> {
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ToolError::Provider(e.to_string()))?;
    }
    std::fs::write(out, png_bytes(rgb, prompt)).map_err(|e| ToolError::Provider(e.to_string()))
}
