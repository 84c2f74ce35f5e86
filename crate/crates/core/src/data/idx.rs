use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Reads a file, transparently inflating gzip content.
pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::format(
                path,
                format!("truncated header: expected at least {} bytes, got {}", at + 4, bytes.len()),
            )
        })
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        let what = if bytes.len() < expected { "truncated payload" } else { "trailing bytes" };
        return Err(Error::format(
            path,
            format!("{what}: expected {expected} bytes, got {}", bytes.len()),
        ));
    }
    Ok(())
}

/// Zero-pads square single-channel images of side `from` to side `to`.
pub fn pad_to(pixels: &[f32], from: usize, to: usize) -> Vec<f32> {
    let border = (to - from) / 2;
    let count = pixels.len() / (from * from);
    let mut out = vec![0.0; count * to * to];
    for (src, dst) in pixels.chunks(from * from).zip(out.chunks_mut(to * to)) {
        for r in 0..from {
            let d = (r + border) * to + border;
            dst[d..d + from].copy_from_slice(&src[r * from..(r + 1) * from]);
        }
    }
    out
}

/// Loads an IDX image/label pair. 28x28 images are zero-padded to 32x32.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_maybe_gz(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            images_path,
            format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    check_len(&img, 16 + count * rows * cols, images_path)?;

    let lab = read_maybe_gz(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            labels_path,
            format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    check_len(&lab, 8 + label_count, labels_path)?;
    if label_count != count {
        return Err(Error::format(
            labels_path,
            format!("{label_count} labels for {count} images"),
        ));
    }
    if rows != cols {
        return Err(Error::format(images_path, format!("non-square images {rows}x{cols}")));
    }

    let pixels: Vec<f32> = img[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let (pixels, side) = if rows < 32 { (pad_to(&pixels, rows, 32), 32) } else { (pixels, rows) };
    let labels: Vec<u32> = lab[8..].iter().map(|&b| b as u32).collect();
    let classes = labels.iter().max().map_or(1, |&m| m as usize + 1).max(10);
    Dataset::new([1, side, side], pixels)?.with_factors(labels, vec![classes], vec!["label".into()])
}
