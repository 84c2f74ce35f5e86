use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::npy::{read_header, Dtype};
use super::zip::ZipArchive;
use super::Dataset;
use crate::error::{Error, Result};

/// Class counts of shape, scale, orientation, x and y.
pub const DSPRITES_FACTOR_SIZES: [usize; 5] = [3, 6, 40, 32, 32];
const FACTOR_NAMES: [&str; 5] = ["shape", "scale", "orientation", "pos_x", "pos_y"];
const SIDE: usize = 64;

fn member_name(archive: &ZipArchive<BufReader<File>>, key: &str) -> Option<String> {
    [format!("{key}.npy"), key.to_string()]
        .into_iter()
        .find(|n| archive.entry(n).is_some())
}

/// Loads the dSprites ZIP-of-NPY archive. With `subset = Some(k)` only the
/// first `k` examples of a seeded shuffle are kept; images are streamed so the
/// full archive never has to be held in memory.
pub fn load_dsprites(path: &Path, subset: Option<usize>, seed: u64) -> Result<Dataset> {
    let io_err = |e: std::io::Error| Error::format(path, e.to_string());
    let mut archive = ZipArchive::new(BufReader::new(File::open(path)?)).map_err(io_err)?;
    let imgs_name = member_name(&archive, "imgs").ok_or_else(|| Error::format(path, "missing key imgs"))?;
    let classes_name = member_name(&archive, "latents_classes")
        .ok_or_else(|| Error::format(path, "missing key latents_classes"))?;

    let mut reader = archive.open(&classes_name).map_err(io_err)?;
    let header = read_header(&mut reader).map_err(io_err)?;
    if !header.dtype.is_integer() || header.shape.len() != 2 || header.shape[1] != 6 {
        return Err(Error::format(
            path,
            format!("latents_classes must be an N x 6 integer array, got {:?} {:?}", header.dtype, header.shape),
        ));
    }
    let n = header.shape[0];
    let mut raw = vec![0u8; header.numel() * header.dtype.size()];
    reader.read_exact(&mut raw).map_err(io_err)?;
    drop(reader);
    let classes: Vec<i64> = raw.chunks(header.dtype.size()).map(|b| header.dtype.read_int(b)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    if let Some(k) = subset {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(k.min(n));
    }
    let slot: HashMap<usize, usize> = order.iter().enumerate().map(|(pos, &src)| (src, pos)).collect();

    let mut factors = Vec::with_capacity(order.len() * 5);
    for &src in &order {
        for (j, &size) in DSPRITES_FACTOR_SIZES.iter().enumerate() {
            let v = classes[src * 6 + j + 1];
            if v < 0 || v as usize >= size {
                return Err(Error::format(
                    path,
                    format!("row {src}: {} class {v} outside [0, {size})", FACTOR_NAMES[j]),
                ));
            }
            factors.push(v as u32);
        }
    }

    let mut reader = archive.open(&imgs_name).map_err(io_err)?;
    let header = read_header(&mut reader).map_err(io_err)?;
    if header.dtype != Dtype::U8 || header.shape != [n, SIDE, SIDE] {
        return Err(Error::format(
            path,
            format!("imgs must be a {n} x 64 x 64 uint8 array, got {:?} {:?}", header.dtype, header.shape),
        ));
    }
    let per = SIDE * SIDE;
    let mut images = vec![0f32; order.len() * per];
    let mut row = vec![0u8; per];
    for src in 0..n {
        reader.read_exact(&mut row).map_err(io_err)?;
        if let Some(&pos) = slot.get(&src) {
            for (dst, &b) in images[pos * per..(pos + 1) * per].iter_mut().zip(&row) {
                if b > 1 {
                    return Err(Error::format(path, format!("imgs row {src} is not binary (value {b})")));
                }
                *dst = b as f32;
            }
        }
    }
    // drain so the CRC of the member is verified
    std::io::copy(&mut reader, &mut std::io::sink()).map_err(io_err)?;

    Dataset::new([1, SIDE, SIDE], images)?.with_factors(
        factors,
        DSPRITES_FACTOR_SIZES.to_vec(),
        FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{npy, zip};

    fn fixture(n: usize, classes_descr: &str, corrupt_factor: bool) -> Vec<u8> {
        let mut imgs = vec![0u8; n * per_image()];
        for i in 0..n {
            imgs[i * per_image() + i] = 1;
        }
        let mut cls = Vec::new();
        for i in 0..n {
            let mut row = [0i64, (i % 3) as i64, (i % 6) as i64, (i % 40) as i64, (i % 32) as i64, (i % 32) as i64];
            if corrupt_factor && i == 1 {
                row[1] = 3;
            }
            for v in row {
                match classes_descr {
                    "<i8" => cls.extend_from_slice(&v.to_le_bytes()),
                    "<f8" => cls.extend_from_slice(&(v as f64).to_le_bytes()),
                    _ => unreachable!(),
                }
            }
        }
        let imgs_npy = npy::encode("|u1", &[n, 64, 64], &imgs);
        let cls_npy = npy::encode(classes_descr, &[n, 6], &cls);
        zip::write_zip(&[("imgs.npy", &imgs_npy, true), ("latents_classes.npy", &cls_npy, false)])
    }

    fn per_image() -> usize {
        64 * 64
    }

    fn write(bytes: &[u8]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dsprites.npz");
        std::fs::write(&p, bytes).unwrap();
        (dir, p)
    }

    #[test]
    fn loads_factors_and_images() {
        let (_d, p) = write(&fixture(12, "<i8", false));
        let d = load_dsprites(&p, None, 0).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.image_shape, [1, 64, 64]);
        assert_eq!(d.factor_sizes.as_deref(), Some(&DSPRITES_FACTOR_SIZES[..]));
        let mut shapes = d.factor_column(0).unwrap();
        assert_eq!(shapes[..3], [0, 1, 2]);
        shapes.sort();
        shapes.dedup();
        assert_eq!(shapes.len(), 3);
        assert_eq!(d.image(5)[5], 1.0);
        assert_eq!(d.images.iter().filter(|&&v| v == 1.0).count(), 12);
    }

    #[test]
    fn subset_is_seeded_shuffle_prefix() {
        let (_d, p) = write(&fixture(12, "<i8", false));
        let full = load_dsprites(&p, None, 0).unwrap();
        let sub = load_dsprites(&p, Some(5), 9).unwrap();
        assert_eq!(sub, load_dsprites(&p, Some(5), 9).unwrap());
        assert_eq!(sub, full.subset(5, 9));
    }

    #[test]
    fn rejects_bad_archives() {
        let (_d, p) = write(&fixture(4, "<f8", false));
        assert!(load_dsprites(&p, None, 0).unwrap_err().to_string().contains("integer"));
        let (_d, p) = write(&fixture(4, "<i8", true));
        assert!(load_dsprites(&p, None, 0).unwrap_err().to_string().contains("outside"));
        let only = zip::write_zip(&[("imgs.npy", &npy::encode("|u1", &[1, 64, 64], &[0; 4096]), false)]);
        let (_d, p) = write(&only);
        assert!(load_dsprites(&p, None, 0).unwrap_err().to_string().contains("latents_classes"));
    }
}
