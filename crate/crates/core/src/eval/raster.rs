//! PNG encoding and decoding of model-shaped images.

use std::io::Cursor;

use crate::error::{Error, Result};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn color_type(channels: usize) -> Result<png::ColorType> {
    match channels {
        1 => Ok(png::ColorType::Grayscale),
        3 => Ok(png::ColorType::Rgb),
        c => Err(Error::Png(format!("cannot encode {c}-channel images"))),
    }
}

/// Encodes interleaved 8-bit pixels with optional `tEXt` chunks.
pub fn encode_png(pixels: &[u8], width: usize, height: usize, channels: usize, text: &[(&str, String)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color_type(channels)?);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            enc.add_text_chunk(k.to_string(), v.clone()).map_err(|e| Error::Png(e.to_string()))?;
        }
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer.write_image_data(pixels).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Encodes one planar `C x H x W` image with values in `[0, 1]`.
pub fn image_to_png(image: &[f32], shape: [usize; 3], text: &[(&str, String)]) -> Result<Vec<u8>> {
    let [c, h, w] = shape;
    if image.len() != c * h * w {
        return Err(Error::Png(format!("{} values for a {c}x{h}x{w} image", image.len())));
    }
    let mut pixels = vec![0u8; c * h * w];
    for ch in 0..c {
        for k in 0..h * w {
            pixels[k * c + ch] = to_byte(image[ch * h * w + k]);
        }
    }
    encode_png(&pixels, w, h, c, text)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedPng {
    pub width: usize,
    pub height: usize,
    /// Planar `C x H x W` values in `[0, 1]` with the requested channel count.
    pub planes: Vec<f32>,
    pub text: Vec<(String, String)>,
}

/// Decodes a PNG and converts it to `channels` planes (1 = luminance, 3 = RGB).
pub fn png_to_image(bytes: &[u8], channels: usize) -> Result<DecodedPng> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let src_channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette image".into())),
    };
    let data = &buf[..frame.buffer_size()];
    let rgb = |k: usize| -> [f32; 3] {
        let px = &data[k * src_channels..(k + 1) * src_channels];
        match src_channels {
            1 | 2 => [px[0] as f32 / 255.0; 3],
            _ => [px[0] as f32 / 255.0, px[1] as f32 / 255.0, px[2] as f32 / 255.0],
        }
    };
    let mut planes = vec![0f32; channels * w * h];
    for k in 0..w * h {
        let [r, g, b] = rgb(k);
        match channels {
            1 => planes[k] = if src_channels <= 2 { r } else { 0.299 * r + 0.587 * g + 0.114 * b },
            3 => {
                planes[k] = r;
                planes[w * h + k] = g;
                planes[2 * w * h + k] = b;
            }
            c => return Err(Error::Png(format!("cannot convert to {c} channels"))),
        }
    }
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    Ok(DecodedPng {
        width: w,
        height: h,
        planes,
        text,
    })
}

/// Lays out frames on a grid with `gap`-pixel separators of value `sep`.
/// Missing cells (`None`) are left at the separator colour.
pub fn montage(
    cells: &[Vec<Option<&[f32]>>],
    shape: [usize; 3],
    gap: usize,
    sep: f32,
) -> (Vec<f32>, [usize; 3]) {
    let [c, h, w] = shape;
    let rows = cells.len();
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let width = cols * w + cols.saturating_sub(1) * gap;
    let height = rows * h + rows.saturating_sub(1) * gap;
    let mut out = vec![sep; c * width * height];
    for (r, row) in cells.iter().enumerate() {
        for (col, frame) in row.iter().enumerate() {
            let Some(frame) = frame else { continue };
            let (y0, x0) = (r * (h + gap), col * (w + gap));
            for ch in 0..c {
                for y in 0..h {
                    let src = &frame[ch * h * w + y * w..ch * h * w + (y + 1) * w];
                    let at = ch * width * height + (y0 + y) * width + x0;
                    out[at..at + w].copy_from_slice(src);
                }
            }
        }
    }
    (out, [c, height, width])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_round_trip_with_text() {
        let img: Vec<f32> = (0..12).map(|i| i as f32 / 11.0).collect();
        let bytes = image_to_png(&img, [1, 3, 4], &[("config_hash", "abc".into()), ("seed", "7".into())]).unwrap();
        let d = png_to_image(&bytes, 1).unwrap();
        assert_eq!((d.width, d.height), (4, 3));
        for (a, b) in img.iter().zip(&d.planes) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert!(d.text.contains(&("seed".to_string(), "7".to_string())));
        assert!(d.text.contains(&("config_hash".to_string(), "abc".to_string())));
    }

    #[test]
    fn rgb_round_trip_and_conversion() {
        let mut img = vec![0f32; 3 * 4];
        img[0] = 1.0; // red pixel 0
        img[4 + 1] = 1.0; // green pixel 1
        let bytes = image_to_png(&img, [3, 2, 2], &[]).unwrap();
        let d = png_to_image(&bytes, 3).unwrap();
        assert_eq!(d.planes, img);
        let gray = png_to_image(&bytes, 1).unwrap();
        assert!((gray.planes[0] - 0.299).abs() < 1e-6);
        assert!((gray.planes[1] - 0.587).abs() < 1e-6);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(png_to_image(b"definitely not a png", 1).is_err());
    }

    #[test]
    fn montage_layout() {
        let a = vec![1.0f32; 4];
        let b = vec![0.5f32; 4];
        let cells = vec![vec![Some(&a[..]), Some(&b[..])], vec![Some(&b[..]), None]];
        let (out, shape) = montage(&cells, [1, 2, 2], 2, 0.25);
        assert_eq!(shape, [1, 6, 6]);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[2], 0.25);
        assert_eq!(out[4], 0.5);
        assert_eq!(out[4 * 6], 0.5);
        assert_eq!(out[5 * 6 + 5], 0.25);
    }
}
