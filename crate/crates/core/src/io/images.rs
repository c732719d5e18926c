//! 8-bit PNG export with per-image min/max scaling.
//!
//! The scale is stored in a `cgm-scale` tEXt chunk as `min=<v> max=<v>`, so
//! the original range can be recovered. A constant image maps to mid-gray.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interleaved 8-bit pixels and the value range they were scaled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Pixels {
    pub data: Vec<u8>,
    pub range: (f64, f64),
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Quantizes a `[C, H, W]` (C = 1 or 3) or `[H, W]` tensor to 8-bit pixels.
pub fn to_pixels<T: Scalar>(img: &Tensor<T>) -> Result<Pixels> {
    let (c, h, w) = match *img.shape() {
        [h, w] => (1, h, w),
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => return Err(Error::Dimension(format!("cannot write image of shape {s:?}"))),
    };
    if !img.all_finite() {
        return Err(Error::Validation("image contains non-finite values".into()));
    }
    let vals: Vec<f64> = img.data().iter().map(|v| v.to_f64_lossy()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut px = vec![0u8; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            let v = vals[ch * h * w + p];
            let q = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
            px[p * c + ch] = q.clamp(0.0, 255.0) as u8;
        }
    }
    Ok(Pixels { data: px, range: (lo, hi), channels: c, height: h, width: w })
}

pub fn write_png<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let Pixels { data: px, range: (lo, hi), channels: c, height: h, width: w } = to_pixels(img)?;
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("cgm-scale".to_string(), format!("min={lo:e} max={hi:e}"))?;
    let mut writer = enc.write_header()?;
    writer.write_image_data(&px)?;
    writer.finish()?;
    Ok(())
}

/// Tiles equally shaped `[C, H, W]` images row by row, `cols` per row, with
/// `pad` pixels of the global minimum between tiles.
pub fn montage<T: Scalar>(images: &[Tensor<T>], cols: usize, pad: usize) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Validation("montage of zero images".into()))?;
    if cols == 0 {
        return Err(Error::Validation("montage needs at least one column".into()));
    }
    let [c, h, w]: [usize; 3] = first
        .shape()
        .try_into()
        .map_err(|_| Error::Dimension("montage tiles must be [C, H, W]".into()))?;
    if images.iter().any(|i| i.shape() != first.shape()) {
        return Err(Error::Dimension("montage tiles differ in shape".into()));
    }
    let rows = images.len().div_ceil(cols);
    let (oh, ow) = (rows * h + (rows - 1) * pad, cols * w + (cols - 1) * pad);
    let fill = images
        .iter()
        .flat_map(|i| i.data().iter().copied())
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let mut out = Tensor::full(vec![c, oh, ow], fill);
    for (n, img) in images.iter().enumerate() {
        let (y0, x0) = ((n / cols) * (h + pad), (n % cols) * (w + pad));
        for ch in 0..c {
            for y in 0..h {
                let src = &img.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
                let dst = (ch * oh + y0 + y) * ow + x0;
                out.data_mut()[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(path: &Path) -> (png::OutputInfo, Vec<u8>, String) {
        let dec = png::Decoder::new(std::io::BufReader::new(File::open(path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        let text = reader.info().uncompressed_latin1_text.iter().find(|t| t.keyword == "cgm-scale").unwrap().text.clone();
        (info, buf, text)
    }

    #[test]
    fn scales_to_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Tensor::new(vec![1, 1, 3], vec![-1.0f32, 0.0, 1.0]).unwrap();
        write_png(&p, &img).unwrap();
        let (info, px, text) = decode(&p);
        assert_eq!((info.width, info.height), (3, 1));
        assert_eq!(px, vec![0, 128, 255]);
        assert!(text.starts_with("min=-1e0"), "{text}");
    }

    #[test]
    fn constant_image_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_png(&p, &Tensor::full(vec![3, 2, 2], 0.7f64)).unwrap();
        let (info, px, _) = decode(&p);
        assert_eq!(info.color_type, png::ColorType::Rgb);
        assert!(px.iter().all(|&v| v == px[0]));
    }

    #[test]
    fn montage_layout() {
        let a = Tensor::full(vec![1, 2, 2], 1.0f32);
        let b = Tensor::full(vec![1, 2, 2], 2.0f32);
        let m = montage(&[a.clone(), b.clone(), a], 2, 1).unwrap();
        assert_eq!(m.shape(), &[1, 5, 5]);
        assert_eq!(m.data()[0], 1.0);
        assert_eq!(m.data()[3], 2.0);
        assert_eq!(m.data()[2], 1.0); // padding takes the minimum
        assert_eq!(m.data()[4 * 5 + 4], 1.0);
        assert!(montage::<f32>(&[], 2, 0).is_err());
        assert!(write_png(&std::env::temp_dir().join("x.png"), &Tensor::zeros(vec![2, 2, 2]) as &Tensor<f32>).is_err());
    }
}
