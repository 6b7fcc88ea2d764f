//! 8-bit RGB rasters and PNG I/O.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use rvf_tensor::{Float, Tensor};

use crate::error::{CoreError, Result};

/// Row-major interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        RgbImage { width, height, data }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.chunks_exact(3).filter(|p| p.iter().any(|&c| c != 0)).count()
    }

    /// Paints every pixel that overlaps `[x1,x2)×[y1,y2)`.
    pub fn fill_rect(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, rgb: [u8; 3]) {
        for (y, x) in pixel_span(x1, y1, x2, y2, self.width, self.height) {
            self.set(x, y, rgb);
        }
    }

    /// Encodes to PNG bytes (8-bit RGB, default compression).
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode_into(&mut out).map_err(|message| CoreError::Image {
            path: "<memory>".into(),
            message,
        })?;
        Ok(out)
    }

    fn encode_into<W: Write>(&self, w: W) -> std::result::Result<(), String> {
        let mut enc = png::Encoder::new(w, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(&self.data).map_err(|e| e.to_string())?;
        writer.finish().map_err(|e| e.to_string())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
        self.encode_into(BufWriter::new(file))
            .map_err(|message| CoreError::Image { path: path.to_path_buf(), message })
    }

    /// Decodes 8-bit RGB or RGBA PNG data; alpha is dropped.
    pub fn from_png_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
        let (width, height) = {
            let info = reader.info();
            (info.width, info.height)
        };
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| "image too large".to_string())?;
        if size > 64 << 20 {
            return Err(format!("image of {width}x{height} is too large"));
        }
        let mut buf = vec![0; size];
        let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
        if frame.bit_depth != png::BitDepth::Eight {
            return Err(format!("unsupported bit depth {:?}", frame.bit_depth));
        }
        let pixels = width as usize * height as usize;
        let data = match frame.color_type {
            png::ColorType::Rgb => buf[..pixels * 3].to_vec(),
            png::ColorType::Rgba => buf[..pixels * 4]
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => buf[..pixels].iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(format!("unsupported color type {other:?}")),
        };
        Ok(RgbImage { width, height, data })
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_png_bytes(&bytes).map_err(|message| CoreError::Image { path: path.to_path_buf(), message })
    }

    /// Nearest-neighbour resize.
    pub fn resized(&self, width: u32, height: u32) -> RgbImage {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut out = RgbImage::new(width, height);
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height as u64) as u32;
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width as u64) as u32;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    /// Planar `[3, H, W]` values scaled to `[0, 1]`.
    pub fn to_chw(&self) -> Vec<Float> {
        let hw = self.width as usize * self.height as usize;
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c] as Float / 255.0;
            }
        }
        out
    }
}

/// Pixels `(y, x)` overlapping the box with positive area, clipped to the frame.
pub fn pixel_span(x1: f64, y1: f64, x2: f64, y2: f64, width: u32, height: u32) -> impl Iterator<Item = (u32, u32)> {
    let clip = |v: f64, max: u32| (v.max(0.0) as u64).min(max as u64) as u32;
    let (xa, xb) = (clip(x1.floor(), width), clip(x2.ceil(), width));
    let (ya, yb) = (clip(y1.floor(), height), clip(y2.ceil(), height));
    let (xb, yb) = if x2 > x1 && y2 > y1 { (xb, yb) } else { (xa, ya) };
    (ya..yb).flat_map(move |y| (xa..xb).map(move |x| (y, x)))
}

/// Stacks images into one `[N, 3, H, W]` tensor. All images must share a size.
pub fn batch_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| CoreError::invalid("empty image batch"))?;
    let (w, h) = (first.width as usize, first.height as usize);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width as usize, img.height as usize) != (w, h) {
            return Err(CoreError::invalid("images in a batch must share one size"));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::new(&[images.len(), 3, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let mut img = RgbImage::new(5, 3);
        img.set(4, 2, [1, 2, 3]);
        img.set(0, 0, [255, 0, 9]);
        let bytes = img.to_png_bytes().unwrap();
        assert_eq!(RgbImage::from_png_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn garbage_png_is_an_error() {
        assert!(RgbImage::from_png_bytes(b"not a png").is_err());
    }

    #[test]
    fn fill_rect_covers_overlapped_pixels() {
        let mut img = RgbImage::new(10, 10);
        img.fill_rect(1.4, 2.0, 3.6, 2.6, [9, 9, 9]);
        assert_eq!(img.count_nonzero(), 3);
        let mut tiny = RgbImage::new(4, 4);
        tiny.fill_rect(2.1, 2.2, 2.3, 2.4, [1, 1, 1]);
        assert_eq!(tiny.get(2, 2), [1, 1, 1]);
        tiny.fill_rect(9.0, 9.0, 12.0, 12.0, [1, 1, 1]);
        assert_eq!(tiny.count_nonzero(), 1);
        assert_eq!(img.get(1, 2), [9, 9, 9]);
        assert_eq!(img.get(3, 2), [9, 9, 9]);
    }

    #[test]
    fn chw_layout() {
        let mut img = RgbImage::new(2, 1);
        img.set(1, 0, [255, 0, 51]);
        let v = img.to_chw();
        assert_eq!(v, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.2]);
    }
}
