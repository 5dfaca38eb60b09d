//! 8-bit PNG export of `[0, 1]`-valued maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::tensor::Tensor;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> std::io::Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(std::io::Error::other)?;
    writer.write_image_data(bytes).map_err(std::io::Error::other)?;
    writer.finish().map_err(std::io::Error::other)
}

/// `m×n×3` RGB image.
pub fn write_rgb_png(path: impl AsRef<Path>, image: &Tensor) -> std::io::Result<()> {
    let d = image.dims();
    assert!(d.len() == 3 && d[2] == 3, "expected m×n×3");
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    write(path.as_ref(), d[1], d[0], png::ColorType::Rgb, &bytes)
}

/// `m×n` grayscale image.
pub fn write_gray_png(path: impl AsRef<Path>, image: &Tensor) -> std::io::Result<()> {
    let d = image.dims();
    assert_eq!(d.len(), 2, "expected m×n");
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    write(path.as_ref(), d[1], d[0], png::ColorType::Grayscale, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_decodable_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Tensor::from_fn(&[2, 3, 3], |i| i[2] as f64 / 2.0);
        write_rgb_png(&p, &img).unwrap();
        let dec = png::Decoder::new(std::io::BufReader::new(File::open(&p).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (3, 2));
        assert_eq!(&buf[..3], &[0, 128, 255]);
    }
}
