use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved row-major image with `f64` samples, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(
                "sceneio",
                format!("{width}x{height}x{channels} image needs {} samples, got {}", width * height * channels, data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let data = value.iter().copied().cycle().take(width * height * value.len()).collect();
        Self {
            width,
            height,
            channels: value.len(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Rec. 709 luma of a 3-channel image; single-channel images are returned as is.
    pub fn luma(&self) -> Result<Image> {
        match self.channels {
            1 => Ok(self.clone()),
            3 => {
                let data = self
                    .data
                    .chunks(3)
                    .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
                    .collect();
                Image::new(self.width, self.height, 1, data)
            }
            c => Err(Error::invalid("sceneio", format!("luma of a {c}-channel image"))),
        }
    }

    /// Alpha-composites a 4-channel image over `background`.
    pub fn composite_alpha(&self, background: [f64; 3]) -> Result<Image> {
        if self.channels != 4 {
            return Err(Error::invalid("sceneio", "alpha compositing needs an RGBA image"));
        }
        let data = self
            .data
            .chunks(4)
            .flat_map(|p| (0..3).map(move |c| p[c] * p[3] + background[c] * (1.0 - p[3])))
            .collect();
        Image::new(self.width, self.height, 3, data)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_size(other) {
            return Err(Error::invalid("sceneio", "image sizes differ"));
        }
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.data.len().max(1) as f64)
    }

    /// Nearest-neighbor resize.
    pub fn resized(&self, width: usize, height: usize) -> Image {
        let mut out = Vec::with_capacity(width * height * self.channels);
        for y in 0..height {
            let sy = (y * self.height / height).min(self.height - 1);
            for x in 0..width {
                let sx = (x * self.width / width).min(self.width - 1);
                out.extend_from_slice(self.pixel(sx, sy));
            }
        }
        Image::new(width, height, self.channels, out).expect("sizes agree")
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG (1, 3 or 4 channels); samples are clamped to `[0,1]`.
pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::invalid("sceneio", format!("cannot write a {c}-channel PNG"))),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io("sceneio", path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format("sceneio", path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format("sceneio", path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format("sceneio", path, e.to_string()))
}

/// Reads an 8-bit PNG. Palette images are expanded; 16-bit files are rejected.
pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io("sceneio", path, e))?;
    let fail = |msg: String| Error::format("sceneio", path, msg);
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| fail(e.to_string()))?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(fail("unsupported bit depth 16 (only 8-bit PNG is read)".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fail("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(fail(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h * channels].iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(w, h, channels, data)
}

/// Writes a little-endian `f32` PFM (`PF` for 3 channels, `Pf` for 1),
/// rows stored bottom to top as the format requires.
pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    let tag = match image.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid("sceneio", format!("cannot write a {c}-channel PFM"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    let row = image.width * image.channels;
    for y in (0..image.height).rev() {
        for &v in &image.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io("sceneio", path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io("sceneio", path, e))?;
    parse_pfm(&bytes).map_err(|msg| Error::format("sceneio", path, msg))
}

fn parse_pfm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut cur = Cursor::new(bytes);
    let mut tokens = Vec::new();
    // Header: tag, width, height, scale; whitespace separated, single byte after the scale.
    while tokens.len() < 4 {
        let mut tok = Vec::new();
        loop {
            let buf = cur.fill_buf().map_err(|e| e.to_string())?;
            let Some(&b) = buf.first() else {
                return Err("truncated PFM header".into());
            };
            cur.consume(1);
            if b.is_ascii_whitespace() {
                if tok.is_empty() {
                    continue;
                }
                break;
            }
            tok.push(b);
        }
        tokens.push(String::from_utf8(tok).map_err(|_| "non-ASCII PFM header".to_string())?);
    }
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(format!("bad PFM tag `{t}`")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PFM dimension `{s}`"));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|_| format!("bad PFM scale `{}`", tokens[3]))?;
    let little = scale < 0.0;
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(channels))
        .ok_or("PFM dimensions overflow")?;
    let mut raw = vec![0u8; n * 4];
    cur.read_exact(&mut raw)
        .map_err(|_| format!("truncated PFM data: expected {} bytes", n * 4))?;
    let vals: Vec<f64> = raw
        .chunks(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            f64::from(if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) })
        })
        .collect();
    let row = w * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..h).rev() {
        data.extend_from_slice(&vals[y * row..(y + 1) * row]);
    }
    Image::new(w, h, channels, data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize, c: usize) -> Image {
        let data = (0..w * h * c).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn pfm_round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        let mut img = gradient(5, 3, 3);
        for v in img.data_mut() {
            *v = f64::from(*v as f32);
        }
        img.data_mut()[4] = f64::INFINITY;
        write_pfm(&p, &img).unwrap();
        let back = read_pfm(&p).unwrap();
        let bits = |i: &Image| i.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&img));
        let depth = gradient(4, 2, 1);
        write_pfm(&p, &depth).unwrap();
        assert_eq!(read_pfm(&p).unwrap().channels(), 1);
    }

    #[test]
    fn png_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::filled(6, 4, &[0.5, 0.5, 0.5]);
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert!(back.same_size(&img));
        assert!(back.data().iter().all(|&v| (v - 0.5).abs() <= 1.0 / 255.0));
        let g = gradient(7, 5, 3);
        write_png(&p, &g).unwrap();
        let back = read_png(&p).unwrap();
        assert!(g.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
    }

    #[test]
    fn truncated_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        write_pfm(&p, &gradient(4, 4, 3)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_pfm(&p).is_err());
        let q = dir.path().join("a.png");
        write_png(&q, &gradient(4, 4, 3)).unwrap();
        let bytes = std::fs::read(&q).unwrap();
        std::fs::write(&q, &bytes[..bytes.len() / 2]).unwrap();
        assert!(read_png(&q).is_err());
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let file = std::fs::File::create(&p).unwrap();
        let mut enc = png::Encoder::new(file, 2, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0u8; 8]).unwrap();
        w.finish().unwrap();
        let err = read_png(&p).unwrap_err().to_string();
        assert!(err.contains("bit depth"), "{err}");
    }

    #[test]
    fn luma_weights() {
        let img = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.luma().unwrap().data(), &[0.2126]);
    }
}
