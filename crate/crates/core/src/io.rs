//! PGM (P5) and PFM readers and writers.
//!
//! Integer PGM samples are normalized to `[0, 1]`. PFM samples are kept
//! verbatim; rows are stored bottom-to-top as the format prescribes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::DigitalImage;

pub fn read_image(path: impl AsRef<Path>) -> Result<DigitalImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `.pfm` at full 32-bit precision or `.pgm` as 8-bit with clamping.
pub fn write_image(image: &DigitalImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let bytes = match ext.as_deref() {
        Some("pfm") => encode_pfm(image),
        Some("pgm") => encode_pgm(image, 255),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "cannot infer image format from {}",
                path.display()
            )))
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(image: &DigitalImage, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    if maxval == 0 {
        return Err(Error::InvalidParameter("PGM maxval must be positive".into()));
    }
    fs::write(path, encode_pgm(image, maxval)).map_err(|e| Error::io(path, e))
}

pub fn decode(bytes: &[u8]) -> Result<DigitalImage> {
    let magic = bytes.get(..2).ok_or_else(|| header("file too short"))?;
    match magic {
        b"P5" => decode_pgm(bytes),
        b"P6" => Err(Error::UnsupportedChannels(3)),
        b"Pf" => decode_pfm(bytes, 1),
        b"PF" => Err(Error::UnsupportedChannels(3)),
        _ => Err(header(format!(
            "unknown magic {:?}",
            String::from_utf8_lossy(magic)
        ))),
    }
}

fn header(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

/// Pulls whitespace-separated header tokens, skipping `#` comments.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn token(&mut self) -> Result<&'a str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(header("unexpected end of header")),
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| header("non-ascii header"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| header(format!("invalid {what}: {tok:?}")))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn finish(mut self) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(&self.bytes[self.pos..])
            }
            _ => Err(header("missing whitespace after header")),
        }
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<DigitalImage> {
    let mut r = HeaderReader { bytes, pos: 2 };
    let width: usize = r.number("width")?;
    let height: usize = r.number("height")?;
    let maxval: u32 = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(header("zero dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(header(format!("maxval {maxval} out of range")));
    }
    let data = r.finish()?;
    let n = width * height;
    let scale = maxval as f32;
    let samples: Vec<f32> = if maxval < 256 {
        let raw = data
            .get(..n)
            .ok_or_else(|| header("truncated pixel data"))?;
        raw.iter().map(|&v| v as f32 / scale).collect()
    } else {
        let raw = data
            .get(..2 * n)
            .ok_or_else(|| header("truncated pixel data"))?;
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale)
            .collect()
    };
    DigitalImage::new(width, height, samples)
}

fn decode_pfm(bytes: &[u8], channels: usize) -> Result<DigitalImage> {
    let mut r = HeaderReader { bytes, pos: 2 };
    let width: usize = r.number("width")?;
    let height: usize = r.number("height")?;
    let scale: f32 = r.number("scale")?;
    if width == 0 || height == 0 {
        return Err(header("zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(header("scale must be nonzero"));
    }
    let little = scale < 0.0;
    let data = r.finish()?;
    let n = width * height * channels;
    let raw = data
        .get(..4 * n)
        .ok_or_else(|| header("truncated pixel data"))?;
    let mut samples = vec![0f32; n];
    for (row, chunk) in raw.chunks_exact(4 * width).enumerate() {
        let y = height - 1 - row;
        for (x, c) in chunk.chunks_exact(4).enumerate() {
            let b = [c[0], c[1], c[2], c[3]];
            samples[y * width + x] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    DigitalImage::new(width, height, samples)
}

pub fn encode_pfm(image: &DigitalImage) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&image.get(x, y).to_le_bytes());
        }
    }
    out
}

pub fn encode_pgm(image: &DigitalImage, maxval: u16) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let m = maxval as f32;
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * m).round() as u16;
    if maxval < 256 {
        out.extend(image.samples().iter().map(|&v| quantize(v) as u8));
    } else {
        for &v in image.samples() {
            out.extend_from_slice(&quantize(v).to_be_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_8bit_normalizes() {
        let bytes = b"P5\n# comment\n2 2\n255\n\x00\xff\x00\xff".to_vec();
        let img = decode(&bytes).unwrap();
        assert_eq!(img.samples(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(img.delta(), 1.0);
        assert_eq!(img.blur(), None);
    }

    #[test]
    fn pgm_16bit_normalizes() {
        let bytes = b"P5 1 2 65535\n\xff\xff\x80\x00".to_vec();
        let img = decode(&bytes).unwrap();
        assert_eq!(img.samples()[0], 1.0);
        assert!((img.samples()[1] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn color_inputs_are_rejected() {
        let err = decode(b"P6\n1 1\n255\n\x00\x00\x00").unwrap_err();
        assert!(err.to_string().contains("unsupported channel count"));
        let err = decode(b"PF\n1 1\n-1.0\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedChannels(3)));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode(b"P5\n2 x\n255\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(b"P5\n2 2\n255\n\x00"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(b"Q1"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(b"P"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn pgm_write_clamps() {
        let img = DigitalImage::new(3, 1, vec![1.5, -0.1, 0.5]).unwrap();
        let back = decode(&encode_pgm(&img, 255)).unwrap();
        assert_eq!(back.samples()[0], 1.0);
        assert_eq!(back.samples()[1], 0.0);
        assert!((back.samples()[2] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.25f32.to_be_bytes());
        bytes.extend_from_slice(&(-3.0f32).to_be_bytes());
        let img = decode(&bytes).unwrap();
        assert_eq!(img.samples(), &[1.25, -3.0]);
    }

    #[test]
    fn write_read_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = DigitalImage::from_fn(4, 3, |x, y| x as f64 * 0.1 - y as f64).unwrap();
        let p = dir.path().join("a.pfm");
        write_image(&img, &p).unwrap();
        assert_eq!(read_image(&p).unwrap().samples(), img.samples());
        assert!(write_image(&img, dir.path().join("a.png")).is_err());
        assert!(write_image(&img, dir.path().join("missing/a.pfm")).is_err());
        assert!(read_image(dir.path().join("nope.pfm")).is_err());
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(
            w in 1usize..6,
            h in 1usize..6,
            seed in proptest::collection::vec(any::<u32>(), 36),
        ) {
            let samples: Vec<f32> = seed[..w * h]
                .iter()
                .map(|&b| f32::from_bits(b))
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let img = DigitalImage::new(w, h, samples).unwrap();
            let back = decode(&encode_pfm(&img)).unwrap();
            let a: Vec<u32> = img.samples().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.samples().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
