//! Binary PGM (P5) and PPM (P6) with maxval 255 or 65535.
//!
//! Samples load as `v / maxval` and save as `round(clamp(x, 0, 1) * maxval)`.
//! Files are written with the canonical header `P5\n<w> <h>\n<maxval>\n`.

use std::fs;
use std::path::Path;

use super::{clamp01, ImagePlane, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Gray,
    Rgb,
}

impl Kind {
    fn magic(self) -> &'static [u8; 2] {
        match self {
            Kind::Gray => b"P5",
            Kind::Rgb => b"P6",
        }
    }

    fn channels(self) -> usize {
        match self {
            Kind::Gray => 1,
            Kind::Rgb => 3,
        }
    }
}

struct Raster {
    width: usize,
    height: usize,
    maxval: u32,
    samples: Vec<f64>,
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    // skip whitespace and comments
    loop {
        match bytes.get(*pos) {
            None => return Err(Error::Truncated("header ended early".into())),
            Some(b'#') => {
                while let Some(&c) = bytes.get(*pos) {
                    *pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader(format!(
            "expected a number at byte {start}"
        )));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse::<u32>()
        .map_err(|e| Error::MalformedHeader(e.to_string()))
}

fn decode(bytes: &[u8], kind: Kind) -> Result<Raster> {
    if bytes.len() < 2 || &bytes[..2] != kind.magic() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::BadMagic(format!(
            "expected {}, found {found:?}",
            String::from_utf8_lossy(kind.magic())
        )));
    }
    let mut pos = 2;
    let width = header_token(bytes, &mut pos)? as usize;
    let height = header_token(bytes, &mut pos)? as usize;
    let maxval = header_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero-sized image {width}x{height}")));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::MalformedHeader("missing whitespace after maxval".into())),
        None => return Err(Error::Truncated("no raster data".into())),
    }
    let count = width * height * kind.channels();
    let bps = if maxval == 255 { 1 } else { 2 };
    let data = &bytes[pos..];
    if data.len() < count * bps {
        return Err(Error::Truncated(format!(
            "raster needs {} bytes, found {}",
            count * bps,
            data.len()
        )));
    }
    let m = maxval as f64;
    let samples = if bps == 1 {
        data[..count].iter().map(|&v| v as f64 / m).collect()
    } else {
        data[..2 * count]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / m)
            .collect()
    };
    Ok(Raster {
        width,
        height,
        maxval,
        samples,
    })
}

fn encode(width: usize, height: usize, samples: &[f64], maxval: u32, kind: Kind) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    let mut out = format!(
        "{}\n{width} {height}\n{maxval}\n",
        String::from_utf8_lossy(kind.magic())
    )
    .into_bytes();
    let m = maxval as f64;
    for &s in samples {
        let q = (clamp01(s) * m).round() as u32;
        if maxval == 255 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

/// Decodes a P5 buffer; returns the image and its maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<(ImagePlane, u32)> {
    let r = decode(bytes, Kind::Gray)?;
    Ok((ImagePlane::new(r.width, r.height, r.samples)?, r.maxval))
}

/// Decodes a P6 buffer; returns the image and its maxval.
pub fn decode_ppm(bytes: &[u8]) -> Result<(RgbImage, u32)> {
    let r = decode(bytes, Kind::Rgb)?;
    Ok((RgbImage::new(r.width, r.height, r.samples)?, r.maxval))
}

pub fn encode_pgm(img: &ImagePlane, maxval: u32) -> Result<Vec<u8>> {
    encode(img.width(), img.height(), img.pixels(), maxval, Kind::Gray)
}

pub fn encode_ppm(img: &RgbImage, maxval: u32) -> Result<Vec<u8>> {
    encode(img.width(), img.height(), img.data(), maxval, Kind::Rgb)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<ImagePlane> {
    Ok(decode_pgm(&fs::read(path)?)?.0)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(decode_ppm(&fs::read(path)?)?.0)
}

/// Writes an 8-bit PGM.
pub fn save_pgm(path: impl AsRef<Path>, img: &ImagePlane) -> Result<()> {
    save_pgm_with_maxval(path, img, 255)
}

pub fn save_pgm_with_maxval(path: impl AsRef<Path>, img: &ImagePlane, maxval: u32) -> Result<()> {
    fs::write(path, encode_pgm(img, maxval)?)?;
    Ok(())
}

/// Writes an 8-bit PPM.
pub fn save_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    save_ppm_with_maxval(path, img, 255)
}

pub fn save_ppm_with_maxval(path: impl AsRef<Path>, img: &RgbImage, maxval: u32) -> Result<()> {
    fs::write(path, encode_ppm(img, maxval)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::rgb_to_luma;

    #[test]
    fn reads_known_p5() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let (img, maxval) = decode_pgm(&bytes).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(img.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(encode_pgm(&img, 255).unwrap(), bytes);
    }

    #[test]
    fn comments_and_odd_whitespace() {
        let mut bytes = b"P5 # a comment\n# another\n 3\t1\r\n255 ".to_vec();
        bytes.extend_from_slice(&[10, 20, 30]);
        let (img, _) = decode_pgm(&bytes).unwrap();
        assert_eq!(img.dims(), (3, 1));
        assert_eq!(img.get(2, 0), 30.0 / 255.0);
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x12, 0x34, 0xff, 0xfe]);
        let (img, maxval) = decode_pgm(&bytes).unwrap();
        assert_eq!(maxval, 65535);
        assert_eq!(img.get(0, 0), 0x1234 as f64 / 65535.0);
        assert_eq!(encode_pgm(&img, 65535).unwrap(), bytes);
    }

    #[test]
    fn ppm_pixel_to_luma() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51]);
        let (img, _) = decode_ppm(&bytes).unwrap();
        let y = rgb_to_luma(&img);
        assert!((y.get(0, 0) - (0.299 + 0.114 * 0.2)).abs() < 1e-12);
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0\0\0"), Err(Error::BadMagic(_))));
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::BadMagic(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\0\0"), Err(Error::Truncated(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2"), Err(Error::Truncated(_))));
        assert!(matches!(decode_pgm(b"P5\n1 1\n1023\n\0\0"), Err(Error::UnsupportedMaxval(1023))));
        assert!(matches!(decode_pgm(b"P5\nx 1\n255\n\0"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_pgm(b"P5\n0 1\n255\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn save_quantizes_within_half_step() {
        let img = ImagePlane::from_fn(5, 3, |x, y| (x as f64 * 0.173 + y as f64 * 0.311) % 1.0);
        let (back, _) = decode_pgm(&encode_pgm(&img, 255).unwrap()).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = ImagePlane::from_fn(4, 4, |x, y| (x * y) as f64 / 9.0);
        save_pgm(&p, &img).unwrap();
        let back = load_pgm(&p).unwrap();
        assert_eq!(back.dims(), (4, 4));
        let q = dir.path().join("a.ppm");
        let rgb = RgbImage::new(1, 2, vec![0.0, 0.5, 1.0, 1.0, 0.25, 0.0]).unwrap();
        save_ppm(&q, &rgb).unwrap();
        assert_eq!(load_ppm(&q).unwrap().dims(), (1, 2));
        assert!(matches!(load_pgm(dir.path().join("missing.pgm")), Err(Error::Io(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn levels() -> impl Strategy<Value = (usize, usize, Vec<u32>)> {
            (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(0..=65535u32, 3 * w * h))
            })
        }

        proptest! {
            #[test]
            fn pgm_and_ppm_round_trip(wide: bool, (w, h, raw) in levels()) {
                let maxval = if wide { 65535 } else { 255 };
                let vals: Vec<f64> = raw.iter().map(|&v| (v % (maxval + 1)) as f64 / maxval as f64).collect();
                let gray = ImagePlane::new(w, h, vals[..w * h].to_vec()).unwrap();
                let bytes = encode_pgm(&gray, maxval).unwrap();
                prop_assert_eq!(decode_pgm(&bytes).unwrap(), (gray, maxval));
                let rgb = RgbImage::new(w, h, vals).unwrap();
                let bytes = encode_ppm(&rgb, maxval).unwrap();
                let (back, mv) = decode_ppm(&bytes).unwrap();
                prop_assert_eq!(encode_ppm(&back, mv).unwrap(), bytes);
                prop_assert_eq!(back, rgb);
            }
        }
    }
}
