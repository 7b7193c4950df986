//! Binary PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::FloatTensor;

/// Decodes a P5 or P6 image to a `1 x h x w x {1,3}` tensor in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<FloatTensor> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::at_offset(pos, "truncated image header"));
        }
        fields.push((start, &bytes[start..pos]));
    }
    if pos >= bytes.len() {
        return Err(Error::at_offset(pos, "missing whitespace after header"));
    }
    pos += 1;
    let channels = match fields[0].1 {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::at_offset(0, "expected P5 or P6 magic")),
    };
    let num = |(at, f): (usize, &[u8])| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::at_offset(at, "expected a decimal number"))
    };
    let w = num(fields[1])?;
    let h = num(fields[2])?;
    let maxval = num(fields[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::at_offset(
            fields[3].0,
            format!("maxval {maxval} outside 1..=65535"),
        ));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * channels * bps;
    if bytes.len() - pos < need {
        return Err(Error::at_offset(
            bytes.len(),
            format!("pixel data needs {need} bytes, found {}", bytes.len() - pos),
        ));
    }
    let px = &bytes[pos..pos + need];
    let scale = maxval as f64;
    let data = if bps == 1 {
        px.iter().map(|&v| v as f64 / scale).collect()
    } else {
        px.chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale)
            .collect()
    };
    FloatTensor::new(1, h, w, channels, data)
}

pub fn read_pnm(path: &Path) -> Result<FloatTensor> {
    decode_pnm(&fs::read(path)?)
}

/// Encodes an image with 1 or 3 channels; values are clamped to `[0, 1]`.
pub fn encode_pnm(img: &FloatTensor) -> Result<Vec<u8>> {
    let magic = match (img.n, img.c) {
        (1, 1) => "P5",
        (1, 3) => "P6",
        _ => {
            return Err(Error::shape(
                "image",
                format!("cannot write a {}-image, {}-channel tensor", img.n, img.c),
            ))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// P5 mask with 0 for background and 255 for foreground (any nonzero class).
pub fn encode_mask(mask: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    if mask.len() != h * w {
        return Err(Error::shape(
            "mask",
            format!("{} values for {h}x{w}", mask.len()),
        ));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m == 0 { 0 } else { 255 }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_with_comment() {
        let mut b = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        b.extend([0u8, 255]);
        let t = decode_pnm(&b).unwrap();
        assert_eq!((t.h, t.w, t.c), (1, 2, 1));
        assert_eq!(t.data, vec![0.0, 1.0]);
    }

    #[test]
    fn ppm_round_trip() {
        let t = FloatTensor::new(1, 1, 2, 3, vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        let back = decode_pnm(&encode_pnm(&t).unwrap()).unwrap();
        for (a, b) in t.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn sixteen_bit_and_errors() {
        let mut b = b"P5 1 1 65535 ".to_vec();
        b.extend([0x80, 0x00]);
        assert!((decode_pnm(&b).unwrap().data[0] - 32768.0 / 65535.0).abs() < 1e-12);
        assert!(decode_pnm(b"P3 1 1 255 ").is_err());
        let e = decode_pnm(b"P5 1 1 255 ").unwrap_err().to_string();
        assert!(e.contains("byte offset"), "{e}");
    }
}
