//! Binary (P5) PGM image files, 8 bits per pixel.
//!
//! Writing maps `[0, 1]` intensities to `round(v * 255)`; reading maps bytes
//! back to `byte / 255`. The header is `P5\n<width> <height>\n255\n` followed
//! by row-major pixel bytes.

use std::fs;
use std::io;
use std::path::Path;

use convirt_core::image::GrayImage;

/// Encodes an image as P5 PGM bytes.
pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + img.width() * img.height());
    out.extend_from_slice(format!("P5\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    for &v in img.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

/// Writes an image to `path` as P5 PGM.
pub fn write(path: &Path, img: &GrayImage) -> io::Result<()> {
    fs::write(path, encode(img))
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads whitespace-separated header tokens, honoring `#` comment lines.
fn next_token(bytes: &[u8], pos: &mut usize) -> io::Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad("truncated PGM header"));
    }
    String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| bad("non-ASCII PGM header"))
}

/// Decodes P5 PGM bytes into an image with intensities in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> io::Result<GrayImage> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(bad(format!("expected P5 magic, got `{magic}`")));
    }
    let width: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("invalid PGM width"))?;
    let height: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("invalid PGM height"))?;
    let maxval: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("invalid PGM maxval"))?;
    if maxval != 255 {
        return Err(bad(format!("expected maxval 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad("PGM dimensions must be positive"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing separator before PGM raster"));
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() != need {
        return Err(bad(format!(
            "PGM raster holds {} bytes, expected {need}",
            raster.len()
        )));
    }
    let data: Vec<f64> = raster.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(GrayImage::from_vec(width, height, data))
}

/// Reads a P5 PGM file.
pub fn read(path: &Path) -> io::Result<GrayImage> {
    let bytes =
        fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_produces_the_documented_header_and_raster() {
        let img = GrayImage::from_vec(2, 2, vec![0.0, 1.0, 0.5, 0.25]);
        let bytes = encode(&img);
        assert_eq!(&bytes[..12], b"P5\n2 2\n255\n\x00");
        // round(0.5 * 255) = 128, round(0.25 * 255) = 64.
        assert_eq!(&bytes[11..], &[0u8, 255, 128, 64]);
    }

    #[test]
    fn round_trip_is_exact_on_the_quantized_grid() {
        let img = GrayImage::from_vec(3, 2, vec![0.0, 1.0, 128.0 / 255.0, 5.0 / 255.0, 0.5, 0.9]);
        let back = decode(&encode(&img)).unwrap();
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        for (a, b) in img.data().iter().zip(back.data()) {
            // Quantization error is at most half a step.
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12, "{a} vs {b}");
        }
        // Values already on the 1/255 grid survive exactly.
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[1], 1.0);
        assert_eq!(back.data()[2], 128.0 / 255.0);
        assert_eq!(back.data()[3], 5.0 / 255.0);
    }

    #[test]
    fn decode_rejects_malformed_inputs() {
        assert!(decode(b"P2\n2 2\n255\n").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00\x01\x02").is_err());
        assert!(decode(b"P5\n2 2\n65535\n").is_err());
        assert!(decode(b"P5\n0 2\n255\n").is_err());
        assert!(decode(b"P5\n2").is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by a test\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 200]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.data()[0], 10.0 / 255.0);
    }
}
