//! Binary NetPBM (P5 grayscale, P6 RGB) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::observation::ImageGrid;

/// `[0, 1]` to `0..=255`, rounding half up.
pub fn quantize(v: f32) -> u8 {
    ((v as f64) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode(img: &ImageGrid) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.values().iter().map(|&v| quantize(v)));
    out
}

pub fn decode(bytes: &[u8], source: &Path) -> Result<ImageGrid> {
    let mut pos = 0usize;
    let magic =
        next_token(bytes, &mut pos).ok_or_else(|| Error::format(source, "missing magic"))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format(source, "only binary P5/P6 is supported")),
    };
    let mut header = [0usize; 3];
    for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::format(source, format!("missing {what}")))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(source, format!("bad {what}")))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::format(
            source,
            format!("maxval {maxval} unsupported (need 255)"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * channels;
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() == need)
        .ok_or_else(|| Error::format(source, format!("expected {need} raster bytes")))?;
    let values = raster.iter().map(|&b| b as f32 / 255.0).collect();
    ImageGrid::new(width, height, channels, values)
        .map_err(|e| Error::format(source, e.to_string()))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn write(path: &Path, img: &ImageGrid) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ImageGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(2.0 / 255.0), 2);
        assert_eq!(quantize(1.5 / 255.0), 2);
    }

    #[test]
    fn header_layout() {
        let img = ImageGrid::filled(3, 2, 3, 1.0);
        let bytes = encode(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        let gray = ImageGrid::filled(3, 2, 1, 0.0);
        assert!(encode(&gray).starts_with(b"P5\n3 2\n255\n"));
    }

    #[test]
    fn round_trip_of_quantized_grid() {
        let values: Vec<f32> = (0..4 * 3 * 3)
            .map(|i| (i * 7 % 256) as f32 / 255.0)
            .collect();
        let img = ImageGrid::new(4, 3, 3, values).unwrap();
        let back = decode(&encode(&img), Path::new("mem")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn comments_are_skipped() {
        let mut bytes = b"P5 # gray\n# another\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(img.values(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode(b"P3\n1 1\n255\n0 0 0", Path::new("m")).is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00", Path::new("m")).is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00", Path::new("m")).is_err());
    }
}
