//! Binary PPM (P6, maxval 255) images.

use std::path::Path;

use mocse_corrupt::Image;

use crate::error::{io_err, CoreError, Result};

/// Header or payload problem, at a byte offset into the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmError {
    pub offset: usize,
    pub msg: String,
}

impl std::fmt::Display for PpmError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.msg)
    }
}

impl std::error::Error for PpmError {}

fn err(offset: usize, msg: impl Into<String>) -> PpmError {
    PpmError {
        offset,
        msg: msg.into(),
    }
}

/// P6 bytes for a 3-channel image, values rounded half to even.
pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(crate::error::invalid(format!(
            "PPM needs 3 channels, image has {}",
            image.channels()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_bytes());
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    if !bytes.starts_with(b"P6") {
        return Err(err(0, "expected magic `P6`"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].into_iter().enumerate() {
        // At least one whitespace, then any mix of whitespace and comments.
        let start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == start {
            return Err(err(pos, format!("expected whitespace before {name}")));
        }
        let digits = bytes[pos..]
            .iter()
            .take_while(|b| b.is_ascii_digit())
            .count();
        if digits == 0 {
            return Err(err(pos, format!("expected decimal {name}")));
        }
        let text = std::str::from_utf8(&bytes[pos..pos + digits]).expect("ascii digits");
        fields[i] = text
            .parse()
            .map_err(|_| err(pos, format!("{name} `{text}` out of range")))?;
        pos += digits;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(pos, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(err(pos, format!("maxval {maxval} unsupported (only 255)")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected one whitespace byte after maxval"));
    }
    pos += 1;
    let need = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() != need {
        return Err(err(
            pos,
            format!("expected {need} pixel bytes, found {}", payload.len()),
        ));
    }
    Image::from_bytes(height, width, 3, payload).map_err(|e| err(pos, e.to_string()))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(io_err(path))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|e| CoreError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
