//! Plain PGM/PPM import and export for human inspection.
//!
//! Binary `P5` (single channel) and `P6` (three channels) with 8-bit depth.
//! Values map linearly between `[0,1]` and `0..=255`, so the path is lossy;
//! LTNS is the lossless interchange format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// Export a tensor to PGM (1 channel) or PPM (first 3 channels).
pub fn write_pnm(path: impl AsRef<Path>, t: &RealTensor) -> Result<()> {
    let (c, h, w) = t.shape();
    let mut out: Vec<u8> = Vec::new();
    if c == 1 {
        out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
        for &v in t.channel(0) {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    } else if c >= 3 {
        out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
        for i in 0..h * w {
            for ch in 0..3 {
                out.push((t.channel(ch)[i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    } else {
        return Err(Error::config(format!(
            "cannot export {c}-channel tensor as PNM"
        )));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Import a binary PGM/PPM file as a 1- or 3-channel tensor in `[0,1]`.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<RealTensor> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0usize;
    // Header: magic, width, height, maxval; whitespace separated, `#` comments.
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields.len() < 4 {
        return Err(Error::config("truncated PNM header"));
    }
    pos += 1; // single whitespace after maxval
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::config(format!("unsupported PNM magic {other}"))),
    };
    let w: usize = fields[1]
        .parse()
        .map_err(|_| Error::config("bad PNM width"))?;
    let h: usize = fields[2]
        .parse()
        .map_err(|_| Error::config("bad PNM height"))?;
    let maxval: f64 = fields[3]
        .parse()
        .map_err(|_| Error::config("bad PNM maxval"))?;
    let need = channels * h * w;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::config("truncated PNM payload"));
    }
    let mut t = RealTensor::zeros((channels, h, w));
    for i in 0..h * w {
        for ch in 0..channels {
            let v = payload[i * channels + ch] as f64 / maxval;
            t.channel_mut(ch)[i] = v;
        }
    }
    Ok(t)
}
