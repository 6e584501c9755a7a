//! The LTNS tensor file format and the checkpoint container built on it.
//!
//! An LTNS file is: the 8-byte magic `LTNSv001`, a little-endian `u32` header
//! length, a JSON header `{"dtype":"f64","complex":bool,"shape":[c,h,w]}`, and
//! the raw little-endian `f64` payload (real array, then imaginary array when
//! complex).
//!
//! Checkpoints are directories holding a `manifest.json` plus one LTNS file
//! per named parameter tensor.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor, Shape};

const MAGIC: &[u8; 8] = b"LTNSv001";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    complex: bool,
    shape: [usize; 3],
}

fn write_payload(w: &mut impl Write, shape: Shape, re: &[f64], im: Option<&[f64]>) -> Result<()> {
    let header = Header {
        dtype: "f64".to_string(),
        complex: im.is_some(),
        shape: [shape.0, shape.1, shape.2],
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for &v in re {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(im) = im {
        for &v in im {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_real(path: impl AsRef<Path>, t: &RealTensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_payload(&mut f, t.shape(), t.data(), None)
}

pub fn write_complex(path: impl AsRef<Path>, t: &ComplexTensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_payload(&mut f, t.shape(), t.re(), Some(t.im()))
}

fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::config("not an LTNS file (bad magic)"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.dtype != "f64" {
        return Err(Error::config(format!("unsupported dtype {}", header.dtype)));
    }
    Ok(header)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_real(path: impl AsRef<Path>) -> Result<RealTensor> {
    let mut f = fs::File::open(path)?;
    let header = read_header(&mut f)?;
    if header.complex {
        return Err(Error::config("expected real tensor, file is complex"));
    }
    let [c, h, w] = header.shape;
    let data = read_f64s(&mut f, c * h * w)?;
    RealTensor::from_vec((c, h, w), data)
}

pub fn read_complex(path: impl AsRef<Path>) -> Result<ComplexTensor> {
    let mut f = fs::File::open(path)?;
    let header = read_header(&mut f)?;
    let [c, h, w] = header.shape;
    let n = c * h * w;
    let re = read_f64s(&mut f, n)?;
    let im = if header.complex {
        read_f64s(&mut f, n)?
    } else {
        vec![0.0; n]
    };
    ComplexTensor::from_parts((c, h, w), re, im)
}

/// One named tensor inside a checkpoint directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 3],
}

/// Write a set of named parameter tensors plus a caller-supplied manifest body.
///
/// The manifest body is merged with the generated `params` listing so each
/// checkpoint kind can carry its own metadata (hyperparameters, step, loss).
pub fn write_checkpoint(
    dir: impl AsRef<Path>,
    meta: serde_json::Value,
    tensors: &[(&str, &RealTensor)],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, t) in tensors {
        let file = format!("{name}.ltns");
        write_real(dir.join(&file), t)?;
        let (c, h, w) = t.shape();
        entries.push(ManifestEntry {
            name: name.to_string(),
            file,
            shape: [c, h, w],
        });
    }
    let mut manifest = match meta {
        serde_json::Value::Object(m) => m,
        _ => return Err(Error::config("checkpoint meta must be a JSON object")),
    };
    manifest.insert("params".into(), serde_json::to_value(&entries)?);
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(manifest))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Load a checkpoint directory: manifest JSON plus all named tensors.
pub fn read_checkpoint(
    dir: impl AsRef<Path>,
) -> Result<(serde_json::Value, Vec<(String, RealTensor)>)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::config(format!(
            "checkpoint manifest not found: {}",
            manifest_path.display()
        )));
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let entries: Vec<ManifestEntry> = serde_json::from_value(
        manifest
            .get("params")
            .cloned()
            .ok_or_else(|| Error::config("manifest missing params list"))?,
    )?;
    let mut tensors = Vec::new();
    for e in entries {
        let t = read_real(dir.join(&e.file))?;
        let (c, h, w) = t.shape();
        if [c, h, w] != e.shape {
            return Err(Error::config(format!(
                "tensor {} shape {:?} does not match manifest {:?}",
                e.name,
                (c, h, w),
                e.shape
            )));
        }
        tensors.push((e.name, t));
    }
    Ok((manifest, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn real_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ltns");
        let t = RealTensor::from_vec((2, 1, 3), vec![1.0, -2.5, 3.25, 0.0, 1e-12, 9.0]).unwrap();
        write_real(&path, &t).unwrap();
        let back = read_real(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn complex_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ltns");
        let t =
            ComplexTensor::from_parts((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0], vec![0.5; 4]).unwrap();
        write_complex(&path, &t).unwrap();
        let back = read_complex(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ltns");
        std::fs::write(&path, b"NOTLTNS0\0\0\0\0").unwrap();
        assert!(read_real(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempdir().unwrap();
        let a = RealTensor::filled((1, 2, 2), 0.5);
        let b = RealTensor::filled((2, 1, 1), -1.0);
        write_checkpoint(
            dir.path().join("ckpt"),
            serde_json::json!({"kind": "test", "step": 3}),
            &[("a", &a), ("b", &b)],
        )
        .unwrap();
        let (meta, tensors) = read_checkpoint(dir.path().join("ckpt")).unwrap();
        assert_eq!(meta["kind"], "test");
        assert_eq!(tensors.len(), 2);
        assert_eq!(tensors[0].1, a);
        assert_eq!(tensors[1].1, b);
    }
}
