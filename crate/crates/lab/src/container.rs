//! Binary container shared by dataset and checkpoint files:
//!
//! ```text
//! magic     4 bytes
//! version   u32 LE
//! hdr_len   u64 LE
//! header    hdr_len bytes of UTF-8 TOML
//! count     u64 LE
//! payload   count × f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{LabError, Result};

/// Serde adapter writing a `u64` as a `0x…` hex string; TOML integers are
/// signed 64-bit and cannot hold every seed.
pub mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#018x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        let digits = text.strip_prefix("0x").ok_or_else(|| {
            serde::de::Error::custom(format!("expected a 0x-prefixed seed, got {text:?}"))
        })?;
        u64::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug)]
pub struct Container {
    pub header: String,
    pub payload: Vec<f64>,
}

pub fn encode(magic: &[u8; 4], version: u32, header: &str, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + header.len() + 8 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes to a sibling temporary file first so an interrupted run never
/// leaves a truncated artifact under the final name.
pub fn write(
    path: &Path,
    magic: &[u8; 4],
    version: u32,
    header: &str,
    payload: &[f64],
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    {
        let f = File::create(&tmp).map_err(|e| LabError::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&encode(magic, version, header, payload))
            .and_then(|_| w.flush())
            .map_err(|e| LabError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn read(path: &Path, magic: &[u8; 4], version: u32) -> Result<Container> {
    let f = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LabError::Missing(path.to_path_buf()),
        _ => LabError::io(path, e),
    })?;
    let mut bytes = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut bytes)
        .map_err(|e| LabError::io(path, e))?;
    decode(&bytes, magic, version).map_err(|m| LabError::format(path, m))
}

pub fn decode(
    bytes: &[u8],
    magic: &[u8; 4],
    version: u32,
) -> std::result::Result<Container, String> {
    let mut at = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| format!("truncated at byte {at} (wanted {n} more)"))?;
        at += n;
        Ok(s)
    };
    let m = take(4)?;
    if m != magic {
        return Err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(magic)
        ));
    }
    let v = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if v != version {
        return Err(format!(
            "unsupported format version {v}, expected {version}"
        ));
    }
    let hlen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let header = std::str::from_utf8(take(hlen)?)
        .map_err(|e| format!("header is not UTF-8: {e}"))?
        .to_owned();
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let body = take(count.checked_mul(8).ok_or("payload length overflows")?)?;
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - at));
    }
    Ok(Container { header, payload })
}
