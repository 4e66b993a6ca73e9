//! Shared on-disk framing: an 8-byte little-endian header length, a UTF-8
//! JSON header, then a little-endian float payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use neft_tensor::{DType, Element};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{NeftError, Result};

pub fn write<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(payload)?;
    out.flush()?;
    Ok(())
}

pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<u8>)> {
    let file = File::open(path)?;
    let size = file.metadata()?.len();
    let mut input = BufReader::new(file);
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| NeftError::Format("missing header length prefix".into()))?;
    let len = u64::from_le_bytes(len);
    if len > size.saturating_sub(8) {
        return Err(NeftError::Format(format!("header length {len} exceeds the file size {size}")));
    }
    let len = len as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(|_| NeftError::Format("truncated header".into()))?;
    let header = serde_json::from_slice(&json)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    Ok((header, payload))
}

pub fn encode<T: Element>(values: impl IntoIterator<Item = T>, out: &mut Vec<u8>) {
    for v in values {
        v.to_le_bytes_into(out);
    }
}

pub fn decode_f64(bytes: &[u8], dtype: DType) -> Result<Vec<f64>> {
    let width = dtype.size_of();
    if !bytes.len().is_multiple_of(width) {
        return Err(NeftError::Format(format!("payload length {} is not a multiple of {width}", bytes.len())));
    }
    Ok(match dtype {
        DType::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_slice(c) as f64).collect(),
        DType::F64 => bytes.chunks_exact(8).map(f64::from_le_slice).collect(),
    })
}
