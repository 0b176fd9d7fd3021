//! FDMT tensor files and manifest-driven checkpoint containers.
//!
//! An FDMT file is `FDMT` magic, a little-endian u32 rank, rank little-endian
//! u32 dims, then the row-major f64 payload. A container is a directory with
//! one FDMT file per tensor plus `manifest.txt` mapping name to file and role,
//! in writing order, so identical states serialize byte-identically.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FDMT";
const MAX_RANK: usize = 8;

/// Name of the index file inside a checkpoint container directory.
pub const MANIFEST_FILE: &str = "manifest.txt";

/// One tensor in a container, tagged with its role ("param" or "buffer").
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerEntry {
    pub name: String,
    pub tensor: Tensor,
    pub role: String,
}

/// Serializes one tensor to `path`.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 4 + 4 * tensor.rank() + 8 * tensor.numel());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads one tensor from `path`, rejecting malformed or truncated files with
/// the byte offset of the problem.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };

    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(parse_err(0, "missing FDMT magic".into()));
    }
    let take_u32 = |offset: usize| -> Result<u32> {
        let end = offset + 4;
        if bytes.len() < end {
            return Err(parse_err(offset, "file ends inside a u32 field".into()));
        }
        Ok(u32::from_le_bytes(bytes[offset..end].try_into().unwrap()))
    };

    let rank = take_u32(4)? as usize;
    if rank > MAX_RANK {
        return Err(parse_err(4, format!("rank {rank} exceeds limit {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for i in 0..rank {
        let d = take_u32(8 + 4 * i)? as usize;
        numel = numel.checked_mul(d).ok_or_else(|| {
            parse_err(8 + 4 * i, "dimension product overflows usize".into())
        })?;
        shape.push(d);
    }

    let payload_start = 8 + 4 * rank;
    let expected = numel * 8;
    let actual = bytes.len() - payload_start.min(bytes.len());
    if actual != expected {
        return Err(parse_err(
            payload_start,
            format!("payload has {actual} bytes, expected {expected}"),
        ));
    }
    let data = bytes[payload_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

/// Writes a container directory: one FDMT file per entry plus the manifest.
/// The directory is created if absent; existing entry files are overwritten.
pub fn save_container(dir: &Path, entries: &[ContainerEntry]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = Vec::new();
    for entry in entries {
        let file = format!("{}.fdmt", sanitize_name(&entry.name)?);
        write_tensor(&dir.join(&file), &entry.tensor)?;
        writeln!(manifest, "{}\t{}\t{}", entry.name, file, entry.role)
            .expect("in-memory write cannot fail");
    }
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(manifest_path, e))
}

/// Reads a container directory back in manifest order.
pub fn load_container(dir: &Path) -> Result<Vec<ContainerEntry>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches('\n');
        if !trimmed.is_empty() {
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: manifest_path.clone(),
                    offset,
                    message: format!(
                        "manifest line has {} tab-separated fields, expected 3",
                        fields.len()
                    ),
                });
            }
            let tensor = read_tensor(&dir.join(fields[1]))?;
            entries.push(ContainerEntry {
                name: fields[0].to_string(),
                tensor,
                role: fields[2].to_string(),
            });
        }
        offset += line.len();
    }
    Ok(entries)
}

fn sanitize_name(name: &str) -> Result<String> {
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
    {
        return Err(Error::invalid(format!(
            "tensor name {name:?} must be non-empty and limited to [A-Za-z0-9._-]"
        )));
    }
    Ok(name.to_string())
}
