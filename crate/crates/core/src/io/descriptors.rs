//! Descriptor files: magic `DESC`, dimension `D` and entry count as
//! little-endian `u32`, then per entry an `i32` label and `D` little-endian
//! `f32` values. Vectors are stored as produced; several entries for one
//! label are per-view vectors that the table averages and normalizes. An
//! empty file is an empty table.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::Label;
use crate::semantics::DescriptorTable;

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"DESC";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorFile {
    pub dim: usize,
    pub entries: Vec<(Label, Vec<f32>)>,
}

impl DescriptorFile {
    pub fn table(&self) -> Result<DescriptorTable> {
        let entries: Vec<(Label, Vec<f64>)> = self
            .entries
            .iter()
            .map(|(l, v)| (*l, v.iter().map(|&x| x as f64).collect()))
            .collect();
        DescriptorTable::from_views(&entries)
    }
}

pub fn encode_descriptors(file: &DescriptorFile) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + file.entries.len() * (4 + 4 * file.dim));
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    out.extend_from_slice(&(file.dim as u32).to_le_bytes());
    out.extend_from_slice(&(file.entries.len() as u32).to_le_bytes());
    for (l, v) in &file.entries {
        if v.len() != file.dim {
            return Err(Error::DescriptorDim {
                expected: file.dim,
                got: v.len(),
            });
        }
        let l = i32::try_from(*l).map_err(|_| Error::format("descriptors", format!("label {l} does not fit int32")))?;
        out.extend_from_slice(&l.to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<DescriptorFile> {
    if bytes.is_empty() {
        return Ok(DescriptorFile::default());
    }
    let err = |m: String| Error::format("descriptors", m);
    if bytes.len() < 12 {
        return Err(err("file shorter than its 12-byte header".into()));
    }
    if &bytes[..4] != DESCRIPTOR_MAGIC {
        return Err(err("bad magic, expected DESC".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (dim, count) = (word(4), word(8));
    let stride = 4 + 4 * dim;
    if bytes.len() - 12 != stride * count {
        return Err(err(format!(
            "{count} entries of dimension {dim} need {} bytes, found {}",
            stride * count,
            bytes.len() - 12
        )));
    }
    let entries = bytes[12..]
        .chunks_exact(stride)
        .map(|c| {
            let l = i32::from_le_bytes(c[..4].try_into().unwrap());
            let label = Label::try_from(l).map_err(|_| err(format!("negative label {l}")))?;
            let v: Vec<f32> = c[4..].chunks_exact(4).map(|x| f32::from_le_bytes(x.try_into().unwrap())).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(format!("non-finite value in descriptor of label {label}")));
            }
            Ok((label, v))
        })
        .collect::<Result<_>>()?;
    Ok(DescriptorFile { dim, entries })
}

pub fn save_descriptors(path: impl AsRef<Path>, file: &DescriptorFile) -> Result<()> {
    std::fs::write(path, encode_descriptors(file)?)?;
    Ok(())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorFile> {
    decode_descriptors(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_aggregation() {
        let f = DescriptorFile {
            dim: 3,
            entries: vec![(1, vec![3.0, 0.0, 4.0]), (2, vec![0.0, 2.0, 0.0]), (1, vec![3.0, 0.0, 4.0])],
        };
        let bytes = encode_descriptors(&f).unwrap();
        assert_eq!(decode_descriptors(&bytes).unwrap(), f);
        let t = f.table().unwrap();
        assert_eq!(t.instances[&1].as_slice(), &[0.6, 0.0, 0.8]);
        assert_eq!(t.instances[&2].as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_file_is_empty_table() {
        assert!(decode_descriptors(&[]).unwrap().table().unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_files() {
        let f = DescriptorFile {
            dim: 2,
            entries: vec![(1, vec![1.0, 2.0])],
        };
        let mut bytes = encode_descriptors(&f).unwrap();
        assert!(decode_descriptors(&bytes[..bytes.len() - 1]).is_err());
        bytes[4] = 3;
        assert!(decode_descriptors(&bytes).is_err());
        bytes[0] = b'X';
        assert!(decode_descriptors(&bytes).is_err());
        let neg = [DESCRIPTOR_MAGIC.as_slice(), &1u32.to_le_bytes(), &1u32.to_le_bytes(), &(-1i32).to_le_bytes(), &1f32.to_le_bytes()].concat();
        assert!(decode_descriptors(&neg).is_err());
    }
}
