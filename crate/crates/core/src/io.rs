//! MRT1 tensor files and the on-disk dataset layout.
//!
//! Layout: magic `MRT1`, `u32` rank, `rank` × `u32` dims, then the payload as
//! little-endian IEEE-754 doubles. All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{LabeledDataset, Tensor};

pub const MAGIC: &[u8; 4] = b"MRT1";

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an MRT1 byte buffer. Never panics on malformed input.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut pos = 4;
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let end = *pos + 4;
        let chunk = bytes
            .get(*pos..end)
            .ok_or_else(|| Error::LengthMismatch("truncated header".into()))?;
        *pos = end;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
    };
    let rank = read_u32(&mut pos)? as usize;
    if rank == 0 {
        return Err(Error::Shape("rank 0 tensor".into()));
    }
    // every dim occupies 4 header bytes, so bound the rank before allocating
    if rank > (bytes.len() - pos) / 4 {
        return Err(Error::LengthMismatch(format!(
            "header declares rank {rank} but file has {} bytes",
            bytes.len()
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut pos)? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::LengthMismatch(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[pos..];
    if count.checked_mul(8) != Some(payload.len()) {
        return Err(Error::LengthMismatch(format!(
            "shape {shape:?} needs {count} floats, payload holds {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Stacks a dataset into `inputs.mrt1` (first dim = N) and `labels.mrt1`.
pub fn write_dataset(d: &LabeledDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut shape = vec![d.len()];
    shape.extend_from_slice(d.input_shape());
    let data: Vec<f64> = d.inputs().iter().flat_map(|t| t.data().iter().copied()).collect();
    write_tensor(&Tensor::new(shape, data)?, &dir.join("inputs.mrt1"))?;
    let labels = d.labels().iter().map(|&l| l as f64).collect();
    write_tensor(&Tensor::vector(labels)?, &dir.join("labels.mrt1"))
}

/// Loads a dataset directory; the class count is `max(label) + 1` (at least 2).
pub fn read_dataset(dir: &Path) -> Result<LabeledDataset> {
    let inputs = read_tensor(&dir.join("inputs.mrt1"))?;
    let labels = read_tensor(&dir.join("labels.mrt1"))?;
    dataset_from_tensors(dir.display().to_string(), &inputs, &labels)
}

pub fn dataset_from_tensors(
    name: String,
    inputs: &Tensor,
    labels: &Tensor,
) -> Result<LabeledDataset> {
    if inputs.rank() < 2 {
        return Err(Error::Shape("inputs tensor needs rank >= 2".into()));
    }
    if labels.rank() != 1 {
        return Err(Error::Shape("labels tensor must be rank 1".into()));
    }
    let n = inputs.shape()[0];
    if labels.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} inputs but {} labels",
            labels.len()
        )));
    }
    let mut ys = Vec::with_capacity(n);
    for &v in labels.data() {
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::InvalidArgument(format!("label {v} is not a class index")));
        }
        ys.push(v as usize);
    }
    let item_shape = inputs.shape()[1..].to_vec();
    let item_len: usize = item_shape.iter().product();
    let xs = inputs
        .data()
        .chunks_exact(item_len)
        .map(|c| Tensor::new(item_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let k = ys.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(name, xs, ys, k.max(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_element_file_layout() {
        let t = Tensor::vector(vec![0.0, 1.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(b.len(), 28);
        assert_eq!(&b[..4], b"MRT1");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..20], &0.0f64.to_le_bytes());
        assert_eq!(&b[20..28], &1.0f64.to_le_bytes());
        assert_eq!(decode_tensor(&b).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut b = encode_tensor(&Tensor::vector(vec![1.0; 4]).unwrap());
        b.truncate(b.len() - 8);
        assert!(matches!(decode_tensor(&b), Err(Error::LengthMismatch(_))));
        let mut bad = encode_tensor(&Tensor::vector(vec![1.0]).unwrap());
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensor(&bad), Err(Error::BadMagic)));
        assert!(decode_tensor(b"MRT1\xff\xff\xff\xff").is_err());
        assert!(decode_tensor(b"MR").is_err());
    }

    #[test]
    fn rejects_non_finite_payload() {
        let mut b = encode_tensor(&Tensor::vector(vec![1.0]).unwrap());
        let n = b.len();
        b[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_tensor(&b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let xs = vec![
            Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
            Tensor::new(vec![2, 2], vec![4.0, 5.0, 6.0, 7.0]).unwrap(),
        ];
        let d = LabeledDataset::new("x", xs, vec![1, 0], 2).unwrap();
        write_dataset(&d, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.content_hash(), d.content_hash());
        assert_eq!(back.input_shape(), &[2, 2]);
    }
}
