//! Named-tensor container on disk.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MADT-CKPT-1\n"
//! u64 header_len, header_len bytes of JSON
//! u32 tensor_count
//! repeated: u32 name_len, name (UTF-8), u32 rank, rank × u64 dims, numel × f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{MadtError, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"MADT-CKPT-1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(header: serde_json::Value) -> Self {
        Checkpoint {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("json value serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 12];
        r.read_exact(&mut magic)
            .map_err(|_| MadtError::format(path, "truncated magic"))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(MadtError::format(path, "not a MADT-CKPT-1 file"));
        }
        let mut rd = Reader { r, path };
        let hlen = rd.u64()? as usize;
        let header: serde_json::Value = serde_json::from_slice(rd.take(hlen)?)
            .map_err(|e| MadtError::format(path, format!("bad header: {e}")))?;
        let count = rd.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = rd.u32()? as usize;
            let name = String::from_utf8(rd.take(nlen)?.to_vec())
                .map_err(|_| MadtError::format(path, "tensor name is not UTF-8"))?;
            let rank = rd.u32()? as usize;
            let shape = (0..rank)
                .map(|_| rd.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if !rd.r.is_empty() {
            return Err(MadtError::format(path, "trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| MadtError::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| MadtError::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| MadtError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MadtError::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    r: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.r.len() < n {
            return Err(MadtError::format(self.path, "unexpected end of file"));
        }
        let (head, tail) = self.r.split_at(n);
        self.r = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ck = Checkpoint::new(serde_json::json!({"n_layer": 2}));
        ck.push("a", Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap());
        ck.push("s", Tensor::scalar(std::f64::consts::PI));
        let bytes = ck.to_bytes();
        assert!(bytes.starts_with(b"MADT-CKPT-1\n"));
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.header, ck.header);
        for ((na, ta), (nb, tb)) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let p = Path::new("mem");
        assert!(Checkpoint::from_bytes(b"NOT-A-CKPT!!\n", p).is_err());
        let mut ck = Checkpoint::new(serde_json::json!({}));
        ck.push("a", Tensor::vector(vec![1.0, 2.0]));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
    }
}
