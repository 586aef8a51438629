use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::DciError;

pub const STORE_MAGIC: &[u8; 4] = b"AV2V";
pub const STORE_VERSION: u16 = 1;

/// Report vectors with their ids, as written by `embed`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    pub ids: Vec<String>,
    /// `count × dim`, row-major.
    pub vectors: Array2<f32>,
}

impl VectorStore {
    pub fn new(ids: Vec<String>, vectors: Array2<f32>) -> Result<Self, DciError> {
        if ids.len() != vectors.nrows() {
            return Err(DciError::CorruptFile(format!("{} ids for {} vectors", ids.len(), vectors.nrows())));
        }
        Ok(VectorStore { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), DciError> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.vectors.len() * 4);
        for x in self.vectors.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for id in &self.ids {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, DciError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut c = Cursor::new(&bytes);
        if c.take(4)? != STORE_MAGIC {
            return Err(DciError::CorruptFile("not a vector store".into()));
        }
        let version = c.u16()?;
        if version != STORE_VERSION {
            return Err(DciError::VersionMismatch { found: version as u32, expected: STORE_VERSION as u32 });
        }
        let dim = c.u32()? as usize;
        let count = c.u64()? as usize;
        let n_floats = count.checked_mul(dim).ok_or_else(|| DciError::CorruptFile("size overflow".into()))?;
        let data = c.f32s(n_floats)?;
        let mut ids = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            let len = c.u32()? as usize;
            let s = std::str::from_utf8(c.take(len)?).map_err(|_| DciError::CorruptFile("id is not UTF-8".into()))?;
            ids.push(s.to_string());
        }
        c.finish()?;
        let vectors = Array2::from_shape_vec((count, dim), data).expect("length checked");
        Ok(VectorStore { ids, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<(), DciError> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, DciError> {
        Self::read(std::fs::File::open(path)?)
    }
}

/// Bounds-checked little-endian reader.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DciError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DciError::CorruptFile("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DciError> {
        Ok(self.take(N)?.try_into().expect("length N"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, DciError> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, DciError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DciError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DciError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, DciError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DciError> {
        let len = n.checked_mul(4).ok_or_else(|| DciError::CorruptFile("size overflow".into()))?;
        Ok(self.take(len)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect())
    }

    pub(crate) fn finish(&self) -> Result<(), DciError> {
        if self.pos != self.bytes.len() {
            return Err(DciError::CorruptFile("trailing bytes".into()));
        }
        Ok(())
    }
}
