//! Dense per-paper embedding store and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SCIV1"  u32 dim  u64 count
//! count × { u32 id_len, id_len bytes UTF-8 paper_id, dim × f32 }
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const EMBEDDING_MAGIC: &[u8; 5] = b"SCIV1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a SCIV1 embedding file")]
    BadMagic,
    #[error("row {row} ({id:?}) has {got} values, expected {dim}")]
    DimMismatch { row: usize, id: String, got: usize, dim: usize },
    #[error("row {row} ({id:?}) contains a non-finite value")]
    NonFinite { row: usize, id: String },
    #[error("duplicate embedding id {0:?}")]
    DuplicateId(String),
    #[error("paper id in row {0} is not valid UTF-8")]
    BadId(usize),
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    row_index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut store = Self {
            dim,
            ..Self::default()
        };
        for (id, v) in rows {
            store.push(id, &v)?;
        }
        Ok(store)
    }

    fn push(&mut self, id: String, v: &[f32]) -> Result<(), EmbeddingError> {
        let row = self.ids.len();
        if v.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                row,
                id,
                got: v.len(),
                dim: self.dim,
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { row, id });
        }
        if self.row_index.insert(id.clone(), row).is_some() {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.row_index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.row(r))
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in self.row(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, EmbeddingError> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(EmbeddingError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut store = Self {
            dim,
            ..Self::default()
        };
        let mut row = vec![0f32; dim];
        for i in 0..count {
            r.read_exact(&mut b4)?;
            let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| EmbeddingError::BadId(i))?;
            for x in row.iter_mut() {
                r.read_exact(&mut b4)?;
                *x = f32::from_le_bytes(b4);
            }
            store.push(id, &row)?;
        }
        Ok(store)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::read_from(File::open(path)?)
    }
}
