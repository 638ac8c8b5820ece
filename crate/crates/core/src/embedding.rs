//! Embedding vectors keyed by id.
//!
//! Vectors are always ingested from files (CSV or the UEMB binary format);
//! this crate never runs an image or text encoder.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding io: {0}")]
    Io(#[from] io::Error),
    #[error("bad embedding data: {0}")]
    Format(String),
    #[error("inconsistent dimension: expected {expected}, row {row} has {got}")]
    DimMismatch {
        expected: usize,
        got: usize,
        row: usize,
    },
    #[error("non-finite value in embedding for id {0}")]
    NonFinite(String),
}

/// A set of D-dimensional vectors with string ids, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        EmbeddingSet {
            ids: Vec::new(),
            dim,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                got: vector.len(),
                row: self.ids.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(id));
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.vector(i)))
    }

    /// Parses `id,dim0,...` rows; a leading header line is skipped when its
    /// second field is not numeric.
    pub fn from_csv(text: &str) -> Result<Self, EmbeddingError> {
        let mut set: Option<EmbeddingSet> = None;
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(EmbeddingError::Format(format!(
                    "line {} has fewer than 2 fields",
                    line_no + 1
                )));
            }
            if line_no == 0 && fields[1].parse::<f64>().is_err() {
                continue; // header
            }
            let mut vector = Vec::with_capacity(fields.len() - 1);
            for f in &fields[1..] {
                let v = f.parse::<f64>().map_err(|_| {
                    EmbeddingError::Format(format!(
                        "line {}: non-numeric value \"{f}\"",
                        line_no + 1
                    ))
                })?;
                vector.push(v);
            }
            let set = set.get_or_insert_with(|| EmbeddingSet::new(vector.len()));
            set.push(fields[0], &vector)?;
        }
        set.ok_or_else(|| EmbeddingError::Format("no embedding rows".into()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for d in 0..self.dim {
            out.push_str(&format!(",dim{d}"));
        }
        out.push('\n');
        for (id, v) in self.iter() {
            out.push_str(id);
            for x in v {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }

    /// Binary format: magic "UEMB", u32 count, u32 D, then per record a u16
    /// id byte length, the UTF-8 id, and D f32 values. Little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), EmbeddingError> {
        w.write_all(b"UEMB")?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for (id, v) in self.iter() {
            let bytes = id.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            for x in v {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EmbeddingError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"UEMB" {
            return Err(EmbeddingError::Format("bad magic, expected UEMB".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut set = EmbeddingSet::new(dim);
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let id_len = u16::from_le_bytes(b2) as usize;
            let mut id_bytes = vec![0u8; id_len];
            r.read_exact(&mut id_bytes)?;
            let id = String::from_utf8(id_bytes)
                .map_err(|e| EmbeddingError::Format(format!("bad id utf-8: {e}")))?;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut b4)?;
                vector.push(f32::from_le_bytes(b4) as f64);
            }
            set.push(id, &vector)?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_header() {
        let mut set = EmbeddingSet::new(3);
        set.push("a", &[1.0, 2.0, 3.0]).unwrap();
        set.push("b", &[-0.5, 0.25, 0.0]).unwrap();
        let csv = set.to_csv();
        let back = EmbeddingSet::from_csv(&csv).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn csv_without_header_also_parses() {
        let back = EmbeddingSet::from_csv("x,1.0,2.0\ny,3.0,4.0\n").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("y"), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let err = EmbeddingSet::from_csv("id,dim0,dim1\na,1,2\nb,1\n").unwrap_err();
        assert!(matches!(err, EmbeddingError::DimMismatch { row: 1, .. }));
    }

    #[test]
    fn binary_round_trip() {
        let mut set = EmbeddingSet::new(2);
        set.push("bldg_0", &[0.5, -1.25]).unwrap();
        set.push("bldg_long_name_1", &[3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = EmbeddingSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, set);
    }
}
