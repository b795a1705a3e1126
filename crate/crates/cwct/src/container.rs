//! Named-tensor container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "CWCT"  u32 version=1  u32 count
//! count x { u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 data[prod(dims)] }
//! ```
//!
//! Engine snapshots reuse the container with reserved `state.*` names.

use cwct_core::{Matrix, RingSnapshot, Tensor, WeightStore};

use crate::error::{FormatError, Problem};

pub const MAGIC: &[u8; 4] = b"CWCT";
pub const VERSION: u32 = 1;

/// Bounds-checked little-endian reader that remembers where it is.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.at
    }

    pub(crate) fn take(&mut self, n: usize, field: &dyn Fn() -> String) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.at;
        if n > available {
            return Err(FormatError::new(self.at, field(), Problem::Truncated { needed: n, available }));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, field: &dyn Fn() -> String) -> Result<u8, FormatError> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &dyn Fn() -> String) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, field: &dyn Fn() -> String) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: usize, field: &dyn Fn() -> String) -> Result<Vec<f32>, FormatError> {
        let at = self.at;
        let len = count
            .checked_mul(4)
            .ok_or_else(|| FormatError::new(at, field(), Problem::ShapeOverflow))?;
        let raw = self.take(len, field)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<(), FormatError> {
        let at = self.at;
        let found = self.take(4, &|| "magic".into())?;
        if found != want {
            return Err(FormatError::new(at, "magic", Problem::BadMagic { expected: *want, found: found.try_into().unwrap() }));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<(), FormatError> {
        let at = self.at;
        let v = self.u32(&|| "version".into())?;
        if v != VERSION {
            return Err(FormatError::new(at, "version", Problem::UnsupportedVersion(v)));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        if self.at != self.bytes.len() {
            return Err(FormatError::new(self.at, "end of file", Problem::TrailingBytes(self.bytes.len() - self.at)));
        }
        Ok(())
    }
}

/// Serializes a store in its insertion order.
pub fn encode_weights(store: &WeightStore) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(12 + 4 * store.parameter_count() + 64 * store.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(store.len()).map_err(|_| FormatError::new(8, "tensor count", Problem::ShapeOverflow))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (i, (name, t)) in store.iter().enumerate() {
        let len = u16::try_from(name.len())
            .map_err(|_| FormatError::new(out.len(), format!("tensor {i} name length"), Problem::NameTooLong(name.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| FormatError::new(out.len(), format!("tensor {i} ({name}) rank"), Problem::ShapeOverflow))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| FormatError::new(out.len(), format!("tensor {i} ({name}) dims"), Problem::ShapeOverflow))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a container, rejecting anything but an exact, complete file.
pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    r.version()?;
    let count = r.u32(&|| "tensor count".into())?;
    let mut store = WeightStore::new();
    for i in 0..count as usize {
        let len = r.u16(&|| format!("tensor {i} name length"))? as usize;
        let name_at = r.offset();
        let raw = r.take(len, &|| format!("tensor {i} name"))?;
        let name = std::str::from_utf8(raw)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| FormatError::new(name_at, format!("tensor {i} name"), Problem::NotAscii))?;
        let label = |what: &str| format!("tensor {i} ({name}) {what}");
        let rank = r.u8(&|| label("rank"))? as usize;
        let dims_at = r.offset();
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&|| label("dims"))? as usize);
        }
        let elements = shape
            .iter()
            .try_fold(1usize, |n, &d| n.checked_mul(d))
            .ok_or_else(|| FormatError::new(dims_at, label("dims"), Problem::ShapeOverflow))?;
        let data = r.f32s(elements, &|| label("data"))?;
        store
            .insert(name, Tensor::new(shape, data))
            .map_err(|_| FormatError::new(name_at, format!("tensor {i} name"), Problem::DuplicateName(name.into())))?;
    }
    r.finish()?;
    Ok(store)
}

pub const SLOTS: &str = "state.slots";
pub const TREND: &str = "state.trend";
pub const CURSOR: &str = "state.cursor";
pub const SUMMARIES: &str = "state.summaries";

/// Packs a ring snapshot into a store under the reserved names. The
/// cursor is stored as a one-element tensor.
pub fn snapshot_store(s: &RingSnapshot) -> WeightStore {
    let mut store = WeightStore::new();
    let put = |store: &mut WeightStore, name: &str, m: &Matrix| {
        store.insert(name, Tensor::new(vec![m.rows(), m.cols()], m.data().to_vec())).unwrap();
    };
    put(&mut store, SLOTS, &s.slots);
    put(&mut store, TREND, &s.trend);
    store.insert(CURSOR, Tensor::vector(vec![s.cursor as f32])).unwrap();
    put(&mut store, SUMMARIES, &s.summaries);
    store
}

pub fn encode_snapshot(s: &RingSnapshot) -> Result<Vec<u8>, FormatError> {
    encode_weights(&snapshot_store(s))
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<RingSnapshot, FormatError> {
    let store = decode_weights(bytes)?;
    let matrix = |name: &str| -> Result<Matrix, FormatError> {
        let t = store.get(name).ok_or_else(|| FormatError::new(bytes.len(), name, Problem::MissingEntry))?;
        if t.shape().len() != 2 {
            return Err(FormatError::new(0, name, Problem::WrongRank { expected: 2, found: t.shape().len() }));
        }
        Ok(Matrix::from_vec(t.shape()[0], t.shape()[1], t.data().to_vec()))
    };
    let cursor = store.get(CURSOR).ok_or_else(|| FormatError::new(bytes.len(), CURSOR, Problem::MissingEntry))?;
    let value = match cursor.data() {
        [v] if *v >= 0.0 && v.fract() == 0.0 && *v < 16_777_216.0 => *v as usize,
        _ => return Err(FormatError::new(0, CURSOR, Problem::BadCursor)),
    };
    Ok(RingSnapshot { slots: matrix(SLOTS)?, trend: matrix(TREND)?, cursor: value, summaries: matrix(SUMMARIES)? })
}
