//! Pre-extracted feature streams: `"FEAT" u32 version=1 u32 T u32 d`, then
//! `T·d` little-endian f32, row-major.

use cwct_core::Matrix;

use crate::container::{ByteReader, VERSION};
use crate::error::{FormatError, Problem};

pub const MAGIC: &[u8; 4] = b"FEAT";

pub fn encode_features(frames: &Matrix) -> Result<Vec<u8>, FormatError> {
    let t = u32::try_from(frames.rows()).map_err(|_| FormatError::new(8, "frame count", Problem::ShapeOverflow))?;
    let d = u32::try_from(frames.cols()).map_err(|_| FormatError::new(12, "feature dim", Problem::ShapeOverflow))?;
    let mut out = Vec::with_capacity(16 + 4 * frames.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for v in frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Matrix, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    r.version()?;
    let t = r.u32(&|| "frame count".into())? as usize;
    let d = r.u32(&|| "feature dim".into())? as usize;
    let at = r.offset();
    let n = t.checked_mul(d).ok_or_else(|| FormatError::new(at, "payload", Problem::ShapeOverflow))?;
    let data = r.f32s(n, &|| format!("payload ({t} x {d})"))?;
    r.finish()?;
    Ok(Matrix::from_vec(t, d, data))
}
