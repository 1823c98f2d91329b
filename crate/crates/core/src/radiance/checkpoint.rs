//! Flat binary checkpoint:
//!
//! ```text
//! "TNRF" | version u32 | L_x u32 | L_d u32 | bounds 6×f64 (min xyz, max xyz)
//! | layer count u32 | (inputs u32, outputs u32) per layer
//! | per layer: weights row-major (inputs×outputs) f64, bias f64
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::field::{DenseLayer, FieldParameters, SceneBounds};
use super::{EncodingConfig, RadianceError};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TNRF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &FieldParameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.parameter_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.encoding.position_frequencies as u32).to_le_bytes());
    out.extend_from_slice(&(params.encoding.direction_frequencies as u32).to_le_bytes());
    for v in params.bounds.min.iter().chain(&params.bounds.max) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RadianceError> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| RadianceError::BadCheckpoint("unexpected end of file".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, RadianceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, RadianceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FieldParameters, RadianceError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(RadianceError::BadCheckpoint("missing TNRF magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(RadianceError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let encoding = EncodingConfig {
        position_frequencies: r.u32()? as usize,
        direction_frequencies: r.u32()? as usize,
    };
    let mut bounds = [0.0; 6];
    for b in &mut bounds {
        *b = r.f64()?;
    }
    let bounds = SceneBounds::new([bounds[0], bounds[1], bounds[2]], [bounds[3], bounds[4], bounds[5]])
        .map_err(|e| RadianceError::BadCheckpoint(e.to_string()))?;
    let count = r.u32()? as usize;
    if count > 1024 {
        return Err(RadianceError::BadCheckpoint(format!("implausible layer count {count}")));
    }
    let dims: Vec<(usize, usize)> = (0..count)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
        .collect::<Result<_, RadianceError>>()?;
    let mut layers = Vec::with_capacity(count);
    for (inputs, outputs) in dims {
        let w = (0..inputs * outputs).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let b = (0..outputs).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((inputs, outputs), w)
                .map_err(|e| RadianceError::BadCheckpoint(e.to_string()))?,
            bias: Array1::from_vec(b),
        });
    }
    if r.pos != bytes.len() {
        return Err(RadianceError::BadCheckpoint("trailing bytes".into()));
    }
    let params = FieldParameters {
        encoding,
        bounds,
        layers,
    };
    params.validate()?;
    Ok(params)
}

pub fn write_checkpoint(params: &FieldParameters, path: &Path) -> Result<(), RadianceError> {
    write_atomic(path, &encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<FieldParameters, RadianceError> {
    decode_checkpoint(&std::fs::read(path)?)
}
