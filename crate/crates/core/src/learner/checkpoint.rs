//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  8 bytes  b"NFDPMLP1"
//! count  u32      number of layer dimensions L + 1
//! dims   u64 × (L + 1)
//! then per layer: weights (in × out, row-major) as f64, biases (out) as f64
//! ```

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::model::{DenseLayer, MlpModel};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"NFDPMLP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint describes an invalid model: {0}")]
    Invalid(String),
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

impl<T: Real> MlpModel<T> {
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        let dims = self.layer_dims();
        w.write_all(MAGIC)?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for layer in self.layers() {
            for v in layer.weights.iter().chain(layer.biases.iter()) {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut count = [0u8; 4];
        r.read_exact(&mut count)?;
        let count = u32::from_le_bytes(count) as usize;
        if !(2..=64).contains(&count) {
            return Err(CheckpointError::Invalid(format!("{count} layer dimensions")));
        }
        let dims = (0..count)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
            return Err(CheckpointError::Invalid(format!("dimensions {dims:?}")));
        }
        let mut layers = Vec::with_capacity(count - 1);
        for w in dims.windows(2) {
            let mut weights = Array2::zeros((w[0], w[1]));
            for v in weights.iter_mut() {
                *v = T::of(read_f64(r)?);
            }
            let mut biases = Array1::zeros(w[1]);
            for v in biases.iter_mut() {
                *v = T::of(read_f64(r)?);
            }
            layers.push(DenseLayer { weights, biases });
        }
        MlpModel::from_layers(layers).map_err(|e| CheckpointError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::init_model;
    use crate::rng::{derive_stream, Purpose, StreamLabel};

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut s = derive_stream(2, StreamLabel::global(Purpose::ModelInit));
        let m: MlpModel<f64> = init_model(&[3, 7, 2], &mut s).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf.len(), 8 + 4 + 3 * 8 + (21 + 7 + 14 + 2) * 8);
        let back = MlpModel::<f64>::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_garbage() {
        let err = MlpModel::<f64>::read_checkpoint(&mut &b"NOTAMODELxxxx"[..]).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic));
    }
}
