//! Gate parameters and their on-disk container.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "MEKFGATE"
//! version   u32       currently 1
//! count     u32       number of tensors
//! count x { name_len u16, name (UTF-8), rank u8, dims u32 x rank }
//! payload   f64 x Σ prod(dims), tensors in header order, row-major
//! ```
//!
//! Nothing may follow the payload. Parameters round-trip bit for bit.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LstmParams, Mlp, NnetError};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MEKFGATE";
pub const WEIGHTS_VERSION: u32 = 1;

/// Network sizes. The state is 8-dimensional and the measurement 4-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateArch {
    pub state_dim: usize,
    pub meas_dim: usize,
    pub memory: usize,
    pub mlp_hidden: usize,
}

impl Default for GateArch {
    fn default() -> Self {
        Self {
            state_dim: 8,
            meas_dim: 4,
            memory: 64,
            mlp_hidden: 64,
        }
    }
}

/// LSTM of the memory update gate plus the four compensation heads.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub arch: GateArch,
    /// Memory update: normalized state in, memory out.
    pub lstm: LstmParams,
    /// Prediction mean compensation (memory → state-sized offset).
    pub pred_mean: Mlp,
    /// Prediction covariance factor (memory → state-sized vector).
    pub pred_cov: Mlp,
    /// Measurement mean compensation (normalized prediction → measurement offset).
    pub meas_mean: Mlp,
    /// Measurement covariance factor (normalized prediction → measurement vector).
    pub meas_cov: Mlp,
}

const HEAD_NAMES: [&str; 4] = ["pred_mean", "pred_cov", "meas_mean", "meas_cov"];

impl GateWeights {
    /// Fresh weights whose compensation heads all output exactly zero, so the
    /// filter starts as a plain Kalman filter.
    pub fn init(arch: GateArch, seed: u64) -> Self {
        Self::build(arch, seed, true)
    }

    /// Fully random weights, output layers included. Used by gradient checks.
    pub fn init_random(arch: GateArch, seed: u64) -> Self {
        Self::build(arch, seed, false)
    }

    fn build(arch: GateArch, seed: u64, zero_output: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = LstmParams::uniform(arch.state_dim, arch.memory, &mut rng);
        let pred_mean = Mlp::one_hidden(arch.memory, arch.mlp_hidden, arch.state_dim, zero_output, &mut rng);
        let pred_cov = Mlp::one_hidden(arch.memory, arch.mlp_hidden, arch.state_dim, zero_output, &mut rng);
        let meas_mean = Mlp::one_hidden(arch.state_dim, arch.mlp_hidden, arch.meas_dim, zero_output, &mut rng);
        let meas_cov = Mlp::one_hidden(arch.state_dim, arch.mlp_hidden, arch.meas_dim, zero_output, &mut rng);
        Self {
            arch,
            lstm,
            pred_mean,
            pred_cov,
            meas_mean,
            meas_cov,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            lstm: self.lstm.zeros_like(),
            pred_mean: self.pred_mean.zeros_like(),
            pred_cov: self.pred_cov.zeros_like(),
            meas_mean: self.meas_mean.zeros_like(),
            meas_cov: self.meas_cov.zeros_like(),
        }
    }

    fn heads(&self) -> [&Mlp; 4] {
        [&self.pred_mean, &self.pred_cov, &self.meas_mean, &self.meas_cov]
    }

    /// Named tensors with shapes, in file order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for ((data, shape), name) in self.lstm.tensors().into_iter().zip(["w_x", "w_h", "b"]) {
            out.push((format!("lstm.{name}"), shape, data));
        }
        for (head, hname) in self.heads().into_iter().zip(HEAD_NAMES) {
            for (k, (data, shape)) in head.tensors().into_iter().enumerate() {
                let kind = if k % 2 == 0 { "w" } else { "b" };
                out.push((format!("{hname}.{}.{kind}", k / 2), shape, data));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.lstm.tensors_mut();
        out.extend(self.pred_mean.tensors_mut());
        out.extend(self.pred_cov.tensors_mut());
        out.extend(self.meas_mean.tensors_mut());
        out.extend(self.meas_cov.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, _, d) in self.tensors() {
            out.extend_from_slice(d);
        }
        out
    }

    /// Panics if `flat` has the wrong length.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Mutable access to the parameter at flat index `idx`.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if idx < t.len() {
                return &mut t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &GateWeights) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.2) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut out = Vec::with_capacity(16 + 8 * self.num_params());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, _) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
        }
        for (_, _, data) in &tensors {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a weight file, requiring it to match `arch` exactly.
    pub fn from_bytes(bytes: &[u8], arch: GateArch) -> Result<Self, NnetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != WEIGHTS_MAGIC {
            return Err(NnetError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(NnetError::VersionMismatch {
                found: version,
                supported: WEIGHTS_VERSION,
            });
        }
        let mut weights = Self::init(arch, 0);
        let expected: Vec<(String, Vec<usize>)> = weights
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let count = r.u32()? as usize;
        let mut header = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| NnetError::Corrupt("tensor name is not UTF-8".into()))?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            header.push((name, dims));
        }
        if count != expected.len() {
            return Err(NnetError::ShapeMismatch {
                name: "<tensor count>".into(),
                expected: vec![expected.len()],
                found: vec![count],
            });
        }
        for ((name, dims), (ename, edims)) in header.iter().zip(&expected) {
            if name != ename || dims != edims {
                return Err(NnetError::ShapeMismatch {
                    name: ename.clone(),
                    expected: edims.clone(),
                    found: dims.clone(),
                });
            }
        }
        for t in weights.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(NnetError::Corrupt(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnetError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, arch: GateArch) -> Result<Self, NnetError> {
        Self::from_bytes(&fs::read(path)?, arch)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnetError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnetError::Corrupt(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NnetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GateArch {
        GateArch {
            memory: 6,
            mlp_hidden: 5,
            ..GateArch::default()
        }
    }

    #[test]
    fn init_heads_output_zero() {
        let w = GateWeights::init(GateArch::default(), 7);
        let m = vec![0.3; 64];
        assert!(w.pred_mean.forward(&m).unwrap().iter().all(|v| *v == 0.0));
        assert!(w.pred_cov.forward(&m).unwrap().iter().all(|v| *v == 0.0));
        let s = vec![0.5; 8];
        assert!(w.meas_mean.forward(&s).unwrap().iter().all(|v| *v == 0.0));
        assert!(w.meas_cov.forward(&s).unwrap().iter().all(|v| *v == 0.0));
        // 4·64·(8+64+1) + 2·(64·64+64+64·8+8) + 2·(8·64+64+64·4+4)
        assert_eq!(w.num_params(), 18_688 + 2 * 4_680 + 2 * 836);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let w = GateWeights::init_random(small(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        w.save(&path).unwrap();
        let back = GateWeights::load(&path, small()).unwrap();
        let a: Vec<u64> = w.to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back, w);
    }

    #[test]
    fn wrong_hidden_size_is_shape_mismatch() {
        let w = GateWeights::init(small(), 3);
        let other = GateArch { memory: 7, ..small() };
        let err = GateWeights::from_bytes(&w.to_bytes(), other).unwrap_err();
        assert!(matches!(err, NnetError::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn truncated_and_padded_files_are_corrupt() {
        let bytes = GateWeights::init(small(), 3).to_bytes();
        let err = GateWeights::from_bytes(&bytes[..bytes.len() - 3], small()).unwrap_err();
        assert!(matches!(err, NnetError::Corrupt(_)));
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(matches!(
            GateWeights::from_bytes(&padded, small()),
            Err(NnetError::Corrupt(_))
        ));
        assert!(matches!(
            GateWeights::from_bytes(b"nope", small()),
            Err(NnetError::Corrupt(_))
        ));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = GateWeights::init(small(), 3).to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            GateWeights::from_bytes(&bytes, small()),
            Err(NnetError::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn flat_round_trip_and_param_mut() {
        let mut w = GateWeights::init_random(small(), 5);
        let flat = w.to_flat();
        let last = flat.len() - 1;
        *w.param_mut(last) = 123.0;
        assert_eq!(w.to_flat()[last], 123.0);
        w.assign_flat(&flat);
        assert_eq!(w.to_flat(), flat);
    }
}
