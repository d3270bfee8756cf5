//! Binary weight archive.
//!
//! Layout, all integers little-endian u64 unless noted:
//! `"VPW1"`, version byte, tensor count, then per tensor the name length,
//! name bytes (UTF-8), rank, dims, and `numel` little-endian f32 values;
//! finally a u32 CRC32 of every preceding byte. The CRC doubles as the model
//! fingerprint.

use std::path::Path;

use super::module::ParamKind;
use super::network::Network;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::io::{atomic_write, put_str, put_u64, ByteReader};

pub const MAGIC: &[u8; 4] = b"VPW1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub tensors: Vec<NamedTensor>,
}

impl WeightArchive {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let mut tensors = Vec::new();
        net.visit(&mut |name, t: &Tensor<T>, _: ParamKind| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            })
        });
        Self { tensors }
    }

    /// Copies every tensor into `net`, which must have exactly the same
    /// names and shapes in the same order.
    pub fn apply_to<T: Scalar>(&self, net: &mut Network<T>) -> Result<()> {
        let mut i = 0;
        let mut err: Option<Error> = None;
        net.visit_mut(&mut |name, t, _| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(i) {
                None => {
                    err = Some(Error::IncompatibleWeights {
                        layer: name.to_string(),
                        reason: "missing from archive".into(),
                    })
                }
                Some(a) if a.name != name => {
                    err = Some(Error::IncompatibleWeights {
                        layer: name.to_string(),
                        reason: format!("archive has {:?} at this position", a.name),
                    })
                }
                Some(a) if a.shape != t.shape() => {
                    err = Some(Error::IncompatibleWeights {
                        layer: name.to_string(),
                        reason: format!("archive shape {:?}, network shape {:?}", a.shape, t.shape()),
                    })
                }
                Some(a) => {
                    for (dst, &src) in t.data_mut().iter_mut().zip(&a.data) {
                        *dst = T::of(src as f64);
                    }
                }
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = self.tensors.get(i) {
            return Err(Error::IncompatibleWeights {
                layer: extra.name.clone(),
                reason: "not present in network".into(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        put_u64(&mut out, self.tensors.len() as u64);
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            put_u64(&mut out, t.shape.len() as u64);
            for &d in &t.shape {
                put_u64(&mut out, d as u64);
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let body = crate::io::verify_crc(bytes, MAGIC, VERSION)?;
        let mut r = ByteReader::new(&body[5..]);
        let n = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u64()? as usize;
            if rank > 8 {
                return Err(Error::CorruptArchive(format!("tensor {name:?} has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::CorruptArchive(format!("tensor {name:?} too large")))?;
            let data = r.f32s(numel)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        r.finish()?;
        Ok(Self { tensors })
    }

    pub fn fingerprint(&self) -> u32 {
        fingerprint_of(&self.encode())
    }
}

/// CRC trailer of an encoded archive.
pub fn fingerprint_of(encoded: &[u8]) -> u32 {
    let n = encoded.len();
    u32::from_le_bytes(encoded[n - 4..].try_into().expect("4 bytes"))
}

/// Writes the network's weights; returns the fingerprint.
pub fn save_weights<T: Scalar>(net: &Network<T>, path: &Path) -> Result<u32> {
    let bytes = WeightArchive::from_network(net).encode();
    atomic_write(path, &bytes)?;
    Ok(fingerprint_of(&bytes))
}

pub fn read_archive(path: &Path) -> Result<(WeightArchive, u32)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let archive = WeightArchive::decode(&bytes)?;
    Ok((archive, fingerprint_of(&bytes)))
}

/// Loads weights into an already-built network of the target architecture;
/// returns the fingerprint.
pub fn load_weights<T: Scalar>(net: &mut Network<T>, path: &Path) -> Result<u32> {
    let (archive, fp) = read_archive(path)?;
    archive.apply_to(net)?;
    Ok(fp)
}
