//! Binary network format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic            4 bytes  "TGHN"
//! version          u32
//! bn eps           f64
//! bn momentum      f64
//! late_features    u32
//! head_dim         u32
//! n_layers         u32
//! per layer        u32 in_dim, u32 out_dim, u8 activation (0 relu, 1 identity), u8 batch_norm
//! n_params         u64, then n_params x f64
//! per bn layer     out_dim x f64 running mean, out_dim x f64 running variance
//! metadata length  u64, then that many bytes of UTF-8 (opaque to this module)
//! ```

use super::{Activation, BatchNormConfig, LayerSpec, Network, NetworkSpec, RunningStats};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGHN";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(net: &Network, metadata: &str) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::with_capacity(64 + 8 * net.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let bn = net.batch_norm_config();
    out.extend_from_slice(&bn.eps.to_le_bytes());
    out.extend_from_slice(&bn.momentum.to_le_bytes());
    out.extend_from_slice(&(spec.late_features as u32).to_le_bytes());
    out.extend_from_slice(&(spec.head_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
    for l in &spec.layers {
        out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        out.push(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        out.push(l.batch_norm as u8);
    }
    out.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for s in net.running_stats().iter().flatten() {
        for v in s.mean.iter().chain(&s.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(metadata.len() as u64).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Parses a buffer written by [`encode`], returning the network and its metadata string.
pub fn decode(buf: &[u8]) -> Result<(Network, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let bn = BatchNormConfig {
        eps: r.f64()?,
        momentum: r.f64()?,
    };
    let late_features = r.u32()? as usize;
    let head_dim = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => return Err(Error::Format(format!("unknown activation tag {other}"))),
        };
        let batch_norm = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad batch-norm flag {other}"))),
        };
        layers.push(LayerSpec {
            in_dim,
            out_dim,
            activation,
            batch_norm,
        });
    }
    let spec = NetworkSpec {
        layers,
        late_features,
        head_dim,
    };
    spec.validate()?;
    let n_params = r.u64()? as usize;
    if n_params > buf.len() / 8 {
        return Err(Error::Format("parameter count exceeds file size".into()));
    }
    let params = r.f64s(n_params)?;
    let mut stats = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        stats.push(if l.batch_norm {
            Some(RunningStats {
                mean: r.f64s(l.out_dim)?,
                var: r.f64s(l.out_dim)?,
            })
        } else {
            None
        });
    }
    let meta_len = r.u64()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|e| Error::Format(format!("metadata is not UTF-8: {e}")))?
        .to_owned();
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after metadata".into()));
    }
    Ok((Network::from_parts(spec, bn, params, stats)?, meta))
}
