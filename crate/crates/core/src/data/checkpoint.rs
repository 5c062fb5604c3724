//! Binary model checkpoints.
//!
//! Layout (little endian): magic `PSSLCKPT`, u32 version, u32 stage, u64 seed,
//! u32 length + JSON network config, u32 array count, then per array
//! u16 name length, name, u8 rank, u32 dims, f64 data. A SHA-256 of
//! everything before it closes the file.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Network, NetworkConfig, ParamKind, ParamStore};

const MAGIC: &[u8; 8] = b"PSSLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelStage {
    Pretrained,
    Finetuned,
    Supervised,
}

impl ModelStage {
    fn code(self) -> u32 {
        match self {
            ModelStage::Pretrained => 0,
            ModelStage::Finetuned => 1,
            ModelStage::Supervised => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(ModelStage::Pretrained),
            1 => Ok(ModelStage::Finetuned),
            2 => Ok(ModelStage::Supervised),
            _ => Err(Error::Checkpoint(format!("unknown stage code {c}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage: ModelStage,
    pub seed: u64,
    pub network: Network,
}

pub fn encode(net: &Network, stage: ModelStage, seed: u64) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&stage.code().to_le_bytes());
    b.extend_from_slice(&seed.to_le_bytes());
    let cfg = serde_json::to_vec(&net.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    b.extend_from_slice(&cfg);
    b.extend_from_slice(&(net.store.len() as u32).to_le_bytes());
    for (_, p) in net.store.iter() {
        let name = p.name.as_bytes();
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name);
        b.push(p.value.ndim() as u8);
        for &d in p.value.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&b);
    b.extend_from_slice(&digest);
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parsed file contents before they are matched against a network.
struct Decoded {
    stage: ModelStage,
    seed: u64,
    cfg: NetworkConfig,
    arrays: ParamStore,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic or truncated)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let stage = ModelStage::from_code(r.u32("stage")?)?;
    let seed = r.u64("seed")?;
    let cfg_len = r.u32("config length")? as usize;
    let cfg: NetworkConfig = serde_json::from_slice(r.take(cfg_len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let count = r.u32("array count")?;
    let mut arrays = ParamStore::new();
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "array name")?)
            .map_err(|_| Error::Checkpoint(format!("array {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        arrays.add(name, ParamKind::Weight, value);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
    }
    Ok(Decoded { stage, seed, cfg, arrays })
}

fn into_network(d: &Decoded, cfg: NetworkConfig) -> Result<Network> {
    let mut net = Network::new(cfg, d.seed)?;
    net.store.copy_from(&d.arrays, |_| true)?;
    Ok(net)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let d = decode(bytes)?;
    let network = into_network(&d, d.cfg.clone())?;
    Ok(Checkpoint { stage: d.stage, seed: d.seed, network })
}

pub fn save_checkpoint(path: &Path, net: &Network, stage: ModelStage, seed: u64) -> Result<()> {
    write_atomic(path, &encode(net, stage, seed)?)
}

/// Load a checkpoint with the network configuration it was saved with.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Load into a network built from `cfg`; shape disagreements name the first offending array.
pub fn load_checkpoint_as(path: &Path, cfg: &NetworkConfig) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let d = decode(&bytes)?;
    let network = into_network(&d, cfg.clone())?;
    Ok(Checkpoint { stage: d.stage, seed: d.seed, network })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;

    fn small() -> NetworkConfig {
        NetworkConfig {
            encoder: EncoderConfig {
                window_len: 16,
                d_embed: 8,
                n_heads: 2,
                ff_dim: 8,
                tcn_filters: 4,
                ..EncoderConfig::default()
            },
            pretext_hidden: 8,
            emotion_hidden: 8,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let net = Network::new(small(), 3).unwrap();
        let bytes = encode(&net, ModelStage::Pretrained, 3).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.stage, ModelStage::Pretrained);
        assert_eq!(ck.seed, 3);
        assert_eq!(ck.network.store, net.store);
        assert_eq!(ck.network.cfg, net.cfg);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let net = Network::new(small(), 1).unwrap();
        let bytes = encode(&net, ModelStage::Finetuned, 1).unwrap();
        for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let net = Network::new(small(), 1).unwrap();
        let mut bytes = encode(&net, ModelStage::Supervised, 1).unwrap();
        let i = bytes.len() - 100;
        bytes[i] ^= 1;
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
