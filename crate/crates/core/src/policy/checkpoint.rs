//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic "PDCK" | version u8 | header_len u32 | header JSON | params f64 x n | sha256 (32 bytes)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::params::PolicyParams;
use super::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PDCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    train_config: TrainConfig,
    bounds_hash: String,
    backbone_seed: u64,
    n_params: usize,
    /// Vehicles the parameters were trained or fine-tuned on.
    vehicles: Vec<String>,
}

/// Trained parameters plus everything needed to use them consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub train_config: TrainConfig,
    pub bounds_hash: String,
    pub backbone_seed: u64,
    pub vehicles: Vec<String>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.train_config.variant != self.params.variant || self.train_config.arch != self.params.arch {
            return Err(Error::Config("train config does not describe the parameters".into()));
        }
        let header = Header {
            train_config: self.train_config.clone(),
            bounds_hash: self.bounds_hash.clone(),
            backbone_seed: self.backbone_seed,
            n_params: self.params.len(),
            vehicles: self.vehicles.clone(),
        };
        let h = serde_json::to_vec(&header).map_err(|e| Error::Domain(format!("header: {e}")))?;
        let mut buf = Vec::with_capacity(9 + h.len() + 8 * self.params.len() + 32);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(CHECKPOINT_VERSION);
        buf.extend_from_slice(&(h.len() as u32).to_le_bytes());
        buf.extend_from_slice(&h);
        for v in &self.params.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 9 + 32 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint {} has format version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                bytes[4]
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::format(path, "checksum mismatch"));
        }
        let hlen = u32::from_le_bytes(body[5..9].try_into().expect("4 bytes")) as usize;
        let rest = body.get(9..).filter(|r| r.len() >= hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(&rest[..hlen])
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        let payload = &rest[hlen..];
        if payload.len() != 8 * header.n_params {
            return Err(Error::format(
                path,
                format!("{} payload bytes for {} parameters", payload.len(), header.n_params),
            ));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let cfg = header.train_config;
        let params = PolicyParams::from_values(cfg.variant, cfg.arch, values)?;
        if !params.is_finite() {
            return Err(Error::Numeric(format!("{} holds non-finite weights", path.display())));
        }
        Ok(Self {
            params,
            train_config: cfg,
            bounds_hash: header.bounds_hash,
            backbone_seed: header.backbone_seed,
            vehicles: header.vehicles,
        })
    }

    /// Fails unless the checkpoint was built against the given normalization
    /// bounds and scene backbone.
    pub fn check_compatible(&self, bounds_hash: &str, backbone_seed: u64) -> Result<()> {
        if self.bounds_hash != bounds_hash {
            return Err(Error::Compatibility(format!(
                "checkpoint bounds hash {} differs from {bounds_hash}",
                self.bounds_hash
            )));
        }
        if self.backbone_seed != backbone_seed {
            return Err(Error::Compatibility(format!(
                "checkpoint backbone seed {} differs from {backbone_seed}",
                self.backbone_seed
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ck.encode()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::params::{ArchConfig, Variant};

    fn sample() -> Checkpoint {
        let cfg = TrainConfig {
            variant: Variant::NoPhysEncoder,
            arch: ArchConfig::compact(),
            ..TrainConfig::default()
        };
        Checkpoint {
            params: PolicyParams::init(cfg.variant, cfg.arch, 3).unwrap(),
            train_config: cfg,
            bounds_hash: "abc".into(),
            backbone_seed: 7,
            vehicles: vec!["sedan".into()],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let mut bytes = sample().encode().unwrap();
        let p = Path::new("x");
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::decode(&bytes, p), Err(Error::Format { .. })));
        let mut bytes = sample().encode().unwrap();
        bytes[4] = 9;
        assert!(Checkpoint::decode(&bytes, p).unwrap_err().is_compatibility());
    }

    #[test]
    fn mismatched_hash_is_incompatible() {
        let ck = sample();
        assert!(ck.check_compatible("abc", 7).is_ok());
        assert!(ck.check_compatible("abd", 7).unwrap_err().is_compatibility());
        assert!(ck.check_compatible("abc", 8).unwrap_err().is_compatibility());
    }
}
