//! Dataset file layout (all integers little-endian):
//!
//! ```text
//! magic "PDDS" | version u8 | header_len u32 | header JSON
//! per frame, episodes in header order:
//!   tick u64 | features f64 x 128 | physics f64 x 50 | mask u8 x 50
//!   target f64 x 2 | waypoints f64 x 16 | ego x, y, heading, speed, rpm f64 | gear u64
//! sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Dataset, DatasetHeader, Episode, EpisodeFrame};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sim::{SceneFeatures, D_SCENE, N_TARGET};
use crate::vehicle::{PhysicsVector, VehicleState, D_PHYS};

pub const DATASET_MAGIC: &[u8; 4] = b"PDDS";
pub const DATASET_VERSION: u8 = 1;

fn put_f64s(buf: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes a dataset to bytes.
pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&d.header())
        .map_err(|e| Error::Domain(format!("header serialization: {e}")))?;
    let mut buf = Vec::with_capacity(64 + header.len() + d.num_frames() * 1700);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.push(DATASET_VERSION);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for f in d.frames() {
        f.check_shape()?;
        buf.extend_from_slice(&f.tick.to_le_bytes());
        put_f64s(&mut buf, f.features.0.iter().copied());
        put_f64s(&mut buf, f.physics.values.iter().copied());
        buf.extend_from_slice(&f.physics.mask);
        put_f64s(&mut buf, [f.target_point.x, f.target_point.y]);
        put_f64s(&mut buf, f.waypoints.iter().flat_map(|w| [w.x, w.y]));
        let e = &f.ego;
        put_f64s(&mut buf, [e.position.x, e.position.y, e.heading, e.speed, e.rpm]);
        buf.extend_from_slice(&(e.gear as u64).to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "truncated payload"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Parses bytes produced by [`encode_dataset`]. `path` is only used in errors.
pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if bytes.len() < 4 + 1 + 4 + 32 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format(path, "not a dataset file"));
    }
    if bytes[4] != DATASET_VERSION {
        return Err(Error::Compatibility(format!(
            "dataset {} has format version {} (expected {DATASET_VERSION})",
            path.display(),
            bytes[4]
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::format(path, "checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 5, path };
    let hlen = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: DatasetHeader = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::format(path, format!("header: {e}")))?;

    let mut episodes = Vec::with_capacity(header.episodes.len());
    for meta in &header.episodes {
        let mut frames = Vec::with_capacity(meta.frames);
        for _ in 0..meta.frames {
            let tick = r.u64()?;
            let features = SceneFeatures(r.f64s(N_TARGET * D_SCENE)?);
            let values = r.f64s(D_PHYS)?;
            let mask = r.take(D_PHYS)?.to_vec();
            let target_point = Vec2::new(r.f64()?, r.f64()?);
            let mut waypoints = [Vec2::ZERO; N_TARGET];
            for w in &mut waypoints {
                *w = Vec2::new(r.f64()?, r.f64()?);
            }
            let e = r.f64s(5)?;
            let gear = r.u64()? as usize;
            frames.push(EpisodeFrame {
                tick,
                features,
                physics: PhysicsVector { values, mask },
                target_point,
                waypoints,
                ego: VehicleState {
                    position: Vec2::new(e[0], e[1]),
                    heading: e[2],
                    speed: e[3],
                    rpm: e[4],
                    gear,
                },
            });
        }
        episodes.push(Episode {
            vehicle_id: meta.vehicle_id.clone(),
            route_id: meta.route_id.clone(),
            route_seed: meta.route_seed,
            noise_seed: meta.noise_seed,
            frames,
        });
    }
    if r.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after last frame"));
    }
    let d = Dataset {
        backbone_seed: header.backbone_seed,
        bounds_hash: header.bounds_hash.clone(),
        episodes,
    };
    if d.header() != header {
        return Err(Error::format(path, "header counts do not match content"));
    }
    Ok(d)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(d)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a dataset and checks it against the active tokenizer seed and
/// normalization bounds hash.
pub fn read_dataset(path: &Path, backbone_seed: u64, bounds_hash: &str) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let d = decode_dataset(&bytes, path)?;
    d.check_compatible(backbone_seed, bounds_hash)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: u64) -> EpisodeFrame {
        let x = i as f64;
        EpisodeFrame {
            tick: i * 5,
            features: SceneFeatures((0..N_TARGET * D_SCENE).map(|k| (k as f64 + x).sin()).collect()),
            physics: PhysicsVector {
                values: (0..D_PHYS).map(|k| k as f64 / 64.0).collect(),
                mask: (0..D_PHYS).map(|k| (k % 3 != 0) as u8).collect(),
            },
            target_point: Vec2::new(20.0, -0.1 * x),
            waypoints: std::array::from_fn(|k| Vec2::new(k as f64 + 0.1, 1e-17 * x)),
            ego: VehicleState {
                position: Vec2::new(x, -x),
                heading: 0.3,
                speed: 7.25,
                rpm: 2100.5,
                gear: 3,
            },
        }
    }

    fn sample() -> Dataset {
        let mut d = Dataset::new(7, "abcd");
        for (v, n) in [("a", 3), ("b", 2)] {
            d.episodes.push(Episode {
                vehicle_id: v.into(),
                route_id: "r".into(),
                route_seed: 11,
                noise_seed: n,
                frames: (0..n).map(frame).collect(),
            });
        }
        d
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = sample();
        let bytes = encode_dataset(&d).unwrap();
        let back = decode_dataset(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_dataset(&bytes, Path::new("mem")), Err(Error::Format { .. })));
    }

    #[test]
    fn version_mismatch_is_compatibility_error() {
        let mut bytes = encode_dataset(&sample()).unwrap();
        bytes[4] = 9;
        assert!(decode_dataset(&bytes, Path::new("mem")).unwrap_err().is_compatibility());
    }

    #[test]
    fn bounds_hash_mismatch_fails_loudly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_dataset(&sample(), &p).unwrap();
        assert!(read_dataset(&p, 7, "abcd").is_ok());
        assert!(read_dataset(&p, 7, "ffff").unwrap_err().is_compatibility());
        assert!(read_dataset(&p, 8, "abcd").unwrap_err().is_compatibility());
    }

    #[test]
    fn header_counts_match_content() {
        let h = sample().header();
        assert_eq!(h.vehicle_counts["a"], 3);
        assert_eq!(h.vehicle_counts["b"], 2);
    }
}
