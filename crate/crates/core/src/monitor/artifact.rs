//! `AERM` artifact file: feature map, three heads and scoring coefficients.
//!
//! Layout (little-endian): magic `AERM`, u32 version, u32 k, u32 d,
//! f64 alpha, beta, lambda, tau (NaN when unset), u32 H, the projection
//! (`k*d` f32, row-major), four `k`-length f32 statistic vectors, three head
//! blocks (`k` f32 weights, f32 bias, u8 role), u8 projection method, u64
//! projection seed, u32-length-prefixed provenance JSON, and finally a u64
//! FNV-1a checksum over every byte between the magic and the checksum.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_lambda, MonitorError};
use crate::featurize::{FeatureMap, ProjectionMethod, STD_FLOOR};
use crate::probes::{HeadRole, LinearHead};

pub const ARTIFACT_MAGIC: &[u8; 4] = b"AERM";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorArtifact {
    pub version: u32,
    pub feature_map: FeatureMap,
    pub hazard: LinearHead,
    pub support: LinearHead,
    pub residual: LinearHead,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// `None` until calibrated; `Some(f64::INFINITY)` never fires.
    pub threshold: Option<f64>,
    pub horizon: u32,
    pub provenance: BTreeMap<String, String>,
}

impl MonitorArtifact {
    /// Artifact with zeroed heads around a fitted feature map.
    pub fn untrained(feature_map: FeatureMap, lambda: f64, horizon: u32) -> Self {
        let k = feature_map.k;
        Self {
            version: ARTIFACT_VERSION,
            feature_map,
            hazard: LinearHead::zeros(HeadRole::Hazard, k),
            support: LinearHead::zeros(HeadRole::Support, k),
            residual: LinearHead::zeros(HeadRole::Residual, k),
            alpha: 0.0,
            beta: 0.0,
            lambda,
            threshold: None,
            horizon,
            provenance: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.feature_map.k
    }

    pub fn d(&self) -> usize {
        self.feature_map.d
    }

    /// Trainable head parameters: `3 * (k + 1)`.
    pub fn trainable_parameters(&self) -> usize {
        self.hazard.parameter_count()
            + self.support.parameter_count()
            + self.residual.parameter_count()
    }

    /// Every scalar the artifact stores: projection, statistics, heads and
    /// the five scalar settings (alpha, beta, lambda, tau, H).
    pub fn stored_scalars(&self) -> usize {
        self.feature_map.stored_scalars() + self.trainable_parameters() + 5
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        let fm = &self.feature_map;
        let k = fm.k;
        let bad = |msg: String| Err(MonitorError::Inconsistent(msg));
        if fm.projection.len() != k * fm.d {
            return bad(format!(
                "projection has {} entries, expected k*d",
                fm.projection.len()
            ));
        }
        for (name, v) in [
            ("state_mean", &fm.state_mean),
            ("state_std", &fm.state_std),
            ("resid_mean", &fm.resid_mean),
            ("resid_std", &fm.resid_std),
        ] {
            if v.len() != k {
                return bad(format!("{name} has length {}, expected {k}", v.len()));
            }
        }
        if fm
            .state_std
            .iter()
            .chain(&fm.resid_std)
            .any(|&s| !(s >= STD_FLOOR as f32))
        {
            return bad("standard deviation below floor".into());
        }
        for (head, role) in [
            (&self.hazard, HeadRole::Hazard),
            (&self.support, HeadRole::Support),
            (&self.residual, HeadRole::Residual),
        ] {
            if head.role != role {
                return bad(format!("head role {:?} where {role:?} expected", head.role));
            }
            if head.dim() != k {
                return bad(format!(
                    "{role:?} head has {} weights, expected {k}",
                    head.dim()
                ));
            }
            if !head.weights.iter().all(|w| w.is_finite()) || !head.bias.is_finite() {
                return bad(format!("{role:?} head is not finite"));
            }
        }
        if self.trainable_parameters() != 3 * (k + 1) {
            return bad("trainable parameter count".into());
        }
        if !(self.alpha >= 0.0
            && self.alpha.is_finite()
            && self.beta >= 0.0
            && self.beta.is_finite())
        {
            return bad("alpha and beta must be finite and non-negative".into());
        }
        check_lambda(self.lambda)?;
        if matches!(self.threshold, Some(t) if t.is_nan() || t == f64::NEG_INFINITY) {
            return bad("threshold must be finite or +inf".into());
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn encode_artifact(art: &MonitorArtifact) -> Result<Vec<u8>, MonitorError> {
    art.validate()?;
    let fm = &art.feature_map;
    let mut buf = Vec::with_capacity(64 + 4 * (fm.k * fm.d + 7 * fm.k));
    buf.extend_from_slice(ARTIFACT_MAGIC);
    buf.extend_from_slice(&art.version.to_le_bytes());
    buf.extend_from_slice(&(fm.k as u32).to_le_bytes());
    buf.extend_from_slice(&(fm.d as u32).to_le_bytes());
    for v in [
        art.alpha,
        art.beta,
        art.lambda,
        art.threshold.unwrap_or(f64::NAN),
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&art.horizon.to_le_bytes());
    for block in [
        &fm.projection,
        &fm.state_mean,
        &fm.state_std,
        &fm.resid_mean,
        &fm.resid_std,
    ] {
        put_f32s(&mut buf, block);
    }
    for head in [&art.hazard, &art.support, &art.residual] {
        put_f32s(&mut buf, &head.weights);
        buf.extend_from_slice(&head.bias.to_le_bytes());
        buf.push(head.role.code());
    }
    let (code, seed) = match fm.method {
        ProjectionMethod::Pca => (0u8, 0u64),
        ProjectionMethod::Random { seed } => (1, seed),
    };
    buf.push(code);
    buf.extend_from_slice(&seed.to_le_bytes());
    let prov = serde_json::to_vec(&art.provenance)
        .map_err(|e| MonitorError::Inconsistent(e.to_string()))?;
    buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    buf.extend_from_slice(&prov);
    let checksum = fnv1a(&buf[4..]);
    buf.extend_from_slice(&checksum.to_le_bytes());
    Ok(buf)
}

pub fn decode_artifact(bytes: &[u8]) -> Result<MonitorArtifact, MonitorError> {
    if bytes.len() < 4 {
        return Err(MonitorError::Truncated);
    }
    if &bytes[..4] != ARTIFACT_MAGIC {
        return Err(MonitorError::BadMagic);
    }
    if bytes.len() < 4 + 8 {
        return Err(MonitorError::Truncated);
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(&payload[4..]) != stored {
        return Err(MonitorError::Checksum);
    }
    let mut cur = Reader {
        bytes: payload,
        pos: 4,
    };
    let version = cur.u32()?;
    if version != ARTIFACT_VERSION {
        return Err(MonitorError::VersionMismatch(version));
    }
    let k = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    let alpha = cur.f64()?;
    let beta = cur.f64()?;
    let lambda = cur.f64()?;
    let tau = cur.f64()?;
    let horizon = cur.u32()?;
    let projection = cur.f32s(k.checked_mul(d).ok_or(MonitorError::Truncated)?)?;
    let state_mean = cur.f32s(k)?;
    let state_std = cur.f32s(k)?;
    let resid_mean = cur.f32s(k)?;
    let resid_std = cur.f32s(k)?;
    let mut heads = Vec::with_capacity(3);
    for _ in 0..3 {
        let weights = cur.f32s(k)?;
        let bias = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        let code = cur.take(1)?[0];
        let role = HeadRole::from_code(code)
            .ok_or_else(|| MonitorError::Inconsistent(format!("head role code {code}")))?;
        heads.push(LinearHead {
            role,
            weights,
            bias,
        });
    }
    let method = match cur.take(1)?[0] {
        0 => {
            cur.take(8)?;
            ProjectionMethod::Pca
        }
        1 => ProjectionMethod::Random {
            seed: u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")),
        },
        other => return Err(MonitorError::Inconsistent(format!("method code {other}"))),
    };
    let prov_len = cur.u32()? as usize;
    let provenance: BTreeMap<String, String> = serde_json::from_slice(cur.take(prov_len)?)
        .map_err(|e| MonitorError::Inconsistent(format!("provenance: {e}")))?;
    if cur.pos != payload.len() {
        return Err(MonitorError::Inconsistent("trailing bytes".into()));
    }
    let mut heads = heads.into_iter();
    let art = MonitorArtifact {
        version,
        feature_map: FeatureMap {
            k,
            d,
            projection,
            state_mean,
            state_std,
            resid_mean,
            resid_std,
            method,
        },
        hazard: heads.next().expect("three heads"),
        support: heads.next().expect("three heads"),
        residual: heads.next().expect("three heads"),
        alpha,
        beta,
        lambda,
        threshold: if tau.is_nan() { None } else { Some(tau) },
        horizon,
        provenance,
    };
    art.validate()?;
    Ok(art)
}

pub fn save_artifact(art: &MonitorArtifact, path: impl AsRef<Path>) -> Result<(), MonitorError> {
    fs::write(path, encode_artifact(art)?)?;
    Ok(())
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<MonitorArtifact, MonitorError> {
    decode_artifact(&fs::read(path)?)
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MonitorError> {
        if self.bytes.len() - self.pos < n {
            return Err(MonitorError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, MonitorError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, MonitorError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, MonitorError> {
        let raw = self.take(n.checked_mul(4).ok_or(MonitorError::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(k: usize, d: usize) -> MonitorArtifact {
        let projection = (0..k * d).map(|i| (i as f32 * 0.37).sin()).collect();
        let fm =
            FeatureMap::from_parts(k, d, projection, ProjectionMethod::Random { seed: 3 }).unwrap();
        let mut art = MonitorArtifact::untrained(fm, 0.3, 16);
        art.hazard.weights = (0..k).map(|i| i as f32 * 0.5).collect();
        art.support.bias = -1.25;
        art.residual.weights = vec![0.125; k];
        art.alpha = 1.0;
        art.beta = 0.5;
        art.provenance.insert("seed".into(), "7".into());
        art
    }

    #[test]
    fn round_trip_is_exact() {
        let mut art = sample(4, 6);
        let back = decode_artifact(&encode_artifact(&art).unwrap()).unwrap();
        assert_eq!(back, art);
        assert!(back.threshold.is_none());

        art.threshold = Some(f64::INFINITY);
        let back = decode_artifact(&encode_artifact(&art).unwrap()).unwrap();
        assert_eq!(back.threshold, Some(f64::INFINITY));
    }

    #[test]
    fn tampered_payload_fails_checksum() {
        let mut bytes = encode_artifact(&sample(4, 6)).unwrap();
        bytes[60] ^= 0x01;
        assert!(matches!(
            decode_artifact(&bytes),
            Err(MonitorError::Checksum)
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let mut art = sample(2, 3);
        art.version = 9;
        let bytes = encode_artifact(&art).unwrap();
        assert!(matches!(
            decode_artifact(&bytes),
            Err(MonitorError::VersionMismatch(9))
        ));
    }

    #[test]
    fn dimension_inconsistency_rejected() {
        let mut art = sample(3, 3);
        art.support.weights.pop();
        assert!(matches!(
            encode_artifact(&art),
            Err(MonitorError::Inconsistent(_))
        ));
    }

    #[test]
    fn parameter_accounting_at_k128() {
        let art = sample(128, 4096);
        assert_eq!(art.trainable_parameters(), 387);
        assert_eq!(art.stored_scalars(), 128 * 4096 + 4 * 128 + 387 + 5);
        assert_eq!(art.stored_scalars(), 525_192);
    }
}
