//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes   "OSGANCKP"
//! format version   u32
//! manifest length  u64
//! manifest         JSON: format_version, seed, step, networks[{name, spec, params[{layer, role, shape}]}]
//! blobs            f64 values of every listed parameter, in manifest order
//! ```

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::params::{ParamKey, ParamSet, Role};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"OSGANCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub spec: NetworkSpec,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    pub networks: Vec<NamedNetwork>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    seed: u64,
    step: u64,
    networks: Vec<ManifestNetwork>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestNetwork {
    name: String,
    spec: NetworkSpec,
    params: Vec<ManifestParam>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestParam {
    layer: usize,
    role: Role,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&NamedNetwork> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            step: self.step,
            networks: self
                .networks
                .iter()
                .map(|n| ManifestNetwork {
                    name: n.name.clone(),
                    spec: n.spec.clone(),
                    params: n
                        .params
                        .iter()
                        .map(|(k, t)| ManifestParam {
                            layer: k.layer,
                            role: k.role,
                            shape: t.shape().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for n in &self.networks {
            for (_, t) in n.params.iter() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..20usize.checked_add(len).ok_or_else(|| bad("manifest length overflow"))?)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if manifest.format_version != version {
            return Err(bad("manifest version disagrees with header"));
        }
        let mut blobs = &bytes[20 + len..];
        let mut networks = Vec::with_capacity(manifest.networks.len());
        for mn in manifest.networks {
            mn.spec.validate()?;
            let mut entries = Vec::with_capacity(mn.params.len());
            for p in mn.params {
                let n: usize = p.shape.iter().product();
                let need = n.checked_mul(8).ok_or_else(|| bad("parameter size overflow"))?;
                if blobs.len() < need {
                    return Err(bad("truncated parameter blobs"));
                }
                let data = blobs[..need]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                blobs = &blobs[need..];
                entries.push((
                    ParamKey {
                        layer: p.layer,
                        role: p.role,
                    },
                    Tensor::new(p.shape, data)?,
                ));
            }
            let params = ParamSet::from_entries(&mn.spec, entries)?;
            networks.push(NamedNetwork {
                name: mn.name,
                spec: mn.spec,
                params,
            });
        }
        if !blobs.is_empty() {
            return Err(bad("trailing bytes after parameter blobs"));
        }
        Ok(Checkpoint {
            seed: manifest.seed,
            step: manifest.step,
            networks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
