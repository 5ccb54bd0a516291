//! Versioned JSON checkpoints with base64 little-endian `f64` payloads.
//!
//! Arrays are stored as raw IEEE-754 bytes so `load(save(x))` is bit-exact;
//! everything else stays readable.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use dcd_core::nn::{Linear, Mlp, MlpCritic, MlpGenerator, PowerState};
use dcd_core::numcore::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "1.0";

/// Power iterations run on a critic's persisted vectors before saving.
pub const SAVE_POWER_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    Version { found: String, supported: &'static str },
    #[error("checkpoint holds a {found}, expected a {expected}")]
    Role { found: Role, expected: Role },
    #[error("inconsistent checkpoint: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Critic,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Generator => "generator",
            Role::Critic => "critic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub iterations: usize,
    /// Hex SHA-256 of the effective configuration.
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weight: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct PowerRecord {
    u: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    role: Role,
    dims: Vec<usize>,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectral: Option<Vec<PowerRecord>>,
    metadata: Metadata,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(field: &str, text: &str, expected: usize) -> Result<Vec<f64>, CheckpointError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| CheckpointError::Invalid(format!("{field}: {e}")))?;
    if bytes.len() != 8 * expected {
        return Err(CheckpointError::Invalid(format!(
            "{field}: expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Accepts any `1.x` version: minor versions only add fields.
fn check_version(found: &str) -> Result<(), CheckpointError> {
    let major = |v: &str| v.split('.').next().map(str::to_owned);
    if major(found) == major(FORMAT_VERSION) && found.split('.').all(|p| p.parse::<u32>().is_ok()) {
        Ok(())
    } else {
        Err(CheckpointError::Version {
            found: found.to_owned(),
            supported: FORMAT_VERSION,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Generator(MlpGenerator),
    Critic(MlpCritic),
}

impl Network {
    pub fn role(&self) -> Role {
        match self {
            Network::Generator(_) => Role::Generator,
            Network::Critic(_) => Role::Critic,
        }
    }

    fn mlp(&self) -> &Mlp {
        match self {
            Network::Generator(g) => g.mlp(),
            Network::Critic(c) => c.mlp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub metadata: Metadata,
}

impl Checkpoint {
    pub fn generator(generator: MlpGenerator, metadata: Metadata) -> Self {
        Self {
            network: Network::Generator(generator),
            metadata,
        }
    }

    pub fn critic(critic: MlpCritic, metadata: Metadata) -> Self {
        Self {
            network: Network::Critic(critic),
            metadata,
        }
    }

    pub fn to_json(&self) -> String {
        let mlp = self.network.mlp();
        let file = CheckpointFile {
            version: FORMAT_VERSION.to_owned(),
            role: self.network.role(),
            dims: mlp.dims(),
            layers: mlp
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    weight: encode(l.weight.data()),
                    bias: encode(l.bias.data()),
                })
                .collect(),
            spectral: match &self.network {
                Network::Critic(c) => Some(
                    c.power_states()
                        .iter()
                        .map(|p| PowerRecord {
                            u: encode(&p.u),
                            v: encode(&p.v),
                        })
                        .collect(),
                ),
                Network::Generator(_) => None,
            },
            metadata: self.metadata.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        // Read the version alone first so a future layout fails on the
        // version, not on whatever field changed.
        #[derive(Deserialize)]
        struct Head {
            version: String,
        }
        let head: Head = serde_json::from_str(text)?;
        check_version(&head.version)?;
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.dims.len() < 2 || file.layers.len() != file.dims.len() - 1 {
            return Err(CheckpointError::Invalid(format!(
                "{} layers for dims {:?}",
                file.layers.len(),
                file.dims
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, rec) in file.layers.iter().enumerate() {
            let (fan_in, fan_out) = (file.dims[i], file.dims[i + 1]);
            let w = decode(&format!("layer{i}.weight"), &rec.weight, fan_in * fan_out)?;
            let b = decode(&format!("layer{i}.bias"), &rec.bias, fan_out)?;
            let tensor = |shape: Vec<usize>, data| {
                Tensor::new(shape, data).map_err(|e| CheckpointError::Invalid(format!("layer{i}: {e}")))
            };
            layers.push(Linear {
                weight: tensor(vec![fan_in, fan_out], w)?,
                bias: tensor(vec![1, fan_out], b)?,
            });
        }
        let mlp = Mlp::from_layers(layers).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        let network = match (file.role, file.spectral) {
            (Role::Generator, None) => {
                Network::Generator(MlpGenerator::from_mlp(mlp).map_err(|e| CheckpointError::Invalid(e.to_string()))?)
            }
            (Role::Generator, Some(_)) => return Err(CheckpointError::Invalid("generator with spectral state".into())),
            (Role::Critic, None) => return Err(CheckpointError::Invalid("critic without spectral state".into())),
            (Role::Critic, Some(recs)) => {
                if recs.len() != file.layers.len() {
                    return Err(CheckpointError::Invalid(format!(
                        "{} spectral entries for {} layers",
                        recs.len(),
                        file.layers.len()
                    )));
                }
                let power = recs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        Ok(PowerState {
                            u: decode(&format!("spectral{i}.u"), &r.u, file.dims[i])?,
                            v: decode(&format!("spectral{i}.v"), &r.v, file.dims[i + 1])?,
                        })
                    })
                    .collect::<Result<Vec<_>, CheckpointError>>()?;
                Network::Critic(MlpCritic::from_parts(mlp, power).map_err(|e| CheckpointError::Invalid(e.to_string()))?)
            }
        };
        Ok(Self {
            network,
            metadata: file.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn into_generator(self) -> Result<(MlpGenerator, Metadata), CheckpointError> {
        match self.network {
            Network::Generator(g) => Ok((g, self.metadata)),
            Network::Critic(_) => Err(CheckpointError::Role {
                found: Role::Critic,
                expected: Role::Generator,
            }),
        }
    }

    pub fn into_critic(self) -> Result<(MlpCritic, Metadata), CheckpointError> {
        match self.network {
            Network::Critic(c) => Ok((c, self.metadata)),
            Network::Generator(_) => Err(CheckpointError::Role {
                found: Role::Generator,
                expected: Role::Critic,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcd_core::numcore::Rng;

    fn meta() -> Metadata {
        Metadata {
            seed: 3,
            iterations: 10,
            config_hash: "ab".into(),
        }
    }

    #[test]
    fn critic_round_trip_is_bit_exact() {
        let critic = MlpCritic::new(16, &mut Rng::new(1, 0));
        let ck = Checkpoint::critic(critic, meta());
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn generator_round_trip_is_bit_exact() {
        let mut g = MlpGenerator::new(8, &mut Rng::new(2, 0));
        // Values that do not survive a decimal round trip at low precision.
        let mut mlp = g.mlp().clone();
        mlp.params_mut()[1].data_mut()[0] = 0.1 + 0.2;
        mlp.params_mut()[1].data_mut()[1] = f64::MIN_POSITIVE;
        g = MlpGenerator::from_mlp(mlp).unwrap();
        let ck = Checkpoint::generator(g, meta());
        assert_eq!(Checkpoint::from_json(&ck.to_json()).unwrap(), ck);
    }

    #[test]
    fn versions() {
        assert!(check_version("1.0").is_ok());
        assert!(check_version("1.3").is_ok());
        match check_version("2.0") {
            Err(e) => {
                let m = e.to_string();
                assert!(m.contains("2.0") && m.contains("1.0"), "{m}");
            }
            Ok(()) => panic!(),
        }
        assert!(check_version("one").is_err());
    }

    #[test]
    fn wrong_payload_length_is_rejected() {
        let ck = Checkpoint::generator(MlpGenerator::new(4, &mut Rng::new(3, 0)), meta());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json()).unwrap();
        v["layers"][0]["bias"] = serde_json::Value::String(encode(&[1.0]));
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(CheckpointError::Invalid(m)) if m.contains("layer0.bias")
        ));
    }

    #[test]
    fn role_is_checked() {
        let ck = Checkpoint::generator(MlpGenerator::new(4, &mut Rng::new(3, 0)), meta());
        assert!(matches!(ck.into_critic(), Err(CheckpointError::Role { .. })));
    }
}
