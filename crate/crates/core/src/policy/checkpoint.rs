//! Binary checkpoint container.
//!
//! All integers and floats are little endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `SWRMCKPT` |
//! | 4 | `u32` format version (1) |
//! | 4 | `u32` header length `h` |
//! | h | UTF-8 JSON header (specs, layouts, value normalisation, environment) |
//! | 8 | `u64` policy parameter count `n` |
//! | 8n | `f64` policy parameters |
//! | 8 | `u64` value parameter count `m` |
//! | 8m | `f64` value parameters |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{PolicyNet, PolicySpec};
use crate::env::{TaskConfig, WorldConfig};
use crate::numkit::ParamLayout;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SWRMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Affine map from value-network outputs to returns: `return = mean + scale * output`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueNormalization {
    pub mean: f64,
    pub scale: f64,
}

impl Default for ValueNormalization {
    fn default() -> Self {
        ValueNormalization {
            mean: 0.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    policy: PolicySpec,
    value: PolicySpec,
    policy_layout: ParamLayout,
    value_layout: ParamLayout,
    value_normalization: ValueNormalization,
    task: Option<TaskConfig>,
    world: Option<WorldConfig>,
    iteration: usize,
}

/// Trained policy and value parameters with everything needed to rebuild the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy_spec: PolicySpec,
    pub value_spec: PolicySpec,
    pub policy_params: Vec<f64>,
    pub value_params: Vec<f64>,
    pub value_normalization: ValueNormalization,
    pub task: Option<TaskConfig>,
    pub world: Option<WorldConfig>,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn policy_net(&self) -> Result<PolicyNet> {
        PolicyNet::new(self.policy_spec.clone())
    }

    pub fn value_net(&self) -> Result<PolicyNet> {
        PolicyNet::new(self.value_spec.clone())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let policy = self.policy_net()?;
        let value = self.value_net()?;
        check_len("policy", policy.num_params(), self.policy_params.len())?;
        check_len("value", value.num_params(), self.value_params.len())?;
        let header = Header {
            policy: self.policy_spec.clone(),
            value: self.value_spec.clone(),
            policy_layout: policy.layout().clone(),
            value_layout: value.layout().clone(),
            value_normalization: self.value_normalization,
            task: self.task.clone(),
            world: self.world,
            iteration: self.iteration,
        };
        let json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| Error::Checkpoint("header larger than 4 GiB".into()))?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&header_len.to_le_bytes())?;
        out.write_all(&json)?;
        for params in [&self.policy_params, &self.value_params] {
            out.write_all(&(params.len() as u64).to_le_bytes())?;
            for v in params.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = read_u32(&mut input)? as usize;
        let mut json = vec![0u8; header_len];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let policy = PolicyNet::new(header.policy.clone())?;
        let value = PolicyNet::new(header.value.clone())?;
        if policy.layout() != &header.policy_layout || value.layout() != &header.value_layout {
            return Err(Error::Checkpoint(
                "stored layout table does not match the network spec".into(),
            ));
        }
        let policy_params = read_params(&mut input, policy.num_params(), "policy")?;
        let value_params = read_params(&mut input, value.num_params(), "value")?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            policy_spec: header.policy,
            value_spec: header.value,
            policy_params,
            value_params,
            value_normalization: header.value_normalization,
            task: header.task,
            world: header.world,
            iteration: header.iteration,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&bytes[..])
    }
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Checkpoint(format!(
            "{what} parameter count {actual} does not match layout length {expected}"
        )));
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_params<R: Read>(input: &mut R, expected: usize, what: &str) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    check_len(what, expected, n)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{EmbeddingSpec, FeatureSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let task = TaskConfig::rendezvous(5);
        let world = WorldConfig::default();
        let f = FeatureSpec::for_task(&task, &world);
        let policy_spec = PolicySpec::policy(f.clone(), EmbeddingSpec::NnMean { hidden: vec![4] });
        let value_spec = PolicySpec::value(f, EmbeddingSpec::NnMean { hidden: vec![4] });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy_params = PolicyNet::new(policy_spec.clone()).unwrap().init_params(&mut rng);
        let value_params = PolicyNet::new(value_spec.clone()).unwrap().init_params(&mut rng);
        Checkpoint {
            policy_spec,
            value_spec,
            policy_params,
            value_params,
            value_normalization: ValueNormalization { mean: -3.0, scale: 0.5 },
            task: Some(task),
            world: Some(world),
            iteration: 17,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_corruption() {
        let c = sample();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::read_from(&long[..]).is_err());
    }
}
