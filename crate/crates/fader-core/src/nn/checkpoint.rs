//! Checkpoint persistence.
//!
//! A checkpoint is a JSON manifest plus a binary sidecar. The manifest
//! lists parameter names and shapes (and optimizer state scalars); the
//! sidecar holds the values as little-endian 64-bit floats in manifest
//! order: parameters first, then optimizer slots. Round-trips are
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::OptimizerState;
use crate::nn::params::ParameterSet;
use crate::nn::tensor::Tensor;

const FORMAT: &str = "fader-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct EntryManifest {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OptimizerManifest {
    SgdMomentum {
        learning_rate: f64,
        momentum: f64,
        slots: Vec<EntryManifest>,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: u64,
        slots: Vec<EntryManifest>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<EntryManifest>,
    #[serde(default)]
    optimizer: Option<OptimizerManifest>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub optimizer: Option<OptimizerState>,
    pub meta: BTreeMap<String, String>,
}

fn entries_of(ps: &ParameterSet) -> Vec<EntryManifest> {
    ps.iter()
        .map(|(name, t)| EntryManifest { name: name.to_string(), shape: [t.rows(), t.cols()] })
        .collect()
}

fn prefixed(prefix: &str, ps: &ParameterSet) -> Vec<EntryManifest> {
    ps.iter()
        .map(|(name, t)| EntryManifest {
            name: format!("{prefix}:{name}"),
            shape: [t.rows(), t.cols()],
        })
        .collect()
}

fn write_values(buf: &mut Vec<u8>, ps: &ParameterSet) {
    for (_, t) in ps.iter() {
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_set(entries: &[EntryManifest], strip: Option<&str>, data: &[u8], cursor: &mut usize) -> Result<ParameterSet> {
    let mut ps = ParameterSet::new();
    for e in entries {
        let count = e.shape[0] * e.shape[1];
        let bytes = count * 8;
        let end = *cursor + bytes;
        if end > data.len() {
            return Err(Error::Data(format!(
                "checkpoint sidecar truncated while reading '{}'",
                e.name
            )));
        }
        let mut values = Vec::with_capacity(count);
        for chunk in data[*cursor..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
        }
        *cursor = end;
        let name = match strip {
            Some(prefix) => e
                .name
                .strip_prefix(prefix)
                .and_then(|s| s.strip_prefix(':'))
                .ok_or_else(|| {
                    Error::Data(format!("slot '{}' missing prefix '{}:'", e.name, prefix))
                })?,
            None => e.name.as_str(),
        };
        // Gradient accumulators may legitimately contain huge Adam moments,
        // but non-finite values mean the run already failed.
        let tensor = Tensor::new(e.shape[0], e.shape[1], values)?;
        ps.insert(name, tensor)?;
    }
    Ok(ps)
}

/// Write `stem.json` and `stem.bin`.
pub fn save(stem: &Path, ckpt: &Checkpoint) -> Result<()> {
    let optimizer = match &ckpt.optimizer {
        None => None,
        Some(OptimizerState::SgdMomentum { learning_rate, momentum, velocity }) => {
            Some(OptimizerManifest::SgdMomentum {
                learning_rate: *learning_rate,
                momentum: *momentum,
                slots: prefixed("velocity", velocity),
            })
        }
        Some(OptimizerState::Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step,
            first_moment,
            second_moment,
        }) => {
            let mut slots = prefixed("m", first_moment);
            slots.extend(prefixed("v", second_moment));
            Some(OptimizerManifest::Adam {
                learning_rate: *learning_rate,
                beta1: *beta1,
                beta2: *beta2,
                epsilon: *epsilon,
                step: *step,
                slots,
            })
        }
    };
    let manifest = Manifest {
        format: FORMAT.to_string(),
        params: entries_of(&ckpt.params),
        optimizer,
        meta: ckpt.meta.clone(),
    };

    let mut bin = Vec::new();
    write_values(&mut bin, &ckpt.params);
    match &ckpt.optimizer {
        None => {}
        Some(OptimizerState::SgdMomentum { velocity, .. }) => write_values(&mut bin, velocity),
        Some(OptimizerState::Adam { first_moment, second_moment, .. }) => {
            write_values(&mut bin, first_moment);
            write_values(&mut bin, second_moment);
        }
    }

    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::File::create(stem.with_extension("json"))?.write_all(&json)?;
    fs::File::create(stem.with_extension("bin"))?.write_all(&bin)?;
    Ok(())
}

/// Read a checkpoint written by [`save`].
pub fn load(stem: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Data(format!(
            "unsupported checkpoint format '{}'",
            manifest.format
        )));
    }
    let mut data = Vec::new();
    fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut data)?;

    let mut cursor = 0usize;
    let params = read_set(&manifest.params, None, &data, &mut cursor)?;
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(OptimizerManifest::SgdMomentum { learning_rate, momentum, slots }) => {
            let velocity = read_set(slots, Some("velocity"), &data, &mut cursor)?;
            velocity.conforms_to(&params)?;
            Some(OptimizerState::SgdMomentum {
                learning_rate: *learning_rate,
                momentum: *momentum,
                velocity,
            })
        }
        Some(OptimizerManifest::Adam { learning_rate, beta1, beta2, epsilon, step, slots }) => {
            let half = slots.len() / 2;
            let first_moment = read_set(&slots[..half], Some("m"), &data, &mut cursor)?;
            let second_moment = read_set(&slots[half..], Some("v"), &data, &mut cursor)?;
            first_moment.conforms_to(&params)?;
            second_moment.conforms_to(&params)?;
            Some(OptimizerState::Adam {
                learning_rate: *learning_rate,
                beta1: *beta1,
                beta2: *beta2,
                epsilon: *epsilon,
                step: *step,
                first_moment,
                second_moment,
            })
        }
    };
    if cursor != data.len() {
        return Err(Error::Data(format!(
            "checkpoint sidecar has {} trailing bytes",
            data.len() - cursor
        )));
    }
    Ok(Checkpoint { params, optimizer, meta: manifest.meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(seed: u64) -> ParameterSet {
        let mut rng = crate::rng::SeedTree::new(seed).rng();
        let mut ps = ParameterSet::new();
        ps.insert("enc.w", Tensor::new(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
            .unwrap();
        ps.insert("enc.b", Tensor::new(1, 3, vec![1e-300, -0.0, 0.25]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");

        let params = random_params(3);
        let mut opt = OptimizerState::adam(1e-4, &params).unwrap();
        let grads = random_params(4);
        opt.step(&mut params.clone(), &grads).unwrap();

        let mut meta = BTreeMap::new();
        meta.insert("role".to_string(), "test".to_string());
        let ckpt = Checkpoint { params, optimizer: Some(opt), meta };
        save(&stem, &ckpt).unwrap();
        let loaded = load(&stem).unwrap();

        assert!(loaded.params.bit_eq(&ckpt.params));
        match (&loaded.optimizer, &ckpt.optimizer) {
            (
                Some(OptimizerState::Adam { step: s1, first_moment: m1, second_moment: v1, .. }),
                Some(OptimizerState::Adam { step: s2, first_moment: m2, second_moment: v2, .. }),
            ) => {
                assert_eq!(s1, s2);
                assert!(m1.bit_eq(m2));
                assert!(v1.bit_eq(v2));
            }
            _ => panic!("optimizer kind mismatch"),
        }
        assert_eq!(loaded.meta.get("role").map(String::as_str), Some("test"));
    }

    #[test]
    fn sgd_round_trip_preserves_velocity() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("sgd");

        let mut params = random_params(5);
        let mut opt = OptimizerState::sgd_momentum(1e-4, 0.9, &params).unwrap();
        opt.step(&mut params, &random_params(6)).unwrap();

        let ckpt = Checkpoint { params, optimizer: Some(opt), meta: BTreeMap::new() };
        save(&stem, &ckpt).unwrap();
        let loaded = load(&stem).unwrap();
        match (&loaded.optimizer, &ckpt.optimizer) {
            (
                Some(OptimizerState::SgdMomentum { velocity: v1, momentum: m1, .. }),
                Some(OptimizerState::SgdMomentum { velocity: v2, momentum: m2, .. }),
            ) => {
                assert!(v1.bit_eq(v2));
                assert_eq!(m1, m2);
            }
            _ => panic!("optimizer kind mismatch"),
        }
    }

    #[test]
    fn truncated_sidecar_detected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("trunc");
        let ckpt = Checkpoint { params: random_params(7), optimizer: None, meta: BTreeMap::new() };
        save(&stem, &ckpt).unwrap();

        let bin = stem.with_extension("bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load(&stem), Err(Error::Data(_))));
    }
}
