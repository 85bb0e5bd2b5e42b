//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed with correct rounding, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, DenseNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "signal-lab/checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, kept as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos = self
            .word_pos
            .parse::<u128>()
            .map_err(|e| Error::Checkpoint(format!("bad rng word position: {e}")))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Named networks, e.g. `trunk`, `head0`, `head1`.
    pub networks: Vec<(String, DenseNet)>,
    pub optimizer: Adam,
    pub rng: RngState,
    pub epsilon: f64,
    pub env_steps: u64,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&DenseNet> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            key: String::new(),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        for (name, net) in &ck.networks {
            DenseNet::from_layers(net.layers.clone())
                .map_err(|e| Error::Checkpoint(format!("network `{name}`: {e}")))?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Parameters};
    use rand::{Rng, SeedableRng};

    #[test]
    fn save_load_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::new(&[6, 9, 2], Activation::Identity, &mut rng).unwrap();
        let mut opt = Adam::new(net.param_count(), 1e-3);
        let mut trained = net.clone();
        let grads: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        opt.update(&mut trained, &grads).unwrap();
        let _: u64 = rng.random();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            networks: vec![("trunk".into(), trained.clone())],
            optimizer: opt.clone(),
            rng: RngState::capture(&rng),
            epsilon: 0.123456789012345,
            env_steps: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let bits = |n: &DenseNet| n.flat_params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.network("trunk").unwrap()), bits(&trained));
        let mut restored = back.rng.restore().unwrap();
        assert_eq!(restored.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn rejects_unknown_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[2, 2], Activation::Identity, &mut rng).unwrap();
        let mut ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            networks: vec![("trunk".into(), net)],
            optimizer: Adam::new(6, 1e-3),
            rng: RngState::capture(&rng),
            epsilon: 0.0,
            env_steps: 0,
        };
        ck.version = 99;
        let text = ck.to_json().unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_json("{ nope"), Err(Error::Parse { .. })));
    }
}
