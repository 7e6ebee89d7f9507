//! Checkpoint files.
//!
//! Layout: the magic bytes `MSL1`, a little-endian `u64` header length, a
//! JSON header, then every parameter followed by the optimizer moments as
//! little-endian `f64`, in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::Stem;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::trainer::{AdamW, TrainState};

pub const MAGIC: &[u8; 4] = b"MSL1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub stem: Stem,
    pub state: TrainState,
    pub params: ParamStore,
    pub adam: Option<AdamW>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: Config,
    stem: Stem,
    state: TrainState,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    adam_step: Option<u64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            stem: self.stem,
            state: self.state.clone(),
            names: self.params.names().to_vec(),
            shapes: self.params.tensors().map(|t| t.shape().to_vec()).collect(),
            adam_step: self.adam.as_ref().map(|a| a.step),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + 8 * 3 * self.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |t: &Tensor| t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        self.params.tensors().for_each(&mut put);
        if let Some(a) = &self.adam {
            a.m.iter().chain(&a.v).for_each(put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(12..12usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.names.len() != header.shapes.len() {
            return Err(bad("header names and shapes differ in length"));
        }
        let mut data = &bytes[12 + hlen..];
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            if data.len() < 8 * n {
                return Err(bad("truncated tensor data"));
            }
            let v = data[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            data = &data[8 * n..];
            Ok(Tensor::from_vec(shape, v))
        };
        let read_all = |take: &mut dyn FnMut(&[usize]) -> Result<Tensor>| -> Result<Vec<Tensor>> {
            header.shapes.iter().map(|s| take(s)).collect()
        };
        let params = read_all(&mut take)?;
        let adam = match header.adam_step {
            Some(step) => Some(AdamW { m: read_all(&mut take)?, v: read_all(&mut take)?, step }),
            None => None,
        };
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        Ok(Checkpoint {
            config: header.config,
            stem: header.stem,
            state: header.state,
            params: ParamStore::from_parts(header.names, params),
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Model weights as a ready network.
    pub fn network(&self) -> Result<crate::network::Network> {
        crate::network::Network::from_params(&self.config.model, &self.config.stft, self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, StftConfig};
    use crate::network::Network;

    fn tiny() -> Config {
        let mut c = Config::default();
        c.stft = StftConfig { window_size: 64, hop: 16, kept_bins: 32, ..StftConfig::default() };
        c.model = ModelConfig { g: 8, n_band: 2, n_enc: 2, n_rope: 1, seq_dim: Some(8), heads: 2, ..ModelConfig::default() };
        c
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = tiny();
        let net = Network::new(&c.model, &c.stft, 3).unwrap();
        let mut adam = AdamW::new(net.params());
        adam.m[0].data_mut()[0] = 0.1 + 0.2;
        adam.step = 7;
        let ck = Checkpoint { config: c.clone(), stem: Stem::Bass, state: TrainState::new(&c.train), params: net.params().clone(), adam: Some(adam) };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.msl");
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let c = tiny();
        let net = Network::new(&c.model, &c.stft, 3).unwrap();
        let ck = Checkpoint { config: c.clone(), stem: Stem::Vocals, state: TrainState::new(&c.train), params: net.params().clone(), adam: None };
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"XXXX").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }
}
