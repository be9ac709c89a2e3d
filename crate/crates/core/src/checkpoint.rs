//! Versioned model checkpoints.
//!
//! Layout on disk:
//!
//! ```text
//! magic      4 bytes  "RMCK"
//! version    u32 LE
//! length     u32 LE   byte length of the manifest
//! manifest   UTF-8 JSON (see `Manifest`)
//! payload    every array as little-endian f32, row-major, in manifest order
//! ```
//!
//! Each manifest entry records its array's offset (in elements) into the
//! payload, so arrays can be read independently.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::objectives::inf_as_string;
use crate::params::ParameterStore;

pub const MAGIC: &[u8; 4] = b"RMCK";
pub const FORMAT_VERSION: u32 = 1;

/// Training stage that produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Stage1,
    Stage2,
    Stage3,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Init => 0,
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
            Stage::Stage3 => 3,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Init => f.write_str("init"),
            s => write!(f, "stage{}", s.number()),
        }
    }
}

/// Which embedder architecture the `embedder` arrays belong to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    CrossAttention,
    Conv,
}

/// Full ChaCha state, enough to resume the exact random stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(with = "inf_as_string")]
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    stage: Stage,
    embedder_kind: EmbedderKind,
    rng: Option<RngState>,
    metrics: Vec<Metric>,
    arrays: Vec<ArrayEntry>,
}

/// In-memory checkpoint: configuration, stage tag and one flat store whose
/// names are prefixed by the owning network (`embedder.`, `encoder.`, ...).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub stage: Stage,
    pub embedder_kind: EmbedderKind,
    pub params: ParameterStore<f32>,
    pub rng: Option<RngState>,
    pub metrics: Vec<Metric>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, stage: Stage, embedder_kind: EmbedderKind) -> Self {
        Self {
            config,
            stage,
            embedder_kind,
            params: ParameterStore::new(),
            rng: None,
            metrics: Vec::new(),
        }
    }

    /// Copy every array of a network into the checkpoint.
    pub fn add_network<N: Network<f32>>(&mut self, net: &N) -> Result<()> {
        for p in net.store().iter() {
            let id = self.params.insert(p.name.clone(), p.value.clone())?;
            self.params.set_param_trainable(id, p.trainable);
        }
        Ok(())
    }

    pub fn has_network(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.params.iter().any(|p| p.name.starts_with(&dotted))
    }

    /// Overwrite a network's parameters (values and trainable flags) with the
    /// arrays stored under `prefix`.
    pub fn load_network<N: Network<f32>>(&self, prefix: &str, net: &mut N) -> Result<()> {
        let dotted = format!("{prefix}.");
        let mut sub = ParameterStore::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(&dotted)) {
            let id = sub.insert(p.name.clone(), p.value.clone())?;
            sub.set_param_trainable(id, p.trainable);
        }
        if sub.is_empty() {
            return Err(Error::MissingPrerequisite(format!(
                "{} checkpoint has no `{prefix}` parameters",
                self.stage
            )));
        }
        net.load_values(&sub)?;
        let store = net.store_mut();
        for id in sub.ids() {
            let name = sub.param(id).name.clone();
            let own = store.id(&name).expect("loaded above");
            store.set_param_trainable(own, sub.is_trainable(id));
        }
        Ok(())
    }

    pub fn set_metric(&mut self, name: &str, value: f64) {
        match self.metrics.iter_mut().find(|m| m.name == name) {
            Some(m) => m.value = value,
            None => self.metrics.push(Metric {
                name: name.to_string(),
                value,
            }),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    /// Fail unless the checkpoint was produced by at least `stage` with the
    /// given architecture.
    pub fn require(&self, stage: Stage, config: &ModelConfig) -> Result<()> {
        if self.stage < stage {
            return Err(Error::MissingPrerequisite(format!(
                "need a {stage} checkpoint, found {}",
                self.stage
            )));
        }
        if &self.config != config {
            return Err(Error::Checkpoint("checkpoint architecture does not match the configuration".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for p in self.params.iter() {
            arrays.push(ArrayEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset,
            });
            offset += p.value.len();
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            stage: self.stage,
            embedder_kind: self.embedder_kind,
            rng: self.rng.clone(),
            metrics: self.metrics.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            // Iterating in logical order gives row-major layout regardless of
            // the array's memory order.
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if manifest.version != FORMAT_VERSION {
            return Err(bad("manifest version disagrees with header"));
        }
        manifest.config.validate()?;
        let payload = &bytes[12 + len..];
        let mut params = ParameterStore::new();
        let mut expected_offset = 0;
        for e in &manifest.arrays {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset {
                return Err(bad("array offsets are not contiguous"));
            }
            let raw = payload
                .get(4 * e.offset..4 * (e.offset + n))
                .ok_or_else(|| Error::Checkpoint(format!("payload too short for `{}`", e.name)))?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&e.shape), values)
                .map_err(|err| Error::Checkpoint(err.to_string()))?;
            let id = params.insert(e.name.clone(), arr)?;
            params.set_param_trainable(id, e.trainable);
            expected_offset += n;
        }
        if payload.len() != 4 * expected_offset {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            config: manifest.config,
            stage: manifest.stage,
            embedder_kind: manifest.embedder_kind,
            params,
            rng: manifest.rng,
            metrics: manifest.metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of all parameter arrays.
    pub fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }
}
