use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamBlock, ParamVector};
use crate::data::SceneBounds;
use crate::fields::{AlphaParam, BackgroundNetwork, NeuralScene, ReflectanceNetwork, SdfNetwork};
use crate::optim::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"NLCK";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated or has trailing bytes")]
    Size,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint was written for config {stored}, current config is {current}")]
    ConfigMismatch { stored: String, current: String },
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    /// Number of completed iterations.
    pub iteration: u64,
    pub scene: NeuralScene,
    pub adam: Adam,
}

/// Network structure without parameter values; stored as JSON.
#[derive(Serialize, Deserialize)]
struct Layout {
    sdf: SdfNetwork,
    reflectance: ReflectanceNetwork,
    background: BackgroundNetwork,
    alpha: AlphaParam,
    bounds: SceneBounds,
    blocks: Vec<ParamBlock>,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Size)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Size)?;
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Size)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn alpha(&self) -> f64 {
        self.scene.alpha_value()
    }

    pub fn config_hash_hex(&self) -> String {
        self.config_hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Fail unless the checkpoint was written under a config with this hash.
    pub fn check_config(&self, hash: &[u8; 32]) -> Result<(), CheckpointError> {
        if &self.config_hash != hash {
            return Err(CheckpointError::ConfigMismatch {
                stored: self.config_hash_hex(),
                current: hash.iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        Ok(())
    }

    /// Layout: magic, version, config hash, iteration, alpha, JSON network
    /// layout, parameters, then the optimizer state. Numbers are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.scene;
        let layout = Layout {
            sdf: s.sdf.clone(),
            reflectance: s.reflectance.clone(),
            background: s.background.clone(),
            alpha: s.alpha.clone(),
            bounds: s.bounds,
            blocks: s.params.blocks().to_vec(),
        };
        let json = serde_json::to_vec(&layout).expect("layout serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&s.alpha_value().to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        put_f64s(&mut out, s.params.values());
        let a = &self.adam;
        for x in [a.lr, a.beta1, a.beta2, a.eps] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&a.step.to_le_bytes());
        let (m, v) = a.moments();
        put_f64s(&mut out, m);
        put_f64s(&mut out, v);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let iteration = r.u64()?;
        let _alpha = r.f64()?;
        let n = r.u64()? as usize;
        let layout: Layout =
            serde_json::from_slice(r.take(n)?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let params = ParamVector::from_parts(r.f64s()?, layout.blocks).map_err(CheckpointError::Malformed)?;
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let step = r.u64()?;
        let (m, v) = (r.f64s()?, r.f64s()?);
        if m.len() != params.len() {
            return Err(CheckpointError::Malformed(format!(
                "optimizer holds {} moments for {} parameters",
                m.len(),
                params.len()
            )));
        }
        let adam = Adam::from_parts(lr, beta1, beta2, eps, step, m, v)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Size);
        }
        Ok(Self {
            config_hash,
            iteration,
            scene: NeuralScene {
                params,
                sdf: layout.sdf,
                reflectance: layout.reflectance,
                background: layout.background,
                alpha: layout.alpha,
                bounds: layout.bounds,
            },
            adam,
        })
    }

    /// Write atomically through a temporary sibling file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
            f.write_all(&self.to_bytes())?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
