//! Binary checkpoint files.
//!
//! ```text
//! "DBC1"                  magic
//! u32                     format version
//! u32 + UTF-8             key=value config text
//! u32 + f64 * T           schedule betas
//! repeated until the CRC:
//!   u16 + UTF-8           parameter name
//!   u8 + u32 * rank       shape
//!   f32 * prod(shape)     values
//! u32                     CRC32 of everything above
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserParams, Tensor};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::observation::ObsMode;
use crate::schedule::{NoiseSchedule, SigmaKind};

pub const MAGIC: &[u8; 4] = b"DBC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    /// NaN when no epoch ran.
    pub final_train_loss: f64,
    pub final_eval_loss: f64,
    pub obs_mode: Option<ObsMode>,
    /// Actions are divided by this before training; samples are multiplied back.
    pub action_scale: f64,
    pub seed: u64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self {
            epochs_run: 0,
            final_train_loss: f64::NAN,
            final_eval_loss: f64::NAN,
            obs_mode: None,
            action_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserCheckpoint {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub meta: TrainingMeta,
}

impl PartialEq for DenoiserCheckpoint {
    fn eq(&self, other: &Self) -> bool {
        self.model.config() == other.model.config()
            && self.model.params() == other.model.params()
            && self.schedule == other.schedule
            && meta_eq(&self.meta, &other.meta)
    }
}

// NaN-aware equality for the loss fields.
fn meta_eq(a: &TrainingMeta, b: &TrainingMeta) -> bool {
    let feq = |x: f64, y: f64| x.to_bits() == y.to_bits() || x == y;
    a.epochs_run == b.epochs_run
        && feq(a.final_train_loss, b.final_train_loss)
        && feq(a.final_eval_loss, b.final_eval_loss)
        && a.obs_mode == b.obs_mode
        && a.action_scale == b.action_scale
        && a.seed == b.seed
}

impl DenoiserCheckpoint {
    pub fn new(mut model: Denoiser, schedule: NoiseSchedule, meta: TrainingMeta) -> Result<Self> {
        if schedule.num_steps() != model.config().max_timestep {
            return Err(Error::Config(format!(
                "schedule has {} steps but the model expects {}",
                schedule.num_steps(),
                model.config().max_timestep
            )));
        }
        if !(meta.action_scale.is_finite() && meta.action_scale > 0.0) {
            return Err(Error::Config(format!(
                "action scale must be positive, got {}",
                meta.action_scale
            )));
        }
        model.attach_schedule(&schedule)?;
        Ok(Self {
            model,
            schedule,
            meta,
        })
    }

    fn config_text(&self) -> String {
        let mut doc = KvDoc::new();
        self.model.config().write_kv(&mut doc);
        doc.set("schedule.sigma", self.schedule.sigma_kind());
        doc.set("train.epochs_run", self.meta.epochs_run);
        doc.set("train.final_train_loss", self.meta.final_train_loss);
        doc.set("train.final_eval_loss", self.meta.final_eval_loss);
        doc.set(
            "train.obs_mode",
            self.meta.obs_mode.map_or("none", |m| m.as_str()),
        );
        doc.set("train.action_scale", self.meta.action_scale);
        doc.set("train.seed", self.meta.seed);
        doc.to_text()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let text = self.config_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.schedule.num_steps() as u32).to_le_bytes());
        for b in self.schedule.betas() {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for (name, t) in self.model.params().entries() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 8 {
            return Err(Error::format(source, "truncated header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::BadVersion(version));
        }
        if bytes.len() < 12 {
            return Err(Error::Checksum {
                stored: 0,
                computed: crc32fast::hash(bytes),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Reader {
            bytes: body,
            pos: 8,
            source,
        };
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| r.err("config block is not UTF-8"))?;
        let doc = KvDoc::parse(text).map_err(|m| r.err(&m))?;
        let config = DenoiserConfig::read_kv(&doc).map_err(|m| r.err(&m))?;
        let sigma: SigmaKind = doc
            .require("schedule.sigma")
            .map_err(|m| r.err(&m))?
            .parse()
            .map_err(|e: Error| r.err(&e.to_string()))?;
        let obs_mode = match doc.require("train.obs_mode").map_err(|m| r.err(&m))? {
            "none" => None,
            s => Some(s.parse::<ObsMode>().map_err(|e| r.err(&e.to_string()))?),
        };
        let meta = TrainingMeta {
            epochs_run: doc.parse_value("train.epochs_run").map_err(|m| r.err(&m))?,
            final_train_loss: doc
                .parse_value("train.final_train_loss")
                .map_err(|m| r.err(&m))?,
            final_eval_loss: doc
                .parse_value("train.final_eval_loss")
                .map_err(|m| r.err(&m))?,
            obs_mode,
            action_scale: doc
                .parse_value("train.action_scale")
                .map_err(|m| r.err(&m))?,
            seed: doc.parse_value("train.seed").map_err(|m| r.err(&m))?,
        };

        let steps = r.u32()? as usize;
        let betas = (0..steps)
            .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        let schedule = NoiseSchedule::from_betas_with_sigma(betas, sigma)?;

        let mut entries = Vec::new();
        while r.pos < body.len() {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.err("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| Ok(r.u32()? as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err("tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            entries.push((name, Tensor { shape, data }));
        }
        let model = Denoiser::new(config, DenoiserParams::from_entries(entries))?;
        Self::new(model, schedule, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn save_checkpoint(ckpt: &DenoiserCheckpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserCheckpoint> {
    DenoiserCheckpoint::load(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::format(self.source, format!("at byte {}: {msg}", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err("unexpected end of data")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Arch;

    fn fresh() -> DenoiserCheckpoint {
        let cfg = DenoiserConfig {
            arch: Arch::Transformer,
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
            patch_size: 32,
            max_timestep: 4,
            mlp_hidden: vec![16],
            input_scaling: true,
        };
        let model = Denoiser::init(cfg, 3).unwrap();
        let schedule = NoiseSchedule::linear(4, 1e-4, 0.02).unwrap();
        let meta = TrainingMeta {
            epochs_run: 2,
            final_train_loss: 0.75,
            final_eval_loss: 0.8125,
            obs_mode: Some(ObsMode::Raw),
            action_scale: 0.0012345678901234,
            seed: 42,
        };
        DenoiserCheckpoint::new(model, schedule, meta).unwrap()
    }

    #[test]
    fn round_trip() {
        let ck = fresh();
        let bytes = ck.to_bytes();
        let back = DenoiserCheckpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn nan_losses_round_trip() {
        let mut ck = fresh();
        ck.meta = TrainingMeta::default();
        let back = DenoiserCheckpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn distinct_errors() {
        let bytes = fresh().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            DenoiserCheckpoint::from_bytes(&bad, Path::new("m")),
            Err(Error::BadMagic)
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            DenoiserCheckpoint::from_bytes(&bad, Path::new("m")),
            Err(Error::BadVersion(9))
        ));
        let bad = &bytes[..bytes.len() - 10];
        assert!(matches!(
            DenoiserCheckpoint::from_bytes(bad, Path::new("m")),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn schedule_mismatch_rejected() {
        let ck = fresh();
        let other = NoiseSchedule::linear(5, 1e-4, 0.02).unwrap();
        assert!(DenoiserCheckpoint::new(ck.model, other, ck.meta).is_err());
    }
}
