//! Versioned model container shared by every trainable component.
//!
//! Layout (little-endian):
//!
//! | offset   | size   | field                                        |
//! |----------|--------|----------------------------------------------|
//! | 0        | 8      | magic `DQCKPT\0\0`                           |
//! | 8        | 4      | container version (`1`)                      |
//! | 12       | 4      | header length `H` in bytes                   |
//! | 16       | H      | UTF-8 JSON header; always has `"kind"`       |
//! | 16+H     | 8      | parameter count `P`                          |
//! | 24+H     | 8·P    | parameters as IEEE-754 `f64`                 |
//!
//! Parameters are stored as `f64` regardless of the in-memory scalar type.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codec::{AeConfig, Autoencoder, ConditionUpsampler, LatentNorm, UpsampleMode};
use crate::denoiser::{ConvDenoiser, ConvDenoiserSpec};
use crate::error::{Error, Result};
use crate::quantizer::{Codebook, Rvq};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DQCKPT\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub params: Vec<f64>,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn new(kind: &str, mut header: Value, params: Vec<f64>) -> Self {
        header["kind"] = Value::String(kind.to_owned());
        Self { header, params }
    }

    pub fn kind(&self) -> &str {
        self.header["kind"].as_str().unwrap_or("")
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind() != kind {
            return Err(format_err(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind()
            )));
        }
        Ok(())
    }

    /// Deserializes one header field.
    pub fn field<D: DeserializeOwned>(&self, key: &str) -> Result<D> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| format_err(format!("missing header field `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| format_err(format!("field `{key}`: {e}")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| format_err(e.to_string()))?;
        let mut buf = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let pstart = 16 + hlen + 8;
        if bytes.len() < pstart {
            return Err(format_err("truncated header"));
        }
        let header: Value =
            serde_json::from_slice(&bytes[16..16 + hlen]).map_err(|e| format_err(e.to_string()))?;
        let count =
            u64::from_le_bytes(bytes[16 + hlen..pstart].try_into().expect("8 bytes")) as usize;
        if bytes.len() != pstart + 8 * count {
            return Err(format_err(format!(
                "expected {count} parameters, payload has {} bytes",
                bytes.len() - pstart
            )));
        }
        let params = bytes[pstart..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !header.is_object() || header.get("kind").and_then(Value::as_str).is_none() {
            return Err(format_err("header lacks a `kind`"));
        }
        Ok(Self { header, params })
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn to_value<S: Serialize>(s: &S) -> Value {
    serde_json::to_value(s).expect("config serializes to JSON")
}

impl<T: Scalar> Autoencoder<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "autoencoder",
            json!({ "config": to_value(self.config()) }),
            to_f64(self.params()),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("autoencoder")?;
        let cfg: AeConfig = ck.field("config")?;
        Self::from_params(cfg, from_f64(&ck.params))
    }
}

/// A denoiser checkpoint with the metadata the decoder needs to refuse
/// mismatched inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DenoiserMeta {
    pub schedule_fingerprint: String,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Quantizer stages the conditioning was trained on.
    pub rvq_stages: usize,
    pub latent_norm: LatentNorm,
}

impl<T: Scalar> ConvDenoiser<T> {
    pub fn to_checkpoint(&self, meta: &DenoiserMeta) -> Checkpoint {
        Checkpoint::new(
            "denoiser",
            json!({ "spec": to_value(self.spec()), "meta": to_value(meta) }),
            to_f64(self.params()),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, DenoiserMeta)> {
        ck.expect_kind("denoiser")?;
        let spec: ConvDenoiserSpec = ck.field("spec")?;
        let meta: DenoiserMeta = ck.field("meta")?;
        Ok((Self::from_params(spec, from_f64(&ck.params))?, meta))
    }
}

impl<T: Scalar> Rvq<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let sizes: Vec<usize> = self.stages().iter().map(Codebook::len).collect();
        let params = self
            .stages()
            .iter()
            .flat_map(|s| to_f64(s.as_slice()))
            .collect();
        Checkpoint::new(
            "rvq",
            json!({ "dim": self.dim(), "codebook_sizes": sizes }),
            params,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("rvq")?;
        let dim: usize = ck.field("dim")?;
        let sizes: Vec<usize> = ck.field("codebook_sizes")?;
        let total: usize = sizes.iter().map(|k| k * dim).sum();
        if total != ck.params.len() {
            return Err(format_err("codebook sizes disagree with payload"));
        }
        let mut off = 0;
        let mut stages = Vec::with_capacity(sizes.len());
        for k in sizes {
            stages.push(Codebook::new(
                dim,
                from_f64(&ck.params[off..off + k * dim]),
            )?);
            off += k * dim;
        }
        Rvq::new(stages)
    }
}

impl<T: Scalar> ConditionUpsampler<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "upsampler",
            json!({
                "mode": to_value(&self.mode()),
                "in_channels": self.in_channels(),
                "hidden": self.hidden(),
                "out_channels": self.out_channels(),
                "factor": self.factor(),
            }),
            to_f64(self.params()),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("upsampler")?;
        let mode: UpsampleMode = ck.field("mode")?;
        Self::from_params(
            mode,
            ck.field("in_channels")?,
            ck.field("hidden")?,
            ck.field("out_channels")?,
            ck.field("factor")?,
            from_f64(&ck.params),
        )
    }
}
