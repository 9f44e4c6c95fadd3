//! Bit-exact model serialization.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "RSTMODL\0"
//! version    u32
//! K N f M   4 x u32   stages, filters/stage, filter size, rbf kernels
//! range bandwidth peak   3 x f64
//! section 1  u64 length + K*N*(f^2-1) f64   filter basis coefficients
//! section 2  u64 length + K*N*M f64         rbf weights
//! section 3  u64 length + lambda table      u32 count, then per entry
//!                                           u32 utf8-length, class id, f64 log-lambda
//! section 4  u64 length + metadata JSON
//! checksum   32 bytes  sha256 over everything above
//! ```
//!
//! The lambda table is written in class-id order, so a round trip is
//! independent of insertion order. A JSON text export mirrors the same fields
//! for inspection and diffing.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter::FilterBasis;
use crate::model::{ModelMetadata, ModelParams};
use crate::prior::{Architecture, DiffusionStage, LearnedFilter, PriorProx, RbfConfig};
use crate::rbf::RbfFunction;

const MAGIC: [u8; 8] = *b"RSTMODL\0";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

fn push_section(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

/// Serializes a model to bytes.
pub fn save_to_vec(model: &ModelParams) -> Vec<u8> {
    let arch = model.prior.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        arch.stages as u32,
        arch.filters_per_stage as u32,
        arch.filter_size as u32,
        arch.rbf.kernels as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [arch.rbf.range, arch.rbf.bandwidth, model.peak] {
        out.extend_from_slice(&v.to_le_bytes());
    }

    let mut coeffs = Vec::new();
    let mut weights = Vec::new();
    for stage in model.prior.stages() {
        for lf in stage.filters() {
            for &c in lf.coeffs() {
                coeffs.extend_from_slice(&c.to_le_bytes());
            }
        }
        for psi in stage.influences() {
            for &w in psi.weights() {
                weights.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    push_section(&mut out, &coeffs);
    push_section(&mut out, &weights);

    let mut lambdas = Vec::new();
    lambdas.extend_from_slice(&(model.log_lambdas().len() as u32).to_le_bytes());
    for (class, &log_lambda) in model.log_lambdas() {
        lambdas.extend_from_slice(&(class.len() as u32).to_le_bytes());
        lambdas.extend_from_slice(class.as_bytes());
        lambdas.extend_from_slice(&log_lambda.to_le_bytes());
    }
    push_section(&mut out, &lambdas);

    let metadata = serde_json::to_vec(&model.metadata).expect("metadata serializes");
    push_section(&mut out, &metadata);

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes a model file.
pub fn save(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, save_to_vec(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!("while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn section(&mut self, what: &str) -> Result<&'a [u8]> {
        let len = self.u64(what)? as usize;
        self.take(len, what)
    }
}

/// Deserializes a model from bytes, validating magic, version, checksum and
/// header consistency; no model computation is performed.
pub fn load_from_slice(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Truncated("file shorter than preamble".into()));
    }
    if bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(Error::Truncated("file shorter than checksum".into()));
    }
    let (payload, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let digest = Sha256::digest(payload);
    if digest.as_slice() != checksum {
        return Err(Error::ChecksumMismatch);
    }

    let mut r = Reader {
        bytes: payload,
        pos: 12,
    };
    let stages = r.u32("stage count")? as usize;
    let filters = r.u32("filter count")? as usize;
    let filter_size = r.u32("filter size")? as usize;
    let kernels = r.u32("kernel count")? as usize;
    let range = r.f64("rbf range")?;
    let bandwidth = r.f64("rbf bandwidth")?;
    let peak = r.f64("peak")?;

    let arch = Architecture {
        stages,
        filters_per_stage: filters,
        filter_size,
        rbf: RbfConfig {
            kernels,
            range,
            bandwidth,
        },
    };
    arch.validate()
        .map_err(|e| Error::HeaderInconsistent(e.to_string()))?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::HeaderInconsistent(format!("peak {peak}")));
    }

    let coeff_dim = filter_size * filter_size - 1;
    let coeff_bytes = r.section("coefficient section")?;
    if coeff_bytes.len() != stages * filters * coeff_dim * 8 {
        return Err(Error::HeaderInconsistent(format!(
            "coefficient section holds {} bytes, header implies {}",
            coeff_bytes.len(),
            stages * filters * coeff_dim * 8
        )));
    }
    let weight_bytes = r.section("weight section")?;
    if weight_bytes.len() != stages * filters * kernels * 8 {
        return Err(Error::HeaderInconsistent(format!(
            "weight section holds {} bytes, header implies {}",
            weight_bytes.len(),
            stages * filters * kernels * 8
        )));
    }

    let read_f64s = |bytes: &[u8]| -> Vec<f64> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let coeffs = read_f64s(coeff_bytes);
    let weights = read_f64s(weight_bytes);
    if coeffs.iter().any(|v| !v.is_finite()) || weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::HeaderInconsistent("non-finite parameter payload".into()));
    }

    let basis = FilterBasis::new(filter_size)?;
    let mut stage_list = Vec::with_capacity(stages);
    for k in 0..stages {
        let mut stage_filters = Vec::with_capacity(filters);
        let mut stage_influences = Vec::with_capacity(filters);
        for i in 0..filters {
            let c0 = (k * filters + i) * coeff_dim;
            stage_filters.push(LearnedFilter::from_coeffs(
                &basis,
                coeffs[c0..c0 + coeff_dim].to_vec(),
            )?);
            let w0 = (k * filters + i) * kernels;
            stage_influences.push(RbfFunction::new(
                range,
                bandwidth,
                weights[w0..w0 + kernels].to_vec(),
            )?);
        }
        stage_list.push(DiffusionStage::new(stage_filters, stage_influences)?);
    }
    let prior = PriorProx::new(basis, arch.rbf, stage_list)?;

    let lambda_bytes = r.section("lambda section")?;
    let mut lr = Reader {
        bytes: lambda_bytes,
        pos: 0,
    };
    let count = lr.u32("lambda count")? as usize;
    let mut model = ModelParams::new(prior);
    model.peak = peak;
    for _ in 0..count {
        let len = lr.u32("class id length")? as usize;
        let class = std::str::from_utf8(lr.take(len, "class id")?)
            .map_err(|_| Error::HeaderInconsistent("class id is not utf-8".into()))?
            .to_owned();
        let log_lambda = lr.f64("log lambda")?;
        if !log_lambda.is_finite() {
            return Err(Error::HeaderInconsistent(format!(
                "non-finite log lambda for class '{class}'"
            )));
        }
        model.set_log_lambda(class, log_lambda)?;
    }
    if lr.pos != lambda_bytes.len() {
        return Err(Error::HeaderInconsistent("lambda section has trailing bytes".into()));
    }

    let metadata_bytes = r.section("metadata section")?;
    model.metadata = serde_json::from_slice::<ModelMetadata>(metadata_bytes)
        .map_err(|e| Error::HeaderInconsistent(format!("metadata json: {e}")))?;

    if r.pos != payload.len() {
        return Err(Error::HeaderInconsistent("trailing bytes after sections".into()));
    }
    Ok(model)
}

/// Reads a model file.
pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_from_slice(&bytes)
}

/// Human-readable JSON export with the same fields as the binary layout.
pub fn export_text(model: &ModelParams) -> String {
    let arch = model.prior.architecture();
    let stages: Vec<serde_json::Value> = model
        .prior
        .stages()
        .iter()
        .map(|stage| {
            serde_json::json!({
                "filters": stage.filters().iter().map(|lf| serde_json::json!({
                    "coeffs": lf.coeffs(),
                    "taps": lf.filter().taps(),
                })).collect::<Vec<_>>(),
                "influences": stage.influences().iter().map(|psi| serde_json::json!({
                    "weights": psi.weights(),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "format": "restore-model",
        "version": VERSION,
        "architecture": {
            "stages": arch.stages,
            "filters_per_stage": arch.filters_per_stage,
            "filter_size": arch.filter_size,
            "rbf": { "kernels": arch.rbf.kernels, "range": arch.rbf.range, "bandwidth": arch.rbf.bandwidth },
        },
        "peak": model.peak,
        "log_lambdas": model.log_lambdas(),
        "stages": stages,
        "metadata": model.metadata,
    });
    serde_json::to_string_pretty(&doc).expect("model export serializes")
}
