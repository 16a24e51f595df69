//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CVRTCKPT"
//! version u32      1
//! config  u32 length + UTF-8 `key = value` lines describing the model shape
//! count   u32      number of tensors
//! tensor  u32 name length + UTF-8 name
//!         u32 rows, u32 cols
//!         rows*cols f64 payload, row-major
//! crc     u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! A checkpoint carries everything needed to rebuild the encoder: the model
//! configuration (including the vocabulary size) and every parameter tensor.
//! Extra tensors beyond the encoder layout (e.g. a discriminator head) are
//! preserved verbatim. Loading verifies the checksum first, then shape-checks
//! the encoder tensors against the embedded configuration.

use std::fmt;
use std::fs;
use std::path::Path;

use convirt_core::model::{init_params, ModelConfig, ParamSet, ProjectionMode};
use convirt_core::tensor::Matrix;

const MAGIC: &[u8; 8] = b"CVRTCKPT";
const VERSION: u32 = 1;

/// A checkpoint failure; messages name the offending tensor when one is.
#[derive(Debug)]
pub struct CheckpointError(pub String);

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "checkpoint: {}", self.0)
    }
}

impl std::error::Error for CheckpointError {}

fn fail<T>(msg: impl Into<String>) -> Result<T, CheckpointError> {
    Err(CheckpointError(msg.into()))
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Serializes the model shape as `key = value` lines.
fn config_to_text(cfg: &ModelConfig) -> String {
    let channels: Vec<String> = cfg.conv_channels.iter().map(|c| c.to_string()).collect();
    format!(
        "conv_channels = {}\nembed_dim = {}\nn_attention_layers = {}\nn_heads = {}\n\
         ffn_dim = {}\nvocab_size = {}\nprojection_dim = {}\nprojection_hidden = {}\n\
         projection = {}\nposition_encoding = {}\n",
        channels.join(","),
        cfg.embed_dim,
        cfg.n_attention_layers,
        cfg.n_heads,
        cfg.ffn_dim,
        cfg.vocab_size,
        cfg.projection_dim,
        cfg.projection_hidden,
        match cfg.projection {
            ProjectionMode::NonLinear => "nonlinear",
            ProjectionMode::Linear => "linear",
        },
        cfg.position_encoding,
    )
}

/// Parses the embedded model-shape block.
fn config_from_text(text: &str) -> Result<ModelConfig, CheckpointError> {
    let mut cfg = ModelConfig::with_vocab(1);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return fail(format!("malformed config line `{line}`"));
        };
        let (key, value) = (key.trim(), value.trim());
        let int = |v: &str| -> Result<usize, CheckpointError> {
            v.parse()
                .map_err(|_| CheckpointError(format!("config key {key}: bad integer `{v}`")))
        };
        match key {
            "conv_channels" => {
                let parsed: Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                cfg.conv_channels = parsed
                    .map_err(|_| CheckpointError(String::from("bad conv_channels list")))?;
            }
            "embed_dim" => cfg.embed_dim = int(value)?,
            "n_attention_layers" => cfg.n_attention_layers = int(value)?,
            "n_heads" => cfg.n_heads = int(value)?,
            "ffn_dim" => cfg.ffn_dim = int(value)?,
            "vocab_size" => cfg.vocab_size = int(value)?,
            "projection_dim" => cfg.projection_dim = int(value)?,
            "projection_hidden" => cfg.projection_hidden = int(value)?,
            "projection" => {
                cfg.projection = match value {
                    "nonlinear" => ProjectionMode::NonLinear,
                    "linear" => ProjectionMode::Linear,
                    _ => return fail(format!("bad projection mode `{value}`")),
                }
            }
            "position_encoding" => {
                cfg.position_encoding = match value {
                    "true" => true,
                    "false" => false,
                    _ => return fail(format!("bad position_encoding `{value}`")),
                }
            }
            _ => return fail(format!("unknown config key `{key}`")),
        }
    }
    cfg.validate()
        .map_err(|e| CheckpointError(format!("embedded config invalid: {e}")))?;
    Ok(cfg)
}

/// Encodes parameters and their model shape as checkpoint bytes.
pub fn encode(params: &ParamSet, cfg: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = config_to_text(cfg);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, m) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Writes a checkpoint file.
pub fn save(path: &Path, params: &ParamSet, cfg: &ModelConfig) -> Result<(), CheckpointError> {
    fs::write(path, encode(params, cfg))
        .map_err(|e| CheckpointError(format!("cannot write {}: {e}", path.display())))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return fail(format!(
                "truncated while reading {} (need {} bytes at offset {}, file has {})",
                self.context,
                n,
                self.pos,
                self.bytes.len()
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes checkpoint bytes into parameters and the embedded model shape.
pub fn decode(bytes: &[u8]) -> Result<(ParamSet, ModelConfig), CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return fail("file too short to be a checkpoint");
    }
    // Checksum first: everything else assumes intact bytes.
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let computed = crc32(body);
    if stored != computed {
        return fail(format!(
            "checksum mismatch (stored {stored:#010x}, computed {computed:#010x}); \
             the file is corrupt or truncated"
        ));
    }

    let mut r = Reader {
        bytes: body,
        pos: 0,
        context: String::from("header"),
    };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return fail("bad magic; not a checkpoint file");
    }
    let version = r.u32()?;
    if version != VERSION {
        return fail(format!("unsupported version {version} (expected {VERSION})"));
    }
    r.context = String::from("config block");
    let config_len = r.u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| CheckpointError(String::from("config block is not UTF-8")))?;
    let cfg = config_from_text(config_text)?;

    r.context = String::from("tensor count");
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for i in 0..count {
        r.context = format!("tensor {i} name");
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        r.context = format!("tensor `{name}` shape");
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let entries = rows.checked_mul(cols).filter(|&n| n > 0).ok_or_else(|| {
            CheckpointError(format!("tensor `{name}` has degenerate shape {rows}x{cols}"))
        })?;
        r.context = format!("tensor `{name}` payload");
        let payload = r.take(entries * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        if params
            .insert(name.clone(), Matrix::from_vec(rows, cols, data))
            .is_some()
        {
            return fail(format!("duplicate tensor `{name}`"));
        }
    }
    if r.pos != body.len() {
        return fail(format!(
            "{} trailing bytes after the last tensor",
            body.len() - r.pos
        ));
    }

    // Shape-check the encoder tensors against the embedded configuration by
    // rebuilding the expected layout; extra tensors are allowed.
    let reference = init_params(&cfg, 0)
        .map_err(|e| CheckpointError(format!("embedded config invalid: {e}")))?;
    for (name, m) in &reference {
        match params.get(name) {
            None => return fail(format!("missing encoder tensor `{name}`")),
            Some(got) if got.rows() != m.rows() || got.cols() != m.cols() => {
                return fail(format!(
                    "tensor `{name}` has shape {}x{}, config requires {}x{}",
                    got.rows(),
                    got.cols(),
                    m.rows(),
                    m.cols()
                ));
            }
            Some(_) => {}
        }
    }
    Ok((params, cfg))
}

/// Reads a checkpoint file.
pub fn load(path: &Path) -> Result<(ParamSet, ModelConfig), CheckpointError> {
    let bytes = fs::read(path)
        .map_err(|e| CheckpointError(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| CheckpointError(format!("{}: {}", path.display(), e.0)))
}
