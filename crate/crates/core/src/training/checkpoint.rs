//! Binary checkpoints.
//!
//! ```text
//! "NUSR" u16 version
//! u32 len, config text (key = value lines)
//! u32 count, tensors: u16 name len, name, u8 ndim, u32 dims…, f32 data
//! u32 count, optimizer moments (same encoding, names m.* / v.*)
//! u64 step
//! u32 len, rng state: 32-byte seed, u64 stream, u128 word position
//! u32 CRC-32 of everything above
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, TrainConfig, TrainState, ValRecord};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::unetpp::{UNetPPConfig, UNetPPModel};

const MAGIC: &[u8; 4] = b"NUSR";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<E: Element> {
    pub model: UNetPPModel<E>,
    pub state: TrainState<E>,
    pub config: TrainConfig,
}

fn put_tensor<E: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<E>) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend((v.as_f64() as f32).to_le_bytes());
    }
}

fn config_text<E: Element>(model: &UNetPPModel<E>, state: &TrainState<E>, cfg: &TrainConfig) -> String {
    let mut lines = Vec::new();
    for (k, v) in model.config.entries() {
        lines.push(format!("model.{k} = {v}"));
    }
    for (k, v) in cfg.entries() {
        lines.push(format!("train.{k} = {v}"));
    }
    lines.push(format!("state.adam_t = {}", state.adam.t));
    if let Some(b) = state.best_val {
        lines.push(format!("state.best_step = {}", b.step));
        lines.push(format!("state.best_loss = {}", b.loss));
        lines.push(format!("state.best_psnr = {}", b.psnr));
        lines.push(format!("state.best_ssim = {}", b.ssim));
    }
    lines.join("\n")
}

/// Parameters and moments are stored as 32-bit floats, so a round trip is
/// lossless for `f32` models.
pub fn encode_checkpoint<E: Element>(
    model: &UNetPPModel<E>,
    state: &TrainState<E>,
    cfg: &TrainConfig,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    let text = config_text(model, state, cfg);
    out.extend((text.len() as u32).to_le_bytes());
    out.extend(text.as_bytes());

    let params = model.named_params();
    out.extend((params.len() as u32).to_le_bytes());
    for (name, t) in &params {
        put_tensor(&mut out, name, t);
    }
    let moments = state.adam.m.len() + state.adam.v.len();
    out.extend((moments as u32).to_le_bytes());
    for (prefix, set) in [("m", &state.adam.m), ("v", &state.adam.v)] {
        for ((name, _), t) in params.iter().zip(set.iter()) {
            put_tensor(&mut out, &format!("{prefix}.{name}"), t);
        }
    }
    out.extend(state.step.to_le_bytes());

    let mut rng = Vec::with_capacity(56);
    rng.extend(state.rng.get_seed());
    rng.extend(state.rng.get_stream().to_le_bytes());
    rng.extend(state.rng.get_word_pos().to_le_bytes());
    out.extend((rng.len() as u32).to_le_bytes());
    out.extend(rng);

    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

/// Writes via a temporary file and a rename so a crash never leaves a
/// half-written checkpoint behind.
pub fn save_checkpoint<E: Element>(
    path: &Path,
    model: &UNetPPModel<E>,
    state: &TrainState<E>,
    cfg: &TrainConfig,
) -> Result<()> {
    let bytes = encode_checkpoint(model, state, cfg);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<Checkpoint<E>> {
    decode_checkpoint(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::format(self.pos as u64, msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.array(what).map(u64::from_le_bytes)
    }

    fn tensor<E: Element>(&mut self) -> Result<(String, Tensor<E>)> {
        let at = self.pos as u64;
        let len = self.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = self.u8("tensor rank")? as usize;
        if ndim == 0 {
            return Err(self.err(format!("tensor {name} has rank 0")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32("tensor dim")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c > 0 && c <= (self.bytes.len() - self.pos) / 4)
            .ok_or_else(|| self.err(format!("tensor {name} has impossible shape {shape:?}")))?;
        let raw = self.take(count * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| E::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::format(at, e))?;
        Ok((name, t))
    }

    fn table<E: Element>(&mut self, what: &str) -> Result<Vec<(String, Tensor<E>)>> {
        let n = self.u32(what)? as usize;
        // each entry needs at least 2 + 1 + 4 + 4 bytes
        if n > (self.bytes.len() - self.pos) / 11 {
            return Err(self.err(format!("{what} count {n} exceeds the file size")));
        }
        (0..n).map(|_| self.tensor()).collect()
    }
}

fn parse_config(text: &str, offset: u64) -> Result<(UNetPPConfig, TrainConfig, u64, Option<ValRecord>)> {
    let bad = |msg: String| Error::format(offset, msg);
    let mut model = UNetPPConfig::default();
    let mut train = TrainConfig::default();
    let mut state = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("config line {line:?} has no '='")))?;
        let (key, value) = (key.trim(), value.trim());
        let known = if let Some(k) = key.strip_prefix("model.") {
            model.set(k, value).map_err(bad)?
        } else if let Some(k) = key.strip_prefix("train.") {
            train.set(k, value).map_err(bad)?
        } else if let Some(k) = key.strip_prefix("state.") {
            let v: f64 = value.parse().map_err(|_| bad(format!("invalid value for {key}")))?;
            state.insert(k.to_string(), v);
            true
        } else {
            false
        };
        if !known {
            return Err(bad(format!("unknown config key {key:?}")));
        }
    }
    let adam_t = state.get("adam_t").copied().unwrap_or(0.0) as u64;
    let best = match (
        state.get("best_step"),
        state.get("best_loss"),
        state.get("best_psnr"),
        state.get("best_ssim"),
    ) {
        (Some(&s), Some(&loss), Some(&psnr), Some(&ssim)) => Some(ValRecord {
            step: s as u64,
            loss,
            psnr,
            ssim,
        }),
        _ => None,
    };
    Ok((model, train, adam_t, best))
}

/// Decodes a checkpoint, validating structure, names, shapes and the
/// trailing checksum. Nothing is returned unless every check passes.
pub fn decode_checkpoint<E: Element>(bytes: &[u8]) -> Result<Checkpoint<E>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.array::<4>("magic")? != *MAGIC {
        return Err(Error::format(0, "bad magic (not a checkpoint file)"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let text_len = r.u32("config length")? as usize;
    let text_at = r.pos as u64;
    let text = std::str::from_utf8(r.take(text_len, "config text")?)
        .map_err(|_| Error::format(text_at, "config text is not UTF-8"))?;
    let (model_cfg, train_cfg, adam_t, best_val) = parse_config(text, text_at)?;
    model_cfg.validate().map_err(|e| Error::format(text_at, e))?;

    let params_at = r.pos as u64;
    let params = r.table::<E>("tensor table")?;
    let moments_at = r.pos as u64;
    let moments = r.table::<E>("optimizer table")?;
    let step = r.u64("step")?;
    let rng_len = r.u32("rng length")? as usize;
    let rng_at = r.pos as u64;
    let rng_bytes = r.take(rng_len, "rng state")?;
    let body_end = r.pos;
    let stored_crc = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after checksum"));
    }
    if crc32fast::hash(&bytes[..body_end]) != stored_crc {
        return Err(Error::format(body_end as u64, "checksum mismatch (file is corrupted)"));
    }

    let mut model = UNetPPModel::<E>::new(model_cfg, 0).map_err(|e| Error::format(text_at, e))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if params.len() != names.len() {
        return Err(Error::format(
            params_at,
            format!("expected {} tensors, found {}", names.len(), params.len()),
        ));
    }
    for ((slot, name), (got_name, t)) in model.params_mut().into_iter().zip(&names).zip(params) {
        if &got_name != name || t.shape() != slot.shape() {
            return Err(Error::format(
                params_at,
                format!("tensor {got_name} {:?} does not match {name} {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t;
    }

    let (mut m, mut v) = (Vec::new(), Vec::new());
    if !moments.is_empty() {
        if moments.len() != 2 * names.len() {
            return Err(Error::format(moments_at, "optimizer table does not match the parameters"));
        }
        let params = model.named_params();
        for (k, (got, t)) in moments.into_iter().enumerate() {
            let (prefix, idx) = if k < names.len() { ("m", k) } else { ("v", k - names.len()) };
            if got != format!("{prefix}.{}", names[idx]) || t.shape() != params[idx].1.shape() {
                return Err(Error::format(moments_at, format!("unexpected optimizer tensor {got}")));
            }
            if prefix == "m" { m.push(t) } else { v.push(t) }
        }
    }

    if rng_len != 56 {
        return Err(Error::format(rng_at, format!("rng state must be 56 bytes, got {rng_len}")));
    }
    let mut rng = ChaCha8Rng::from_seed(rng_bytes[..32].try_into().expect("32 bytes"));
    rng.set_stream(u64::from_le_bytes(rng_bytes[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(rng_bytes[40..56].try_into().expect("16 bytes")));

    Ok(Checkpoint {
        model,
        state: TrainState {
            step,
            adam: AdamState { t: adam_t, m, v },
            rng,
            loss_history: Vec::new(),
            best_val,
        },
        config: train_cfg,
    })
}
