//! Checkpoint container: one file holding a text header (format version,
//! epoch, optimizer step, rng state, config echo) followed by length-prefixed
//! named tensor records. Everything round-trips bit-exactly, so a resumed run
//! continues the identical trajectory.

use crate::config::RunConfig;
use crate::error::{Result, StradiffError};
use crate::model::{Model, NormStats};
use crate::rng::RngSnapshot;
use crate::tensor::{Shape, Tensor};
use rand_chacha::ChaCha20Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const FORMAT_VERSION: &str = "stradiff-checkpoint v1";

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub epoch: usize,
    pub adam_step: u64,
    pub rng: RngSnapshot,
    pub config_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2).map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()).collect()
}

fn push_record(out: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    match tensor.shape {
        Shape::Scalar => out.push(0),
        Shape::Vector(n) => {
            out.push(1);
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        Shape::Matrix(r, c) => {
            out.push(2);
            out.extend_from_slice(&(r as u64).to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
    }
    out.extend_from_slice(&(tensor.data.len() as u64).to_le_bytes());
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    config_text: &str,
    epoch: usize,
    rng: &RngSnapshot,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for pid in 0..model.store.len() {
        let name = model.store.name(pid);
        tensors.push((format!("param/{name}"), model.store.get(pid).clone()));
        tensors.push((format!("adam_m/{name}"), model.store.m[pid].clone()));
        tensors.push((format!("adam_v/{name}"), model.store.v[pid].clone()));
    }
    if let Some(norm) = &model.norm {
        tensors.push(("norm/mean".into(), Tensor::vector(norm.mean.clone())));
        tensors.push(("norm/std".into(), Tensor::vector(norm.std.clone())));
    }

    let mut header = String::new();
    writeln!(header, "{FORMAT_VERSION}").unwrap();
    writeln!(header, "epoch {epoch}").unwrap();
    writeln!(header, "adam_step {}", model.store.step_count()).unwrap();
    writeln!(header, "rng_seed {}", hex_encode(&rng.seed)).unwrap();
    writeln!(header, "rng_stream {}", rng.stream).unwrap();
    writeln!(header, "rng_word_pos {}", rng.word_pos).unwrap();
    writeln!(header, "config_bytes {}", config_text.len()).unwrap();

    let mut out = header.into_bytes();
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(format!("\ntensors {}\n", tensors.len()).as_bytes());
    for (name, tensor) in &tensors {
        push_record(&mut out, name, tensor);
    }
    fs::write(path, out).map_err(|e| StradiffError::io(path.display().to_string(), e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, what: &str) -> StradiffError {
        StradiffError::Data(format!("{}: corrupt checkpoint at byte {}: {what}", self.path, self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.corrupt("missing newline in header"))?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| self.corrupt("non-UTF-8 header"))?;
        self.pos += end + 1;
        Ok(s)
    }

    fn keyed_line(&mut self, key: &str) -> Result<&'a str> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.corrupt(&format!("expected {key:?} line, found {line:?}")))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let buf = fs::read(path).map_err(|e| StradiffError::io(path.display().to_string(), e))?;
    let mut r = Reader { buf: &buf, pos: 0, path: path.display().to_string() };

    let version = r.line()?;
    if version != FORMAT_VERSION {
        return Err(StradiffError::Data(format!(
            "{}: incompatible checkpoint version {version:?}, this build reads {FORMAT_VERSION:?}",
            path.display()
        )));
    }
    let epoch: usize =
        r.keyed_line("epoch")?.parse().map_err(|_| r.corrupt("bad epoch"))?;
    let adam_step: u64 =
        r.keyed_line("adam_step")?.parse().map_err(|_| r.corrupt("bad adam_step"))?;
    let seed_hex = r.keyed_line("rng_seed")?;
    let seed_bytes = hex_decode(seed_hex).ok_or_else(|| r.corrupt("bad rng_seed hex"))?;
    let seed: [u8; 32] =
        seed_bytes.as_slice().try_into().map_err(|_| r.corrupt("rng_seed must be 32 bytes"))?;
    let stream: u64 =
        r.keyed_line("rng_stream")?.parse().map_err(|_| r.corrupt("bad rng_stream"))?;
    let word_pos: u128 =
        r.keyed_line("rng_word_pos")?.parse().map_err(|_| r.corrupt("bad rng_word_pos"))?;
    let config_bytes: usize =
        r.keyed_line("config_bytes")?.parse().map_err(|_| r.corrupt("bad config_bytes"))?;
    let config_text = std::str::from_utf8(r.take(config_bytes)?)
        .map_err(|_| r.corrupt("non-UTF-8 config echo"))?
        .to_string();
    if !r.line()?.is_empty() {
        return Err(r.corrupt("expected separator after config echo"));
    }
    let count: usize = r.keyed_line("tensors")?.parse().map_err(|_| r.corrupt("bad tensor count"))?;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.corrupt("non-UTF-8 tensor name"))?
            .to_string();
        let tag = r.take(1)?[0];
        let shape = match tag {
            0 => Shape::Scalar,
            1 => Shape::Vector(r.u64_le()? as usize),
            2 => {
                let rows = r.u64_le()? as usize;
                let cols = r.u64_le()? as usize;
                Shape::Matrix(rows, cols)
            }
            _ => return Err(r.corrupt("unknown shape tag")),
        };
        let len = r.u64_le()? as usize;
        if len != shape.len() {
            return Err(r.corrupt("tensor length does not match its shape"));
        }
        let bytes = r.take(len * 8)?;
        let data: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(shape, data)));
    }
    if r.pos != buf.len() {
        return Err(r.corrupt("trailing bytes after last tensor"));
    }
    Ok(LoadedCheckpoint {
        epoch,
        adam_step,
        rng: RngSnapshot { seed, stream, word_pos },
        config_text,
        tensors,
    })
}

/// Rebuilds a model from the config echo and overwrites every parameter and
/// optimizer moment from the stored tensors. Returns the model, the parsed
/// config, and the restored training generator.
pub fn restore_model(loaded: &LoadedCheckpoint) -> Result<(Model, RunConfig, ChaCha20Rng)> {
    let cfg = RunConfig::parse(&loaded.config_text)
        .map_err(|e| StradiffError::Data(format!("checkpoint config echo: {e}")))?;
    let mut model = Model::init(cfg.to_model_config(), cfg.seed)?;

    let mut norm_mean: Option<Vec<f64>> = None;
    let mut norm_std: Option<Vec<f64>> = None;
    for (name, tensor) in &loaded.tensors {
        if let Some(param) = name.strip_prefix("param/") {
            let pid = model.store.id_of(param).ok_or_else(|| {
                StradiffError::Data(format!("checkpoint carries unknown parameter {param:?}"))
            })?;
            write_into(model.store.get_mut(pid), tensor, name)?;
        } else if let Some(param) = name.strip_prefix("adam_m/") {
            let pid = known(&model, param)?;
            write_into(&mut model.store.m[pid], tensor, name)?;
        } else if let Some(param) = name.strip_prefix("adam_v/") {
            let pid = known(&model, param)?;
            write_into(&mut model.store.v[pid], tensor, name)?;
        } else if name == "norm/mean" {
            norm_mean = Some(tensor.data.clone());
        } else if name == "norm/std" {
            norm_std = Some(tensor.data.clone());
        } else {
            return Err(StradiffError::Data(format!("checkpoint carries unknown record {name:?}")));
        }
    }
    model.store.step = loaded.adam_step;
    model.norm = match (norm_mean, norm_std) {
        (Some(mean), Some(std)) => Some(NormStats { mean, std }),
        (None, None) => None,
        _ => return Err(StradiffError::Data("checkpoint has partial normalization statistics".into())),
    };
    let rng = loaded.rng.restore();
    Ok((model, cfg, rng))
}

fn known(model: &Model, param: &str) -> Result<usize> {
    model
        .store
        .id_of(param)
        .ok_or_else(|| StradiffError::Data(format!("checkpoint carries unknown parameter {param:?}")))
}

fn write_into(dst: &mut Tensor, src: &Tensor, name: &str) -> Result<()> {
    if dst.shape != src.shape {
        return Err(StradiffError::Data(format!(
            "checkpoint tensor {name:?} has shape {:?}, model expects {:?}",
            src.shape, dst.shape
        )));
    }
    dst.data.copy_from_slice(&src.data);
    Ok(())
}
