//! Checkpoint files.
//!
//! Layout: magic `LLVC`, version `u8`, `u32` LE length + UTF-8 model
//! configuration in `key = value` form, `u32` LE parameter count, then for
//! each parameter (sorted by name) a `u32` LE name length, the name bytes
//! and the tensor in `LLVT` form.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

use super::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LLVC";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    let cfg = model.config().to_kv_string();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    w.write_all(&(model.parameters().len() as u32).to_le_bytes())?;
    for (name, t) in model.parameters() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        io::write_tensor(w, t)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, limit: usize) -> std::result::Result<String, String> {
    let n = read_u32(r).map_err(|e| e.to_string())? as usize;
    if n > limit {
        return Err(format!("string length {n} exceeds {limit}"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| e.to_string())?;
    String::from_utf8(buf).map_err(|e| e.to_string())
}

/// Reads a checkpoint, validating every parameter shape against the stored
/// configuration.
pub fn read_checkpoint<R: Read>(r: &mut R) -> std::result::Result<Model, String> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head).map_err(|e| e.to_string())?;
    if &head[..4] != CHECKPOINT_MAGIC {
        return Err("missing LLVC magic".into());
    }
    if head[4] != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {}", head[4]));
    }
    let cfg_text = read_string(r, 1 << 16)?;
    let config = ModelConfig::parse(&cfg_text).map_err(|e| e.to_string())?;
    let count = read_u32(r).map_err(|e| e.to_string())? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..count.min(4096) {
        let name = read_string(r, 256)?;
        let t = io::read_tensor(r).map_err(|e| format!("{name}: {e}"))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(format!("duplicate parameter {name}"));
        }
    }
    Model::from_parameters(config, params).map_err(|e| e.to_string())
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut slice = &bytes[..];
    let model = read_checkpoint(&mut slice).map_err(|e| Error::format(path, e))?;
    if !slice.is_empty() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, RecurrentState};

    #[test]
    fn round_trip_is_identity_for_every_variant() {
        for a in Ablation::ALL {
            let m = Model::build(a.config(3).with_widths([4, 6, 8]), 11).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &m).unwrap();
            let back = read_checkpoint(&mut &buf[..]).unwrap();
            assert_eq!(back, m);
            let mut again = Vec::new();
            write_checkpoint(&mut again, &back).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = Model::build(ModelConfig::llvd_s(3).with_widths([4, 6, 8]), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        // Rewrite the stored config to claim wider stages.
        let text = String::from_utf8_lossy(&buf[9..9 + u32::from_le_bytes([buf[5], buf[6], buf[7], buf[8]]) as usize]).into_owned();
        let forged = text.replace("stage_widths = 4,6,8", "stage_widths = 4,6,9").replace("lstm_hidden = 8", "lstm_hidden = 9");
        let mut bad = buf[..5].to_vec();
        bad.extend_from_slice(&(forged.len() as u32).to_le_bytes());
        bad.extend_from_slice(forged.as_bytes());
        bad.extend_from_slice(&buf[9 + text.len()..]);
        let err = read_checkpoint(&mut &bad[..]).unwrap_err();
        assert!(err.contains("dims"), "{err}");
    }

    #[test]
    fn state_round_trip() {
        let cfg = ModelConfig::llvd_s(3).with_widths([4, 6, 8]);
        let m = Model::build(cfg.clone(), 2).unwrap();
        let x = crate::tensor::Tensor::from_fn(&[1, 3, 16, 16], |i| (i % 13) as f32 / 13.0);
        let (_, state) = m.denoise_frames(&[x], None).unwrap();
        let mut buf = Vec::new();
        state.write(&mut buf).unwrap();
        let back = RecurrentState::read(&mut &buf[..]).unwrap();
        assert_eq!(back, state);
        back.check(&cfg, 1, 16, 16).unwrap();
        assert!(back.check(&cfg, 1, 32, 16).is_err());
    }
}
