use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Element, Tensor};

use super::config::ModelConfig;
use super::StateVars;

pub const STATE_MAGIC: &[u8; 4] = b"LLVS";
pub const STATE_VERSION: u8 = 1;

/// `(hidden, cell)` per recurrent layer, each `[N, c, h, w]`. Empty for
/// models without recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<E: Element = f32> {
    layers: Vec<(Tensor<E>, Tensor<E>)>,
}

impl<E: Element> RecurrentState<E> {
    /// The all-zero start state for latents of `[n, _, h, w]`.
    pub fn zeros(config: &ModelConfig, n: usize, h: usize, w: usize) -> Self {
        let dims = [n, config.lstm_hidden, h, w];
        RecurrentState {
            layers: (0..config.lstm_layers)
                .map(|_| (Tensor::zeros(&dims), Tensor::zeros(&dims)))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[(Tensor<E>, Tensor<E>)] {
        &self.layers
    }

    pub(crate) fn bind<'t>(&self, tape: &'t Tape<E>) -> StateVars<'t, E> {
        self.layers
            .iter()
            .map(|(h, c)| (tape.constant(h.clone()), tape.constant(c.clone())))
            .collect()
    }

    pub(crate) fn from_vars(vars: &StateVars<'_, E>) -> Self {
        RecurrentState {
            layers: vars
                .iter()
                .map(|(h, c)| (h.value().clone(), c.value().clone()))
                .collect(),
        }
    }

    /// Checks the state fits a model running on `[n, _, h, w]` frames.
    pub fn check(&self, config: &ModelConfig, n: usize, h: usize, w: usize) -> Result<()> {
        let s = config.latent_downscale();
        let want = [n, config.lstm_hidden, h / s, w / s];
        if self.layers.len() != config.lstm_layers {
            return Err(Error::shape(format!(
                "state has {} layers, model has {}",
                self.layers.len(),
                config.lstm_layers
            )));
        }
        for (hid, cell) in &self.layers {
            if hid.dims() != want || cell.dims() != want {
                return Err(Error::shape(format!(
                    "state dims {:?} do not match {want:?} expected for {w}x{h} frames",
                    hid.dims()
                )));
            }
        }
        Ok(())
    }
}

impl RecurrentState<f32> {
    /// Magic `LLVS`, version byte, `u32` LE layer count, then hidden and
    /// cell of every layer as `LLVT` tensors.
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(STATE_MAGIC)?;
        w.write_all(&[STATE_VERSION])?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for (h, c) in &self.layers {
            io::write_tensor(w, h)?;
            io::write_tensor(w, c)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut head = [0u8; 9];
        r.read_exact(&mut head)?;
        if &head[..4] != STATE_MAGIC {
            return Err(invalid("missing LLVS magic"));
        }
        if head[4] != STATE_VERSION {
            return Err(invalid("unsupported state version"));
        }
        let n = u32::from_le_bytes([head[5], head[6], head[7], head[8]]) as usize;
        if n > 16 {
            return Err(invalid("implausible layer count"));
        }
        let layers = (0..n)
            .map(|_| Ok((io::read_tensor(r)?, io::read_tensor(r)?)))
            .collect::<std::io::Result<_>>()?;
        Ok(RecurrentState { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut &bytes[..]).map_err(|e| Error::format(path, e.to_string()))
    }
}
