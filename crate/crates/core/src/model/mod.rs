//! The denoising network: spatial encoder, ConvLSTM recurrence in the
//! latent space, mirrored decoder with additive skips, and a global
//! input-output residual feeding the output sigmoid.
//!
//! [`Model`] owns the parameters. [`Model::bind`] places them on a tape and
//! returns a [`Graph`] whose methods build the differentiable forward pass;
//! the tensor-level methods on [`Model`] run the same code on an inference
//! tape.

pub mod arch;
pub mod checkpoint;
pub mod config;
mod state;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat_channels, Tape, Var};
use crate::data::{self, VideoSequence};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub use arch::{Architecture, ConvLayer, LstmLayer};
pub use config::{Ablation, FlopConvention, ModelConfig};
pub use state::RecurrentState;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<E: Element = f32> {
    config: ModelConfig,
    arch: Architecture,
    params: BTreeMap<String, Tensor<E>>,
}

impl Model<f32> {
    /// Builds a model with deterministic Glorot-uniform weights, zero
    /// biases and forget-gate biases of one.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::from_config(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forget: BTreeMap<String, usize> = arch
            .lstm
            .iter()
            .map(|l| (format!("{}.bias", l.name), l.hidden))
            .collect();
        let mut params = BTreeMap::new();
        for (name, dims) in arch.parameter_shapes() {
            let t = if name.ends_with(".weight") {
                let rf: usize = dims[2..].iter().product();
                let fan = (dims[0] + dims[1]) * rf;
                let bound = (6.0 / fan as f64).sqrt() as f32;
                Tensor::from_fn(&dims, |_| (2.0 * rng.gen::<f32>() - 1.0) * bound)
            } else if let Some(&hidden) = forget.get(&name) {
                // gates are stacked [i, f, o, g]
                Tensor::from_fn(&dims, |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
            } else {
                Tensor::zeros(&dims)
            };
            params.insert(name, t);
        }
        Ok(Model {
            config,
            arch,
            params,
        })
    }
}

impl<E: Element> Model<E> {
    /// Assembles a model from named parameters, validating every shape
    /// against the configuration.
    pub fn from_parameters(config: ModelConfig, params: BTreeMap<String, Tensor<E>>) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::from_config(&config);
        let expected = arch.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::shape(format!(
                "configuration needs {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, dims) in &expected {
            match params.get(name) {
                None => return Err(Error::shape(format!("missing parameter {name}"))),
                Some(t) if t.dims() != dims.as_slice() => {
                    return Err(Error::shape(format!(
                        "parameter {name} has dims {:?}, configuration requires {dims:?}",
                        t.dims()
                    )))
                }
                _ => {}
            }
        }
        Ok(Model {
            config,
            arch,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &BTreeMap<String, Tensor<E>> {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replaces parameters by name; shapes must match.
    pub fn set_parameters(&mut self, updates: BTreeMap<String, Tensor<E>>) -> Result<()> {
        for (name, t) in updates {
            let slot = self
                .params
                .get_mut(&name)
                .ok_or_else(|| Error::shape(format!("unknown parameter {name}")))?;
            if slot.dims() != t.dims() {
                return Err(Error::shape(format!(
                    "parameter {name}: dims {:?} do not match {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn cast<F: Element>(&self) -> Model<F> {
        Model {
            config: self.config.clone(),
            arch: self.arch.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Places the parameters on `tape`, as gradient-receiving leaves when
    /// `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<E>, trainable: bool) -> Graph<'_, 't, E> {
        let params = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Graph {
            model: self,
            tape,
            params,
        }
    }

    /// Builds a graph over caller-supplied parameter values (the model's
    /// stored tensors are ignored). Every parameter must be present with
    /// its declared dims.
    pub fn graph_with<'t>(
        &self,
        tape: &'t Tape<E>,
        params: BTreeMap<String, Var<'t, E>>,
    ) -> Result<Graph<'_, 't, E>> {
        for (name, t) in &self.params {
            match params.get(name) {
                None => return Err(Error::Invalid(format!("missing parameter {name}"))),
                Some(v) if v.dims() != t.dims() => {
                    return Err(Error::shape(format!(
                        "parameter {name}: expected {:?}, got {:?}",
                        t.dims(),
                        v.dims()
                    )))
                }
                Some(_) => {}
            }
        }
        if params.len() != self.params.len() {
            return Err(Error::Invalid("unexpected extra parameters".into()));
        }
        Ok(Graph {
            model: self,
            tape,
            params,
        })
    }

    /// Encodes one `[N, C, H, W]` frame into the latent and the per-stage
    /// skip tensors.
    pub fn encode_frame(&self, frame: &Tensor<E>) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let tape = Tape::inference();
        let g = self.bind(&tape, false);
        let (latent, skips) = g.encode(&tape.constant(frame.clone()))?;
        Ok((
            latent.value().clone(),
            skips.iter().map(|s| s.value().clone()).collect(),
        ))
    }

    /// One step of the latent recurrence.
    pub fn recurrence_step(
        &self,
        latent: &Tensor<E>,
        state: &RecurrentState<E>,
    ) -> Result<(Tensor<E>, RecurrentState<E>)> {
        if self.config.lstm_layers == 0 {
            return Err(Error::config(
                "lstm_layers",
                "recurrence_step needs at least one LSTM layer",
            ));
        }
        let tape = Tape::inference();
        let g = self.bind(&tape, false);
        let state = state.bind(&tape);
        let (out, next) = g.recur(&tape.constant(latent.clone()), &state)?;
        Ok((out.value().clone(), RecurrentState::from_vars(&next)))
    }

    pub fn decode_frame(
        &self,
        out_latent: &Tensor<E>,
        skips: &[Tensor<E>],
        input_frame: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let tape = Tape::inference();
        let g = self.bind(&tape, false);
        let skips: Vec<Var<'_, E>> = skips.iter().map(|s| tape.constant(s.clone())).collect();
        let y = g.decode(
            &tape.constant(out_latent.clone()),
            &skips,
            &tape.constant(input_frame.clone()),
        )?;
        Ok(y.value().clone())
    }

    /// Denoises `[N, C, H, W]` frames in order, threading the recurrent
    /// state. A missing state starts from zeros.
    pub fn denoise_frames(
        &self,
        frames: &[Tensor<E>],
        state: Option<RecurrentState<E>>,
    ) -> Result<(Vec<Tensor<E>>, RecurrentState<E>)> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Invalid("cannot denoise an empty sequence".into()))?;
        let [n, _, h, w] = first.dims4()?;
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != first.dims() {
                return Err(Error::shape(format!(
                    "frame {i} has dims {:?}, frame 0 has {:?}",
                    f.dims(),
                    first.dims()
                )));
            }
        }
        let tape = Tape::inference();
        let g = self.bind(&tape, false);
        let mut state = match state {
            Some(s) => {
                s.check(&self.config, n, h, w)?;
                s.bind(&tape)
            }
            None => g.zero_state(n, h, w)?,
        };
        let mut outputs = Vec::with_capacity(frames.len());
        for f in frames {
            let (y, next) = g.step(&tape.constant(f.clone()), &state)?;
            outputs.push(y.value().clone());
            state = next;
        }
        Ok((outputs, RecurrentState::from_vars(&state)))
    }
}

impl Model<f32> {
    /// Denoises a stored sequence (packing Bayer mosaics at the boundary)
    /// and returns the state after the last frame for streaming
    /// continuation.
    pub fn denoise_sequence(
        &self,
        seq: &VideoSequence,
        state: Option<RecurrentState>,
    ) -> Result<(VideoSequence, RecurrentState)> {
        if seq.layout().network_channels() != self.config.in_channels {
            return Err(Error::shape(format!(
                "{} sequences need a model with {} input channels, model has {}",
                seq.layout(),
                seq.layout().network_channels(),
                self.config.in_channels
            )));
        }
        let inputs = seq
            .frames()
            .iter()
            .map(|f| Ok(pad_replicate(&data::to_network(f, seq.layout())?, self.config.size_multiple())))
            .collect::<Result<Vec<_>>>()?;
        let (outputs, state) = self.denoise_frames(&inputs, state)?;
        let (_, h, w) = seq.frame_dims();
        let (h, w) = match seq.layout() {
            data::Layout::Rgb => (h, w),
            data::Layout::BayerRggb => (h / 2, w / 2),
        };
        let frames = outputs
            .iter()
            .map(|o| data::from_network(&crop(o, h, w), seq.layout()))
            .collect::<Result<Vec<_>>>()?;
        let mut out = seq.replace_frames(frames)?;
        out.meta.sigma = None;
        Ok((out, state))
    }
}

/// Extends `[N, C, H, W]` by repeating the last row and column until both
/// extents are multiples of `m`.
fn pad_replicate<E: Element>(x: &Tensor<E>, m: usize) -> Tensor<E> {
    let d = x.dims();
    let (h, w) = (d[2], d[3]);
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let src = x.data();
    Tensor::from_fn(&[d[0], d[1], ph, pw], |i| {
        let (plane, r, c) = (i / (ph * pw), i / pw % ph, i % pw);
        src[plane * h * w + r.min(h - 1) * w + c.min(w - 1)]
    })
}

fn crop<E: Element>(x: &Tensor<E>, h: usize, w: usize) -> Tensor<E> {
    let d = x.dims();
    let (ph, pw) = (d[2], d[3]);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let src = x.data();
    Tensor::from_fn(&[d[0], d[1], h, w], |i| {
        let (plane, r, c) = (i / (h * w), i / w % h, i % w);
        src[plane * ph * pw + r * pw + c]
    })
}

/// Per-layer `(hidden, cell)` pairs on a tape.
pub type StateVars<'t, E> = Vec<(Var<'t, E>, Var<'t, E>)>;

/// A model's parameters bound to a tape.
pub struct Graph<'m, 't, E: Element> {
    model: &'m Model<E>,
    tape: &'t Tape<E>,
    params: BTreeMap<String, Var<'t, E>>,
}

impl<'m, 't, E: Element> Graph<'m, 't, E> {
    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    /// The bound parameter leaves, keyed like [`Model::parameters`].
    pub fn parameters(&self) -> &BTreeMap<String, Var<'t, E>> {
        &self.params
    }

    fn param(&self, name: &str) -> &Var<'t, E> {
        &self.params[name]
    }

    fn conv(&self, layer: &ConvLayer, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let w = self.param(&format!("{}.weight", layer.name));
        let b = self.param(&format!("{}.bias", layer.name));
        let y = if layer.transpose {
            x.conv2d_transpose(w, Some(b), layer.stride, layer.padding(), layer.stride - 1)?
        } else {
            x.conv2d(w, Some(b), layer.stride, layer.padding())?
        };
        Ok(if layer.relu { y.relu() } else { y })
    }

    /// All-zero state for frames of `[n, _, h, w]`.
    pub fn zero_state(&self, n: usize, h: usize, w: usize) -> Result<StateVars<'t, E>> {
        let cfg = &self.model.config;
        cfg.check_frame_dims(h, w)?;
        let s = cfg.latent_downscale();
        Ok(RecurrentState::<E>::zeros(cfg, n, h / s, w / s).bind(self.tape))
    }

    pub fn encode(&self, frame: &Var<'t, E>) -> Result<(Var<'t, E>, Vec<Var<'t, E>>)> {
        let cfg = &self.model.config;
        let [_, c, h, w] = frame.value().dims4()?;
        if c != cfg.in_channels {
            return Err(Error::shape(format!(
                "frame has {c} channels, model expects {}",
                cfg.in_channels
            )));
        }
        cfg.check_frame_dims(h, w)?;
        let mut x = if cfg.shuffle_factor > 1 {
            frame.pixel_unshuffle(cfg.shuffle_factor)?
        } else {
            frame.clone()
        };
        let arch = &self.model.arch;
        let mut skips = Vec::with_capacity(arch.encoder.len());
        for stage in &arch.encoder {
            for layer in stage {
                x = self.conv(layer, &x)?;
            }
            skips.push(x.clone());
        }
        if let Some(p) = &arch.proj_in {
            x = self.conv(p, &x)?;
        }
        Ok((x, skips))
    }

    /// Stacked ConvLSTM layers: gates from the concatenated input and
    /// previous hidden, `c' = f*c + i*g`, `h' = o*tanh(c')`.
    pub fn recur(
        &self,
        latent: &Var<'t, E>,
        state: &StateVars<'t, E>,
    ) -> Result<(Var<'t, E>, StateVars<'t, E>)> {
        let layers = &self.model.arch.lstm;
        if layers.is_empty() {
            return Err(Error::config("lstm_layers", "no recurrent layers configured"));
        }
        if state.len() != layers.len() {
            return Err(Error::shape(format!(
                "state has {} layers, model has {}",
                state.len(),
                layers.len()
            )));
        }
        let mut x = latent.clone();
        let mut next = Vec::with_capacity(layers.len());
        for (layer, (hidden, cell)) in layers.iter().zip(state) {
            if hidden.dims()[2..] != x.dims()[2..] || hidden.dims()[0] != x.dims()[0] {
                return Err(Error::shape(format!(
                    "state dims {:?} do not match latent {:?}",
                    hidden.dims(),
                    x.dims()
                )));
            }
            let hc = layer.hidden;
            let z = concat_channels(&[&x, hidden])?.conv2d(
                self.param(&format!("{}.weight", layer.name)),
                Some(self.param(&format!("{}.bias", layer.name))),
                1,
                layer.kernel / 2,
            )?;
            let i = z.narrow_channels(0, hc)?.sigmoid();
            let f = z.narrow_channels(hc, hc)?.sigmoid();
            let o = z.narrow_channels(2 * hc, hc)?.sigmoid();
            let g = z.narrow_channels(3 * hc, hc)?.tanh();
            let c_next = f.mul(cell)?.add(&i.mul(&g)?)?;
            let h_next = o.mul(&c_next.tanh())?;
            x = h_next.clone();
            next.push((h_next, c_next));
        }
        Ok((x, next))
    }

    pub fn decode(
        &self,
        out_latent: &Var<'t, E>,
        skips: &[Var<'t, E>],
        input_frame: &Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        let cfg = &self.model.config;
        let arch = &self.model.arch;
        if skips.len() != arch.encoder.len() {
            return Err(Error::shape(format!(
                "decoder needs {} skip tensors, got {}",
                arch.encoder.len(),
                skips.len()
            )));
        }
        let mut x = out_latent.clone();
        for (stage, skip) in arch.decoder.iter().zip(skips.iter().rev()) {
            if skip.dims() != x.dims() {
                return Err(Error::shape(format!(
                    "skip dims {:?} do not match decoder input {:?}",
                    skip.dims(),
                    x.dims()
                )));
            }
            x = x.add(skip)?;
            for layer in stage {
                x = self.conv(layer, &x)?;
            }
        }
        if let Some(p) = &arch.proj_out {
            x = self.conv(p, &x)?;
        }
        if cfg.shuffle_factor > 1 {
            x = x.pixel_shuffle(cfg.shuffle_factor)?;
        }
        let residual = self.conv(&arch.residual, input_frame)?;
        if residual.dims() != x.dims() {
            return Err(Error::shape(format!(
                "decoder output {:?} does not match input frame {:?}",
                x.dims(),
                input_frame.dims()
            )));
        }
        Ok(x.add(&residual)?.sigmoid())
    }

    /// Full per-frame pass. With no recurrent layers the latent bypasses
    /// the recurrence and the state stays empty.
    pub fn step(
        &self,
        frame: &Var<'t, E>,
        state: &StateVars<'t, E>,
    ) -> Result<(Var<'t, E>, StateVars<'t, E>)> {
        let (latent, skips) = self.encode(frame)?;
        let (out, next) = if self.model.arch.lstm.is_empty() {
            (latent, Vec::new())
        } else {
            self.recur(&latent, state)?
        };
        Ok((self.decode(&out, &skips, frame)?, next))
    }

    /// Runs a whole sequence from a zero state, keeping every frame on the
    /// tape (full backpropagation through time).
    pub fn forward_sequence(&self, frames: &[Var<'t, E>]) -> Result<Vec<Var<'t, E>>> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Invalid("cannot run an empty sequence".into()))?;
        let [n, _, h, w] = first.value().dims4()?;
        let mut state = self.zero_state(n, h, w)?;
        let mut outs = Vec::with_capacity(frames.len());
        for f in frames {
            if f.dims() != first.dims() {
                return Err(Error::shape(format!(
                    "frame dims {:?} differ from {:?}",
                    f.dims(),
                    first.dims()
                )));
            }
            let (y, next) = self.step(f, &state)?;
            outs.push(y);
            state = next;
        }
        Ok(outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(shuffle: usize) -> ModelConfig {
        ModelConfig {
            shuffle_factor: shuffle,
            ..ModelConfig::llvd_l(3).with_widths([4, 6, 8])
        }
    }

    fn frame(seed: u64, dims: &[usize]) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(dims, |_| rng.gen::<f32>())
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        let a = Model::build(ModelConfig::llvd_l(3), 7).unwrap();
        let b = Model::build(ModelConfig::llvd_l(3), 7).unwrap();
        let c = Model::build(ModelConfig::llvd_l(3), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.parameters(), c.parameters());
        assert_eq!(a.parameter_count(), c.parameter_count());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = Model::build(tiny(1), 0).unwrap();
        let b = &m.parameters()["lstm0.bias"];
        let h = 8;
        assert!(b.data()[..h].iter().all(|&v| v == 0.0));
        assert!(b.data()[h..2 * h].iter().all(|&v| v == 1.0));
        assert!(b.data()[2 * h..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_dims_follow_downscale() {
        let x = frame(1, &[1, 3, 32, 32]);
        let (l, skips) = Model::build(tiny(1), 0).unwrap().encode_frame(&x).unwrap();
        assert_eq!(l.dims(), &[1, 8, 8, 8]);
        assert_eq!(skips.len(), 3);
        let (l, _) = Model::build(tiny(2), 0).unwrap().encode_frame(&x).unwrap();
        assert_eq!(l.dims(), &[1, 8, 4, 4]);
        let err = Model::build(tiny(2), 0)
            .unwrap()
            .encode_frame(&frame(1, &[1, 3, 36, 32]))
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn zero_parameters_give_zero_recurrence_output() {
        let mut m = Model::build(tiny(1), 0).unwrap();
        let zeros = m
            .parameters()
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims())))
            .collect();
        m.set_parameters(zeros).unwrap();
        let latent = frame(3, &[1, 8, 4, 4]);
        let state = RecurrentState::zeros(m.config(), 1, 4, 4);
        let (out, next) = m.recurrence_step(&latent, &state).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(next.layers().iter().all(|(h, c)| h.data().iter().all(|&v| v == 0.0)
            && c.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn recurrence_step_rejects_zero_layers() {
        let cfg = ModelConfig {
            lstm_layers: 0,
            ..tiny(1)
        };
        let m = Model::build(cfg, 0).unwrap();
        let state = RecurrentState::zeros(m.config(), 1, 4, 4);
        assert!(matches!(
            m.recurrence_step(&frame(0, &[1, 8, 4, 4]), &state),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn output_in_open_unit_interval_with_input_dims() {
        for shuffle in [1, 2] {
            let m = Model::build(tiny(shuffle), 5).unwrap();
            let x = frame(9, &[1, 3, 16, 16]).map(|v| 40.0 * (v - 0.5));
            let (ys, _) = m.denoise_frames(std::slice::from_ref(&x), None).unwrap();
            assert_eq!(ys[0].dims(), x.dims());
            assert!(ys[0].data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn decoder_rejects_mismatched_skips() {
        let m = Model::build(tiny(1), 0).unwrap();
        let x = frame(1, &[1, 3, 16, 16]);
        let (l, mut skips) = m.encode_frame(&x).unwrap();
        skips.swap(0, 1);
        assert!(matches!(m.decode_frame(&l, &skips, &x), Err(Error::Shape(_))));
        assert!(m.decode_frame(&l, &skips[..2], &x).is_err());
    }

    #[test]
    fn mixed_frame_dims_rejected() {
        let m = Model::build(tiny(1), 0).unwrap();
        let a = frame(1, &[1, 3, 16, 16]);
        let b = frame(1, &[1, 3, 16, 32]);
        assert!(m.denoise_frames(&[a, b], None).is_err());
        assert!(m.denoise_frames(&[], None).is_err());
    }

    #[test]
    fn parameter_shapes_validated_on_assembly() {
        let m = Model::build(tiny(1), 0).unwrap();
        let mut params = m.parameters().clone();
        Model::from_parameters(m.config().clone(), params.clone()).unwrap();
        params.insert("residual.bias".into(), Tensor::zeros(&[4]));
        assert!(Model::from_parameters(m.config().clone(), params.clone()).is_err());
        params.remove("residual.bias");
        assert!(Model::from_parameters(m.config().clone(), params).is_err());
    }

    #[test]
    fn indivisible_sequences_are_padded_and_cropped() {
        let m = Model::build(ModelConfig::llvd_s(3).with_widths([4, 4, 8]), 0).unwrap();
        let f = Tensor::from_fn(&[3, 10, 14], |i| (i % 7) as f32 / 7.0);
        let seq = VideoSequence::new(vec![f.clone(), f], data::Layout::Rgb).unwrap();
        let (out, state) = m.denoise_sequence(&seq, None).unwrap();
        assert_eq!(out.frame_dims(), (3, 10, 14));
        state.check(m.config(), 1, 16, 16).unwrap();
        let x = Tensor::from_fn(&[1, 1, 2, 3], |i| i as f32);
        let p = pad_replicate(&x, 4);
        assert_eq!(p.data(), &[0., 1., 2., 2., 3., 4., 5., 5., 3., 4., 5., 5., 3., 4., 5., 5.]);
        assert_eq!(crop(&p, 2, 3), x);
    }
}
