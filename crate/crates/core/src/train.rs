//! Adam training of the composite loss with full backpropagation through
//! time.
//!
//! Every training sample is synthesised from its own random stream keyed by
//! `(seed, step, batch slot)`, so batches do not depend on the order in
//! which they are generated.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::autodiff::Tape;
use crate::data::{self, Layout, VideoSequence};
use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};
use crate::metrics::{self, LossWeights, SsimParams};
use crate::model::checkpoint::save_checkpoint;
use crate::model::{Model, ModelConfig};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<E: Element = f32> {
    pub m: BTreeMap<String, Tensor<E>>,
    pub v: BTreeMap<String, Tensor<E>>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<E: Element> OptimizerState<E> {
    pub fn new(params: &BTreeMap<String, Tensor<E>>, config: AdamConfig) -> Self {
        let zeros: BTreeMap<_, _> = params
            .iter()
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.dims())))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<E: Element>(
    params: &mut BTreeMap<String, Tensor<E>>,
    grads: &BTreeMap<String, Tensor<E>>,
    state: &mut OptimizerState<E>,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no gradient for parameter {name}")))?;
        p.expect_same_dims(g)?;
        if !state.m.contains_key(name) {
            return Err(Error::Invalid(format!("optimizer has no moments for {name}")));
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked");
        let v = state.v.get_mut(name).expect("checked");
        let mut md = m.data().to_vec();
        let mut vd = v.data().to_vec();
        let mut pd = p.data().to_vec();
        for i in 0..pd.len() {
            let gi = g[i].as_f64();
            let mi = beta1 * md[i].as_f64() + (1.0 - beta1) * gi;
            let vi = beta2 * vd[i].as_f64() + (1.0 - beta2) * gi * gi;
            md[i] = E::of(mi);
            vd[i] = E::of(vi);
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            pd[i] = E::of(pd[i].as_f64() - step);
        }
        *m = Tensor::from_vec(m.dims(), md)?;
        *v = Tensor::from_vec(v.dims(), vd)?;
        *p = Tensor::from_vec(p.dims(), pd)?;
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<E: Element>(grads: &mut BTreeMap<String, Tensor<E>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.map(|v| E::of(v.as_f64() * s));
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub sequence_length: usize,
    /// Noise levels (0-255 scale); each training sequence draws one
    /// uniformly from this list.
    pub sigma_range: Vec<f64>,
    pub steps: u64,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub loss_weights: LossWeights,
    /// Side of the square training crop.
    pub crop_size: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 4,
            sequence_length: 25,
            sigma_range: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            steps: 10_000,
            seed: 0,
            checkpoint_every: 1000,
            loss_weights: LossWeights::default(),
            crop_size: 128,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.sequence_length == 0 {
            return Err(Error::config("sequence_length", "must be at least 1"));
        }
        if self.sigma_range.is_empty() || self.sigma_range.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config(
                "sigma_range",
                "needs at least one finite non-negative noise level",
            ));
        }
        if self.crop_size == 0 {
            return Err(Error::config("crop_size", "must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm", "must be positive (0 disables)"));
            }
        }
        self.loss_weights.validate()
    }

    /// Consumes the training keys; absent keys keep their defaults.
    /// `clip_norm = 0` disables clipping.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let clip: f64 = kv.take("clip_norm")?.unwrap_or(d.clip_norm.unwrap_or(0.0));
        let cfg = TrainConfig {
            learning_rate: kv.take("learning_rate")?.unwrap_or(d.learning_rate),
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            sequence_length: kv.take("sequence_length")?.unwrap_or(d.sequence_length),
            sigma_range: kv.take_list("sigma_range")?.unwrap_or(d.sigma_range),
            steps: kv.take("steps")?.unwrap_or(d.steps),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            checkpoint_every: kv.take("checkpoint_every")?.unwrap_or(d.checkpoint_every),
            loss_weights: LossWeights {
                lambda1: kv.take("lambda1")?.unwrap_or(d.loss_weights.lambda1),
                lambda2: kv.take("lambda2")?.unwrap_or(d.loss_weights.lambda2),
            },
            crop_size: kv.take("crop_size")?.unwrap_or(d.crop_size),
            clip_norm: (clip != 0.0).then_some(clip),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let sigmas: Vec<String> = self.sigma_range.iter().map(f64::to_string).collect();
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("sequence_length", self.sequence_length.to_string()),
            ("sigma_range", sigmas.join(",")),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("lambda1", self.loss_weights.lambda1.to_string()),
            ("lambda2", self.loss_weights.lambda2.to_string()),
            ("crop_size", self.crop_size.to_string()),
            ("clip_norm", self.clip_norm.unwrap_or(0.0).to_string()),
        ]
    }
}

/// A training config file: model keys and training keys in one flat
/// key=value file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrainSetup {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let train = TrainConfig::from_kv(&mut kv)?;
        let model = ModelConfig::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(TrainSetup { model, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_kv_string(&self) -> String {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.train.to_pairs());
        kv::render(&pairs)
    }
}

/// Network-space frames of one training batch, `[B, C, H, W]` per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub noisy: Vec<Tensor<f32>>,
    pub clean: Vec<Tensor<f32>>,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

pub struct Trainer {
    model: Model,
    config: TrainConfig,
    optimizer: OptimizerState,
    ssim: SsimParams,
    step: u64,
}

/// Stream offset separating training-sample streams from the others.
const SAMPLE_STREAM_BASE: u64 = 1 << 32;

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(model.parameters(), AdamConfig::default());
        Ok(Trainer {
            model,
            config,
            optimizer,
            ssim: SsimParams::default(),
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Largest crop that fits every sequence and respects the model's size
    /// multiple (and the Bayer phase, whose packing halves the extents).
    pub fn effective_crop(&self, data: &[VideoSequence]) -> Result<usize> {
        let first = data
            .first()
            .ok_or_else(|| Error::Invalid("training needs at least one sequence".into()))?;
        let layout = first.layout();
        let mut crop = self.config.crop_size;
        for s in data {
            if s.layout() != layout {
                return Err(Error::Invalid("training sequences mix layouts".into()));
            }
            let (_, h, w) = s.frame_dims();
            crop = crop.min(h).min(w);
        }
        let unit = match layout {
            Layout::Rgb => self.model.config().size_multiple(),
            Layout::BayerRggb => 2 * self.model.config().size_multiple(),
        };
        let crop = crop / unit * unit;
        if crop == 0 {
            return Err(Error::Invalid(format!(
                "frames are smaller than the minimum crop of {unit} pixels"
            )));
        }
        Ok(crop)
    }

    /// Synthesises the batch for `step`: for each slot a random sequence, a
    /// random temporal window (mirror-extended when the clip is short), one
    /// shared random crop, and AWGN at a randomly drawn level.
    pub fn sample_batch(&self, data: &[VideoSequence], step: u64) -> Result<Batch> {
        let crop = self.effective_crop(data)?;
        let layout = data[0].layout();
        if layout.network_channels() != self.model.config().in_channels {
            return Err(Error::shape(format!(
                "{layout} data needs a model with {} input channels, model has {}",
                layout.network_channels(),
                self.model.config().in_channels
            )));
        }
        let t_len = self.config.sequence_length;
        let b_len = self.config.batch_size;
        let mut noisy: Vec<Vec<f32>> = vec![Vec::new(); t_len];
        let mut clean: Vec<Vec<f32>> = vec![Vec::new(); t_len];
        let mut frame_dims = Vec::new();
        for b in 0..b_len {
            let slot = step * b_len as u64 + b as u64;
            let mut rng = data::stream_rng(self.config.seed, SAMPLE_STREAM_BASE + slot);
            let seq = &data[rng.gen_range(0..data.len())];
            let sigma = self.config.sigma_range[rng.gen_range(0..self.config.sigma_range.len())];
            let crop_seed: u64 = rng.gen();
            let noise_seed: u64 = rng.gen();
            let window = if seq.len() >= t_len {
                let start = rng.gen_range(0..=seq.len() - t_len);
                seq.replace_frames(seq.frames()[start..start + t_len].to_vec())?
            } else {
                data::mirror_extend(seq, t_len)?
            };
            let cropped = data::random_crop(&window, crop, layout == Layout::BayerRggb, crop_seed)?;
            let corrupted = data::add_awgn(&cropped, sigma, noise_seed)?;
            for t in 0..t_len {
                let x = data::to_network(&corrupted.frames()[t], layout)?;
                let y = data::to_network(&cropped.frames()[t], layout)?;
                frame_dims = x.dims()[1..].to_vec();
                noisy[t].extend_from_slice(x.data());
                clean[t].extend_from_slice(y.data());
            }
        }
        let mut dims = vec![b_len];
        dims.extend_from_slice(&frame_dims);
        let pack = |v: Vec<Vec<f32>>| -> Result<Vec<Tensor<f32>>> {
            v.into_iter().map(|d| Tensor::from_vec(&dims, d)).collect()
        };
        Ok(Batch {
            noisy: pack(noisy)?,
            clean: pack(clean)?,
        })
    }

    /// Loss and parameter gradients of one batch.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        let tape = Tape::new();
        let graph = self.model.bind(&tape, true);
        let noisy: Vec<_> = batch.noisy.iter().map(|t| tape.constant(t.clone())).collect();
        let clean: Vec<_> = batch.clean.iter().map(|t| tape.constant(t.clone())).collect();
        let outputs = graph.forward_sequence(&noisy)?;
        let loss = metrics::composite_loss(&outputs, &clean, &self.config.loss_weights, &self.ssim)?;
        let value = loss.value().data()[0] as f64;
        let grads = tape.backward(&loss)?;
        let grads = graph
            .parameters()
            .iter()
            .map(|(k, v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.dims()));
                (k.clone(), g)
            })
            .collect();
        Ok((value, grads))
    }

    /// One optimisation step on `batch`. Nothing is updated when the loss
    /// or a gradient is not finite.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let start = Instant::now();
        let (loss, mut grads) = self.loss_and_grads(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss} at step {}", self.step + 1)));
        }
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at step {}",
                self.step + 1
            )));
        }
        let grad_norm = match self.config.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => clip_global_norm(&mut grads, f64::INFINITY),
        };
        let mut params = self.model.parameters().clone();
        adam_step(&mut params, &grads, &mut self.optimizer, self.config.learning_rate)?;
        self.model.set_parameters(params)?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs the remaining configured steps, handing each record to
    /// `on_step`.
    pub fn run(
        &mut self,
        data: &[VideoSequence],
        mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.config.steps {
            let batch = self.sample_batch(data, self.step)?;
            let record = self.train_step(&batch)?;
            on_step(self, &record)?;
        }
        Ok(())
    }
}

/// Log path written next to a checkpoint.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".log");
    PathBuf::from(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub log: PathBuf,
}

/// Trains `model` on `data`, appending `step loss wall_ms` lines to the log
/// next to `checkpoint` and writing the checkpoint at the configured
/// cadence and at the end. The initial parameters are written before the
/// first step, so an aborted run always leaves the last good checkpoint.
pub fn train(
    model: Model,
    config: TrainConfig,
    data: &[VideoSequence],
    checkpoint: &Path,
) -> Result<(Model, TrainSummary)> {
    let mut trainer = Trainer::new(model, config)?;
    let log = log_path(checkpoint);
    let mut file: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(|e| Error::io(&log, e))?;
    save_checkpoint(checkpoint, trainer.model())?;
    let (mut first, mut last) = (None, None);
    let every = trainer.config().checkpoint_every;
    trainer.run(data, |t, r| {
        writeln!(file, "{} {:.8} {:.1}", r.step, r.loss, r.wall_ms).map_err(|e| Error::io(&log, e))?;
        first.get_or_insert(r.loss);
        last = Some(r.loss);
        if every > 0 && r.step % every == 0 {
            save_checkpoint(checkpoint, t.model())?;
        }
        Ok(())
    })?;
    save_checkpoint(checkpoint, trainer.model())?;
    let summary = TrainSummary {
        steps: trainer.step(),
        initial_loss: first,
        final_loss: last,
        log,
    };
    Ok((trainer.into_model(), summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::checkpoint::load_checkpoint;

    fn scalar_params(v: f32) -> BTreeMap<String, Tensor<f32>> {
        BTreeMap::from([("p".to_string(), Tensor::from_vec(&[1], vec![v]).unwrap())])
    }

    #[test]
    fn adam_zero_gradients_leave_parameters() {
        let mut p = scalar_params(1.5);
        let g = scalar_params(0.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p["p"].data(), &[1.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(0.5);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!((p["p"].data()[0] as f64 - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_missing_gradient_is_named() {
        let mut p = scalar_params(1.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &BTreeMap::new(), &mut s, 0.1).unwrap_err();
        assert!(err.to_string().contains('p'));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = scalar_params(0.3);
            let mut s = OptimizerState::new(&p, AdamConfig::default());
            for i in 0..100 {
                let g = scalar_params(((i * 37) % 11) as f32 / 5.0 - 1.0);
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            p["p"].data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_scales_to_the_limit() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Tensor::from_vec(&[1], vec![3.0f32]).unwrap()),
            ("b".to_string(), Tensor::from_vec(&[1], vec![4.0f32]).unwrap()),
        ]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-6);
        assert!((clip_global_norm(&mut g, 10.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_file_round_trip_and_defaults() {
        let d = TrainConfig::default();
        assert_eq!((d.learning_rate, d.batch_size, d.sequence_length), (1e-4, 4, 25));
        let setup = TrainSetup::parse("stage_widths = 8,16,32\nshuffle_factor = 2\nsteps = 5\nclip_norm = 0\n").unwrap();
        assert_eq!(setup.train.clip_norm, None);
        assert_eq!(setup.model.stage_widths, [8, 16, 32]);
        assert_eq!(TrainSetup::parse(&setup.to_kv_string()).unwrap(), setup);
        assert!(TrainSetup::parse("learning_rate = 0").is_err());
        assert!(TrainSetup::parse("batch_size = 0").is_err());
        assert!(TrainSetup::parse("lerning_rate = 1").is_err());
    }

    fn clip(frames: usize, size: usize) -> VideoSequence {
        let f = (0..frames)
            .map(|t| Tensor::from_fn(&[3, size, size], |i| ((i * 7 + t * 3) % 23) as f32 / 22.0))
            .collect();
        VideoSequence::new(f, Layout::Rgb).unwrap()
    }

    fn tiny_trainer(steps: u64) -> Trainer {
        let model = Model::build(ModelConfig::llvd_s(3).with_widths([4, 4, 8]), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            sequence_length: 3,
            crop_size: 16,
            steps,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        Trainer::new(model, cfg).unwrap()
    }

    #[test]
    fn batches_are_order_independent_and_shaped() {
        let data = [clip(5, 24), clip(2, 20)];
        let t = tiny_trainer(1);
        let b3 = t.sample_batch(&data, 3).unwrap();
        let _ = t.sample_batch(&data, 0).unwrap();
        assert_eq!(t.sample_batch(&data, 3).unwrap(), b3);
        assert_ne!(t.sample_batch(&data, 4).unwrap(), b3);
        assert_eq!(b3.noisy.len(), 3);
        assert_eq!(b3.noisy[0].dims(), &[2, 3, 16, 16]);
        assert_eq!(t.effective_crop(&data).unwrap(), 16);
    }

    #[test]
    fn every_parameter_moves_after_one_step() {
        let data = [clip(4, 16)];
        let mut t = tiny_trainer(1);
        let before = t.model().parameters().clone();
        let batch = t.sample_batch(&data, 0).unwrap();
        let r = t.train_step(&batch).unwrap();
        assert!(r.loss.is_finite() && r.grad_norm > 0.0);
        for (name, p) in t.model().parameters() {
            assert_ne!(p, &before[name], "{name} did not change");
        }
    }

    #[test]
    fn zero_steps_checkpoint_is_initialisation_and_log_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("m.llvc");
        let data = [clip(4, 16)];
        let t = tiny_trainer(0);
        let init = t.model().clone();
        let (_, s) = train(init.clone(), t.config().clone(), &data, &ck).unwrap();
        assert_eq!(s.steps, 0);
        assert_eq!(load_checkpoint(&ck).unwrap(), init);

        let ck2 = dir.path().join("n.llvc");
        let (m, s) = train(init, TrainConfig { steps: 2, checkpoint_every: 1, ..t.config().clone() }, &data, &ck2).unwrap();
        let log = std::fs::read_to_string(&s.log).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split_whitespace().count(), 3);
        assert!(lines[0].starts_with("1 "));
        assert_eq!(load_checkpoint(&ck2).unwrap(), m);
    }

    #[test]
    fn non_finite_loss_aborts_without_updating() {
        let data = [clip(4, 16)];
        let mut t = tiny_trainer(1);
        let mut batch = t.sample_batch(&data, 0).unwrap();
        batch.clean[1] = batch.clean[1].map(|_| f32::NAN);
        let before = t.model().clone();
        assert!(matches!(t.train_step(&batch), Err(Error::NonFinite(_))));
        assert_eq!(t.model(), &before);
        assert_eq!(t.step(), 0);
    }
}
