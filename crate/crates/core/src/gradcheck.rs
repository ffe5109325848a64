//! Central finite-difference verification of reverse-mode gradients, run
//! in 64-bit.
//!
//! A checked function maps input tensors to one or more outputs. Outputs
//! are reduced to a scalar by a fixed random projection `sum(y * r)`, so
//! every output element contributes. For each checked coordinate the error
//! is `|analytic - numeric| / max(|analytic|, |numeric|, floor)` where the
//! floor is `1e-3` times the largest analytic gradient of that input (and
//! at least `1e-8`); this keeps coordinates whose true gradient is
//! essentially zero from dominating through cancellation noise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat_channels, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{self, LossWeights, SsimParams};
use crate::model::{Model, ModelConfig, RecurrentState};
use crate::tensor::Tensor;

/// Tolerance for single operations.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Tolerance for composite functions such as a full model pass.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl CheckOptions {
    pub fn primitive(seed: u64) -> Self {
        CheckOptions {
            eps: 1e-5,
            tolerance: PRIMITIVE_TOLERANCE,
            max_coords: None,
            seed,
        }
    }

    pub fn composite(seed: u64) -> Self {
        CheckOptions {
            eps: 1e-5,
            tolerance: COMPOSITE_TOLERANCE,
            max_coords: Some(48),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub coords: usize,
    /// Coordinates skipped because `x +- eps` lie on different pieces of a
    /// ReLU or abs.
    pub straddled: usize,
    pub tolerance: f64,
}

/// Largest fraction of coordinates that may be skipped at kinks.
pub const MAX_STRADDLED_FRACTION: f64 = 0.05;

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.coords > 0
            && self.max_rel_error < self.tolerance
            && (self.straddled as f64) <= MAX_STRADDLED_FRACTION * (self.coords + self.straddled) as f64
    }
}

fn projections(outputs: &[Var<'_, f64>], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_c0ffee);
    outputs
        .iter()
        .map(|y| Tensor::from_fn(y.dims(), |_| rng.gen_range(-1.0..1.0)))
        .collect()
}

fn scalarize<'t>(outputs: &[Var<'t, f64>], r: &[Tensor<f64>]) -> Result<Var<'t, f64>> {
    let mut acc: Option<Var<'t, f64>> = None;
    for (y, r) in outputs.iter().zip(r) {
        if y.dims() != r.dims() {
            return Err(Error::shape(format!(
                "gradcheck: output dims changed from {:?} to {:?}",
                r.dims(),
                y.dims()
            )));
        }
        let term = y.mul(&y.tape().constant(r.clone()))?.sum();
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    acc.ok_or_else(|| Error::Invalid("gradcheck: function produced no outputs".into()))
}

/// Scalarized value and the branch signature of the piecewise ops.
fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], r: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Vec<Var<'t, f64>>>,
{
    let tape = Tape::inference();
    tape.track_branches();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let outs = f(&tape, &vars)?;
    let v = scalarize(&outs, r)?.value().data()[0];
    Ok((v, tape.branch_signature().unwrap_or(0)))
}

/// Compares the tape's gradients of `f` with central differences. `f`
/// builds its outputs from the inputs on the given tape.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    opts: &CheckOptions,
    f: F,
) -> Result<CheckOutcome>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Vec<Var<'t, f64>>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let outs = f(&tape, &vars)?;
    let r = projections(&outs, opts.seed);
    let loss = scalarize(&outs, &r)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.dims())))
        .collect();

    let (_, base_sig) = evaluate(&f, inputs, &r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut straddled = 0;
    let mut perturbed = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let picks: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => (0..m).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let a = analytic[i].data();
        let floor = (1e-3 * a.iter().fold(0.0f64, |m, v| m.max(v.abs()))).max(1e-8);
        for j in picks {
            let mut data = input.data().to_vec();
            data[j] = input.data()[j] + opts.eps;
            perturbed[i] = Tensor::from_vec(input.dims(), data.clone())?;
            let (up, sig_up) = evaluate(&f, &perturbed, &r)?;
            data[j] = input.data()[j] - opts.eps;
            perturbed[i] = Tensor::from_vec(input.dims(), data)?;
            let (down, sig_down) = evaluate(&f, &perturbed, &r)?;
            if sig_up != base_sig || sig_down != base_sig {
                // the difference quotient straddles a kink
                straddled += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.eps);
            let err = (a[j] - numeric).abs() / a[j].abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
            coords += 1;
        }
        perturbed[i] = input.clone();
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        max_rel_error: worst,
        coords,
        straddled,
        tolerance: opts.tolerance,
    })
}

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so kinked ops are not probed at the kink.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn positive(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(0.5..1.5))
}

fn shape4(rng: &mut ChaCha8Rng, multiple: usize, min: usize) -> [usize; 4] {
    let lo = min.div_ceil(multiple).max(1);
    let ext = |rng: &mut ChaCha8Rng| multiple * rng.gen_range(lo..=lo + 2);
    [rng.gen_range(1..=2), rng.gen_range(1..=3), ext(rng), ext(rng)]
}

fn one(v: Var<'_, f64>) -> Result<Vec<Var<'_, f64>>> {
    Ok(vec![v])
}

/// Every differentiable operation on three random shapes each.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for trial in 0..3 {
        let opts = CheckOptions::primitive(seed.wrapping_add(trial));
        let d = shape4(&mut rng, 1, 2);
        let a = random(&mut rng, &d);
        let b = random(&mut rng, &d);
        let tag = |op: &str| format!("{op} {d:?}");

        out.push(check(&tag("add"), &[a.clone(), b.clone()], &opts, |_, v| one(v[0].add(&v[1])?))?);
        out.push(check(&tag("sub"), &[a.clone(), b.clone()], &opts, |_, v| one(v[0].sub(&v[1])?))?);
        out.push(check(&tag("mul"), &[a.clone(), b.clone()], &opts, |_, v| one(v[0].mul(&v[1])?))?);
        let den = positive(&mut rng, &d);
        out.push(check(&tag("div"), &[a.clone(), den], &opts, |_, v| one(v[0].div(&v[1])?))?);
        out.push(check(&tag("scale"), std::slice::from_ref(&a), &opts, |_, v| one(v[0].scale(-1.7)))?);
        out.push(check(&tag("add_scalar"), std::slice::from_ref(&a), &opts, |_, v| one(v[0].add_scalar(0.3)))?);
        out.push(check(&tag("sigmoid"), &[a.scale_values(3.0)], &opts, |_, v| one(v[0].sigmoid()))?);
        out.push(check(&tag("tanh"), &[a.scale_values(2.0)], &opts, |_, v| one(v[0].tanh()))?);
        let kinked = away_from_zero(&mut rng, &d);
        out.push(check(&tag("relu"), std::slice::from_ref(&kinked), &opts, |_, v| one(v[0].relu()))?);
        out.push(check(&tag("abs"), &[kinked], &opts, |_, v| one(v[0].abs()))?);
        out.push(check(&tag("square"), std::slice::from_ref(&a), &opts, |_, v| one(v[0].square()))?);
        out.push(check(&tag("sum"), std::slice::from_ref(&a), &opts, |_, v| one(v[0].sum()))?);
        out.push(check(&tag("mean"), std::slice::from_ref(&a), &opts, |_, v| one(v[0].mean()))?);

        // convolutions over a few geometries
        let k = [1, 3, 3][trial as usize];
        let stride = [1, 1, 2][trial as usize];
        let pad = k / 2;
        let cout = rng.gen_range(1..=3);
        let x = random(&mut rng, &d);
        let w = random(&mut rng, &[cout, d[1], k, k]);
        let bias = random(&mut rng, &[cout]);
        out.push(check(
            &format!("conv2d {d:?} k{k} s{stride}"),
            &[x.clone(), w, bias.clone()],
            &opts,
            move |_, v| one(v[0].conv2d(&v[1], Some(&v[2]), stride, pad)?),
        )?);
        let wt = random(&mut rng, &[d[1], cout, k, k]);
        let op = stride - 1;
        out.push(check(
            &format!("conv2d_transpose {d:?} k{k} s{stride}"),
            &[x.clone(), wt, bias],
            &opts,
            move |_, v| one(v[0].conv2d_transpose(&v[1], Some(&v[2]), stride, pad, op)?),
        )?);

        let r = [1, 2, 2][trial as usize];
        let ds = shape4(&mut rng, r, 2);
        let xs = random(&mut rng, &ds);
        out.push(check(&format!("pixel_unshuffle {ds:?} r{r}"), &[xs], &opts, move |_, v| {
            one(v[0].pixel_unshuffle(r)?)
        })?);
        let dsh = [ds[0], ds[1] * r * r, ds[2], ds[3]];
        let xsh = random(&mut rng, &dsh);
        out.push(check(&format!("pixel_shuffle {dsh:?} r{r}"), &[xsh], &opts, move |_, v| {
            one(v[0].pixel_shuffle(r)?)
        })?);

        let dc = [d[0], d[1] + 2, d[2], d[3]];
        let xc = random(&mut rng, &dc);
        out.push(check(&format!("narrow_channels {dc:?}"), std::slice::from_ref(&xc), &opts, |_, v| {
            Ok(vec![v[0].narrow_channels(1, 2)?, v[0].narrow_channels(0, 1)?])
        })?);
        out.push(check(&tag("concat_channels"), &[a.clone(), xc], &opts, |_, v| {
            one(concat_channels(&[&v[0], &v[1], &v[0]])?)
        })?);

        let df = shape4(&mut rng, 1, 5);
        let taps: Vec<f64> = (0..[3, 5, 4][trial as usize]).map(|_| rng.gen_range(0.0..1.0)).collect();
        let xf = random(&mut rng, &df);
        out.push(check(&format!("separable_filter {df:?} taps{}", taps.len()), &[xf], &opts, move |_, v| {
            one(v[0].separable_filter(&taps)?)
        })?);

        // windowed SSIM on small frames
        let dw = shape4(&mut rng, 1, 7);
        let p = SsimParams {
            window_size: 5,
            ..SsimParams::default()
        };
        let (u, t) = (positive(&mut rng, &dw).scale_values(0.5), positive(&mut rng, &dw).scale_values(0.5));
        out.push(check(&format!("ssim {dw:?}"), &[u.clone(), t.clone()], &opts, move |_, v| {
            one(metrics::ssim_var(&v[0], &v[1], &p)?)
        })?);
        out.push(check(&format!("composite_loss {dw:?}"), &[u, t], &opts, move |_, v| {
            let w = LossWeights { lambda1: 0.1, lambda2: 0.5 };
            // keep |pred - gt| away from the L1 kink
            let shifted = v[0].add_scalar(2.0);
            one(metrics::composite_loss(&[shifted], &[v[1].clone()], &w, &p)?)
        })?);
    }
    Ok(out)
}

/// Average number of in-range taps per output position along one axis for
/// a zero-padded `k`-tap stride-1 filter over `n` samples.
fn valid_taps(k: usize, n: usize) -> f64 {
    let half = (k / 2) as isize;
    let n = n as isize;
    let mut total = 0;
    for o in 0..n {
        total += (-half..=half).filter(|d| (0..n).contains(&(o + d))).count();
    }
    total as f64 / n as f64
}

/// Random parameters for a model in 64-bit, for frames of `extent` x
/// `extent`. Weights use a fan-in scaled uniform draw, corrected for the
/// taps that fall into zero padding at that layer's resolution, so that
/// activations and gradients keep their magnitude through the deep stack
/// even on tiny frames. Biases are random so their paths carry gradient.
fn random_model(config: ModelConfig, extent: usize, rng: &mut ChaCha8Rng) -> Result<Model<f64>> {
    let base = Model::build(config.clone(), 0)?.cast::<f64>();
    let arch = base.architecture();
    let mut input_extent: BTreeMap<String, usize> = arch
        .conv_layers()
        .map(|l| (format!("{}.weight", l.name), extent / l.in_scale))
        .collect();
    for l in &arch.lstm {
        input_extent.insert(format!("{}.weight", l.name), extent / l.scale);
    }
    let params: BTreeMap<String, Tensor<f64>> = base
        .parameters()
        .iter()
        .map(|(k, v)| {
            let t = if k.ends_with(".weight") {
                let kernel = v.dims()[3];
                let fan_in = v.dims()[1] as f64 * valid_taps(kernel, input_extent[k]).powi(2);
                let bound = (6.0 / fan_in).sqrt();
                Tensor::from_fn(v.dims(), |_| rng.gen_range(-bound..bound))
            } else {
                Tensor::from_fn(v.dims(), |_| rng.gen_range(-0.1..0.1))
            };
            (k.clone(), t)
        })
        .collect();
    Model::from_parameters(config, params)
}

/// One ConvLSTM step with respect to latent input, previous state and the
/// gate parameters.
pub fn convlstm_check(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::llvd_s(3).with_widths([2, 3, 4]);
    let model = random_model(cfg.clone(), 24, &mut rng)?;
    let names = ["lstm0.weight", "lstm0.bias", "lstm1.weight", "lstm1.bias"];
    let (n, h, w) = (2, 3, 4);
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|k| model.parameters()[*k].clone()).collect();
    inputs.push(random(&mut rng, &[n, 4, h, w]));
    let state = RecurrentState::<f64>::zeros(&cfg, n, h, w);
    for (hid, cell) in state.layers() {
        inputs.push(random(&mut rng, hid.dims()).scale_values(0.5));
        inputs.push(random(&mut rng, cell.dims()));
    }
    let all = model.parameters().clone();
    check("convlstm step", &inputs, &CheckOptions::composite(seed), move |tape, v| {
        let mut params: BTreeMap<String, Var<'_, f64>> =
            all.iter().map(|(k, t)| (k.clone(), tape.constant(t.clone()))).collect();
        for (k, var) in names.iter().zip(v) {
            params.insert(k.to_string(), var.clone());
        }
        let g = model.graph_with(tape, params)?;
        let state = vec![(v[5].clone(), v[6].clone()), (v[7].clone(), v[8].clone())];
        let (y, next) = g.recur(&v[4], &state)?;
        let mut outs = vec![y];
        for (hid, cell) in next {
            outs.push(hid);
            outs.push(cell);
        }
        Ok(outs)
    })
}

/// Full forward pass of a tiny shuffle-wrapped model over a 3-frame
/// 16x16 sequence with respect to every parameter and every input pixel.
pub fn model_check(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::llvd_s(3).with_widths([4, 6, 8]);
    let model = random_model(cfg, 16, &mut rng)?;
    let names: Vec<String> = model.parameters().keys().cloned().collect();
    let mut inputs: Vec<Tensor<f64>> = model.parameters().values().cloned().collect();
    for _ in 0..3 {
        inputs.push(Tensor::from_fn(&[1, 3, 16, 16], |_| rng.gen_range(0.0..1.0)));
    }
    let p = names.len();
    check("llvd-s sequence 3x16x16", &inputs, &CheckOptions::composite(seed), move |tape, v| {
        let params = names.iter().cloned().zip(v[..p].iter().cloned()).collect();
        let g = model.graph_with(tape, params)?;
        g.forward_sequence(&v[p..])
    })
}

trait ScaleValues {
    fn scale_values(&self, c: f64) -> Self;
}

impl ScaleValues for Tensor<f64> {
    fn scale_values(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }
}
