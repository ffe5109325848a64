//! PSNR, SSIM and the composite training objective
//! `MSE + lambda1 * L1 + lambda2 * (1 - SSIM)`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Reported when the two signals are identical.
pub const PSNR_CAP_DB: f64 = f64::INFINITY;

/// `10 log10(peak^2 / MSE)` over all elements, accumulated in 64-bit.
pub fn psnr<E: Element>(a: &Tensor<E>, b: &Tensor<E>, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "psnr: dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("psnr: peak must be positive, got {peak}")));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sse / a.numel() as f64, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR of the MSE pooled over every frame of a sequence.
pub fn pooled_psnr<E: Element>(a: &[Tensor<E>], b: &[Tensor<E>], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!(
            "pooled_psnr: {} frames vs {} frames",
            a.len(),
            b.len()
        )));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        x.expect_same_dims(y)?;
        sse += x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| (p.as_f64() - q.as_f64()).powi(2))
            .sum::<f64>();
        n += x.numel();
    }
    Ok(psnr_from_mse(sse / n as f64, peak))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(Error::config("window_size", "must be odd and at least 3"));
        }
        if !(self.peak > 0.0) {
            return Err(Error::config("peak", "must be positive"));
        }
        if !(self.window_sigma > 0.0) {
            return Err(Error::config("window_sigma", "must be positive"));
        }
        Ok(())
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn fits(&self, dims: &[usize]) -> bool {
        dims.len() == 4 && dims[2] >= self.window_size && dims[3] >= self.window_size
    }
}

/// Differentiable mean SSIM of two `[N, C, H, W]` values: the windowed
/// SSIM map per channel (valid windows only), averaged over every
/// position, channel and batch entry.
pub fn ssim_var<'t, E: Element>(
    a: &Var<'t, E>,
    b: &Var<'t, E>,
    params: &SsimParams,
) -> Result<Var<'t, E>> {
    params.validate()?;
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "ssim: dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    if !params.fits(a.dims()) {
        return Err(Error::shape(format!(
            "ssim: frame {:?} smaller than the {}x{} window",
            a.dims(),
            params.window_size,
            params.window_size
        )));
    }
    let taps: Vec<E> = params.taps().into_iter().map(E::of).collect();
    let c1 = E::of((params.k1 * params.peak).powi(2));
    let c2 = E::of((params.k2 * params.peak).powi(2));
    let two = E::of(2.0);

    let mu_a = a.separable_filter(&taps)?;
    let mu_b = b.separable_filter(&taps)?;
    let mu_aa = mu_a.mul(&mu_a)?;
    let mu_bb = mu_b.mul(&mu_b)?;
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = a.mul(a)?.separable_filter(&taps)?.sub(&mu_aa)?;
    let var_b = b.mul(b)?.separable_filter(&taps)?.sub(&mu_bb)?;
    let cov = a.mul(b)?.separable_filter(&taps)?.sub(&mu_ab)?;

    let num = mu_ab
        .scale(two)
        .add_scalar(c1)
        .mul(&cov.scale(two).add_scalar(c2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .add_scalar(c1)
        .mul(&var_a.add(&var_b)?.add_scalar(c2))?;
    Ok(num.div(&den)?.mean())
}

/// Mean SSIM of two tensors (`[C, H, W]` or `[N, C, H, W]`), evaluated in
/// 64-bit.
pub fn ssim<E: Element>(a: &Tensor<E>, b: &Tensor<E>, params: &SsimParams) -> Result<f64> {
    let lift = |t: &Tensor<E>| -> Result<Tensor<f64>> {
        let t = t.cast::<f64>();
        match t.rank() {
            3 => {
                let mut d = vec![1];
                d.extend_from_slice(t.dims());
                t.reshape(&d)
            }
            4 => Ok(t),
            _ => Err(Error::shape(format!("ssim: unsupported dims {:?}", t.dims()))),
        }
    };
    let tape = Tape::<f64>::inference();
    let va = tape.constant(lift(a)?);
    let vb = tape.constant(lift(b)?);
    Ok(ssim_var(&va, &vb, params)?.value().data()[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) {
            return Err(Error::config("lambda1", "must be non-negative"));
        }
        if !(self.lambda2 >= 0.0) {
            return Err(Error::config("lambda2", "must be non-negative"));
        }
        Ok(())
    }
}

/// Loss of one frame. The SSIM term is skipped for frames smaller than
/// the window.
pub fn frame_loss<'t, E: Element>(
    pred: &Var<'t, E>,
    gt: &Var<'t, E>,
    weights: &LossWeights,
    ssim_params: &SsimParams,
) -> Result<Var<'t, E>> {
    let diff = pred.sub(gt)?;
    let mut loss = diff.square().mean();
    if weights.lambda1 > 0.0 {
        loss = loss.add(&diff.abs().mean().scale(E::of(weights.lambda1)))?;
    }
    if weights.lambda2 > 0.0 && ssim_params.fits(pred.dims()) {
        let s = ssim_var(pred, gt, ssim_params)?;
        loss = loss.add(&s.scale(-E::of(weights.lambda2)).add_scalar(E::of(weights.lambda2)))?;
    }
    Ok(loss)
}

/// Frame-averaged composite loss over aligned sequences of `[N, C, H, W]`
/// values.
pub fn composite_loss<'t, E: Element>(
    pred: &[Var<'t, E>],
    gt: &[Var<'t, E>],
    weights: &LossWeights,
    ssim_params: &SsimParams,
) -> Result<Var<'t, E>> {
    weights.validate()?;
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Invalid(format!(
            "loss: {} predicted frames vs {} target frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut total: Option<Var<'t, E>> = None;
    for (p, g) in pred.iter().zip(gt) {
        let l = frame_loss(p, g, weights, ssim_params)?;
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l)?,
        });
    }
    let n = E::of(pred.len() as f64);
    Ok(total.expect("non-empty").scale(E::one() / n))
}

/// [`composite_loss`] evaluated on plain tensors.
pub fn composite_loss_value<E: Element>(
    pred: &[Tensor<E>],
    gt: &[Tensor<E>],
    weights: &LossWeights,
    ssim_params: &SsimParams,
) -> Result<f64> {
    let tape = Tape::<E>::inference();
    let p: Vec<_> = pred.iter().map(|t| tape.constant(t.clone())).collect();
    let g: Vec<_> = gt.iter().map(|t| tape.constant(t.clone())).collect();
    Ok(composite_loss(&p, &g, weights, ssim_params)?.value().data()[0].as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(dims, |_| rng.gen::<f64>())
    }

    #[test]
    fn psnr_closed_forms() {
        let x = random(&[1, 3, 8, 8], 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let a = Tensor::<f64>::full(&[2, 5], 0.3);
        let b = Tensor::<f64>::full(&[2, 5], 0.4);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &x, 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = random(&[2, 3, 7, 5], 2);
        let b = random(&[2, 3, 7, 5], 3);
        let mut sse = 0.0;
        for i in 0..a.numel() {
            sse += (a.data()[i] - b.data()[i]).powi(2);
        }
        let direct = 10.0 * (1.0 / (sse / a.numel() as f64)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let p = SsimParams::default();
        let a = random(&[1, 3, 16, 16], 4);
        let b = random(&[1, 3, 16, 16], 5);
        assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
        let s = ssim(&a, &b, &p).unwrap();
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn ssim_of_constant_images_matches_scalar_formula() {
        let p = SsimParams::default();
        let a = Tensor::<f64>::full(&[1, 1, 12, 12], 0.5);
        let b = Tensor::<f64>::full(&[1, 1, 12, 12], 0.6);
        // variances and covariance vanish; only the luminance term remains
        let c1 = (0.01f64 * 1.0).powi(2);
        let expect = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        assert!((ssim(&a, &b, &p).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_frames_and_bad_params() {
        let p = SsimParams::default();
        let a = Tensor::<f64>::full(&[1, 1, 10, 12], 0.5);
        assert!(ssim(&a, &a, &p).is_err());
        let even = SsimParams { window_size: 10, ..p };
        assert!(even.validate().is_err());
    }

    #[test]
    fn loss_hand_arithmetic() {
        let w = LossWeights { lambda1: 0.1, lambda2: 0.0 };
        let pred = [Tensor::<f64>::full(&[1, 1, 1, 1], 0.6)];
        let gt = [Tensor::<f64>::full(&[1, 1, 1, 1], 0.5)];
        let l = composite_loss_value(&pred, &gt, &w, &SsimParams::default()).unwrap();
        assert!((l - 0.02).abs() < 1e-12, "{l}");
        // below-window frames skip the SSIM term even when weighted
        let l2 = composite_loss_value(&pred, &gt, &LossWeights::default(), &SsimParams::default()).unwrap();
        assert!((l2 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_at_equality_and_length_checked() {
        let a = vec![random(&[1, 3, 16, 16], 8), random(&[1, 3, 16, 16], 9)];
        let w = LossWeights::default();
        assert_eq!(w, LossWeights { lambda1: 0.1, lambda2: 0.01 });
        assert_eq!(composite_loss_value(&a, &a, &w, &SsimParams::default()).unwrap(), 0.0);
        assert!(composite_loss_value(&a, &a[..1], &w, &SsimParams::default()).is_err());
        let neg = LossWeights { lambda1: -1.0, lambda2: 0.0 };
        assert!(composite_loss_value(&a, &a, &neg, &SsimParams::default()).is_err());
    }
}
