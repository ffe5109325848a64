//! Built-in verification suite: gradient checks, shuffle round trips,
//! convolution adjointness and agreement of the analytic cost model with
//! instrumented execution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::flops;
use crate::gradcheck::{self, CheckOutcome};
use crate::kernels::conv_out_extent;
use crate::model::{Ablation, ModelConfig};
use crate::tensor::{Element, Tensor};

/// Relative tolerance for `<A x, y> = <x, A^T y>` in 32-bit.
pub const ADJOINT_TOLERANCE_F32: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn from_grad(o: CheckOutcome) -> CheckResult {
    CheckResult {
        group: "gradient",
        passed: o.passed(),
        detail: format!(
            "max rel error {:.2e} (tol {:.0e}) over {} coords, {} at kinks",
            o.max_rel_error, o.tolerance, o.coords, o.straddled
        ),
        name: o.name,
    }
}

pub fn gradient_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out: Vec<CheckResult> = gradcheck::primitive_suite(seed)?.into_iter().map(from_grad).collect();
    out.push(from_grad(gradcheck::convlstm_check(seed)?));
    out.push(from_grad(gradcheck::model_check(seed)?));
    Ok(out)
}

pub fn shuffle_round_trips(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = Tape::<f32>::inference();
    let mut out = Vec::new();
    for r in [1, 2, 4] {
        let dims = [2, 3, 4 * r, 2 * r];
        let x = Tensor::from_fn(&dims, |_| rng.gen::<f32>());
        let v = tape.constant(x.clone());
        let down = v.pixel_unshuffle(r)?;
        let back = down.pixel_shuffle(r)?;
        let mut sorted_in = x.data().to_vec();
        let mut sorted_mid = down.value().data().to_vec();
        sorted_in.sort_by(f32::total_cmp);
        sorted_mid.sort_by(f32::total_cmp);
        let passed = back.value() == &x
            && down.dims() == [2, 3 * r * r, 4, 2]
            && sorted_in == sorted_mid;
        out.push(CheckResult {
            group: "shuffle",
            name: format!("unshuffle/shuffle r={r} {dims:?}"),
            passed,
            detail: if passed { "exact inverse, bijective".into() } else { "mismatch".into() },
        });
    }
    Ok(out)
}

/// `|<conv(x), y> - <x, conv_transpose(y)>| / (|conv(x)| |y|)` for one
/// geometry. Normalising by the Cauchy-Schwarz bound keeps the measure
/// meaningful when the inner product itself nearly cancels.
pub fn adjoint_gap<E: Element>(
    x: &Tensor<E>,
    y_like: impl FnOnce(&[usize]) -> Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<f64> {
    let tape = Tape::<E>::inference();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let ax = xv.conv2d(&wv, None, stride, pad)?;
    let y = y_like(ax.dims());
    let [_, _, h, wd] = x.dims4()?;
    let k = w.dims()[2];
    // rows/columns the strided conv never reached come back as output padding
    let op = h + 2 * pad - ((ax.dims()[2] - 1) * stride + k);
    if wd + 2 * pad - ((ax.dims()[3] - 1) * stride + k) != op {
        return Err(Error::shape("adjoint_gap needs the same leftover on both axes"));
    }
    let aty = tape.constant(y.clone()).conv2d_transpose(&wv, None, stride, pad, op)?;
    let lhs = ax.value().dot(&y)?;
    let rhs = x.dot(aty.value())?;
    let scale = (ax.value().dot(ax.value())? * y.dot(&y)?).sqrt();
    Ok((lhs - rhs).abs() / scale.max(1e-300))
}

pub fn adjointness(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, stride, pad, h) in [(3, 1, 1, 9), (3, 2, 1, 10), (3, 2, 1, 9), (1, 1, 0, 7), (5, 2, 2, 12), (3, 3, 0, 11)] {
        if conv_out_extent(h, k, stride, pad).is_none() {
            continue;
        }
        let (cin, cout) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let x = Tensor::<f32>::from_fn(&[2, cin, h, h], |_| rng.gen_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-1.0..1.0));
        let ys: u64 = rng.gen();
        let y_like = |d: &[usize]| {
            let mut r = ChaCha8Rng::seed_from_u64(ys);
            Tensor::<f32>::from_fn(d, |_| r.gen_range(-1.0..1.0))
        };
        let gap32 = adjoint_gap(&x, y_like, &w, stride, pad)?;
        let gap64 = adjoint_gap(&x.cast::<f64>(), |d| y_like(d).cast(), &w.cast::<f64>(), stride, pad)?;
        let passed = gap32 <= ADJOINT_TOLERANCE_F32 && gap64 <= 1e-12;
        out.push(CheckResult {
            group: "adjoint",
            name: format!("conv/conv_transpose k{k} s{stride} p{pad} {h}x{h}"),
            passed,
            detail: format!("rel gap f32 {gap32:.1e}, f64 {gap64:.1e}"),
        });
    }
    Ok(out)
}

pub fn flop_probes() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let cases = [
        ("llvd-s", ModelConfig::llvd_s(3), 32, 32),
        ("llvd-s tiny", ModelConfig::llvd_s(3).with_widths([8, 16, 32]), 32, 32),
        ("llvd-l bayer tiny", ModelConfig::llvd_l(4).with_widths([4, 8, 8]), 16, 24),
        ("lstm-only", Ablation::LstmOnly.config(3), 16, 16),
        ("encdec-only", Ablation::EncDecOnly.config(3), 16, 16),
    ];
    for (name, cfg, h, w) in cases {
        let analytic = flops::count_flops(&cfg, h, w)?.total_macs();
        let measured = flops::empirical_mac_probe(&cfg, h, w)?;
        out.push(CheckResult {
            group: "flops",
            name: format!("{name} {w}x{h} analytic vs instrumented MACs"),
            passed: analytic == measured,
            detail: format!("analytic {analytic}, instrumented {measured}"),
        });
    }
    let tape = Tape::<f32>::inference();
    let x = tape.constant(Tensor::full(&[1, 1, 8, 8], 1.0));
    let wt = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    x.conv2d(&wt, None, 1, 1)?;
    out.push(CheckResult {
        group: "flops",
        name: "single 3x3 conv 8x8 hand count".into(),
        passed: tape.macs() == 576,
        detail: format!("{} MACs (expected 576)", tape.macs()),
    });
    Ok(out)
}

/// Every check; the suite passes when all entries pass.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = gradient_checks(seed)?;
    out.extend(shuffle_round_trips(seed)?);
    out.extend(adjointness(seed)?);
    out.extend(flop_probes()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_groups_pass() {
        let mut all = shuffle_round_trips(1).unwrap();
        all.extend(adjointness(1).unwrap());
        all.extend(flop_probes().unwrap());
        for c in &all {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(all.iter().any(|c| c.group == "adjoint"));
    }
}
