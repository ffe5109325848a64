use llvd_core::kernels::conv_out_extent;
use llvd_core::{Model, ModelConfig, Tape, Tensor};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-1.0f32..1.0, n).prop_map(move |d| Tensor::from_vec(&dims, d).unwrap())
}

/// `(x, w, y, stride, pad)` with `y` shaped like `conv(x, w)`.
fn conv_case() -> impl Strategy<Value = (Tensor, Tensor, Tensor, Tensor, usize, usize)> {
    (1usize..=3, 1usize..=3, 1usize..=3, 4usize..=9, prop_oneof![Just(1usize), Just(3)], 1usize..=2)
        .prop_filter_map("geometry", |(n, cin, cout, h, k, stride)| {
            let pad = k / 2;
            let ho = conv_out_extent(h, k, stride, pad)?;
            // output padding must stay below the stride
            let op = h + 2 * pad - ((ho - 1) * stride + k);
            (op < stride).then_some((n, cin, cout, h, k, stride, ho))
        })
        .prop_flat_map(|(n, cin, cout, h, k, stride, ho)| {
            (
                tensor(vec![n, cin, h, h]),
                tensor(vec![n, cin, h, h]),
                tensor(vec![cout, cin, k, k]),
                tensor(vec![n, cout, ho, ho]),
                Just(stride),
                Just(k / 2),
            )
        })
}

fn norm(t: &Tensor) -> f64 {
    t.dot(t).unwrap().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_transpose_are_adjoint((x, _x2, w, y, stride, pad) in conv_case()) {
        let tape = Tape::inference();
        let (xv, wv, yv) = (tape.constant(x.clone()), tape.constant(w), tape.constant(y.clone()));
        let ax = xv.conv2d(&wv, None, stride, pad).unwrap();
        let h = x.dims()[2];
        let k = wv.dims()[2];
        let op = h + 2 * pad - ((ax.dims()[2] - 1) * stride + k);
        let aty = yv.conv2d_transpose(&wv, None, stride, pad, op).unwrap();
        prop_assert_eq!(aty.dims(), x.dims());
        let gap = (ax.value().dot(&y).unwrap() - x.dot(aty.value()).unwrap()).abs();
        prop_assert!(gap <= 1e-5 * norm(ax.value()) * norm(&y) + 1e-12, "gap {}", gap);
    }

    #[test]
    fn conv_is_linear_in_the_input((x1, x2, w, _y, stride, pad) in conv_case(), a in -2.0f32..2.0) {
        let tape = Tape::inference();
        let wv = tape.constant(w);
        let conv = |t: &Tensor| tape.constant(t.clone()).conv2d(&wv, None, stride, pad).unwrap().value().clone();
        let mixed = x1.zip_map(&x2, |p, q| a * p + q).unwrap();
        let expect = conv(&x1).zip_map(&conv(&x2), |p, q| a * p + q).unwrap();
        let got = conv(&mixed);
        let tol = 1e-5 * (norm(&expect).max(1.0));
        prop_assert!(got.max_abs_diff(&expect).unwrap() <= tol);
    }

    #[test]
    fn shuffle_is_a_bijection(r in prop_oneof![Just(1usize), Just(2), Just(4)], n in 1usize..=2, c in 1usize..=3, hq in 1usize..=3, wq in 1usize..=3) {
        let dims = vec![n, c, hq * r, wq * r];
        let count: usize = dims.iter().product();
        // distinct values make any collision visible
        let x = Tensor::from_vec(&dims, (0..count).map(|i| i as f32).collect()).unwrap();
        let tape = Tape::inference();
        let down = tape.constant(x.clone()).pixel_unshuffle(r).unwrap();
        prop_assert_eq!(down.dims(), &[n, c * r * r, hq, wq]);
        let mut seen = down.value().data().to_vec();
        seen.sort_by(f32::total_cmp);
        prop_assert_eq!(&seen[..], x.data());
        prop_assert_eq!(down.pixel_shuffle(r).unwrap().value().clone(), x);
        let up = tape.constant(down.value().clone()).pixel_shuffle(r).unwrap();
        prop_assert_eq!(up.pixel_unshuffle(r).unwrap().value().clone(), down.value().clone());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn build_and_inference_are_deterministic(seed in any::<u64>(), v in 0.0f32..1.0) {
        let cfg = ModelConfig::llvd_s(3).with_widths([4, 4, 8]);
        let a = Model::build(cfg.clone(), seed).unwrap();
        let b = Model::build(cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let frames = vec![Tensor::from_fn(&[1, 3, 16, 16], |i| (v + i as f32 * 0.01) % 1.0); 2];
        prop_assert_eq!(a.denoise_frames(&frames, None).unwrap(), b.denoise_frames(&frames, None).unwrap());
    }
}
