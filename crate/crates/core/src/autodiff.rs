//! Reverse-mode differentiation over a per-operation tape.
//!
//! Every differentiable operation executed on a [`Var`] appends one node to
//! its [`Tape`] holding the parent ids and a closure that maps the output
//! gradient to parent gradients. Nodes are appended in execution order, so
//! the tape is topologically sorted by construction and [`Tape::backward`]
//! is a single reverse sweep.
//!
//! A tape built with [`Tape::inference`] records nothing; the same model
//! code then runs as a plain forward pass.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Element, Tensor};

type BackwardFn<E> = Box<dyn Fn(&Tensor<E>, &[bool]) -> Vec<Option<Tensor<E>>>>;

struct Node<E: Element> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<E>>,
    is_leaf: bool,
}

const UNTRACKED: usize = usize::MAX;

pub struct Tape<E: Element = f32> {
    nodes: RefCell<Vec<Node<E>>>,
    recording: bool,
    generation: Cell<u64>,
    macs: Cell<u64>,
    /// Running hash of the branch taken by every piecewise op, when enabled.
    branches: Cell<Option<u64>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    /// A recording tape.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            generation: Cell::new(0),
            macs: Cell::new(0),
            branches: Cell::new(None),
        }
    }

    /// Starts hashing the branch each element takes through piecewise ops
    /// (ReLU, abs). Two evaluations with equal signatures lie on the same
    /// smooth piece.
    pub(crate) fn track_branches(&self) {
        self.branches.set(Some(0xcbf2_9ce4_8422_2325));
    }

    pub(crate) fn branch_signature(&self) -> Option<u64> {
        self.branches.get()
    }

    fn note_branches(&self, x: &Tensor<E>) {
        if let Some(mut h) = self.branches.get() {
            for &v in x.data() {
                let b = if v > E::zero() {
                    1
                } else if v < E::zero() {
                    2
                } else {
                    3
                };
                h = (h ^ b).wrapping_mul(0x0100_0000_01b3);
            }
            self.branches.set(Some(h));
        }
    }

    /// A tape that records no graph; every value it produces is a constant.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulates executed by convolution kernels on this tape.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn count_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor<E>) -> Var<'_, E> {
        if !self.recording {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
            is_leaf: true,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
            value,
        }
    }

    /// A value that takes part in the computation but receives no gradient.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        Var {
            tape: self,
            id: UNTRACKED,
            generation: self.generation.get(),
            value,
        }
    }

    fn record(
        &self,
        value: Tensor<E>,
        parents: &[&Var<'_, E>],
        backward: impl Fn(&Tensor<E>, &[bool]) -> Vec<Option<Tensor<E>>> + 'static,
    ) -> Var<'_, E> {
        for p in parents {
            assert!(
                std::ptr::eq(p.tape, self),
                "operands belong to different tapes"
            );
            assert!(
                p.generation == self.generation.get(),
                "operand recorded on a tape that has since run backward"
            );
        }
        if !self.recording || parents.iter().all(|p| p.id == UNTRACKED) {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: parents.iter().map(|p| p.id).collect(),
            backward: Some(Box::new(backward)),
            is_leaf: false,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
            value,
        }
    }

    /// Propagates `d loss / d loss = 1` back through the tape and returns the
    /// gradient of every leaf the loss depends on. The tape is reset
    /// afterwards; variables recorded before the call can no longer be used
    /// as operands.
    pub fn backward(&self, loss: &Var<'_, E>) -> Result<Gradients<E>> {
        if !std::ptr::eq(loss.tape, self) || loss.generation != self.generation.get() {
            return Err(Error::Autodiff("loss was not produced on this tape".into()));
        }
        if loss.value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be a scalar, got dims {:?}",
                loss.value.dims()
            )));
        }
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let generation = self.generation.get();
        self.generation.set(generation + 1);

        let mut map = HashMap::new();
        if loss.id == UNTRACKED {
            return Ok(Gradients { map, generation });
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(loss.value.dims(), E::one()));
        for (id, node) in nodes.iter().enumerate().rev() {
            let Some(g) = grads[id].take() else { continue };
            if node.is_leaf {
                map.insert(id, g);
                continue;
            }
            let Some(backward) = &node.backward else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| p != UNTRACKED).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let (true, Some(pg)) = (p != UNTRACKED, pg) else { continue };
                grads[p] = Some(match grads[p].take() {
                    None => pg,
                    Some(acc) => accumulate(acc, &pg),
                });
            }
        }
        Ok(Gradients { map, generation })
    }
}

fn accumulate<E: Element>(acc: Tensor<E>, g: &Tensor<E>) -> Tensor<E> {
    let dims = acc.dims().to_vec();
    let mut data = acc.into_vec();
    for (a, &b) in data.iter_mut().zip(g.data()) {
        *a += b;
    }
    Tensor::from_parts(dims, data)
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients<E: Element = f32> {
    map: HashMap<usize, Tensor<E>>,
    generation: u64,
}

impl<E: Element> Gradients<E> {
    /// Gradient for `leaf`, or `None` when the loss does not depend on it
    /// or it was not a leaf of the differentiated graph.
    pub fn get(&self, leaf: &Var<'_, E>) -> Option<&Tensor<E>> {
        if leaf.generation != self.generation {
            return None;
        }
        self.map.get(&leaf.id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// A tensor value tied to a tape.
#[derive(Clone)]
pub struct Var<'t, E: Element = f32> {
    tape: &'t Tape<E>,
    id: usize,
    generation: u64,
    value: Tensor<E>,
}

impl<E: Element> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

fn binary_dims_check<E: Element>(a: &Tensor<E>, b: &Tensor<E>, op: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{op}: operand dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn conv_geom(x: [usize; 4], w: &[usize], stride: usize, pad: usize, op: &str) -> Result<ConvGeom> {
    let [n, cin, h, wd] = x;
    let &[cout, wcin, kh, kw] = w else {
        return Err(Error::shape(format!("{op}: weight must be 4-D, got {w:?}")));
    };
    if wcin != cin {
        return Err(Error::shape(format!(
            "{op}: input has {cin} channels but weight expects {wcin}"
        )));
    }
    if kh != kw {
        return Err(Error::shape(format!("{op}: only square kernels, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::shape(format!("{op}: stride must be positive")));
    }
    let (Some(oh), Some(ow)) = (
        kernels::conv_out_extent(h, kh, stride, pad),
        kernels::conv_out_extent(wd, kw, stride, pad),
    ) else {
        return Err(Error::shape(format!(
            "{op}: kernel {kh} exceeds padded input {h}x{wd} (padding {pad})"
        )));
    };
    Ok(ConvGeom {
        batch: n,
        in_channels: cin,
        out_channels: cout,
        in_h: h,
        in_w: wd,
        out_h: oh,
        out_w: ow,
        k: kh,
        stride,
        pad,
    })
}

fn check_bias<E: Element>(bias: Option<&Var<'_, E>>, channels: usize, op: &str) -> Result<()> {
    if let Some(b) = bias {
        if b.value.dims() != [channels] {
            return Err(Error::shape(format!(
                "{op}: bias dims {:?} do not match {channels} output channels",
                b.value.dims()
            )));
        }
    }
    Ok(())
}

impl<'t, E: Element> Var<'t, E> {
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.id != UNTRACKED
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t, E> {
        self.tape.constant(self.value.clone())
    }

    fn unary(
        &self,
        f: impl Fn(E) -> E,
        backward: impl Fn(&Tensor<E>, &Tensor<E>, &Tensor<E>) -> Tensor<E> + 'static,
    ) -> Var<'t, E> {
        let y = self.value.map(f);
        let (x, yc) = (self.value.clone(), y.clone());
        self.tape
            .record(y, &[self], move |g, _| vec![Some(backward(g, &x, &yc))])
    }

    pub fn add(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        binary_dims_check(&self.value, &other.value, "add")?;
        let y = self.value.zip_map(&other.value, |a, b| a + b)?;
        Ok(self
            .tape
            .record(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        binary_dims_check(&self.value, &other.value, "sub")?;
        let y = self.value.zip_map(&other.value, |a, b| a - b)?;
        Ok(self.tape.record(y, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn mul(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        binary_dims_check(&self.value, &other.value, "mul")?;
        let y = self.value.zip_map(&other.value, |a, b| a * b)?;
        let (a, b) = (self.value.clone(), other.value.clone());
        Ok(self.tape.record(y, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, b| g * b).unwrap()),
                needs[1].then(|| g.zip_map(&a, |g, a| g * a).unwrap()),
            ]
        }))
    }

    pub fn div(&self, other: &Var<'t, E>) -> Result<Var<'t, E>> {
        binary_dims_check(&self.value, &other.value, "div")?;
        let y = self.value.zip_map(&other.value, |a, b| a / b)?;
        let (b, yc) = (other.value.clone(), y.clone());
        Ok(self.tape.record(y, &[self, other], move |g, needs| {
            let ga = g.zip_map(&b, |g, b| g / b).unwrap();
            let gb = needs[1].then(|| ga.zip_map(&yc, |ga, y| -ga * y).unwrap());
            vec![needs[0].then_some(ga), gb]
        }))
    }

    pub fn scale(&self, c: E) -> Var<'t, E> {
        self.unary(move |v| v * c, move |g, _, _| g.map(|g| g * c))
    }

    pub fn add_scalar(&self, c: E) -> Var<'t, E> {
        self.unary(move |v| v + c, |g, _, _| g.clone())
    }

    pub fn sigmoid(&self) -> Var<'t, E> {
        self.unary(sigmoid, |g, _, y| {
            g.zip_map(y, |g, y| g * y * (E::one() - y)).unwrap()
        })
    }

    pub fn tanh(&self) -> Var<'t, E> {
        self.unary(E::tanh, |g, _, y| {
            g.zip_map(y, |g, y| g * (E::one() - y * y)).unwrap()
        })
    }

    pub fn relu(&self) -> Var<'t, E> {
        self.tape.note_branches(&self.value);
        self.unary(
            |v| if v > E::zero() { v } else { E::zero() },
            |g, x, _| {
                g.zip_map(x, |g, x| if x > E::zero() { g } else { E::zero() })
                    .unwrap()
            },
        )
    }

    pub fn abs(&self) -> Var<'t, E> {
        self.tape.note_branches(&self.value);
        self.unary(E::abs, |g, x, _| {
            g.zip_map(x, |g, x| {
                if x > E::zero() {
                    g
                } else if x < E::zero() {
                    -g
                } else {
                    E::zero()
                }
            })
            .unwrap()
        })
    }

    pub fn square(&self) -> Var<'t, E> {
        let two = E::of(2.0);
        self.unary(|v| v * v, move |g, x, _| g.zip_map(x, |g, x| two * g * x).unwrap())
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Var<'t, E> {
        let dims = self.value.dims().to_vec();
        let y = Tensor::scalar(self.value.sum());
        self.tape.record(y, &[self], move |g, _| {
            vec![Some(Tensor::full(&dims, g.data()[0]))]
        })
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn mean(&self) -> Var<'t, E> {
        let dims = self.value.dims().to_vec();
        let n = E::of(self.value.numel() as f64);
        let y = Tensor::scalar(self.value.sum() / n);
        self.tape.record(y, &[self], move |g, _| {
            vec![Some(Tensor::full(&dims, g.data()[0] / n))]
        })
    }

    /// Zero-padded cross-correlation. `weight` is `[Cout, Cin, k, k]`.
    pub fn conv2d(
        &self,
        weight: &Var<'t, E>,
        bias: Option<&Var<'t, E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, E>> {
        let geom = conv_geom(self.value.dims4()?, weight.dims(), stride, padding, "conv2d")?;
        check_bias(bias, geom.out_channels, "conv2d")?;
        let (mut y, macs) = kernels::conv_forward(self.value.data(), weight.value.data(), &geom);
        self.tape.count_macs(macs);
        let area = geom.out_h * geom.out_w;
        if let Some(b) = bias {
            kernels::add_channel_bias(&mut y, b.value.data(), geom.batch, area);
        }
        let y = Tensor::from_parts(vec![geom.batch, geom.out_channels, geom.out_h, geom.out_w], y);
        let (x, w) = (self.value.clone(), weight.value.clone());
        let backward = move |g: &Tensor<E>, needs: &[bool]| {
            let gx = needs[0].then(|| {
                Tensor::from_parts(x.dims().to_vec(), kernels::conv_adjoint(g.data(), w.data(), &geom).0)
            });
            let gw = needs[1].then(|| {
                Tensor::from_parts(
                    w.dims().to_vec(),
                    kernels::conv_weight_grad(x.data(), g.data(), &geom),
                )
            });
            let mut out = vec![gx, gw];
            if needs.len() == 3 {
                out.push(needs[2].then(|| {
                    Tensor::from_parts(
                        vec![geom.out_channels],
                        kernels::channel_sums(g.data(), geom.batch, geom.out_channels, area),
                    )
                }));
            }
            out
        };
        Ok(match bias {
            Some(b) => self.tape.record(y, &[self, weight, b], backward),
            None => self.tape.record(y, &[self, weight], backward),
        })
    }

    /// Transposed convolution, the adjoint of [`Var::conv2d`] for the same
    /// weight. `weight` is `[Cin, Cout, k, k]` (the layout of the conv whose
    /// adjoint this is); `output_padding < stride` adds rows/columns at the
    /// bottom/right so that stride-2 layers can exactly double even extents.
    pub fn conv2d_transpose(
        &self,
        weight: &Var<'t, E>,
        bias: Option<&Var<'t, E>>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var<'t, E>> {
        let [n, cin, h, w] = self.value.dims4()?;
        let &[wcin, cout, k, kw] = weight.dims() else {
            return Err(Error::shape(format!(
                "conv2d_transpose: weight must be 4-D, got {:?}",
                weight.dims()
            )));
        };
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv2d_transpose: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if k != kw || stride == 0 || output_padding >= stride {
            return Err(Error::shape(format!(
                "conv2d_transpose: need square kernel, stride >= 1 and output_padding < stride \
                 (kernel {k}x{kw}, stride {stride}, output_padding {output_padding})"
            )));
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv_transpose_out_extent(h, k, stride, padding, output_padding),
            kernels::conv_transpose_out_extent(w, k, stride, padding, output_padding),
        ) else {
            return Err(Error::shape(format!(
                "conv2d_transpose: padding {padding} leaves no output for input {h}x{w}"
            )));
        };
        check_bias(bias, cout, "conv2d_transpose")?;
        // The forward conv this layer is the adjoint of: [N, Cout, oh, ow] -> [N, Cin, h, w].
        let geom = ConvGeom {
            batch: n,
            in_channels: cout,
            out_channels: cin,
            in_h: oh,
            in_w: ow,
            out_h: h,
            out_w: w,
            k,
            stride,
            pad: padding,
        };
        debug_assert_eq!(kernels::conv_out_extent(oh, k, stride, padding), Some(h));
        let (mut y, macs) = kernels::conv_adjoint(self.value.data(), weight.value.data(), &geom);
        self.tape.count_macs(macs);
        if let Some(b) = bias {
            kernels::add_channel_bias(&mut y, b.value.data(), n, oh * ow);
        }
        let y = Tensor::from_parts(vec![n, cout, oh, ow], y);
        let (x, wt) = (self.value.clone(), weight.value.clone());
        let backward = move |g: &Tensor<E>, needs: &[bool]| {
            let gx = needs[0].then(|| {
                Tensor::from_parts(x.dims().to_vec(), kernels::conv_forward(g.data(), wt.data(), &geom).0)
            });
            let gw = needs[1].then(|| {
                Tensor::from_parts(
                    wt.dims().to_vec(),
                    kernels::conv_weight_grad(g.data(), x.data(), &geom),
                )
            });
            let mut out = vec![gx, gw];
            if needs.len() == 3 {
                out.push(needs[2].then(|| {
                    Tensor::from_parts(vec![cout], kernels::channel_sums(g.data(), n, cout, oh * ow))
                }));
            }
            out
        };
        Ok(match bias {
            Some(b) => self.tape.record(y, &[self, weight, b], backward),
            None => self.tape.record(y, &[self, weight], backward),
        })
    }

    /// `[N, C, H, W] -> [N, C*r*r, H/r, W/r]`; output channel
    /// `c*r*r + dy*r + dx` holds sub-pixel offset `(dy, dx)`.
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Var<'t, E>> {
        let [n, c, h, w] = self.value.dims4()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::shape(format!(
                "pixel_unshuffle: factor {r} does not divide {h}x{w}"
            )));
        }
        let idx = kernels::unshuffle_sources([n, c, h, w], r);
        let y = Tensor::from_parts(
            vec![n, c * r * r, h / r, w / r],
            kernels::gather(self.value.data(), &idx),
        );
        let in_dims = self.value.dims().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            vec![Some(Tensor::from_parts(
                in_dims.clone(),
                kernels::scatter(g.data(), &idx),
            ))]
        }))
    }

    /// Inverse of [`Var::pixel_unshuffle`].
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'t, E>> {
        let [n, c, h, w] = self.value.dims4()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::shape(format!(
                "pixel_shuffle: {c} channels not divisible by factor^2 = {}",
                r * r
            )));
        }
        let out_dims = vec![n, c / (r * r), h * r, w * r];
        let idx = kernels::unshuffle_sources([n, c / (r * r), h * r, w * r], r);
        let y = Tensor::from_parts(out_dims, kernels::scatter(self.value.data(), &idx));
        let in_dims = self.value.dims().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            vec![Some(Tensor::from_parts(
                in_dims.clone(),
                kernels::gather(g.data(), &idx),
            ))]
        }))
    }

    /// Channels `[start, start + len)` of a 4-D value.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Var<'t, E>> {
        let [n, c, h, w] = self.value.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "narrow_channels: range {start}..{} outside {c} channels",
                start + len
            )));
        }
        let area = h * w;
        let src = self.value.data();
        let mut data = Vec::with_capacity(n * len * area);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * area..(b * c + start + len) * area]);
        }
        let y = Tensor::from_parts(vec![n, len, h, w], data);
        let in_dims = self.value.dims().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            let mut gx = vec![E::zero(); n * c * area];
            for b in 0..n {
                gx[(b * c + start) * area..(b * c + start + len) * area]
                    .copy_from_slice(&g.data()[b * len * area..(b + 1) * len * area]);
            }
            vec![Some(Tensor::from_parts(in_dims.clone(), gx))]
        }))
    }

    /// Valid-mode depthwise filtering with a separable kernel built from the
    /// same taps along both axes (used for windowed image statistics).
    pub fn separable_filter(&self, taps: &[E]) -> Result<Var<'t, E>> {
        let [n, c, h, w] = self.value.dims4()?;
        let k = taps.len();
        if k == 0 || k > h || k > w {
            return Err(Error::shape(format!(
                "separable_filter: window {k} larger than frame {h}x{w}"
            )));
        }
        let taps = taps.to_vec();
        let y = Tensor::from_parts(
            vec![n, c, h - k + 1, w - k + 1],
            kernels::separable_valid(self.value.data(), n * c, h, w, &taps),
        );
        let in_dims = self.value.dims().to_vec();
        Ok(self.tape.record(y, &[self], move |g, _| {
            vec![Some(Tensor::from_parts(
                in_dims.clone(),
                kernels::separable_valid_adjoint(g.data(), n * c, h, w, &taps),
            ))]
        }))
    }
}

/// Concatenates 4-D values along the channel axis, preserving order.
pub fn concat_channels<'t, E: Element>(parts: &[&Var<'t, E>]) -> Result<Var<'t, E>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels: no operands"))?;
    let [n, _, h, w] = first.value.dims4()?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = p.value.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(format!(
                "concat_channels: dims {:?} incompatible with {:?}",
                p.dims(),
                first.dims()
            )));
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let area = h * w;
    let mut data = Vec::with_capacity(n * total * area);
    for b in 0..n {
        for (p, &c) in parts.iter().zip(&channels) {
            data.extend_from_slice(&p.value.data()[b * c * area..(b + 1) * c * area]);
        }
    }
    let y = Tensor::from_parts(vec![n, total, h, w], data);
    let tape = first.tape;
    Ok(tape.record(y, parts, move |g, needs| {
        let mut offset = 0;
        channels
            .iter()
            .zip(needs)
            .map(|(&c, &need)| {
                let start = offset;
                offset += c;
                need.then(|| {
                    let mut part = Vec::with_capacity(n * c * area);
                    for b in 0..n {
                        let base = (b * total + start) * area;
                        part.extend_from_slice(&g.data()[base..base + c * area]);
                    }
                    Tensor::from_parts(vec![n, c, h, w], part)
                })
            })
            .collect()
    }))
}

/// Logistic function, kept strictly inside `(0, 1)`: results that would
/// round to 0 or 1 are pinned to the nearest representable interior value.
pub(crate) fn sigmoid<E: Element>(x: E) -> E {
    let y = if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    };
    let top = E::one() - E::epsilon() / E::of(2.0);
    y.max(E::min_positive_value()).min(top)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let y = x.square().sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
        assert_eq!(grads.len(), 1);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = x.square();
        assert!(matches!(tape.backward(&y), Err(Error::Autodiff(_))));
    }

    #[test]
    fn loss_from_other_tape_rejected() {
        let a = Tape::<f64>::new();
        let b = Tape::<f64>::new();
        let x = b.leaf(t(&[1], &[1.0]));
        assert!(a.backward(&x.sum()).is_err());
    }

    #[test]
    fn leaf_not_in_graph_is_absent() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let unused = tape.leaf(t(&[1], &[5.0]));
        let y = x.scale(2.0).sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0]);
        assert!(grads.get(&unused).is_none());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn tape_resets_after_backward() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let y = x.square().sum();
        tape.backward(&y).unwrap();
        assert!(tape.is_empty());
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::full(&[2], 1.0));
        let y = x.sigmoid().sum();
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
    }

    #[test]
    fn scalar_activations() {
        let tape = Tape::<f32>::inference();
        let z = tape.constant(Tensor::zeros(&[1]));
        assert_eq!(z.sigmoid().value().data(), &[0.5]);
        assert_eq!(z.tanh().value().data(), &[0.0]);
        assert_eq!(z.relu().value().data(), &[0.0]);
        let big = tape.constant(Tensor::from_vec(&[2], vec![-100.0, 100.0]).unwrap());
        let s = big.sigmoid();
        assert!(s.value().is_finite());
        assert!(s.value().data()[0] >= 0.0 && s.value().data()[1] <= 1.0);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let g = tape.backward(&x.relu().sum()).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn binary_ops_reject_mismatched_dims() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[1, 2, 3, 3]));
        let b = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
        assert!(a.mul(&b).is_err());
        assert!(a.sub(&b).is_err());
    }

    #[test]
    fn conv2d_channel_mismatch_names_both_extents() {
        let tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let err = x.conv2d(&w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains('2') && err.contains('3'), "{err}");
    }
}
