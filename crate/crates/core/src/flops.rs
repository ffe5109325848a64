//! Analytic cost accounting.
//!
//! Every layer's cost is a closed-form function of the configuration and
//! the frame size; nothing is executed. Multiply-accumulates are converted
//! to FLOPs by the configured [`FlopConvention`]. Bias adds, activations,
//! skip additions and the LSTM gate arithmetic are counted as one
//! operation per output element and reported in a separate column.
//! [`empirical_mac_probe`] runs the real model on a counting tape to check
//! the analytic MAC totals.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::arch::{Architecture, ConvLayer, LstmLayer};
use crate::model::{FlopConvention, Model, ModelConfig};
use crate::tensor::Tensor;

/// Elementwise operations per hidden channel and pixel of one ConvLSTM
/// step: four gate activations, `f*c`, `i*g`, their sum, `tanh(c')` and
/// `o*tanh(c')`.
pub const LSTM_GATE_OPS: u64 = 9;

/// Largest extent [`empirical_mac_probe`] will execute.
pub const PROBE_MAX_EXTENT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopEntry {
    pub name: String,
    /// `[C, H, W]` of the layer output for a single frame.
    pub output: [usize; 3],
    pub macs: u64,
    /// `macs` converted by the report convention.
    pub flops: u64,
    /// Bias adds, activations and other per-element operations.
    pub elementwise: u64,
}

impl FlopEntry {
    pub fn total(&self) -> u64 {
        self.flops + self.elementwise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    pub entries: Vec<FlopEntry>,
    pub convention: FlopConvention,
    pub height: usize,
    pub width: usize,
}

impl FlopReport {
    pub fn total_macs(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.entries.iter().map(|e| e.flops).sum()
    }

    pub fn total_elementwise(&self) -> u64 {
        self.entries.iter().map(|e| e.elementwise).sum()
    }

    /// Arithmetic plus elementwise operations.
    pub fn total(&self) -> u64 {
        self.total_flops() + self.total_elementwise()
    }

    pub fn gflops(&self) -> f64 {
        self.total() as f64 / 1e9
    }

    /// Aligned per-layer table followed by the totals.
    pub fn to_table(&self) -> String {
        let name_w = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(0)
            .max("layer".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>16}  {:>15}  {:>15}  {:>13}",
            "layer", "output", "macs", "flops", "elementwise"
        );
        for e in &self.entries {
            let dims = format!("{}x{}x{}", e.output[0], e.output[1], e.output[2]);
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>16}  {:>15}  {:>15}  {:>13}",
                e.name, dims, e.macs, e.flops, e.elementwise
            );
        }
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>16}  {:>15}  {:>15}  {:>13}",
            "total",
            "",
            self.total_macs(),
            self.total_flops(),
            self.total_elementwise()
        );
        let _ = writeln!(
            out,
            "resolution {}x{}, convention {}, {:.3} GFLOPs",
            self.width,
            self.height,
            self.convention,
            self.gflops()
        );
        out
    }
}

fn conv_entry(layer: &ConvLayer, h: usize, w: usize, conv: FlopConvention) -> FlopEntry {
    let (oh, ow) = (h / layer.out_scale, w / layer.out_scale);
    let k2 = (layer.kernel * layer.kernel) as u64;
    let cin = layer.in_channels as u64;
    let cout = layer.out_channels as u64;
    // transposed layers run the adjoint of a dense conv whose output is the
    // low-resolution side
    let dense_px = if layer.transpose {
        (h / layer.in_scale * (w / layer.in_scale)) as u64
    } else {
        (oh * ow) as u64
    };
    let macs = k2 * cin * cout * dense_px;
    let out_elems = cout * (oh * ow) as u64;
    let elementwise = out_elems * if layer.relu { 2 } else { 1 };
    FlopEntry {
        name: layer.name.clone(),
        output: [layer.out_channels, oh, ow],
        macs,
        flops: macs * conv.per_mac(),
        elementwise,
    }
}

fn lstm_entry(layer: &LstmLayer, h: usize, w: usize, conv: FlopConvention) -> FlopEntry {
    let (oh, ow) = (h / layer.scale, w / layer.scale);
    let px = (oh * ow) as u64;
    let hid = layer.hidden as u64;
    let k2 = (layer.kernel * layer.kernel) as u64;
    let macs = k2 * (layer.in_channels as u64 + hid) * 4 * hid * px;
    FlopEntry {
        name: layer.name.clone(),
        output: [layer.hidden, oh, ow],
        macs,
        flops: macs * conv.per_mac(),
        elementwise: 4 * hid * px + LSTM_GATE_OPS * hid * px,
    }
}

fn elementwise_entry(name: String, c: usize, oh: usize, ow: usize, ops: u64) -> FlopEntry {
    FlopEntry {
        name,
        output: [c, oh, ow],
        macs: 0,
        flops: 0,
        elementwise: ops * (c * oh * ow) as u64,
    }
}

/// Per-layer cost of one frame of `height` x `width`, in execution order.
pub fn count_flops(config: &ModelConfig, height: usize, width: usize) -> Result<FlopReport> {
    config.validate()?;
    config.check_frame_dims(height, width)?;
    let arch = Architecture::from_config(config);
    let conv = config.flop_convention;
    let (h, w) = (height, width);
    let r = config.shuffle_factor;
    let mut entries = Vec::new();

    if r > 1 {
        entries.push(elementwise_entry(
            "unshuffle".into(),
            config.in_channels * r * r,
            h / r,
            w / r,
            0,
        ));
    }
    for layer in arch.encoder.iter().flatten() {
        entries.push(conv_entry(layer, h, w, conv));
    }
    if let Some(p) = &arch.proj_in {
        entries.push(conv_entry(p, h, w, conv));
    }
    for l in &arch.lstm {
        entries.push(lstm_entry(l, h, w, conv));
    }
    if let Some(p) = &arch.proj_out {
        entries.push(conv_entry(p, h, w, conv));
    }
    for stage in &arch.decoder {
        let first = &stage[0];
        let s = first.in_scale;
        let stage_name = first.name.split('.').next().unwrap_or("dec");
        entries.push(elementwise_entry(
            format!("{stage_name}.skip"),
            first.in_channels,
            h / s,
            w / s,
            1,
        ));
        for layer in stage {
            entries.push(conv_entry(layer, h, w, conv));
        }
    }
    if r > 1 {
        entries.push(elementwise_entry("shuffle".into(), config.in_channels, h, w, 0));
    }
    entries.push(conv_entry(&arch.residual, h, w, conv));
    // residual add and output sigmoid
    entries.push(elementwise_entry("output".into(), config.in_channels, h, w, 2));

    Ok(FlopReport {
        entries,
        convention: conv,
        height,
        width,
    })
}

/// Smallest valid `(height, width)` at or above the requested size.
pub fn padded_dims(config: &ModelConfig, height: usize, width: usize) -> (usize, usize) {
    let m = config.size_multiple();
    (height.div_ceil(m).max(1) * m, width.div_ceil(m).max(1) * m)
}

/// [`count_flops`] at the padded size a denoise run would actually execute
/// for a `height` x `width` frame.
pub fn count_flops_padded(config: &ModelConfig, height: usize, width: usize) -> Result<FlopReport> {
    let (h, w) = padded_dims(config, height, width);
    count_flops(config, h, w)
}

/// Runs one frame through a freshly built model and returns the
/// multiply-accumulates the convolution kernels actually performed.
pub fn empirical_mac_probe(config: &ModelConfig, height: usize, width: usize) -> Result<u64> {
    if height > PROBE_MAX_EXTENT || width > PROBE_MAX_EXTENT {
        return Err(Error::Invalid(format!(
            "probe frames are limited to {PROBE_MAX_EXTENT}x{PROBE_MAX_EXTENT}, got {width}x{height}"
        )));
    }
    let model = Model::build(config.clone(), 0)?;
    let tape = Tape::inference();
    let g = model.bind(&tape, false);
    let frame = tape.constant(Tensor::full(&[1, config.in_channels, height, width], 0.5f32));
    let state = g.zero_state(1, height, width)?;
    g.step(&frame, &state)?;
    Ok(tape.macs())
}
