//! Evaluation of a denoiser over paired noisy/clean sequences.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::data::VideoSequence;
use crate::error::{Error, Result};
use crate::metrics::{self, SsimParams};
use crate::model::Model;
use crate::tensor::Tensor;

/// Anything that maps a noisy sequence to a restored one.
pub trait Denoiser {
    fn denoise(&self, noisy: &VideoSequence) -> Result<VideoSequence>;
}

impl Denoiser for Model {
    fn denoise(&self, noisy: &VideoSequence) -> Result<VideoSequence> {
        Ok(self.denoise_sequence(noisy, None)?.0)
    }
}

/// Returns its input; the baseline for noisy-vs-clean metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, noisy: &VideoSequence) -> Result<VideoSequence> {
        Ok(noisy.clone())
    }
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub frames: usize,
    /// Mean of the per-frame PSNRs (dB); infinite when any frame is exact.
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub sequences: Vec<SequenceMetrics>,
    #[serde(serialize_with = "finite_or_inf")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricsReport {
    pub fn from_sequences(sequences: Vec<SequenceMetrics>) -> Self {
        let n = sequences.len().max(1) as f64;
        let mean_psnr = sequences.iter().map(|s| s.psnr).sum::<f64>() / n;
        let mean_ssim = sequences.iter().map(|s| s.ssim).sum::<f64>() / n;
        MetricsReport {
            sequences,
            mean_psnr,
            mean_ssim,
        }
    }

    pub fn to_table(&self) -> String {
        let w = self
            .sequences
            .iter()
            .map(|s| s.id.len())
            .max()
            .unwrap_or(0)
            .max("sequence".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  {:>6}  {:>9}  {:>7}", "sequence", "frames", "psnr_db", "ssim");
        let row = |out: &mut String, id: &str, frames: String, psnr: f64, ssim: f64| {
            let _ = writeln!(out, "{id:<w$}  {frames:>6}  {:>9}  {ssim:>7.4}", fmt_db(psnr));
        };
        for s in &self.sequences {
            row(&mut out, &s.id, s.frames.to_string(), s.psnr, s.ssim);
        }
        row(&mut out, "mean", String::new(), self.mean_psnr, self.mean_ssim);
        out
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "inf".into()
    }
}

/// SSIM window for a frame: the default 11x11 window, shrunk to the
/// largest odd size that fits on frames smaller than that.
pub fn ssim_params_for(h: usize, w: usize) -> Result<SsimParams> {
    let d = SsimParams::default();
    let fit = h.min(w);
    if fit >= d.window_size {
        return Ok(d);
    }
    let size = if fit.is_multiple_of(2) { fit - 1 } else { fit };
    if size < 3 {
        return Err(Error::shape(format!("frame {w}x{h} is too small for SSIM")));
    }
    Ok(SsimParams {
        window_size: size,
        ..d
    })
}

/// PSNR and SSIM of `output` against `clean`, frame by frame, after
/// clamping the output to `[0, 1]`.
pub fn sequence_metrics(id: &str, output: &VideoSequence, clean: &VideoSequence) -> Result<SequenceMetrics> {
    if output.len() != clean.len() || output.frame_dims() != clean.frame_dims() {
        return Err(Error::Invalid(format!(
            "sequence {id}: {} frames of {:?} vs {} clean frames of {:?}",
            output.len(),
            output.frame_dims(),
            clean.len(),
            clean.frame_dims()
        )));
    }
    let (_, h, w) = clean.frame_dims();
    let params = ssim_params_for(h, w)?;
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for (o, c) in output.frames().iter().zip(clean.frames()) {
        let o: Tensor<f32> = o.map(|v| v.clamp(0.0, 1.0));
        psnr += metrics::psnr(&o, c, 1.0)?;
        ssim += metrics::ssim(&o, c, &params)?;
    }
    let n = clean.len() as f64;
    Ok(SequenceMetrics {
        id: id.to_string(),
        frames: clean.len(),
        psnr: psnr / n,
        ssim: ssim / n,
    })
}

/// Runs `denoiser` on every noisy sequence and scores it against the paired
/// clean sequence.
pub fn evaluate<D: Denoiser + ?Sized>(
    denoiser: &D,
    pairs: &[(String, VideoSequence, VideoSequence)],
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (id, noisy, clean) in pairs {
        if noisy.len() != clean.len() || noisy.layout() != clean.layout() {
            return Err(Error::Invalid(format!(
                "sequence {id}: {} noisy {} frames vs {} clean {} frames",
                noisy.len(),
                noisy.layout(),
                clean.len(),
                clean.layout()
            )));
        }
        let restored = denoiser.denoise(noisy)?;
        out.push(sequence_metrics(id, &restored, clean)?);
    }
    Ok(MetricsReport::from_sequences(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{add_awgn, Layout};
    use crate::model::ModelConfig;

    fn clip(seed: usize) -> VideoSequence {
        let f = (0..3)
            .map(|t| Tensor::from_fn(&[3, 16, 16], |i| ((i * 13 + t * 5 + seed) % 29) as f32 / 28.0))
            .collect();
        VideoSequence::new(f, Layout::Rgb).unwrap()
    }

    #[test]
    fn identity_on_clean_pairs_hits_the_cap() {
        let pairs = vec![("a".to_string(), clip(0), clip(0))];
        let r = evaluate(&Identity, &pairs).unwrap();
        assert_eq!(r.mean_psnr, f64::INFINITY);
        assert_eq!(r.mean_ssim, 1.0);
        assert!(r.to_table().contains("inf"));
    }

    #[test]
    fn aggregates_are_means_of_entries() {
        let pairs: Vec<_> = (0..3)
            .map(|i| {
                let c = clip(i);
                (format!("s{i}"), add_awgn(&c, 10.0 + 10.0 * i as f64, 4).unwrap(), c)
            })
            .collect();
        let r = evaluate(&Identity, &pairs).unwrap();
        let p: f64 = r.sequences.iter().map(|s| s.psnr).sum::<f64>() / 3.0;
        let s: f64 = r.sequences.iter().map(|s| s.ssim).sum::<f64>() / 3.0;
        assert!((r.mean_psnr - p).abs() < 1e-9 && (r.mean_ssim - s).abs() < 1e-9);
        assert!(r.sequences[0].psnr > r.sequences[2].psnr);
        let again = evaluate(&Identity, &pairs).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn mismatched_pairs_are_rejected() {
        let short = clip(0).replace_frames(clip(0).frames()[..2].to_vec()).unwrap();
        assert!(evaluate(&Identity, &[("x".into(), short, clip(0))]).is_err());
        assert!(evaluate(&Identity, &[]).is_err());
    }

    #[test]
    fn model_denoiser_output_is_in_range() {
        let m = Model::build(ModelConfig::llvd_s(3).with_widths([4, 4, 8]), 0).unwrap();
        let r = evaluate(&m, &[("a".into(), clip(1), clip(1))]).unwrap();
        assert!(r.mean_psnr.is_finite());
    }

    #[test]
    fn small_frames_shrink_the_window() {
        assert_eq!(ssim_params_for(8, 12).unwrap().window_size, 7);
        assert_eq!(ssim_params_for(32, 32).unwrap().window_size, 11);
        assert!(ssim_params_for(2, 2).is_err());
    }
}
