use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};

/// How multiply-accumulates are converted to FLOPs in cost reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlopConvention {
    /// One MAC counts as one operation.
    Mac,
    /// One MAC counts as two operations (a multiply and an add).
    #[default]
    Flop2,
}

impl FlopConvention {
    pub fn per_mac(self) -> u64 {
        match self {
            FlopConvention::Mac => 1,
            FlopConvention::Flop2 => 2,
        }
    }
}

impl FromStr for FlopConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mac" => Ok(FlopConvention::Mac),
            "flop2" => Ok(FlopConvention::Flop2),
            other => Err(format!("unknown convention {other:?} (expected mac or flop2)")),
        }
    }
}

impl fmt::Display for FlopConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlopConvention::Mac => "mac",
            FlopConvention::Flop2 => "flop2",
        })
    }
}

/// Stage widths of the shipped reference models, chosen so that the cost
/// model lands on the published complexity figures (about 116.5 GFLOPs for
/// the large variant on an 854x480 frame).
pub const REFERENCE_WIDTHS: [usize; 3] = [20, 40, 80];

/// Constant channel width of the recurrence-only ablation.
pub const LSTM_ONLY_WIDTH: usize = 3;

/// Full architectural description. One record drives model construction,
/// cost accounting and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// 3 for RGB frames, 4 for packed Bayer mosaics.
    pub in_channels: usize,
    pub stage_widths: [usize; 3],
    pub kernel_size: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub use_encoder_decoder: bool,
    /// 1 for the large variant, 2 wraps the network in pixel unshuffle/shuffle.
    pub shuffle_factor: usize,
    pub flop_convention: FlopConvention,
}

/// The five configurations of the ablation lattice, in ascending cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Two ConvLSTM layers at full resolution, no encoder-decoder.
    LstmOnly,
    /// Shuffle-wrapped encoder-decoder without recurrence.
    EncDecOnly,
    /// Shuffle-wrapped encoder-decoder with one ConvLSTM layer.
    EncDecOneLstm,
    /// The small variant.
    Small,
    /// The large variant.
    Large,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::LstmOnly,
        Ablation::EncDecOnly,
        Ablation::EncDecOneLstm,
        Ablation::Small,
        Ablation::Large,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::LstmOnly => "lstm-only",
            Ablation::EncDecOnly => "encdec-only",
            Ablation::EncDecOneLstm => "encdec-1lstm",
            Ablation::Small => "llvd-s",
            Ablation::Large => "llvd-l",
        }
    }

    pub fn config(self, in_channels: usize) -> ModelConfig {
        let base = ModelConfig::llvd_s(in_channels);
        match self {
            Ablation::LstmOnly => ModelConfig {
                use_encoder_decoder: false,
                shuffle_factor: 1,
                lstm_layers: 2,
                lstm_hidden: LSTM_ONLY_WIDTH,
                ..base
            },
            Ablation::EncDecOnly => ModelConfig {
                lstm_layers: 0,
                ..base
            },
            Ablation::EncDecOneLstm => ModelConfig {
                lstm_layers: 1,
                ..base
            },
            Ablation::Small => base,
            Ablation::Large => ModelConfig::llvd_l(in_channels),
        }
    }
}

impl ModelConfig {
    pub fn llvd_l(in_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            stage_widths: REFERENCE_WIDTHS,
            kernel_size: 3,
            lstm_layers: 2,
            lstm_hidden: REFERENCE_WIDTHS[2],
            use_encoder_decoder: true,
            shuffle_factor: 1,
            flop_convention: FlopConvention::Flop2,
        }
    }

    pub fn llvd_s(in_channels: usize) -> Self {
        ModelConfig {
            shuffle_factor: 2,
            ..Self::llvd_l(in_channels)
        }
    }

    /// Same topology with different stage widths (hidden width follows the
    /// latent width).
    pub fn with_widths(self, stage_widths: [usize; 3]) -> Self {
        ModelConfig {
            stage_widths,
            lstm_hidden: if self.use_encoder_decoder {
                stage_widths[2]
            } else {
                self.lstm_hidden
            },
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("in_channels", "must be positive"));
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::config("stage_widths", "all widths must be positive"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config("kernel_size", "must be odd and positive"));
        }
        if !(1..=2).contains(&self.shuffle_factor) {
            return Err(Error::config("shuffle_factor", "must be 1 or 2"));
        }
        if self.lstm_layers > 2 {
            return Err(Error::config("lstm_layers", "at most 2 layers"));
        }
        if !self.use_encoder_decoder && self.lstm_layers == 0 {
            return Err(Error::config(
                "lstm_layers",
                "a model without encoder-decoder needs at least one LSTM layer",
            ));
        }
        if self.lstm_layers > 0 && self.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden", "must be positive"));
        }
        if self.use_encoder_decoder && self.lstm_hidden != self.stage_widths[2] {
            return Err(Error::config(
                "lstm_hidden",
                format!(
                    "must equal the latent width {} when the encoder-decoder is used",
                    self.stage_widths[2]
                ),
            ));
        }
        Ok(())
    }

    /// Spatial downscale of the latent relative to the input frame.
    pub fn latent_downscale(&self) -> usize {
        if self.use_encoder_decoder {
            4 * self.shuffle_factor
        } else {
            self.shuffle_factor
        }
    }

    /// Frame extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        self.latent_downscale()
    }

    /// Channels of the recurrent latent.
    pub fn latent_channels(&self) -> usize {
        if self.use_encoder_decoder {
            self.stage_widths[2]
        } else {
            self.lstm_hidden
        }
    }

    pub fn check_frame_dims(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::shape(format!(
                "frame {width}x{height} is not a multiple of {m} in both dimensions; \
                 pad the input to {}x{}",
                width.div_ceil(m).max(1) * m,
                height.div_ceil(m).max(1) * m
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let w = self.stage_widths;
        vec![
            ("in_channels", self.in_channels.to_string()),
            ("stage_widths", format!("{},{},{}", w[0], w[1], w[2])),
            ("kernel_size", self.kernel_size.to_string()),
            ("lstm_layers", self.lstm_layers.to_string()),
            ("lstm_hidden", self.lstm_hidden.to_string()),
            ("use_encoder_decoder", self.use_encoder_decoder.to_string()),
            ("shuffle_factor", self.shuffle_factor.to_string()),
            ("flop_convention", self.flop_convention.to_string()),
        ]
    }

    pub fn to_kv_string(&self) -> String {
        kv::render(&self.to_pairs())
    }

    /// Consumes the model keys from `kv`. Missing keys take the large
    /// variant's defaults; `lstm_hidden` defaults to the latent width.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let mut cfg = Self::llvd_l(kv.take("in_channels")?.unwrap_or(3));
        if let Some(w) = kv.take_list::<usize>("stage_widths")? {
            cfg.stage_widths = w
                .try_into()
                .map_err(|_| Error::config("stage_widths", "expected exactly three widths"))?;
        }
        if let Some(k) = kv.take("kernel_size")? {
            cfg.kernel_size = k;
        }
        if let Some(l) = kv.take("lstm_layers")? {
            cfg.lstm_layers = l;
        }
        if let Some(e) = kv.take("use_encoder_decoder")? {
            cfg.use_encoder_decoder = e;
        }
        if let Some(r) = kv.take("shuffle_factor")? {
            cfg.shuffle_factor = r;
        }
        if let Some(c) = kv.take("flop_convention")? {
            cfg.flop_convention = c;
        }
        cfg.lstm_hidden = kv.take("lstm_hidden")?.unwrap_or(cfg.stage_widths[2]);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        let cfg = Self::from_kv(&mut kv).map_err(|e| Error::format(path, e.to_string()))?;
        kv.finish().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for a in Ablation::ALL {
            a.config(3).validate().unwrap();
            a.config(4).validate().unwrap();
        }
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let bad = [
            (ModelConfig { shuffle_factor: 3, ..ModelConfig::llvd_l(3) }, "shuffle_factor"),
            (ModelConfig { lstm_layers: 3, ..ModelConfig::llvd_l(3) }, "lstm_layers"),
            (
                ModelConfig {
                    use_encoder_decoder: false,
                    lstm_layers: 0,
                    ..ModelConfig::llvd_l(3)
                },
                "lstm_layers",
            ),
            (ModelConfig { lstm_hidden: 7, ..ModelConfig::llvd_l(3) }, "lstm_hidden"),
            (ModelConfig { kernel_size: 4, ..ModelConfig::llvd_l(3) }, "kernel_size"),
        ];
        for (cfg, field) in bad {
            match cfg.validate() {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error on {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn kv_round_trip() {
        for a in Ablation::ALL {
            let cfg = a.config(3);
            assert_eq!(ModelConfig::parse(&cfg.to_kv_string()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ModelConfig::parse("stage_widths = 8,16,32\nwidht = 3").is_err());
    }

    #[test]
    fn indivisible_dims_suggest_padding() {
        let err = ModelConfig::llvd_s(3).check_frame_dims(480, 854).unwrap_err();
        assert!(err.to_string().contains("856x480"), "{err}");
    }
}
