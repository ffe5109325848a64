//! Layer plan derived from a [`ModelConfig`]: every convolution and
//! recurrent layer with its channel counts and the spatial scale it runs at.
//! Parameter shapes and the analytic cost model are both read from here.

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Upsampling transposed convolution.
    pub transpose: bool,
    pub relu: bool,
    /// Downscale of the layer input relative to the full frame.
    pub in_scale: usize,
    /// Downscale of the layer output relative to the full frame.
    pub out_scale: usize,
}

impl ConvLayer {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// `[Cout, Cin, k, k]` for convolutions, `[Cin, Cout, k, k]` for the
    /// transposed layers.
    pub fn weight_dims(&self) -> [usize; 4] {
        let k = self.kernel;
        if self.transpose {
            [self.in_channels, self.out_channels, k, k]
        } else {
            [self.out_channels, self.in_channels, k, k]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmLayer {
    pub name: String,
    pub in_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub scale: usize,
}

impl LstmLayer {
    /// Gate convolution weight: input and previous hidden concatenated,
    /// producing the i, f, o, g gates stacked along channels.
    pub fn weight_dims(&self) -> [usize; 4] {
        let k = self.kernel;
        [4 * self.hidden, self.in_channels + self.hidden, k, k]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub shuffle: usize,
    /// Encoder stages in execution order, five layers each.
    pub encoder: Vec<Vec<ConvLayer>>,
    /// 1x1 projection into the recurrence when there is no encoder.
    pub proj_in: Option<ConvLayer>,
    pub lstm: Vec<LstmLayer>,
    pub proj_out: Option<ConvLayer>,
    /// Decoder stages in execution order (deepest first).
    pub decoder: Vec<Vec<ConvLayer>>,
    /// 1x1 projection of the input frame added before the output sigmoid.
    pub residual: ConvLayer,
}

pub const LAYERS_PER_STAGE: usize = 5;

impl Architecture {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        let r = cfg.shuffle_factor;
        let k = cfg.kernel_size;
        let net_in = cfg.in_channels * r * r;
        let conv = |name: String, cin, cout, stride, transpose, relu, in_scale, out_scale| ConvLayer {
            name,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride,
            transpose,
            relu,
            in_scale,
            out_scale,
        };
        let pointwise = |name: &str, cin, cout, relu, scale| ConvLayer {
            name: name.to_string(),
            in_channels: cin,
            out_channels: cout,
            kernel: 1,
            stride: 1,
            transpose: false,
            relu,
            in_scale: scale,
            out_scale: scale,
        };

        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        let (mut proj_in, mut proj_out) = (None, None);
        let latent_scale;
        if cfg.use_encoder_decoder {
            let w = cfg.stage_widths;
            let mut scale = r;
            for s in 0..3 {
                let cin = if s == 0 { net_in } else { w[s - 1] };
                let down = s < 2;
                let mut stage = Vec::with_capacity(LAYERS_PER_STAGE);
                for i in 0..LAYERS_PER_STAGE {
                    let name = format!("enc{}.conv{i}", s + 1);
                    let last = i == LAYERS_PER_STAGE - 1;
                    let stride = if last && down { 2 } else { 1 };
                    let layer_in = if i == 0 { cin } else { w[s] };
                    stage.push(conv(name, layer_in, w[s], stride, false, true, scale, scale * stride));
                    scale *= stride;
                }
                encoder.push(stage);
            }
            latent_scale = scale;
            for s in (0..3).rev() {
                let cout = if s == 0 { net_in } else { w[s - 1] };
                let up = s < 2;
                let mut stage = Vec::with_capacity(LAYERS_PER_STAGE);
                for i in 0..LAYERS_PER_STAGE {
                    let name = format!("dec{}.conv{i}", s + 1);
                    let last = i == LAYERS_PER_STAGE - 1;
                    let layer_out = if last { cout } else { w[s] };
                    let relu = !(last && s == 0);
                    if i == 0 && up {
                        stage.push(conv(name, w[s], layer_out, 2, true, relu, scale, scale / 2));
                        scale /= 2;
                    } else {
                        stage.push(conv(name, w[s], layer_out, 1, false, relu, scale, scale));
                    }
                }
                decoder.push(stage);
            }
            debug_assert_eq!(scale, r);
        } else {
            latent_scale = r;
            proj_in = Some(pointwise("proj_in", net_in, cfg.lstm_hidden, true, r));
            proj_out = Some(pointwise("proj_out", cfg.lstm_hidden, net_in, false, r));
        }

        let latent = cfg.latent_channels();
        let lstm = (0..cfg.lstm_layers)
            .map(|j| LstmLayer {
                name: format!("lstm{j}"),
                in_channels: if j == 0 { latent } else { cfg.lstm_hidden },
                hidden: cfg.lstm_hidden,
                kernel: k,
                scale: latent_scale,
            })
            .collect();

        Architecture {
            shuffle: r,
            encoder,
            proj_in,
            lstm,
            proj_out,
            decoder,
            residual: pointwise("residual", cfg.in_channels, cfg.in_channels, false, 1),
        }
    }

    /// All convolution layers in execution order (recurrent gates excluded).
    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder
            .iter()
            .flatten()
            .chain(self.proj_in.iter())
            .chain(self.proj_out.iter())
            .chain(self.decoder.iter().flatten())
            .chain(std::iter::once(&self.residual))
    }

    /// Parameter names and shapes in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let push_conv = |l: &ConvLayer, out: &mut Vec<(String, Vec<usize>)>| {
            out.push((format!("{}.weight", l.name), l.weight_dims().to_vec()));
            out.push((format!("{}.bias", l.name), vec![l.out_channels]));
        };
        for l in self.encoder.iter().flatten() {
            push_conv(l, &mut out);
        }
        if let Some(l) = &self.proj_in {
            push_conv(l, &mut out);
        }
        for l in &self.lstm {
            out.push((format!("{}.weight", l.name), l.weight_dims().to_vec()));
            out.push((format!("{}.bias", l.name), vec![4 * l.hidden]));
        }
        if let Some(l) = &self.proj_out {
            push_conv(l, &mut out);
        }
        for l in self.decoder.iter().flatten() {
            push_conv(l, &mut out);
        }
        push_conv(&self.residual, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Ablation;

    #[test]
    fn encoder_has_three_five_layer_stages_with_two_downsamples() {
        let arch = Architecture::from_config(&ModelConfig::llvd_l(3));
        assert_eq!(arch.encoder.len(), 3);
        assert!(arch.encoder.iter().all(|s| s.len() == 5));
        let strides: Vec<usize> = arch.encoder.iter().flatten().map(|l| l.stride).collect();
        assert_eq!(strides.iter().filter(|&&s| s == 2).count(), 2);
        assert_eq!(arch.encoder[0][4].stride, 2);
        assert_eq!(arch.encoder[1][4].stride, 2);
        assert_eq!(arch.encoder[2][4].out_scale, 4);
        // decoder mirrors, upsampling in the first layer of stages 2 and 1
        assert_eq!(arch.decoder.len(), 3);
        assert!(arch.decoder[1][0].transpose && arch.decoder[2][0].transpose);
        assert!(!arch.decoder[0][0].transpose);
        assert_eq!(arch.decoder[2][4].out_scale, 1);
        assert!(!arch.decoder[2][4].relu);
    }

    #[test]
    fn lstm_only_has_projections_and_two_layers() {
        let arch = Architecture::from_config(&Ablation::LstmOnly.config(3));
        assert!(arch.encoder.is_empty() && arch.decoder.is_empty());
        assert_eq!(arch.lstm.len(), 2);
        assert!(arch.proj_in.is_some() && arch.proj_out.is_some());
        let names: Vec<String> = arch.parameter_shapes().into_iter().map(|p| p.0).collect();
        assert_eq!(
            names,
            [
                "proj_in.weight",
                "proj_in.bias",
                "lstm0.weight",
                "lstm0.bias",
                "lstm1.weight",
                "lstm1.bias",
                "proj_out.weight",
                "proj_out.bias",
                "residual.weight",
                "residual.bias"
            ]
        );
    }

    #[test]
    fn shuffle_variant_differs_only_at_head_and_tail() {
        let cfg_l = ModelConfig::llvd_l(3).with_widths([8, 16, 32]);
        let cfg_s = ModelConfig::llvd_s(3).with_widths([8, 16, 32]);
        let l = Architecture::from_config(&cfg_l).parameter_shapes();
        let s = Architecture::from_config(&cfg_s).parameter_shapes();
        assert_eq!(l.len(), s.len());
        let mut differing = Vec::new();
        for ((nl, dl), (ns, ds)) in l.iter().zip(&s) {
            assert_eq!(nl, ns);
            if dl != ds {
                differing.push(nl.clone());
                // one extent scaled by r^2 = 4
                let scaled: Vec<bool> = dl.iter().zip(ds).map(|(a, b)| a != b).collect();
                for (i, changed) in scaled.iter().enumerate() {
                    if *changed {
                        assert_eq!(ds[i], 4 * dl[i]);
                    }
                }
            }
        }
        assert_eq!(
            differing,
            ["enc1.conv0.weight", "dec1.conv4.weight", "dec1.conv4.bias"]
        );
    }
}
