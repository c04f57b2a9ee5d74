use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{EbmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    /// (height, width)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub f_in: usize,
    pub f_out: usize,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub fn new(
        kernel: usize,
        stride: usize,
        padding: usize,
        f_in: usize,
        f_out: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride,
            padding,
            f_in,
            f_out,
            activation,
        }
    }

    /// Spatial output size for an `h × w` input, or `None` if the padded
    /// input is smaller than the kernel.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.f_out, self.f_in, self.kernel.0, self.kernel.1]
    }

    pub fn fan_in(&self) -> usize {
        self.f_in * self.kernel.0 * self.kernel.1
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |message: &str| {
            Err(EbmError::LayerShape {
                layer: index,
                message: message.to_string(),
            })
        };
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return bad("kernel dimensions must be at least 1");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.f_in == 0 || self.f_out == 0 {
            return bad("feature counts must be at least 1");
        }
        if let Activation::Elu(e) = self.activation {
            if !(e.alpha > 0.0 && e.alpha.is_finite()) {
                return bad("ELU alpha must be positive");
            }
        }
        Ok(())
    }
}

/// Ordered stack of convolutions ending in a single-feature linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    layers: Vec<ConvLayerSpec>,
}

impl NetworkTopology {
    pub fn new(layers: Vec<ConvLayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(EbmError::InvalidConfig("topology has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
        }
        let n_c = layers[0].f_in;
        if n_c != 1 && n_c != 3 {
            return Err(EbmError::LayerShape {
                layer: 0,
                message: format!("input channel count must be 1 or 3, got {n_c}"),
            });
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].f_out != pair[1].f_in {
                return Err(EbmError::LayerShape {
                    layer: i + 1,
                    message: format!(
                        "expects {} input features but layer {} produces {}",
                        pair[1].f_in, i, pair[0].f_out
                    ),
                });
            }
        }
        let last = layers.len() - 1;
        let final_layer = &layers[last];
        if final_layer.f_out != 1 || final_layer.activation != Activation::Identity {
            return Err(EbmError::LayerShape {
                layer: last,
                message: "final layer must have one output feature and no activation".into(),
            });
        }
        Ok(Self { layers })
    }

    /// The 128×128 architecture: a 3×3 stem, five stride-2 4×4 layers and a
    /// 4×4 valid convolution down to one energy value.
    pub fn canonical(n_c: usize) -> Result<Self> {
        Self::for_input_size(128, n_c, 32)
    }

    /// 32×32 variant of the canonical stack (two fewer stride-2 layers).
    pub fn reduced(n_c: usize) -> Result<Self> {
        Self::for_input_size(32, n_c, 32)
    }

    /// Builds the canonical family for a power-of-two input `size ≥ 8`.
    ///
    /// Widths double from `base_width` per stride-2 layer and saturate at
    /// `8 * base_width`; `base_width = 32` at `size = 128` gives the
    /// canonical 32/64/128/256/256/256 stack.
    pub fn for_input_size(size: usize, n_c: usize, base_width: usize) -> Result<Self> {
        if size < 8 || !size.is_power_of_two() {
            return Err(EbmError::InvalidConfig(format!(
                "input size must be a power of two ≥ 8, got {size}"
            )));
        }
        if base_width == 0 {
            return Err(EbmError::InvalidConfig("base width must be ≥ 1".into()));
        }
        let downsamples = (size / 4).trailing_zeros() as usize;
        let mut layers = vec![ConvLayerSpec::new(
            3,
            1,
            1,
            n_c,
            base_width,
            Activation::elu(),
        )];
        let mut width = base_width;
        for _ in 0..downsamples {
            let next = (width * 2).min(8 * base_width);
            layers.push(ConvLayerSpec::new(4, 2, 1, width, next, Activation::elu()));
            width = next;
        }
        layers.push(ConvLayerSpec::new(4, 1, 0, width, 1, Activation::Identity));
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ConvLayerSpec] {
        &self.layers
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].f_in
    }

    /// Output spatial size after every layer for an `h × w` input.
    pub fn spatial_trace(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let mut trace = Vec::with_capacity(self.layers.len());
        let (mut ch, mut cw) = (h, w);
        for (i, layer) in self.layers.iter().enumerate() {
            let (oh, ow) = layer
                .output_size(ch, cw)
                .ok_or_else(|| EbmError::LayerShape {
                    layer: i,
                    message: format!(
                        "input {ch}×{cw} is smaller than the {:?} kernel",
                        layer.kernel
                    ),
                })?;
            trace.push((oh, ow));
            ch = oh;
            cw = ow;
        }
        Ok(trace)
    }

    /// Checks that an `h × w × c` image reduces to a single energy value.
    pub fn validate_input(&self, h: usize, w: usize, c: usize) -> Result<()> {
        if c != self.input_channels() {
            return Err(EbmError::LayerShape {
                layer: 0,
                message: format!(
                    "expects {} input channels, image has {c}",
                    self.input_channels()
                ),
            });
        }
        let trace = self.spatial_trace(h, w)?;
        let last = trace.len() - 1;
        if trace[last] != (1, 1) {
            return Err(EbmError::LayerShape {
                layer: last,
                message: format!(
                    "output is {}×{} for a {h}×{w} input, expected 1×1",
                    trace[last].0, trace[last].1
                ),
            });
        }
        Ok(())
    }

    /// Smallest square input that reduces to 1×1, if the stack admits one.
    pub fn minimal_input_size(&self) -> Option<usize> {
        let mut size = 1usize;
        for layer in self.layers.iter().rev() {
            let k = layer.kernel.0.max(layer.kernel.1);
            let needed = (size - 1) * layer.stride + k;
            size = needed.checked_sub(2 * layer.padding)?.max(1);
        }
        self.validate_input(size, size, self.input_channels())
            .ok()
            .map(|_| size)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.f_out * l.fan_in() + l.f_out)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_matches_reference_table() {
        let t = NetworkTopology::canonical(3).unwrap();
        let rows: Vec<_> = t
            .layers()
            .iter()
            .map(|l| (l.kernel.0, l.stride, l.padding, l.f_in, l.f_out))
            .collect();
        assert_eq!(
            rows,
            vec![
                (3, 1, 1, 3, 32),
                (4, 2, 1, 32, 64),
                (4, 2, 1, 64, 128),
                (4, 2, 1, 128, 256),
                (4, 2, 1, 256, 256),
                (4, 2, 1, 256, 256),
                (4, 1, 0, 256, 1),
            ]
        );
        assert!(t.layers()[..6]
            .iter()
            .all(|l| matches!(l.activation, Activation::Elu(_))));
        assert_eq!(t.layers()[6].activation, Activation::Identity);
    }

    #[test]
    fn canonical_trace() {
        for n_c in [1, 3] {
            let t = NetworkTopology::canonical(n_c).unwrap();
            let trace: Vec<usize> = t
                .spatial_trace(128, 128)
                .unwrap()
                .iter()
                .map(|p| p.0)
                .collect();
            assert_eq!(trace, vec![128, 64, 32, 16, 8, 4, 1]);
            assert_eq!(t.minimal_input_size(), Some(128));
        }
    }

    #[test]
    fn reduced_trace() {
        let t = NetworkTopology::reduced(1).unwrap();
        let trace: Vec<usize> = t
            .spatial_trace(32, 32)
            .unwrap()
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(trace, vec![32, 16, 8, 4, 1]);
        assert_eq!(t.layers().len(), 5);
        assert_eq!(t.minimal_input_size(), Some(32));
    }

    #[test]
    fn rejects_incompatible_channels() {
        let err = NetworkTopology::new(vec![
            ConvLayerSpec::new(3, 1, 1, 1, 4, Activation::elu()),
            ConvLayerSpec::new(3, 1, 0, 5, 1, Activation::Identity),
        ])
        .unwrap_err();
        assert!(matches!(err, EbmError::LayerShape { layer: 1, .. }));
    }

    #[test]
    fn rejects_activated_final_layer() {
        let err = NetworkTopology::new(vec![ConvLayerSpec::new(1, 1, 0, 1, 1, Activation::elu())])
            .unwrap_err();
        assert!(matches!(err, EbmError::LayerShape { layer: 0, .. }));
    }

    #[test]
    fn wrong_input_size_names_last_layer() {
        let t = NetworkTopology::reduced(3).unwrap();
        let err = t.validate_input(64, 64, 3).unwrap_err();
        assert!(
            matches!(err, EbmError::LayerShape { layer: 4, .. }),
            "{err}"
        );
        let err = t.validate_input(32, 32, 1).unwrap_err();
        assert!(matches!(err, EbmError::LayerShape { layer: 0, .. }));
    }
}
