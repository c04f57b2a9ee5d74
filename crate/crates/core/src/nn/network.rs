//! Forward evaluation and reverse-mode gradients of the energy network.

use super::activation::Activation;
use super::conv::{col2im, gemm, im2col, ConvGeometry};
use super::params::{ModelParams, ParamGrads};
use super::EnergyFunction;
use crate::error::{EbmError, Result};
use crate::tensor::Tensor;

struct LayerCache {
    geometry: ConvGeometry,
    cols: Vec<f64>,
    pre_activation: Vec<f64>,
}

fn hwc_to_chw(image: &Tensor, h: usize, w: usize, c: usize) -> Vec<f64> {
    let src = image.data();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                out[(k * h + y) * w + x] = src[(y * w + x) * c + k];
            }
        }
    }
    out
}

fn chw_to_hwc(buf: &[f64], h: usize, w: usize, c: usize) -> Tensor {
    let mut out = vec![0.0; h * w * c];
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * c + k] = buf[(k * h + y) * w + x];
            }
        }
    }
    Tensor::new(vec![h, w, c], out).expect("length matches by construction")
}

impl ModelParams {
    fn check_image(&self, image: &Tensor) -> Result<(usize, usize, usize)> {
        let (h, w, c) = image.image_dims()?;
        self.topology().validate_input(h, w, c)?;
        image.ensure_finite("input image")?;
        Ok((h, w, c))
    }

    fn run_forward(&self, image: &Tensor, keep: bool) -> Result<(f64, Vec<LayerCache>)> {
        let (h, w, c) = self.check_image(image)?;
        let mut act = hwc_to_chw(image, h, w, c);
        let (mut cur_h, mut cur_w) = (h, w);
        let mut caches = Vec::with_capacity(if keep { self.layers().len() } else { 0 });

        for (spec, p) in self.topology().layers().iter().zip(self.layers()) {
            let (out_h, out_w) = spec
                .output_size(cur_h, cur_w)
                .expect("validated by validate_input");
            let geometry = ConvGeometry::new(spec, cur_h, cur_w, out_h, out_w);
            let cols = im2col(&act, &geometry);
            let npos = geometry.positions();
            let mut z = vec![0.0; spec.f_out * npos];
            for (row, &b) in z.chunks_exact_mut(npos).zip(p.bias.data()) {
                row.fill(b);
            }
            gemm(
                spec.f_out,
                geometry.patch_len(),
                npos,
                p.weight.data(),
                false,
                &cols,
                false,
                &mut z,
                1.0,
            );
            act = match spec.activation {
                Activation::Identity => z.clone(),
                a => z.iter().map(|&v| a.apply(v)).collect(),
            };
            if keep {
                caches.push(LayerCache {
                    geometry,
                    cols,
                    pre_activation: z,
                });
            }
            cur_h = out_h;
            cur_w = out_w;
        }

        let energy = act[0];
        if !energy.is_finite() {
            return Err(EbmError::NonFinite {
                context: "forward energy".into(),
            });
        }
        Ok((energy, caches))
    }

    /// Back-propagates `seed = ∂L/∂E` through the cached forward pass.
    /// Parameter gradients are added into `grads` when given; the input
    /// gradient is returned in CHW layout when requested.
    fn run_backward(
        &self,
        caches: &[LayerCache],
        seed: f64,
        mut grads: Option<&mut ParamGrads>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let specs = self.topology().layers();
        let mut upstream = vec![seed];
        for i in (0..specs.len()).rev() {
            let spec = &specs[i];
            let cache = &caches[i];
            let g = &cache.geometry;
            let npos = g.positions();

            let mut dz = upstream;
            if spec.activation != Activation::Identity {
                for (d, &z) in dz.iter_mut().zip(&cache.pre_activation) {
                    *d *= spec.activation.derivative(z);
                }
            }

            if let Some(grads) = grads.as_deref_mut() {
                let layer = &mut grads.layers_mut()[i];
                gemm(
                    spec.f_out,
                    npos,
                    g.patch_len(),
                    &dz,
                    false,
                    &cache.cols,
                    true,
                    layer.weight.data_mut(),
                    1.0,
                );
                for (b, row) in layer.bias.data_mut().iter_mut().zip(dz.chunks_exact(npos)) {
                    *b += row.iter().sum::<f64>();
                }
            }

            if i == 0 && !want_input {
                return None;
            }
            let mut dcols = vec![0.0; g.patch_len() * npos];
            gemm(
                g.patch_len(),
                spec.f_out,
                npos,
                self.layers()[i].weight.data(),
                true,
                &dz,
                false,
                &mut dcols,
                0.0,
            );
            upstream = col2im(&dcols, g);
        }
        Some(upstream)
    }

    /// Scalar energy `E(x)` of an `(h, w, c)` image.
    pub fn forward_energy(&self, image: &Tensor) -> Result<f64> {
        self.run_forward(image, false).map(|(e, _)| e)
    }

    /// `∂E/∂x`, same shape as the image.
    pub fn input_gradient(&self, image: &Tensor) -> Result<Tensor> {
        self.energy_and_input_gradient(image).map(|(_, g)| g)
    }

    pub fn energy_and_input_gradient(&self, image: &Tensor) -> Result<(f64, Tensor)> {
        let (h, w, c) = image.image_dims()?;
        let (energy, caches) = self.run_forward(image, true)?;
        let grad = self
            .run_backward(&caches, 1.0, None, true)
            .expect("input gradient requested");
        let grad = chw_to_hwc(&grad, h, w, c);
        grad.ensure_finite("input gradient")?;
        Ok((energy, grad))
    }

    /// Adds `weight(E(x)) · ∂E(x)/∂θ` into `grads` and returns `E(x)`.
    ///
    /// `weight` sees the energy before the backward pass, which lets callers
    /// express losses such as `E + α·E²` without a second forward pass.
    pub fn accumulate_param_gradient(
        &self,
        image: &Tensor,
        weight: impl FnOnce(f64) -> f64,
        grads: &mut ParamGrads,
    ) -> Result<f64> {
        let (energy, caches) = self.run_forward(image, true)?;
        self.run_backward(&caches, weight(energy), Some(grads), false);
        Ok(energy)
    }

    /// Gradient of the batch-mean energy `(1/B) Σ E(x_b)` with respect to
    /// every weight and bias.
    pub fn param_gradient(&self, batch: &[Tensor]) -> Result<ParamGrads> {
        let first = batch.first().ok_or_else(|| EbmError::EmptyBatch {
            context: "param_gradient".into(),
        })?;
        let mut grads = ParamGrads::zeros(self.topology());
        let scale = 1.0 / batch.len() as f64;
        for x in batch {
            x.ensure_shape(first.shape(), "param_gradient batch")?;
            self.accumulate_param_gradient(x, |_| scale, &mut grads)?;
        }
        grads_finite(&grads)?;
        Ok(grads)
    }
}

fn grads_finite(grads: &ParamGrads) -> Result<()> {
    if grads.slices().flat_map(|s| s.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EbmError::NonFinite {
            context: "parameter gradient".into(),
        })
    }
}

impl EnergyFunction for ModelParams {
    fn energy(&self, x: &Tensor) -> Result<f64> {
        self.forward_energy(x)
    }

    fn energy_and_input_gradient(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        ModelParams::energy_and_input_gradient(self, x)
    }
}
