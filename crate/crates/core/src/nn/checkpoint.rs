//! `EBMCKPT1` checkpoint files.
//!
//! Layout (little-endian): the 8-byte magic, `u32` layer count, then per
//! layer `u32` kernel height, kernel width, stride, padding, f_in, f_out,
//! activation code (0 = none, 1 = ELU) followed by the `f64` ELU alpha
//! (0 for none). After the descriptor come the raw `f64` weights and biases
//! of every layer in order.

use std::path::Path;

use super::activation::{Activation, EluActivation};
use super::params::{LayerParams, ModelParams};
use super::topology::{ConvLayerSpec, NetworkTopology};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::Result;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EBMCKPT1";

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    let specs = params.topology().layers();
    w.u32(specs.len() as u32);
    for spec in specs {
        w.u32(spec.kernel.0 as u32);
        w.u32(spec.kernel.1 as u32);
        w.u32(spec.stride as u32);
        w.u32(spec.padding as u32);
        w.u32(spec.f_in as u32);
        w.u32(spec.f_out as u32);
        match spec.activation {
            Activation::Identity => {
                w.u32(0);
                w.f64(0.0);
            }
            Activation::Elu(e) => {
                w.u32(1);
                w.f64(e.alpha);
            }
        }
    }
    for layer in params.layers() {
        w.f64s(layer.weight.data());
        w.f64s(layer.bias.data());
    }
    w.into_bytes()
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new("checkpoint", bytes, CHECKPOINT_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 || count > 1024 {
        return Err(r.error(format!("implausible layer count {count}")));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let kh = r.u32()? as usize;
        let kw = r.u32()? as usize;
        let stride = r.u32()? as usize;
        let padding = r.u32()? as usize;
        let f_in = r.u32()? as usize;
        let f_out = r.u32()? as usize;
        let code = r.u32()?;
        let alpha = r.f64()?;
        let activation = match code {
            0 => Activation::Identity,
            1 => Activation::Elu(EluActivation { alpha }),
            other => return Err(r.error(format!("unknown activation code {other}"))),
        };
        specs.push(ConvLayerSpec {
            kernel: (kh, kw),
            stride,
            padding,
            f_in,
            f_out,
            activation,
        });
    }
    let topology = NetworkTopology::new(specs)?;
    let mut layers = Vec::with_capacity(count);
    for spec in topology.layers() {
        let shape = spec.weight_shape();
        let n: usize = shape.iter().product();
        let weight = Tensor::new(shape, r.f64s(n)?)?;
        let bias = Tensor::new(vec![spec.f_out], r.f64s(spec.f_out)?)?;
        layers.push(LayerParams { weight, bias });
    }
    r.finish()?;
    ModelParams::new(topology, layers)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    write_file(path, &encode(params))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    decode(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitScheme;

    #[test]
    fn round_trip_is_exact() {
        let t = NetworkTopology::for_input_size(8, 3, 2).unwrap();
        let p = ModelParams::init(&t, 7, InitScheme::default());
        let back = decode(&encode(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn header_starts_with_magic() {
        let t = NetworkTopology::for_input_size(8, 1, 2).unwrap();
        let bytes = encode(&ModelParams::zeros(&t));
        assert_eq!(&bytes[..8], b"EBMCKPT1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let t = NetworkTopology::for_input_size(8, 1, 2).unwrap();
        let bytes = encode(&ModelParams::zeros(&t));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
