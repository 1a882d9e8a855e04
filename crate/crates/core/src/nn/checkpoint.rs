//! Flat little-endian binary formats for network parameters and Adam state.
//!
//! Network: `b"GPCN"`, `u32` version, `u32` hidden activation, `u32` output
//! activation, `u32` layer count, then `(u32 rows, u32 cols)` per layer,
//! then for each layer its weights (row-major, `rows × cols`) followed by its
//! bias (`rows`), all as `f64`.
//!
//! Adam: `b"GPCA"`, `u32` version, `u64` step, `f64` lr, beta1, beta2, eps,
//! `u32` layer count, the shape table, then first moments and second moments
//! in the same layout as network parameters.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::adam::{AdamConfig, AdamState};
use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};

const NET_MAGIC: &[u8; 4] = b"GPCN";
const ADAM_MAGIC: &[u8; 4] = b"GPCA";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        msg: msg.into(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn write_shapes<W: Write>(w: &mut W, layers: &[Layer]) -> std::io::Result<()> {
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        w.write_all(&(l.outputs() as u32).to_le_bytes())?;
        w.write_all(&(l.inputs() as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_values<W: Write>(w: &mut W, layers: &[Layer]) -> std::io::Result<()> {
    for l in layers {
        for x in l.weight.iter().chain(l.bias.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_shapes<R: Read>(r: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = read_u32(r)? as usize;
    if n == 0 || n > 1024 {
        return Err(bad(format!("implausible layer count {n}")));
    }
    (0..n)
        .map(|_| Ok((read_u32(r)? as usize, read_u32(r)? as usize)))
        .collect()
}

fn read_values<R: Read>(r: &mut R, shapes: &[(usize, usize)]) -> Result<Vec<Layer>> {
    shapes
        .iter()
        .map(|&(rows, cols)| {
            let weight = (0..rows * cols).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            let bias = (0..rows).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            Ok(Layer {
                weight: Array2::from_shape_vec((rows, cols), weight).expect("sized above"),
                bias: Array1::from(bias),
            })
        })
        .collect()
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    if &b != magic {
        return Err(bad(format!("bad magic {b:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_mlp<W: Write>(w: &mut W, net: &Mlp) -> std::io::Result<()> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&net.hidden_activation().code().to_le_bytes())?;
    w.write_all(&net.output_activation().code().to_le_bytes())?;
    write_shapes(w, net.layers())?;
    write_values(w, net.layers())
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    expect_magic(r, NET_MAGIC)?;
    let hidden = Activation::from_code(read_u32(r)?).ok_or_else(|| bad("unknown activation"))?;
    let output = Activation::from_code(read_u32(r)?).ok_or_else(|| bad("unknown activation"))?;
    let shapes = read_shapes(r)?;
    let layers = read_values(r, &shapes)?;
    Mlp::from_layers(layers, hidden, output)
}

pub fn write_adam<W: Write>(w: &mut W, state: &AdamState) -> std::io::Result<()> {
    w.write_all(ADAM_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&state.step.to_le_bytes())?;
    let c = state.config;
    for x in [c.lr, c.beta1, c.beta2, c.eps] {
        w.write_all(&x.to_le_bytes())?;
    }
    write_shapes(w, &state.m)?;
    write_values(w, &state.m)?;
    write_values(w, &state.v)
}

pub fn read_adam<R: Read>(r: &mut R) -> Result<AdamState> {
    expect_magic(r, ADAM_MAGIC)?;
    let step = read_u64(r)?;
    let config = AdamConfig {
        lr: read_f64(r)?,
        beta1: read_f64(r)?,
        beta2: read_f64(r)?,
        eps: read_f64(r)?,
    };
    let shapes = read_shapes(r)?;
    let m = read_values(r, &shapes)?;
    let v = read_values(r, &shapes)?;
    Ok(AdamState { config, step, m, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn network_and_optimizer_survive_a_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut rng);
        let mut bytes = Vec::new();
        write_mlp(&mut bytes, &net).unwrap();
        // header + shape table + parameters
        assert_eq!(bytes.len(), 20 + 4 * 4 + 8 * net.param_count());
        let back = read_mlp(&mut &bytes[..]).unwrap();
        assert_eq!(back.layers(), net.layers());
        assert_eq!(back.output_activation(), Activation::Tanh);

        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step = 17;
        adam.v[1].bias[0] = 0.25;
        let mut bytes = Vec::new();
        write_adam(&mut bytes, &adam).unwrap();
        assert_eq!(read_adam(&mut &bytes[..]).unwrap(), adam);
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[2, 2], Activation::Relu, Activation::Identity, &mut rng);
        let mut bytes = Vec::new();
        write_mlp(&mut bytes, &net).unwrap();
        assert!(read_mlp(&mut &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'Z';
        assert!(read_mlp(&mut &bytes[..]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn any_shape_round_trips(sizes in proptest::collection::vec(1usize..6, 2..5), seed in 0u64..1000) {
            let net = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut bytes = Vec::new();
            write_mlp(&mut bytes, &net).unwrap();
            let back = read_mlp(&mut &bytes[..]).unwrap();
            proptest::prop_assert_eq!(back.layers(), net.layers());
            // a truncated file never parses
            proptest::prop_assert!(read_mlp(&mut &bytes[..bytes.len() - 1]).is_err());
        }
    }
}
