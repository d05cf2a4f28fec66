//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! | field            | type                    |
//! |------------------|-------------------------|
//! | magic            | 8 bytes `PLCMODEL`      |
//! | version          | u32 (= 1)               |
//! | precision        | u32 (= 64, float bits)  |
//! | seed             | u64                     |
//! | activation       | u8 (0 relu, 1 tanh)     |
//! | width count `k`  | u32                     |
//! | widths           | k x u32 (input .. output) |
//! | learning rate    | f64                     |
//! | batch size       | u32                     |
//! | epochs per round | u32                     |
//! | parameter count  | u64                     |
//! | parameters       | f64 each, per layer: weights row-major `out x in`, then bias |

use std::io::{Read, Write};

use super::{Activation, Architecture, SoftmaxClassifier, TrainConfig};
use crate::error::{validation, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLCMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<W: Write>(model: &SoftmaxClassifier, mut w: W) -> Result<()> {
    let arch = model.architecture();
    let widths = arch.widths();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&64u32.to_le_bytes())?;
    w.write_all(&model.seed().to_le_bytes())?;
    w.write_all(&[match arch.activation {
        Activation::Relu => 0u8,
        Activation::Tanh => 1u8,
    }])?;
    w.write_all(&(widths.len() as u32).to_le_bytes())?;
    for width in &widths {
        w.write_all(&(*width as u32).to_le_bytes())?;
    }
    w.write_all(&model.config.learning_rate.to_le_bytes())?;
    w.write_all(&(model.config.batch_size as u32).to_le_bytes())?;
    w.write_all(&(model.config.epochs_per_round as u32).to_le_bytes())?;
    w.write_all(&(model.num_params() as u64).to_le_bytes())?;
    for p in model.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<SoftmaxClassifier> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(validation("not a model checkpoint (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(validation(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let precision = read_u32(&mut r)?;
    if precision != 64 {
        return Err(validation(format!(
            "unsupported checkpoint precision {precision}"
        )));
    }
    let seed = read_u64(&mut r)?;
    let activation = match read_array::<1, _>(&mut r)?[0] {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(validation(format!("unknown activation code {other}"))),
    };
    let k = read_u32(&mut r)? as usize;
    if !(2..=1024).contains(&k) {
        return Err(validation(format!("implausible layer count {k}")));
    }
    let widths = (0..k)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let config = TrainConfig {
        learning_rate: read_f64(&mut r)?,
        batch_size: read_u32(&mut r)? as usize,
        epochs_per_round: read_u32(&mut r)? as usize,
    };
    let arch = Architecture {
        input: widths[0],
        hidden: widths[1..k - 1].to_vec(),
        output: widths[k - 1],
        activation,
    };
    let mut model = SoftmaxClassifier::new(arch, config, seed)?;
    let count = read_u64(&mut r)? as usize;
    if count != model.num_params() {
        return Err(validation(format!(
            "checkpoint holds {count} parameters, architecture needs {}",
            model.num_params()
        )));
    }
    let params = (0..count)
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    model.set_params(&params)?;
    Ok(model)
}
