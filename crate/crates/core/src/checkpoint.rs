//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   b"LMCK"
//! version    u32       currently 1
//! activation u8        0 = tanh, 1 = relu, 2 = linear
//! tier       u32       tier label of the saved model
//! count      u32       number of tensor entries
//! entry*     repeated:
//!   name_len u32
//!   name     utf-8 bytes ("layer.{l}.weight", "layer.{l}.bias", "head.{name}")
//!   ndim     u32
//!   dims     u64 × ndim
//!   data     f64 × prod(dims), little-endian bit patterns
//! ```
//!
//! Layer indices are 0-based from the bottom of the encoder stack. Writing
//! is deterministic: entries appear in the model's canonical tensor order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, HeadParams, LayerParams, LayeredModel, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LMCK";
const VERSION: u32 = 1;

pub fn save_model(model: &LayeredModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[model.activation.code()])?;
    w.write_all(&(model.tier as u32).to_le_bytes())?;
    let entries = model.params.named();
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

pub fn load_model(path: &Path) -> Result<LayeredModel> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let activation = Activation::from_code(read_exact::<1>(&mut r)?[0])?;
    let tier = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Format(format!("implausible rank {ndim} for '{name}'")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_exact::<8>(&mut r)?));
        }
        entries.push((name, Tensor::new(&shape, data)?));
    }

    assemble(tier, activation, entries)
}

fn assemble(
    tier: usize,
    activation: Activation,
    entries: Vec<(String, Tensor)>,
) -> Result<LayeredModel> {
    let mut weights: Vec<Option<Tensor>> = Vec::new();
    let mut biases: Vec<Option<Tensor>> = Vec::new();
    let mut head: [Option<Tensor>; 6] = Default::default();
    let head_names = [
        "head.in_proj.weight",
        "head.in_proj.bias",
        "head.pool.weight",
        "head.pool.bias",
        "head.classifier.weight",
        "head.classifier.bias",
    ];

    for (name, tensor) in entries {
        if let Some(pos) = head_names.iter().position(|&h| h == name) {
            head[pos] = Some(tensor);
            continue;
        }
        let mut parts = name.split('.');
        let (Some("layer"), Some(idx), Some(kind), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Format(format!("unknown tensor name '{name}'")));
        };
        let l: usize = idx
            .parse()
            .map_err(|_| Error::Format(format!("bad layer index in '{name}'")))?;
        let store = match kind {
            "weight" => &mut weights,
            "bias" => &mut biases,
            _ => return Err(Error::Format(format!("unknown tensor name '{name}'"))),
        };
        if store.len() <= l {
            store.resize(l + 1, None);
        }
        if store[l].replace(tensor).is_some() {
            return Err(Error::Format(format!("duplicate tensor '{name}'")));
        }
    }

    if weights.len() != biases.len() || weights.is_empty() {
        return Err(Error::Format("incomplete encoder layer set".into()));
    }
    let layers = weights
        .into_iter()
        .zip(biases)
        .enumerate()
        .map(|(l, (w, b))| match (w, b) {
            (Some(weight), Some(bias)) => Ok(LayerParams { weight, bias }),
            _ => Err(Error::Format(format!("missing tensors for layer {l}"))),
        })
        .collect::<Result<Vec<_>>>()?;

    let [ipw, ipb, pw, pb, cw, cb] = head;
    let head = match (ipw, ipb, pw, pb, cw, cb) {
        (Some(a), Some(b), Some(c), Some(d), Some(e), Some(f)) => HeadParams {
            in_proj_weight: a,
            in_proj_bias: b,
            pool_weight: c,
            pool_bias: d,
            cls_weight: e,
            cls_bias: f,
        },
        _ => return Err(Error::Format("missing head tensors".into())),
    };

    Ok(LayeredModel { tier, activation, params: ModelParams { layers, head } })
}
