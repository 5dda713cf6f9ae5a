//! Synthetic datasets and client partitioning.
//!
//! Datasets are Gaussian class clusters, optionally pushed through a fixed
//! random nonlinear warp (`warp_depth` rounds of `tanh(xA + b)`) so that
//! model depth genuinely matters, plus uniform label noise. Partitioning
//! covers the IID cross-device setting (seeded shuffle, contiguous chunks)
//! and the cross-silo setting (one dataset per tier, internal 80/20 split).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fed::ClientSpec;
use crate::rng::Rng;
use crate::tensor::{randn, Tensor};
use crate::topology::TierTopology;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// N × d_in inputs, row per sample.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(name: String, inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Dataset> {
        if inputs.rank() != 2 {
            return Err(Error::Data(format!(
                "dataset inputs must be rank 2, got shape {:?}",
                inputs.shape()
            )));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::Data(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Data(format!("class count must be >= 2, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset { name, inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Materialize a batch from sample indices.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(&[indices.len(), d], data)?, labels))
    }
}

/// Generation parameters for one synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// Within-class standard deviation around the class mean.
    pub spread: f64,
    /// Fraction of labels reassigned to a uniformly random class.
    pub label_noise: f64,
    /// Number of fixed random tanh-dense warps applied to the inputs.
    pub warp_depth: usize,
    pub name: String,
}

/// Gain of the random warp maps. Chosen so each warp round bends the
/// cluster geometry appreciably without collapsing it.
const WARP_GAIN: f64 = 1.7;
const WARP_BIAS_SCALE: f64 = 0.3;

pub fn make_synthetic(spec: &SynthSpec, rng: &mut Rng) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Data(format!("class count must be >= 2, got {}", spec.classes)));
    }
    if spec.n < spec.classes {
        return Err(Error::Data(format!(
            "need at least one sample per class: n={} < c={}",
            spec.n, spec.classes
        )));
    }
    if spec.input_dim == 0 {
        return Err(Error::Data("input dimension must be positive".into()));
    }
    if !(spec.spread > 0.0) {
        return Err(Error::Data(format!("cluster spread must be > 0, got {}", spec.spread)));
    }
    if !(0.0..1.0).contains(&spec.label_noise) {
        return Err(Error::Data(format!(
            "label noise must lie in [0, 1), got {}",
            spec.label_noise
        )));
    }

    let d = spec.input_dim;
    // Draw order is fixed: class means, then warp parameters, then samples,
    // then the label-noise pass. Changing it would silently re-key datasets.
    let means = randn(&[spec.classes, d], 1.0, rng)?;
    let warps: Vec<(Tensor, Tensor)> = (0..spec.warp_depth)
        .map(|_| {
            Ok((
                randn(&[d, d], WARP_GAIN / (d as f64).sqrt(), rng)?,
                randn(&[d], WARP_BIAS_SCALE, rng)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut labels = Vec::with_capacity(spec.n);
    let mut data = Vec::with_capacity(spec.n * d);
    for _ in 0..spec.n {
        let y = rng.below(spec.classes);
        labels.push(y);
        let mean = means.row(y);
        for &m in mean {
            data.push(m + spec.spread * rng.normal());
        }
    }
    let mut inputs = Tensor::new(&[spec.n, d], data)?;

    for (a, b) in &warps {
        let z = inputs.matmul(a)?;
        let mut warped = Vec::with_capacity(spec.n * d);
        for i in 0..spec.n {
            for (v, bb) in z.row(i).iter().zip(b.data()) {
                warped.push((v + bb).tanh());
            }
        }
        inputs = Tensor::new(&[spec.n, d], warped)?;
    }

    if spec.label_noise > 0.0 {
        for y in labels.iter_mut() {
            if rng.uniform() < spec.label_noise {
                *y = rng.below(spec.classes);
            }
        }
    }

    Dataset::new(spec.name.clone(), inputs, labels, spec.classes)
}

/// One client's slice of a dataset. `train` and `eval` are disjoint and
/// together cover `indices`; cross-device partitions leave `eval` empty
/// because evaluation happens on a shared held-out set.
#[derive(Debug, Clone)]
pub struct Partition {
    pub dataset: Arc<Dataset>,
    pub indices: Vec<usize>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Split a dataset into K IID partitions: seeded shuffle, then contiguous
/// chunks; the first (N mod K) partitions receive one extra sample.
pub fn iid_split(dataset: &Arc<Dataset>, k: usize, rng: &mut Rng) -> Result<Vec<Partition>> {
    iid_split_prefix(dataset, dataset.len(), k, rng)
}

/// Like [`iid_split`] but over only the first `n` samples, leaving the
/// suffix untouched (the harness holds it out as a shared eval set).
pub fn iid_split_prefix(
    dataset: &Arc<Dataset>,
    n: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<Partition>> {
    if n > dataset.len() {
        return Err(Error::Data(format!(
            "prefix {n} exceeds dataset of {}",
            dataset.len()
        )));
    }
    if k == 0 {
        return Err(Error::Data("cannot split into zero partitions".into()));
    }
    if k > n {
        return Err(Error::Data(format!(
            "cannot split {n} samples into {k} partitions"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut cursor = 0;
    for p in 0..k {
        let size = base + usize::from(p < extra);
        let mut indices = order[cursor..cursor + size].to_vec();
        indices.sort_unstable();
        cursor += size;
        out.push(Partition {
            dataset: Arc::clone(dataset),
            train: indices.clone(),
            eval: Vec::new(),
            indices,
        });
    }
    Ok(out)
}

/// Cross-silo assignment: one dataset per tier, one client per dataset.
///
/// Tier j receives dataset (j + rotation) mod k; with rotation 0 the
/// weakest tier gets the first dataset. Each silo splits internally into
/// 80% train / 20% eval by sample order, which is a uniform random split
/// because synthetic samples are exchangeable by construction.
pub fn silo_assign(
    datasets: &[Arc<Dataset>],
    topology: &TierTopology,
    rotation: usize,
) -> Result<Vec<ClientSpec>> {
    let k = topology.num_tiers();
    if datasets.len() != k {
        return Err(Error::Config(format!(
            "cross-silo mode needs one dataset per tier: {} datasets, {k} tiers",
            datasets.len()
        )));
    }
    (0..k)
        .map(|tier| {
            let ds = &datasets[(tier + rotation) % k];
            let n = ds.len();
            let train_n = n * 4 / 5;
            if train_n == 0 || train_n == n {
                return Err(Error::Data(format!(
                    "silo dataset '{}' has {n} samples; too few for an 80/20 split",
                    ds.name
                )));
            }
            Ok(ClientSpec {
                id: tier,
                tier,
                partition: Partition {
                    dataset: Arc::clone(ds),
                    indices: (0..n).collect(),
                    train: (0..train_n).collect(),
                    eval: (train_n..n).collect(),
                },
            })
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"FDSB";
const VERSION: u32 = 1;

/// Write a dataset as a columnar binary file:
/// magic "FDSB", version u32, name (u32 length + utf-8), N u64, d_in u32,
/// c u32, then N·d_in little-endian f64 inputs row-major, then N u32 labels.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.name.len() as u32).to_le_bytes())?;
    w.write_all(dataset.name.as_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    w.write_all(&(dataset.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(dataset.classes as u32).to_le_bytes())?;
    for &v in dataset.inputs.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in &dataset.labels {
        w.write_all(&(y as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let name_len = u32::from_le_bytes(u32buf) as usize;
    if name_len > 4096 {
        return Err(Error::Format(format!("implausible name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name =
        String::from_utf8(name).map_err(|_| Error::Format("dataset name is not utf-8".into()))?;
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let classes = u32::from_le_bytes(u32buf) as usize;
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("dataset file declares empty shape {n}x{d}")));
    }

    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        r.read_exact(&mut u64buf)?;
        data.push(f64::from_le_bytes(u64buf));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut u32buf)?;
        labels.push(u32::from_le_bytes(u32buf) as usize);
    }
    Dataset::new(name, Tensor::new(&[n, d], data)?, labels, classes)
}
