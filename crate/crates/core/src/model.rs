//! The layered model family: a shared encoder stack (uniform d×d dense
//! blocks with a pointwise nonlinearity) under an isolated task head
//! (input projection, pool-dense layer, classifier).
//!
//! Tiered sub-global models differ only in encoder depth; all other shapes
//! are uniform so layer-indexed parameter arithmetic is well-defined.
//! Gradients are computed by hand-written backprop over the same structure.

use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::tensor::{axpy, randn, Tensor};
use crate::topology::TierTopology;

/// Pointwise nonlinearity, configured once per experiment. `Linear` exists
/// for algebraic tests and is not offered by the experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output h = act(z).
    /// Works for all three variants (tanh' = 1 − h², relu' = [h > 0]).
    pub fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Activation> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Activation> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Linear),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// One encoder block: dense d×d weight plus bias. The nonlinearity is a
/// single experiment-wide setting stored on the model, not per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Tier-owned head parameters. The input projection lives here so encoder
/// layers stay uniform d×d and cross-shareable.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub in_proj_weight: Tensor,
    pub in_proj_bias: Tensor,
    pub pool_weight: Tensor,
    pub pool_bias: Tensor,
    pub cls_weight: Tensor,
    pub cls_bias: Tensor,
}

/// Every parameter of one model: ordered encoder layers plus the head.
/// Also the shape of every derived quantity (deltas, optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// A client/server update with the same structure as the model it came
/// from: w_after − w_before.
pub type ModelDelta = ModelParams;

impl ModelParams {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// (name, tensor) pairs in the canonical order: encoder layers bottom
    /// to top, then head tensors. All iteration-order-sensitive code
    /// (optimizer updates, checkpoints, finiteness scans) uses this order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 6);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer.{l}.weight"), &layer.weight));
            out.push((format!("layer.{l}.bias"), &layer.bias));
        }
        out.push(("head.in_proj.weight".into(), &self.head.in_proj_weight));
        out.push(("head.in_proj.bias".into(), &self.head.in_proj_bias));
        out.push(("head.pool.weight".into(), &self.head.pool_weight));
        out.push(("head.pool.bias".into(), &self.head.pool_bias));
        out.push(("head.classifier.weight".into(), &self.head.cls_weight));
        out.push(("head.classifier.bias".into(), &self.head.cls_bias));
        out
    }

    /// Pair up tensors of two structurally equal parameter sets.
    pub fn zip(
        &self,
        other: &ModelParams,
        f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<ModelParams> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Dimension(format!(
                "parameter sets have {} vs {} encoder layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                Ok(LayerParams { weight: f(&a.weight, &b.weight)?, bias: f(&a.bias, &b.bias)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let (ha, hb) = (&self.head, &other.head);
        Ok(ModelParams {
            layers,
            head: HeadParams {
                in_proj_weight: f(&ha.in_proj_weight, &hb.in_proj_weight)?,
                in_proj_bias: f(&ha.in_proj_bias, &hb.in_proj_bias)?,
                pool_weight: f(&ha.pool_weight, &hb.pool_weight)?,
                pool_bias: f(&ha.pool_bias, &hb.pool_bias)?,
                cls_weight: f(&ha.cls_weight, &hb.cls_weight)?,
                cls_bias: f(&ha.cls_bias, &hb.cls_bias)?,
            },
        })
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> ModelParams {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams { weight: f(&l.weight), bias: f(&l.bias) })
            .collect();
        let h = &self.head;
        ModelParams {
            layers,
            head: HeadParams {
                in_proj_weight: f(&h.in_proj_weight),
                in_proj_bias: f(&h.in_proj_bias),
                pool_weight: f(&h.pool_weight),
                pool_bias: f(&h.pool_bias),
                cls_weight: f(&h.cls_weight),
                cls_bias: f(&h.cls_bias),
            },
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        self.map(|t| t.zeros_like())
    }

    pub fn add(&self, other: &ModelParams) -> Result<ModelParams> {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &ModelParams) -> Result<ModelParams> {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, alpha: f64) -> ModelParams {
        self.map(|t| t.scale(alpha))
    }

    /// alpha·x + self, element-wise across the whole structure.
    pub fn axpy(&self, alpha: f64, x: &ModelParams) -> Result<ModelParams> {
        self.zip(x, |s, xv| axpy(alpha, xv, s))
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Name of the first tensor holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named()
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n.clone())
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Bit-level equality across every tensor (distinguishes ±0 and NaN
    /// payloads; used by degeneracy tests).
    pub fn bits_equal(&self, other: &ModelParams) -> bool {
        let a = self.named();
        let b = other.named();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// A tier's complete model: parameters plus the experiment-wide activation
/// and the tier index it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    pub tier: usize,
    pub activation: Activation,
    pub params: ModelParams,
}

impl LayeredModel {
    pub fn depth(&self) -> usize {
        self.params.depth()
    }

    /// Encoder width d.
    pub fn dim(&self) -> usize {
        self.params.head.pool_weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.params.head.in_proj_weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.params.head.cls_bias.len()
    }
}

const BIAS_INIT_SCALE: f64 = 0.02;

fn init_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
}

fn init_bias(len: usize, rng: &mut Rng) -> Result<Tensor> {
    randn(&[len], BIAS_INIT_SCALE, rng)
}

/// Build one model per tier from a common encoder initialization.
///
/// The deepest tier's encoder stack is drawn once; every smaller tier
/// receives a bit-equal copy of the bottom-L_j prefix. Heads (including
/// the input projection) are drawn independently per tier, so they start
/// isolated. `class_counts` has one entry per tier because cross-silo
/// clients may expose different label spaces.
pub fn build_tier_models(
    topology: &TierTopology,
    input_dim: usize,
    hidden_dim: usize,
    class_counts: &[usize],
    activation: Activation,
    rng: &Rng,
) -> Result<Vec<LayeredModel>> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(Error::Dimension(format!(
            "model dimensions must be positive, got input_dim={input_dim}, hidden_dim={hidden_dim}"
        )));
    }
    if class_counts.len() != topology.num_tiers() {
        return Err(Error::Topology(format!(
            "{} tiers but {} class counts",
            topology.num_tiers(),
            class_counts.len()
        )));
    }
    if let Some(&c) = class_counts.iter().find(|&&c| c < 2) {
        return Err(Error::Data(format!("class count must be >= 2, got {c}")));
    }

    let mut enc_rng = rng.derive(&[stream::INIT_ENCODER]);
    let stack: Vec<LayerParams> = (0..topology.max_depth())
        .map(|_| {
            Ok(LayerParams {
                weight: init_matrix(hidden_dim, hidden_dim, &mut enc_rng)?,
                bias: init_bias(hidden_dim, &mut enc_rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    (0..topology.num_tiers())
        .map(|j| {
            let mut head_rng = rng.derive(&[stream::INIT_HEAD, j as u64]);
            let c = class_counts[j];
            let head = HeadParams {
                in_proj_weight: init_matrix(input_dim, hidden_dim, &mut head_rng)?,
                in_proj_bias: init_bias(hidden_dim, &mut head_rng)?,
                pool_weight: init_matrix(hidden_dim, hidden_dim, &mut head_rng)?,
                pool_bias: init_bias(hidden_dim, &mut head_rng)?,
                cls_weight: init_matrix(hidden_dim, c, &mut head_rng)?,
                cls_bias: init_bias(c, &mut head_rng)?,
            };
            Ok(LayeredModel {
                tier: j,
                activation,
                params: ModelParams { layers: stack[..topology.depth(j)].to_vec(), head },
            })
        })
        .collect()
}

/// Per-layer activations kept for the backward pass. `hidden[0]` is the
/// input projection output; `hidden[l+1]` the output of encoder layer l.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    hidden: Vec<Tensor>,
    pooled: Tensor,
}

/// Add a bias row vector to every row of a matrix.
fn add_row(t: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if t.rank() != 2 || bias.rank() != 1 || t.cols() != bias.len() {
        return Err(Error::Dimension(format!(
            "bias add shape mismatch: {:?} vs {:?}",
            t.shape(),
            bias.shape()
        )));
    }
    let (m, n) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for (v, b) in t.row(i).iter().zip(bias.data()) {
            data.push(v + b);
        }
    }
    Tensor::new(&[m, n], data)
}

/// Run the model on a batch. Inputs are b×d_in; the batch is non-empty by
/// tensor construction. Returns logits (b×c) and the activation cache.
pub fn forward(model: &LayeredModel, inputs: &Tensor) -> Result<(Tensor, ForwardCache)> {
    if inputs.rank() != 2 || inputs.cols() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "batch shape {:?} does not match model input dim {}",
            inputs.shape(),
            model.input_dim()
        )));
    }
    let act = model.activation;
    let p = &model.params;
    let mut hidden = Vec::with_capacity(p.layers.len() + 1);
    // Input projection is linear: it only adapts dimensionality.
    let h0 = add_row(&inputs.matmul(&p.head.in_proj_weight)?, &p.head.in_proj_bias)?;
    hidden.push(h0);
    for layer in &p.layers {
        let z = add_row(&hidden.last().unwrap().matmul(&layer.weight)?, &layer.bias)?;
        hidden.push(z.map(|v| act.apply(v)));
    }
    let zp = add_row(&hidden.last().unwrap().matmul(&p.head.pool_weight)?, &p.head.pool_bias)?;
    let pooled = zp.map(|v| act.apply(v));
    let logits = add_row(&pooled.matmul(&p.head.cls_weight)?, &p.head.cls_bias)?;
    let cache = ForwardCache { input: inputs.clone(), hidden, pooled };
    Ok((logits, cache))
}

/// Mean cross-entropy of logits against integer labels, computed through
/// a max-shifted log-sum-exp. Returns per-row softmax probabilities too,
/// since the backward pass needs them.
fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::Data(format!(
            "{b} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
    }
    let mut probs = Vec::with_capacity(b * c);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &z in row {
            sum += (z - m).exp();
        }
        for &z in row {
            probs.push((z - m).exp() / sum);
        }
        loss -= (row[y] - m) - sum.ln();
    }
    Ok((loss / b as f64, Tensor::new(&[b, c], probs)?))
}

/// Mean cross-entropy loss and its gradient with respect to every
/// parameter, computed by manual backprop over the cached activations.
pub fn loss_and_backward(
    model: &LayeredModel,
    cache: &ForwardCache,
    logits: &Tensor,
    labels: &[usize],
) -> Result<(f64, ModelDelta)> {
    let act = model.activation;
    let p = &model.params;
    let b = logits.rows();
    let (loss, probs) = cross_entropy(logits, labels)?;

    // dL/dlogits = (softmax − onehot) / b
    let mut dlogit_data = probs.data().to_vec();
    let c = logits.cols();
    for (i, &y) in labels.iter().enumerate() {
        dlogit_data[i * c + y] -= 1.0;
    }
    let dlogits = Tensor::new(&[b, c], dlogit_data)?.scale(1.0 / b as f64);

    let cls_w_grad = cache.pooled.transpose().matmul(&dlogits)?;
    let cls_b_grad = dlogits.column_sums();
    let dpooled = dlogits.matmul(&p.head.cls_weight.transpose())?;

    let dzp = dpooled.hadamard(&cache.pooled.map(|h| act.derivative_from_output(h)))?;
    let top_hidden = cache.hidden.last().unwrap();
    let pool_w_grad = top_hidden.transpose().matmul(&dzp)?;
    let pool_b_grad = dzp.column_sums();
    let mut dh = dzp.matmul(&p.head.pool_weight.transpose())?;

    let mut layer_grads: Vec<LayerParams> = Vec::with_capacity(p.layers.len());
    for (l, layer) in p.layers.iter().enumerate().rev() {
        let out = &cache.hidden[l + 1];
        let dz = dh.hadamard(&out.map(|h| act.derivative_from_output(h)))?;
        layer_grads.push(LayerParams {
            weight: cache.hidden[l].transpose().matmul(&dz)?,
            bias: dz.column_sums(),
        });
        dh = dz.matmul(&layer.weight.transpose())?;
    }
    layer_grads.reverse();

    // The input projection is linear, so dz equals dh directly.
    let in_w_grad = cache.input.transpose().matmul(&dh)?;
    let in_b_grad = dh.column_sums();

    let grad = ModelParams {
        layers: layer_grads,
        head: HeadParams {
            in_proj_weight: in_w_grad,
            in_proj_bias: in_b_grad,
            pool_weight: pool_w_grad,
            pool_bias: pool_b_grad,
            cls_weight: cls_w_grad,
            cls_bias: cls_b_grad,
        },
    };
    Ok((loss, grad))
}

/// One gradient-descent step: every parameter becomes p − lr·grad.
pub fn sgd_step(model: &LayeredModel, gradient: &ModelDelta, lr: f64) -> Result<LayeredModel> {
    if !(lr >= 0.0) {
        return Err(Error::Numeric(format!("learning rate must be >= 0, got {lr}")));
    }
    Ok(LayeredModel {
        tier: model.tier,
        activation: model.activation,
        params: model.params.axpy(-lr, gradient)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(depths: &[usize]) -> TierTopology {
        let props = vec![1.0; depths.len()];
        TierTopology::new(depths, &props).unwrap()
    }

    fn tensors_bit_equal(a: &Tensor, b: &Tensor) -> bool {
        a.shape() == b.shape()
            && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    #[test]
    fn build_copies_prefixes_bit_exactly() {
        let rng = Rng::new(42);
        let models =
            build_tier_models(&topo(&[2, 3, 4]), 5, 6, &[3, 3, 3], Activation::Tanh, &rng)
                .unwrap();
        assert_eq!(models.len(), 3);
        assert_eq!(models[0].depth(), 2);
        assert_eq!(models[2].depth(), 4);
        for j in 0..2 {
            for l in 0..models[j].depth() {
                assert!(tensors_bit_equal(
                    &models[j].params.layers[l].weight,
                    &models[2].params.layers[l].weight
                ));
                assert!(tensors_bit_equal(
                    &models[j].params.layers[l].bias,
                    &models[2].params.layers[l].bias
                ));
            }
        }
    }

    #[test]
    fn build_single_tier() {
        let rng = Rng::new(1);
        let models = build_tier_models(&topo(&[4]), 5, 6, &[2], Activation::Tanh, &rng).unwrap();
        assert_eq!(models.len(), 1);
        assert_eq!(models[0].depth(), 4);
    }

    #[test]
    fn heads_are_pairwise_distinct() {
        let rng = Rng::new(7);
        let models =
            build_tier_models(&topo(&[2, 3, 4]), 5, 6, &[3, 3, 3], Activation::Tanh, &rng)
                .unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(!tensors_bit_equal(
                    &models[a].params.head.pool_weight,
                    &models[b].params.head.pool_weight
                ));
                assert!(!tensors_bit_equal(
                    &models[a].params.head.in_proj_weight,
                    &models[b].params.head.in_proj_weight
                ));
            }
        }
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let rng = Rng::new(0);
        assert!(build_tier_models(&topo(&[2, 4]), 5, 6, &[3], Activation::Tanh, &rng).is_err());
        assert!(build_tier_models(&topo(&[2, 4]), 5, 6, &[3, 1], Activation::Tanh, &rng).is_err());
        assert!(build_tier_models(&topo(&[2]), 0, 6, &[3], Activation::Tanh, &rng).is_err());
    }

    fn zero_model(depth: usize, d_in: usize, d: usize, c: usize, act: Activation) -> LayeredModel {
        let layers = (0..depth)
            .map(|_| LayerParams {
                weight: Tensor::zeros(&[d, d]).unwrap(),
                bias: Tensor::zeros(&[d]).unwrap(),
            })
            .collect();
        LayeredModel {
            tier: 0,
            activation: act,
            params: ModelParams {
                layers,
                head: HeadParams {
                    in_proj_weight: Tensor::zeros(&[d_in, d]).unwrap(),
                    in_proj_bias: Tensor::zeros(&[d]).unwrap(),
                    pool_weight: Tensor::zeros(&[d, d]).unwrap(),
                    pool_bias: Tensor::zeros(&[d]).unwrap(),
                    cls_weight: Tensor::zeros(&[d, c]).unwrap(),
                    cls_bias: Tensor::zeros(&[c]).unwrap(),
                },
            },
        }
    }

    fn random_model(depth: usize, d_in: usize, d: usize, c: usize, seed: u64) -> LayeredModel {
        let t = TierTopology::new(&[depth.max(2)], &[1.0]).unwrap();
        let mut m =
            build_tier_models(&t, d_in, d, &[c], Activation::Tanh, &Rng::new(seed)).unwrap();
        let mut model = m.remove(0);
        model.params.layers.truncate(depth);
        model
    }

    #[test]
    fn forward_zero_weights_gives_zero_logits() {
        let model = zero_model(2, 3, 4, 5, Activation::Tanh);
        let x = Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 0., 1.]).unwrap();
        let (logits, _) = forward(&model, &x).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_second_layer_is_a_no_op_under_linear_activation() {
        let d = 4;
        let mut one = random_model(1, 3, d, 3, 9);
        one.activation = Activation::Linear;
        let mut two = one.clone();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        two.params.layers.push(LayerParams {
            weight: Tensor::new(&[d, d], eye).unwrap(),
            bias: Tensor::zeros(&[d]).unwrap(),
        });
        let x = randn(&[3, 3], 1.0, &mut Rng::new(4)).unwrap();
        let (l1, _) = forward(&one, &x).unwrap();
        let (l2, _) = forward(&two, &x).unwrap();
        let diff = l1
            .data()
            .iter()
            .zip(l2.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12, "max diff {diff}");
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        let model = random_model(2, 3, 4, 3, 11);
        let x = randn(&[2, 3], 1.0, &mut Rng::new(12)).unwrap();
        let (logits, _) = forward(&model, &x).unwrap();

        // Independent scalar recomputation, one batch row at a time.
        let p = &model.params;
        for i in 0..2 {
            let mut h: Vec<f64> = (0..4)
                .map(|j| {
                    let mut z = p.head.in_proj_bias.data()[j];
                    for k in 0..3 {
                        z += x.get2(i, k) * p.head.in_proj_weight.get2(k, j);
                    }
                    z
                })
                .collect();
            for layer in &p.layers {
                h = (0..4)
                    .map(|j| {
                        let mut z = layer.bias.data()[j];
                        for k in 0..4 {
                            z += h[k] * layer.weight.get2(k, j);
                        }
                        z.tanh()
                    })
                    .collect();
            }
            let pooled: Vec<f64> = (0..4)
                .map(|j| {
                    let mut z = p.head.pool_bias.data()[j];
                    for k in 0..4 {
                        z += h[k] * p.head.pool_weight.get2(k, j);
                    }
                    z.tanh()
                })
                .collect();
            for j in 0..3 {
                let mut z = p.head.cls_bias.data()[j];
                for k in 0..4 {
                    z += pooled[k] * p.head.cls_weight.get2(k, j);
                }
                assert!((logits.get2(i, j) - z).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let model = zero_model(2, 3, 4, 2, Activation::Tanh);
        let x = Tensor::zeros(&[2, 5]).unwrap();
        assert!(matches!(forward(&model, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let model = zero_model(2, 3, 4, 4, Activation::Tanh);
        let x = Tensor::new(&[2, 3], vec![0.3; 6]).unwrap();
        let (logits, cache) = forward(&model, &x).unwrap();
        let (loss, _) = loss_and_backward(&model, &cache, &logits, &[1, 3]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn separated_logits_loss_vanishes() {
        // Hand-built logits: +50 on the true class, −50 elsewhere.
        let logits = Tensor::new(&[2, 3], vec![50., -50., -50., -50., 50., -50.]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0, 1]).unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let model = zero_model(2, 3, 4, 2, Activation::Tanh);
        let x = Tensor::zeros(&[1, 3]).unwrap();
        let (logits, cache) = forward(&model, &x).unwrap();
        assert!(matches!(
            loss_and_backward(&model, &cache, &logits, &[2]),
            Err(Error::Data(_))
        ));
    }

    /// Central finite differences over every parameter of a small model.
    fn finite_difference_check(model: &LayeredModel, x: &Tensor, labels: &[usize]) -> f64 {
        let (logits, cache) = forward(model, x).unwrap();
        let (_, grad) = loss_and_backward(model, &cache, &logits, labels).unwrap();
        let h = 1e-5;
        let names: Vec<String> = model.params.named().iter().map(|(n, _)| n.clone()).collect();
        let mut worst_rel = 0.0f64;
        for name in &names {
            let len = model
                .params
                .named()
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .len();
            for e in 0..len {
                let perturbed = |delta: f64| -> f64 {
                    let params = perturb(&model.params, name, e, delta);
                    let m = LayeredModel {
                        tier: model.tier,
                        activation: model.activation,
                        params,
                    };
                    let (lg, ch) = forward(&m, x).unwrap();
                    let (loss, _) = loss_and_backward(&m, &ch, &lg, labels).unwrap();
                    loss
                };
                let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let analytic = model
                    .params
                    .named()
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| grad_entry(&grad, name, e, t.shape()))
                    .unwrap();
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                worst_rel = worst_rel.max((analytic - numeric).abs() / denom);
            }
        }
        worst_rel
    }

    fn perturb(params: &ModelParams, name: &str, elem: usize, delta: f64) -> ModelParams {
        let mut out = params.clone();
        let replace = |t: &Tensor| {
            let mut data = t.data().to_vec();
            data[elem] += delta;
            Tensor::new(t.shape(), data).unwrap()
        };
        match name {
            "head.in_proj.weight" => out.head.in_proj_weight = replace(&params.head.in_proj_weight),
            "head.in_proj.bias" => out.head.in_proj_bias = replace(&params.head.in_proj_bias),
            "head.pool.weight" => out.head.pool_weight = replace(&params.head.pool_weight),
            "head.pool.bias" => out.head.pool_bias = replace(&params.head.pool_bias),
            "head.classifier.weight" => out.head.cls_weight = replace(&params.head.cls_weight),
            "head.classifier.bias" => out.head.cls_bias = replace(&params.head.cls_bias),
            other => {
                let l: usize = other.split('.').nth(1).unwrap().parse().unwrap();
                if other.ends_with("weight") {
                    out.layers[l].weight = replace(&params.layers[l].weight);
                } else {
                    out.layers[l].bias = replace(&params.layers[l].bias);
                }
            }
        }
        out
    }

    fn grad_entry(grad: &ModelParams, name: &str, elem: usize, _shape: &[usize]) -> f64 {
        grad.named()
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data()[elem])
            .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_model() {
        let model = random_model(2, 3, 4, 3, 21);
        let x = randn(&[3, 3], 1.0, &mut Rng::new(22)).unwrap();
        let worst = finite_difference_check(&model, &x, &[0, 2, 1]);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let model = random_model(2, 3, 4, 3, 31);
        let grad = model.params.map(|t| t.scale(0.5));
        let stepped = sgd_step(&model, &grad, 0.0).unwrap();
        assert!(stepped.params.bits_equal(&model.params));
    }

    #[test]
    fn sgd_scalar_case() {
        // p = 1, grad = 2, lr = 0.1 → 0.8 on a 1-element tensor.
        let mut model = zero_model(2, 1, 1, 2, Activation::Linear);
        model.params.head.pool_weight = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let mut grad = model.params.zeros_like();
        grad.head.pool_weight = Tensor::new(&[1, 1], vec![2.0]).unwrap();
        let stepped = sgd_step(&model, &grad, 0.1).unwrap();
        assert!((stepped.params.head.pool_weight.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_fixed_gradient_steps_equal_one_summed_step() {
        let model = random_model(2, 3, 4, 3, 33);
        let grad = model.params.map(|t| t.scale(0.25));
        let twice = sgd_step(&sgd_step(&model, &grad, 0.05).unwrap(), &grad, 0.05).unwrap();
        let summed = sgd_step(&model, &grad.add(&grad).unwrap(), 0.05).unwrap();
        for ((_, a), (_, b)) in twice.params.named().iter().zip(summed.params.named().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn structural_closure_of_parameter_ops() {
        let model = random_model(3, 5, 4, 3, 35);
        let delta = model.params.map(|t| t.scale(0.1));
        let shapes = |p: &ModelParams| {
            p.named().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>()
        };
        let base = shapes(&model.params);
        assert_eq!(base, shapes(&model.params.add(&delta).unwrap()));
        assert_eq!(base, shapes(&model.params.scale(-2.0)));
        assert_eq!(base, shapes(&sgd_step(&model, &delta, 0.3).unwrap().params));
    }

    #[test]
    fn sgd_rejects_mismatched_shapes_and_negative_lr() {
        let model = random_model(2, 3, 4, 3, 37);
        let other = random_model(3, 3, 4, 3, 37);
        assert!(sgd_step(&model, &other.params, 0.1).is_err());
        let grad = model.params.zeros_like();
        assert!(matches!(sgd_step(&model, &grad, -0.1), Err(Error::Numeric(_))));
    }
}
