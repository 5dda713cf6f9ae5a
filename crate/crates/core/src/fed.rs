//! The tiered federated training engine.
//!
//! One round proceeds in phases: sample clients and group them by tier,
//! run local SGD on each participant to get a model delta, average the
//! deltas within each tier, blend each non-deepest tier's top-layer delta
//! with the momentum recorded last round by the next tier up, apply the
//! server's per-tier Adam update, refresh the momentum bank, and finally
//! share encoder layers across tiers (every tier's layer below its own
//! top is pulled toward the sample-weighted average of all tiers deep
//! enough to share it, and the shallower tiers are rebuilt as a prefix of
//! the deepest model plus their own isolated top layer).
//!
//! The momentum bank is read-then-write within a round: every blend reads
//! the previous round's entries before any entry is refreshed.

use rayon::prelude::*;

use crate::data::Partition;
use crate::error::{Error, Result};
use crate::model::{
    forward, loss_and_backward, sgd_step, LayerParams, LayeredModel, ModelDelta, ModelParams,
};
use crate::rng::{stream, Rng};
use crate::tensor::axpy;
use crate::topology::TierTopology;

/// One simulated client: a stable id, the tier whose model it can train,
/// and its local data.
#[derive(Debug, Clone)]
pub struct ClientSpec {
    pub id: usize,
    pub tier: usize,
    pub partition: Partition,
}

impl ClientSpec {
    pub fn sample_count(&self) -> usize {
        self.partition.train.len()
    }
}

/// The participant selection for one round: sampled ids in ascending
/// order, and the same ids grouped by tier (ascending within each group).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: usize,
    pub sampled: Vec<usize>,
    /// groups[j] holds positions into the engine's client list, not ids.
    pub groups: Vec<Vec<usize>>,
}

impl RoundPlan {
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}

/// Select ceil(fraction · pool) distinct clients uniformly, deterministic
/// in (rng seed, round). Grouping preserves ascending client-id order so
/// later reductions have a fixed order.
pub fn sample_round(
    clients: &[ClientSpec],
    fraction: f64,
    rng: &Rng,
    round: usize,
    num_tiers: usize,
) -> Result<RoundPlan> {
    if clients.is_empty() {
        return Err(Error::Config("client pool is empty".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = clients.len();
    let m = ((fraction * k as f64).ceil() as usize).clamp(1, k);
    let mut order: Vec<usize> = (0..k).collect();
    let mut r = rng.derive(&[stream::SAMPLE, round as u64]);
    r.shuffle(&mut order);
    let mut picked: Vec<usize> = order[..m].to_vec();
    picked.sort_unstable_by_key(|&p| clients[p].id);

    let mut groups = vec![Vec::new(); num_tiers];
    for &p in &picked {
        let tier = clients[p].tier;
        if tier >= num_tiers {
            return Err(Error::Topology(format!(
                "client {} claims tier {tier} but only {num_tiers} tiers exist",
                clients[p].id
            )));
        }
        groups[tier].push(p);
    }
    Ok(RoundPlan {
        round,
        sampled: picked.iter().map(|&p| clients[p].id).collect(),
        groups,
    })
}

/// Run `steps` SGD steps on a copy of the model and return the trained
/// copy together with the mean training loss.
///
/// Batches are drawn without replacement within a step (with replacement
/// only if the client holds fewer samples than the batch size), from a
/// client- and round-specific stream, so participation schedules elsewhere
/// never shift a client's draws.
pub fn train_locally(
    model: &LayeredModel,
    partition: &Partition,
    steps: usize,
    batch: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<(LayeredModel, f64)> {
    if steps == 0 {
        return Err(Error::Config("local step count must be positive".into()));
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if partition.train.is_empty() {
        return Err(Error::Data("client has no training samples".into()));
    }
    let n = partition.train.len();
    let mut work = model.clone();
    let mut loss_sum = 0.0;
    let mut pool: Vec<usize> = partition.train.clone();
    for _ in 0..steps {
        let chosen: Vec<usize> = if batch <= n {
            // Partial Fisher-Yates: the first `batch` entries become a
            // uniform sample without replacement.
            for i in 0..batch {
                let j = i + rng.below(n - i);
                pool.swap(i, j);
            }
            pool[..batch].to_vec()
        } else {
            (0..batch).map(|_| partition.train[rng.below(n)]).collect()
        };
        let (x, y) = partition.dataset.gather(&chosen)?;
        let (logits, cache) = forward(&work, &x)?;
        let (loss, grad) = loss_and_backward(&work, &cache, &logits, &y)?;
        loss_sum += loss;
        work = sgd_step(&work, &grad, lr)?;
    }
    Ok((work, loss_sum / steps as f64))
}

/// Like [`train_locally`], but report the parameter delta (after − before)
/// instead of the trained model. This is what clients upload.
pub fn local_update(
    model: &LayeredModel,
    partition: &Partition,
    steps: usize,
    batch: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<(ModelDelta, f64)> {
    let (trained, loss) = train_locally(model, partition, steps, batch, lr, rng)?;
    Ok((trained.params.sub(&model.params)?, loss))
}

/// Unweighted mean of a tier's client deltas, accumulated in slice order
/// (callers pass ascending client id). Empty input means the tier sat the
/// round out and is reported as None rather than an error.
pub fn homomorphic_average(deltas: &[ModelDelta]) -> Result<Option<ModelDelta>> {
    let Some(first) = deltas.first() else {
        return Ok(None);
    };
    if deltas.len() == 1 {
        return Ok(Some(first.clone()));
    }
    let mut acc = first.clone();
    for d in &deltas[1..] {
        acc = acc.add(d)?;
    }
    Ok(Some(acc.scale(1.0 / deltas.len() as f64)))
}

/// Blend a tier's top-layer delta with the momentum handed down from the
/// next tier up: top ← beta·momentum + (1−beta)·top. The endpoints are
/// exact: beta 0 returns the delta untouched and beta 1 substitutes the
/// momentum bitwise, so disabling the blend is a true no-op.
pub fn distill_momentum(
    delta: &ModelDelta,
    momentum: &LayerParams,
    beta: f64,
) -> Result<ModelDelta> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "momentum blend weight must lie in [0, 1], got {beta}"
        )));
    }
    if beta == 0.0 {
        return Ok(delta.clone());
    }
    let mut out = delta.clone();
    let top = out.layers.len() - 1;
    if beta == 1.0 {
        out.layers[top] = momentum.clone();
        return Ok(out);
    }
    out.layers[top] = LayerParams {
        weight: momentum
            .weight
            .zip_with(&delta.layers[top].weight, |m, g| beta * m + (1.0 - beta) * g)?,
        bias: momentum
            .bias
            .zip_with(&delta.layers[top].bias, |m, g| beta * m + (1.0 - beta) * g)?,
    };
    Ok(out)
}

/// Mean of a tier's layer deltas over the exclusive range above the next
/// tier down: layers l_minus..=l_j in 1-based depth terms, divided by
/// (l_j − l_minus + 1). This is what the tier deposits in the momentum
/// bank for the tier below to blend next round.
pub fn compute_layer_momentum(
    delta: &ModelDelta,
    l_minus: usize,
    l_j: usize,
) -> Result<LayerParams> {
    if l_minus == 0 || l_minus >= l_j {
        return Err(Error::Topology(format!(
            "momentum slice needs 1 <= l_minus < l_j, got l_minus={l_minus} l_j={l_j}"
        )));
    }
    if l_j > delta.layers.len() {
        return Err(Error::Dimension(format!(
            "momentum slice reaches layer {l_j} but delta has {}",
            delta.layers.len()
        )));
    }
    let slice = &delta.layers[l_minus - 1..l_j];
    let mut weight = slice[0].weight.clone();
    let mut bias = slice[0].bias.clone();
    for lp in &slice[1..] {
        weight = weight.add(&lp.weight)?;
        bias = bias.add(&lp.bias)?;
    }
    let inv = 1.0 / (l_j - l_minus + 1) as f64;
    Ok(LayerParams { weight: weight.scale(inv), bias: bias.scale(inv) })
}

/// Per-tier momentum entries; the shallowest tier has no tier below it
/// and therefore never deposits momentum.
#[derive(Debug, Clone)]
pub struct MomentumBank {
    entries: Vec<Option<LayerParams>>,
}

impl MomentumBank {
    pub fn new(topology: &TierTopology, dim: usize) -> MomentumBank {
        let zero = LayerParams {
            weight: crate::tensor::Tensor::zeros(&[dim, dim]).expect("static nonzero shape"),
            bias: crate::tensor::Tensor::zeros(&[dim]).expect("static nonzero shape"),
        };
        let entries = (0..topology.num_tiers())
            .map(|j| (j > 0).then(|| zero.clone()))
            .collect();
        MomentumBank { entries }
    }

    pub fn get(&self, tier: usize) -> Option<&LayerParams> {
        self.entries.get(tier).and_then(Option::as_ref)
    }

    pub fn set(&mut self, tier: usize, value: LayerParams) -> Result<()> {
        match self.entries.get_mut(tier) {
            Some(slot @ Some(_)) => {
                *slot = Some(value);
                Ok(())
            }
            _ => Err(Error::Topology(format!(
                "tier {tier} does not own a momentum slot"
            ))),
        }
    }
}

/// Server-side Adam, kept per tier. No bias correction; a zero gradient
/// leaves parameters unchanged because the update is m/(sqrt(v)+tau) with
/// both accumulators still zero.
#[derive(Debug, Clone)]
pub struct ServerOpt {
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub tau: f64,
    m: Vec<ModelParams>,
    v: Vec<ModelParams>,
}

impl ServerOpt {
    pub fn new(models: &[LayeredModel], beta1: f64, beta2: f64, eta: f64, tau: f64) -> Result<ServerOpt> {
        for (name, value) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::Config(format!(
                    "server optimizer {name} must lie in [0, 1), got {value}"
                )));
            }
        }
        if !(eta > 0.0) {
            return Err(Error::Config(format!("server learning rate must be > 0, got {eta}")));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("server epsilon must be > 0, got {tau}")));
        }
        Ok(ServerOpt {
            beta1,
            beta2,
            eta,
            tau,
            m: models.iter().map(|m| m.params.zeros_like()).collect(),
            v: models.iter().map(|m| m.params.zeros_like()).collect(),
        })
    }

    /// Apply one Adam step for a tier: m ← β1·m + (1−β1)·g,
    /// v ← β2·v + (1−β2)·g², w ← w + η·m/(√v + τ). Returns the new
    /// parameters; the accumulators update in place.
    pub fn step(
        &mut self,
        tier: usize,
        delta: &ModelDelta,
        params: &ModelParams,
    ) -> Result<ModelParams> {
        if tier >= self.m.len() {
            return Err(Error::Topology(format!(
                "optimizer has no state for tier {tier}"
            )));
        }
        if let Some(name) = delta.first_non_finite() {
            return Err(Error::Numeric(format!(
                "tier {tier}: aggregated update has a non-finite entry in '{name}'"
            )));
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let m = self.m[tier].zip(delta, |a, g| a.zip_with(g, |av, gv| b1 * av + (1.0 - b1) * gv))?;
        let v = self.v[tier]
            .zip(delta, |a, g| a.zip_with(g, |av, gv| b2 * av + (1.0 - b2) * gv * gv))?;
        let (eta, tau) = (self.eta, self.tau);
        let step = m.zip(&v, |mm, vv| mm.zip_with(vv, |mv, vv| eta * mv / (vv.sqrt() + tau)))?;
        let next = params.add(&step)?;
        self.m[tier] = m;
        self.v[tier] = v;
        Ok(next)
    }
}

/// Pull shared encoder layers together across tiers, in place.
///
/// For each depth position l strictly below a tier's top layer, the tiers
/// deep enough to share it contribute their layer l weighted by this
/// round's participant counts; the result lands in the deepest model.
/// Afterwards every shallower tier is rebuilt as the deepest model's
/// prefix plus its own top layer, so top layers never mix across tiers.
/// With no participants anywhere the call is a no-op.
pub fn heterogeneous_aggregate(
    models: &mut [LayeredModel],
    counts: &[usize],
    topology: &TierTopology,
) -> Result<()> {
    let k = topology.num_tiers();
    if models.len() != k || counts.len() != k {
        return Err(Error::Topology(format!(
            "expected {k} models and counts, got {} and {}",
            models.len(),
            counts.len()
        )));
    }
    for (j, m) in models.iter().enumerate() {
        if m.depth() != topology.depth(j) {
            return Err(Error::Topology(format!(
                "tier {j} model has depth {} but topology says {}",
                m.depth(),
                topology.depth(j)
            )));
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Ok(());
    }

    let deepest = topology.largest();
    for l in 0..topology.max_depth() - 1 {
        let sharers: Vec<usize> =
            (0..k).filter(|&j| l < topology.depth(j) - 1 && counts[j] > 0).collect();
        let total: usize = sharers.iter().map(|&j| counts[j]).sum();
        if total == 0 {
            continue;
        }
        // Start from the first contributor scaled by its weight so a
        // single-contributor layer keeps its bits exactly (scale by 1.0).
        let mut acc: Option<LayerParams> = None;
        for &j in &sharers {
            let w = counts[j] as f64 / total as f64;
            let layer = &models[j].params.layers[l];
            acc = Some(match acc {
                None => LayerParams { weight: layer.weight.scale(w), bias: layer.bias.scale(w) },
                Some(a) => LayerParams {
                    weight: axpy(w, &layer.weight, &a.weight)?,
                    bias: axpy(w, &layer.bias, &a.bias)?,
                },
            });
        }
        models[deepest].params.layers[l] = acc.expect("nonzero total implies a contributor");
    }

    let prefix = models[deepest].params.layers.clone();
    for j in 0..k {
        if j == deepest {
            continue;
        }
        let own_top = topology.depth(j) - 1;
        models[j].params.layers[..own_top].clone_from_slice(&prefix[..own_top]);
    }
    Ok(())
}

/// Which parts of the round pipeline a training method exercises.
#[derive(Debug, Clone, Copy)]
pub struct ModeFlags {
    /// Blend top-layer deltas with handed-down momentum and refresh the bank.
    pub distill: bool,
    /// Share encoder layers across tiers after the server update.
    pub share_layers: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RoundHyper {
    pub fraction: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Momentum blend weight for distillation.
    pub beta: f64,
    pub parallel: bool,
}

/// Everything the server carries between rounds.
pub struct ServerState {
    pub topology: TierTopology,
    pub clients: Vec<ClientSpec>,
    pub models: Vec<LayeredModel>,
    pub opt: ServerOpt,
    pub bank: MomentumBank,
    pub root: Rng,
    pub hyper: RoundHyper,
    pub mode: ModeFlags,
}

/// What one tier did in one round.
#[derive(Debug, Clone)]
pub struct TierRoundStat {
    pub participants: usize,
    /// Mean local training loss over the tier's participants; None when
    /// the tier sat the round out.
    pub train_loss: Option<f64>,
}

impl ServerState {
    pub fn new(
        topology: TierTopology,
        clients: Vec<ClientSpec>,
        models: Vec<LayeredModel>,
        opt: ServerOpt,
        root: Rng,
        hyper: RoundHyper,
        mode: ModeFlags,
    ) -> Result<ServerState> {
        if models.len() != topology.num_tiers() {
            return Err(Error::Topology(format!(
                "{} models for {} tiers",
                models.len(),
                topology.num_tiers()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &clients {
            if c.tier >= topology.num_tiers() {
                return Err(Error::Topology(format!(
                    "client {} claims tier {} but only {} tiers exist",
                    c.id,
                    c.tier,
                    topology.num_tiers()
                )));
            }
            if c.sample_count() == 0 {
                return Err(Error::Data(format!("client {} has no training samples", c.id)));
            }
            if !seen.insert(c.id) {
                return Err(Error::Config(format!("duplicate client id {}", c.id)));
            }
        }
        let dim = models[topology.largest()].dim();
        let bank = MomentumBank::new(&topology, dim);
        Ok(ServerState { topology, clients, models, opt, bank, root, hyper, mode })
    }

    /// Run one full round. Rounds are numbered from 1; the number keys the
    /// sampling and client batch streams so replaying a round reproduces
    /// it bit for bit.
    pub fn run_round(&mut self, round: usize) -> Result<Vec<TierRoundStat>> {
        let k = self.topology.num_tiers();
        let plan = sample_round(&self.clients, self.hyper.fraction, &self.root, round, k)?;

        let jobs: Vec<(usize, usize)> = (0..k)
            .flat_map(|j| plan.groups[j].iter().map(move |&p| (j, p)))
            .collect();
        let run_one = |&(tier, pos): &(usize, usize)| -> Result<(ModelDelta, f64)> {
            let client = &self.clients[pos];
            let mut crng =
                self.root.derive(&[stream::CLIENT, client.id as u64, round as u64]);
            local_update(
                &self.models[tier],
                &client.partition,
                self.hyper.steps,
                self.hyper.batch,
                self.hyper.lr,
                &mut crng,
            )
        };
        // collect() preserves job order, so the parallel path reduces in
        // exactly the serial order.
        let results: Vec<Result<(ModelDelta, f64)>> = if self.hyper.parallel {
            jobs.par_iter().map(run_one).collect()
        } else {
            jobs.iter().map(run_one).collect()
        };

        let mut tier_deltas: Vec<Vec<ModelDelta>> = (0..k).map(|_| Vec::new()).collect();
        let mut tier_loss_sums = vec![0.0; k];
        for ((tier, _), result) in jobs.iter().zip(results) {
            let (delta, loss) =
                result.map_err(|e| Error::Numeric(format!("round {round}: {e}")))?;
            tier_deltas[*tier].push(delta);
            tier_loss_sums[*tier] += loss;
        }

        let mut means: Vec<Option<ModelDelta>> = Vec::with_capacity(k);
        for deltas in &tier_deltas {
            means.push(homomorphic_average(deltas)?);
        }

        if self.mode.distill {
            // Read phase: every blend sees the bank as of the previous
            // round, regardless of tier iteration order.
            let snapshot: Vec<Option<LayerParams>> =
                (0..k).map(|j| self.bank.get(j).cloned()).collect();
            for j in 0..k.saturating_sub(1) {
                if let Some(mean) = means[j].take() {
                    let above = snapshot[j + 1]
                        .as_ref()
                        .expect("every tier but the shallowest owns a momentum slot");
                    means[j] = Some(distill_momentum(&mean, above, self.hyper.beta)?);
                }
            }
        }

        for j in 0..k {
            if let Some(mean) = &means[j] {
                let next = self
                    .opt
                    .step(j, mean, &self.models[j].params)
                    .map_err(|e| Error::Numeric(format!("round {round}: {e}")))?;
                self.models[j].params = next;
            }
        }

        if self.mode.distill {
            for j in 1..k {
                if let Some(mean) = &means[j] {
                    let slice = compute_layer_momentum(
                        mean,
                        self.topology.depth(j - 1),
                        self.topology.depth(j),
                    )?;
                    self.bank.set(j, slice)?;
                }
            }
        }

        if self.mode.share_layers {
            let counts = plan.group_sizes();
            heterogeneous_aggregate(&mut self.models, &counts, &self.topology)?;
        }

        Ok((0..k)
            .map(|j| {
                let n = plan.groups[j].len();
                TierRoundStat {
                    participants: n,
                    train_loss: (n > 0).then(|| tier_loss_sums[j] / n as f64),
                }
            })
            .collect())
    }
}
