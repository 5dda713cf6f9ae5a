//! Width-cropping and purely local reference systems.
//!
//! The width-cropping baseline keeps every model at full depth but hands
//! weaker tiers a narrower model: each parameter matrix is the top-left
//! sub-matrix of the global one, with widths chosen so each tier's
//! parameter count approximately matches the corresponding depth-scaled
//! model. Aggregation is a per-entry mean over the local models whose
//! crop covers the entry; uncovered entries keep their previous global
//! values. The local baseline trains each client's own model with no
//! aggregation at all.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fed::{
    homomorphic_average, sample_round, train_locally, ClientSpec, RoundHyper, TierRoundStat,
};
use crate::model::{HeadParams, LayerParams, LayeredModel, ModelParams};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;
use crate::topology::TierTopology;

/// Per-tier hidden widths for the width-cropping baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WidthPlan {
    pub widths: Vec<usize>,
}

/// Parameter count of a depth-scaled model: full hidden width, `depth`
/// encoder layers.
pub fn depth_param_count(depth: usize, input_dim: usize, hidden: usize, classes: usize) -> usize {
    let enc = depth * (hidden * hidden + hidden);
    let head = input_dim * hidden + hidden       // input projection
        + hidden * hidden + hidden               // pool layer
        + hidden * classes + classes; // classifier
    enc + head
}

/// Parameter count of a full-depth model cropped to hidden width `w`.
pub fn cropped_param_count(
    full_depth: usize,
    input_dim: usize,
    w: usize,
    classes: usize,
) -> usize {
    depth_param_count(full_depth, input_dim, w, classes)
}

impl WidthPlan {
    /// Choose, per tier, the smallest width whose full-depth cropped model
    /// has at least as many parameters as that tier's depth-scaled model.
    /// Exhaustive over integer widths, so deterministic; the strongest
    /// tier always solves to the full width.
    pub fn solve(
        topology: &TierTopology,
        input_dim: usize,
        hidden: usize,
        classes: usize,
    ) -> Result<WidthPlan> {
        let full_depth = topology.max_depth();
        let widths = (0..topology.num_tiers())
            .map(|j| {
                let target = depth_param_count(topology.depth(j), input_dim, hidden, classes);
                (1..=hidden)
                    .find(|&w| cropped_param_count(full_depth, input_dim, w, classes) >= target)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "no width up to {hidden} reaches the tier {j} parameter target"
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WidthPlan { widths })
    }
}

/// Top-left crop. Rank-2 tensors crop to d_s rows by k_s columns; rank-1
/// tensors keep their first d_s entries (pass k_s = 1).
pub fn heterofl_crop(t: &Tensor, d_s: usize, k_s: usize) -> Result<Tensor> {
    match t.rank() {
        2 => {
            if d_s == 0 || k_s == 0 || d_s > t.rows() || k_s > t.cols() {
                return Err(Error::Dimension(format!(
                    "crop ({d_s}, {k_s}) does not fit in {:?}",
                    t.shape()
                )));
            }
            let mut data = Vec::with_capacity(d_s * k_s);
            for i in 0..d_s {
                data.extend_from_slice(&t.row(i)[..k_s]);
            }
            Tensor::new(&[d_s, k_s], data)
        }
        1 => {
            if d_s == 0 || k_s != 1 || d_s > t.len() {
                return Err(Error::Dimension(format!(
                    "crop ({d_s}, {k_s}) does not fit in {:?}",
                    t.shape()
                )));
            }
            Tensor::new(&[d_s], t.data()[..d_s].to_vec())
        }
        r => Err(Error::Dimension(format!("cannot crop rank-{r} tensor"))),
    }
}

/// Crop a full-width model to hidden width `w`. The input projection
/// keeps all of its input rows and the classifier keeps all of its class
/// columns; only hidden dimensions shrink.
pub fn crop_model(params: &ModelParams, w: usize) -> Result<ModelParams> {
    let input_dim = params.head.in_proj_weight.rows();
    let classes = params.head.cls_weight.cols();
    Ok(ModelParams {
        layers: params
            .layers
            .iter()
            .map(|l| {
                Ok(LayerParams {
                    weight: heterofl_crop(&l.weight, w, w)?,
                    bias: heterofl_crop(&l.bias, w, 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        head: HeadParams {
            in_proj_weight: heterofl_crop(&params.head.in_proj_weight, input_dim, w)?,
            in_proj_bias: heterofl_crop(&params.head.in_proj_bias, w, 1)?,
            pool_weight: heterofl_crop(&params.head.pool_weight, w, w)?,
            pool_bias: heterofl_crop(&params.head.pool_bias, w, 1)?,
            cls_weight: heterofl_crop(&params.head.cls_weight, w, classes)?,
            cls_bias: params.head.cls_bias.clone(),
        },
    })
}

/// Per-entry coverage mean of one tensor slot. Each local tensor covers
/// the top-left region its shape spans; an entry becomes the weighted
/// mean over covering locals and keeps the global value when nothing
/// covers it.
fn coverage_mean(global: &Tensor, locals: &[(&Tensor, f64)]) -> Result<Tensor> {
    let mut sum = vec![0.0; global.len()];
    let mut wt = vec![0.0; global.len()];
    let gcols = if global.rank() == 2 { global.cols() } else { 1 };
    for (t, w) in locals {
        if t.rank() != global.rank() {
            return Err(Error::Dimension(format!(
                "local tensor rank {} does not match global rank {}",
                t.rank(),
                global.rank()
            )));
        }
        match global.rank() {
            2 => {
                if t.rows() > global.rows() || t.cols() > global.cols() {
                    return Err(Error::Dimension(format!(
                        "local shape {:?} exceeds global {:?}",
                        t.shape(),
                        global.shape()
                    )));
                }
                for i in 0..t.rows() {
                    for (j, &v) in t.row(i).iter().enumerate() {
                        sum[i * gcols + j] += w * v;
                        wt[i * gcols + j] += w;
                    }
                }
            }
            1 => {
                if t.len() > global.len() {
                    return Err(Error::Dimension(format!(
                        "local shape {:?} exceeds global {:?}",
                        t.shape(),
                        global.shape()
                    )));
                }
                for (j, &v) in t.data().iter().enumerate() {
                    sum[j] += w * v;
                    wt[j] += w;
                }
            }
            r => return Err(Error::Dimension(format!("cannot aggregate rank-{r} tensor"))),
        }
    }
    let data = global
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &old)| if wt[idx] > 0.0 { sum[idx] / wt[idx] } else { old })
        .collect();
    Tensor::new(global.shape(), data)
}

/// Aggregate mixed-width local models into the full-width global model.
/// `counts[k]` is the number of clients the k-th local model stands for
/// (1 when locals are individual clients; the tier's participant count
/// when locals are per-tier means), so the result is always the per-entry
/// mean over covering clients.
pub fn heterofl_aggregate(
    global: &ModelParams,
    locals: &[ModelParams],
    counts: &[usize],
) -> Result<ModelParams> {
    if locals.len() != counts.len() {
        return Err(Error::Config(format!(
            "{} local models but {} counts",
            locals.len(),
            counts.len()
        )));
    }
    for l in locals {
        if l.layers.len() != global.layers.len() {
            return Err(Error::Dimension(format!(
                "local model has {} layers, global has {}",
                l.layers.len(),
                global.layers.len()
            )));
        }
    }
    let pick = |f: &dyn Fn(&ModelParams) -> &Tensor| -> Result<Tensor> {
        let pairs: Vec<(&Tensor, f64)> = locals
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(l, &c)| (f(l), c as f64))
            .collect();
        coverage_mean(f(global), &pairs)
    };
    let layers = (0..global.layers.len())
        .map(|l| {
            Ok(LayerParams {
                weight: pick(&move |p: &ModelParams| &p.layers[l].weight)?,
                bias: pick(&move |p: &ModelParams| &p.layers[l].bias)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelParams {
        layers,
        head: HeadParams {
            in_proj_weight: pick(&|p: &ModelParams| &p.head.in_proj_weight)?,
            in_proj_bias: pick(&|p: &ModelParams| &p.head.in_proj_bias)?,
            pool_weight: pick(&|p: &ModelParams| &p.head.pool_weight)?,
            pool_bias: pick(&|p: &ModelParams| &p.head.pool_bias)?,
            cls_weight: pick(&|p: &ModelParams| &p.head.cls_weight)?,
            cls_bias: pick(&|p: &ModelParams| &p.head.cls_bias)?,
        },
    })
}

/// Server state for the width-cropping baseline: one full-width,
/// full-depth global model; tiers train crops of it.
pub struct HeteroWidthState {
    pub topology: TierTopology,
    pub clients: Vec<ClientSpec>,
    pub global: LayeredModel,
    pub plan: WidthPlan,
    pub root: Rng,
    pub hyper: RoundHyper,
}

impl HeteroWidthState {
    pub fn new(
        topology: TierTopology,
        clients: Vec<ClientSpec>,
        global: LayeredModel,
        plan: WidthPlan,
        root: Rng,
        hyper: RoundHyper,
    ) -> Result<HeteroWidthState> {
        if global.depth() != topology.max_depth() {
            return Err(Error::Topology(format!(
                "global model depth {} but topology max depth {}",
                global.depth(),
                topology.max_depth()
            )));
        }
        if plan.widths.len() != topology.num_tiers() {
            return Err(Error::Topology(format!(
                "{} widths for {} tiers",
                plan.widths.len(),
                topology.num_tiers()
            )));
        }
        let d = global.dim();
        if plan.widths.iter().any(|&w| w == 0 || w > d) {
            return Err(Error::Config(format!(
                "widths must lie in 1..={d}, got {:?}",
                plan.widths
            )));
        }
        if plan.widths.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(format!(
                "widths must be non-decreasing with tier strength, got {:?}",
                plan.widths
            )));
        }
        Ok(HeteroWidthState { topology, clients, global, plan, root, hyper })
    }

    /// The model a tier trains and is evaluated with: the global model
    /// cropped to the tier's width.
    pub fn tier_model(&self, tier: usize) -> Result<LayeredModel> {
        Ok(LayeredModel {
            tier,
            activation: self.global.activation,
            params: crop_model(&self.global.params, self.plan.widths[tier])?,
        })
    }

    pub fn run_round(&mut self, round: usize) -> Result<Vec<TierRoundStat>> {
        let k = self.topology.num_tiers();
        let plan = sample_round(&self.clients, self.hyper.fraction, &self.root, round, k)?;

        let mut crops: Vec<Option<LayeredModel>> = vec![None; k];
        for j in 0..k {
            if !plan.groups[j].is_empty() {
                crops[j] = Some(self.tier_model(j)?);
            }
        }
        let jobs: Vec<(usize, usize)> = (0..k)
            .flat_map(|j| plan.groups[j].iter().map(move |&p| (j, p)))
            .collect();
        let run_one = |&(tier, pos): &(usize, usize)| -> Result<(ModelParams, f64)> {
            let client = &self.clients[pos];
            let mut crng = self.root.derive(&[stream::CLIENT, client.id as u64, round as u64]);
            let (trained, loss) = train_locally(
                crops[tier].as_ref().expect("crop built for every active tier"),
                &client.partition,
                self.hyper.steps,
                self.hyper.batch,
                self.hyper.lr,
                &mut crng,
            )?;
            Ok((trained.params, loss))
        };
        let results: Vec<Result<(ModelParams, f64)>> = if self.hyper.parallel {
            jobs.par_iter().map(run_one).collect()
        } else {
            jobs.iter().map(run_one).collect()
        };

        let mut tier_params: Vec<Vec<ModelParams>> = (0..k).map(|_| Vec::new()).collect();
        let mut tier_loss_sums = vec![0.0; k];
        for ((tier, _), result) in jobs.iter().zip(results) {
            let (params, loss) =
                result.map_err(|e| Error::Numeric(format!("round {round}: {e}")))?;
            tier_params[*tier].push(params);
            tier_loss_sums[*tier] += loss;
        }

        let mut locals = Vec::new();
        let mut counts = Vec::new();
        for (j, group) in tier_params.iter().enumerate() {
            if let Some(mean) = homomorphic_average(group)? {
                locals.push(mean);
                counts.push(plan.groups[j].len());
            }
        }
        if !locals.is_empty() {
            self.global.params = heterofl_aggregate(&self.global.params, &locals, &counts)?;
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

/// Purely local training: each client keeps and trains its own model,
/// nothing is ever aggregated. Intended for the cross-silo setting where
/// each tier is one client.
pub struct LocalState {
    pub num_tiers: usize,
    pub clients: Vec<ClientSpec>,
    /// One model per client, index-aligned with `clients`.
    pub models: Vec<LayeredModel>,
    pub root: Rng,
    pub hyper: RoundHyper,
}

impl LocalState {
    pub fn new(
        num_tiers: usize,
        clients: Vec<ClientSpec>,
        models: Vec<LayeredModel>,
        root: Rng,
        hyper: RoundHyper,
    ) -> Result<LocalState> {
        if models.len() != clients.len() {
            return Err(Error::Config(format!(
                "{} models for {} clients",
                models.len(),
                clients.len()
            )));
        }
        Ok(LocalState { num_tiers, clients, models, root, hyper })
    }

    pub fn run_round(&mut self, round: usize) -> Result<Vec<TierRoundStat>> {
        let plan =
            sample_round(&self.clients, self.hyper.fraction, &self.root, round, self.num_tiers)?;
        let positions: Vec<usize> = plan.groups.concat();
        let run_one = |&pos: &usize| -> Result<(LayeredModel, f64)> {
            let client = &self.clients[pos];
            let mut crng = self.root.derive(&[stream::CLIENT, client.id as u64, round as u64]);
            train_locally(
                &self.models[pos],
                &client.partition,
                self.hyper.steps,
                self.hyper.batch,
                self.hyper.lr,
                &mut crng,
            )
        };
        let results: Vec<Result<(LayeredModel, f64)>> = if self.hyper.parallel {
            positions.par_iter().map(run_one).collect()
        } else {
            positions.iter().map(run_one).collect()
        };

        let mut tier_loss_sums = vec![0.0; self.num_tiers];
        let mut tier_counts = vec![0usize; self.num_tiers];
        for (&pos, result) in positions.iter().zip(results) {
            let (trained, loss) =
                result.map_err(|e| Error::Numeric(format!("round {round}: {e}")))?;
            let tier = self.clients[pos].tier;
            self.models[pos] = trained;
            tier_loss_sums[tier] += loss;
            tier_counts[tier] += 1;
        }
        Ok((0..self.num_tiers)
            .map(|j| TierRoundStat {
                participants: tier_counts[j],
                train_loss: (tier_counts[j] > 0).then(|| tier_loss_sums[j] / tier_counts[j] as f64),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{iid_split, make_synthetic, SynthSpec};
    use crate::model::{build_tier_models, Activation};
    use crate::tensor::randn;
    use std::sync::Arc;

    #[test]
    fn crop_takes_top_left_and_full_crop_is_identity() {
        let t = Tensor::new(&[3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let c = heterofl_crop(&t, 2, 2).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 4.0, 5.0]);
        let full = heterofl_crop(&t, 3, 3).unwrap();
        assert_eq!(full.data(), t.data());
        let b = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cb = heterofl_crop(&b, 2, 1).unwrap();
        assert_eq!(cb.data(), &[1.0, 2.0]);
        assert!(heterofl_crop(&t, 4, 2).is_err());
        assert!(heterofl_crop(&t, 2, 4).is_err());
        assert!(heterofl_crop(&t, 0, 1).is_err());
        assert!(heterofl_crop(&b, 2, 2).is_err());
    }

    #[test]
    fn crop_roundtrip_reconstructs_covered_region() {
        let mut rng = Rng::new(42);
        for (rows, cols, ds, ks) in [(5usize, 7usize, 3usize, 4usize), (6, 6, 6, 6), (4, 2, 1, 1)] {
            let t = randn(&[rows, cols], 1.0, &mut rng).unwrap();
            let c = heterofl_crop(&t, ds, ks).unwrap();
            for i in 0..ds {
                for j in 0..ks {
                    assert_eq!(c.get2(i, j).to_bits(), t.get2(i, j).to_bits());
                }
            }
        }
    }

    #[test]
    fn coverage_mean_matches_per_entry_oracle() {
        let mut rng = Rng::new(7);
        let global = randn(&[4, 5], 1.0, &mut rng).unwrap();
        let shapes = [(4usize, 5usize), (2, 3), (3, 1)];
        let locals: Vec<Tensor> =
            shapes.iter().map(|&(r, c)| randn(&[r, c], 1.0, &mut rng).unwrap()).collect();
        let weights = [2.0, 1.0, 3.0];
        let pairs: Vec<(&Tensor, f64)> = locals.iter().zip(weights).collect();
        let out = coverage_mean(&global, &pairs).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                let mut w = 0.0;
                for ((r, c), (t, wt)) in shapes.iter().zip(&pairs) {
                    if i < *r && j < *c {
                        s += wt * t.get2(i, j);
                        w += wt;
                    }
                }
                let expect = if w > 0.0 { s / w } else { global.get2(i, j) };
                assert!((out.get2(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coverage_mean_handles_mixed_width_example() {
        // One full 2x2 model of 4s and one 1x1 crop of 0: the shared entry
        // averages to 2, everything else keeps the 4s.
        let global = Tensor::new(&[2, 2], vec![9.0; 4]).unwrap();
        let big = Tensor::new(&[2, 2], vec![4.0; 4]).unwrap();
        let small = Tensor::new(&[1, 1], vec![0.0]).unwrap();
        let out = coverage_mean(&global, &[(&big, 1.0), (&small, 1.0)]).unwrap();
        assert_eq!(out.get2(0, 0), 2.0);
        assert_eq!(out.get2(0, 1), 4.0);
        assert_eq!(out.get2(1, 0), 4.0);
        assert_eq!(out.get2(1, 1), 4.0);

        // Nothing covers anything: the global survives untouched.
        let none = coverage_mean(&global, &[]).unwrap();
        assert_eq!(none.data(), global.data());
    }

    #[test]
    fn full_width_aggregation_is_plain_mean() {
        let topo = TierTopology::new(&[3], &[1.0]).unwrap();
        let models = build_tier_models(&topo, 4, 6, &[3], Activation::Tanh, &Rng::new(1)).unwrap();
        let a = models[0].params.scale(1.0);
        let b = models[0].params.scale(3.0);
        let out = heterofl_aggregate(&models[0].params, &[a.clone(), b.clone()], &[1, 1]).unwrap();
        let expect = a.add(&b).unwrap().scale(0.5);
        for ((_, x), (_, y)) in out.named().iter().zip(expect.named()) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_solver_tracks_depth_targets_within_five_percent() {
        let topo = TierTopology::new(&[2, 4, 6], &[1.0, 1.0, 1.0]).unwrap();
        let (d_in, d, c) = (8, 48, 4);
        let plan = WidthPlan::solve(&topo, d_in, d, c).unwrap();
        assert_eq!(plan.widths.len(), 3);
        assert!(plan.widths.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(plan.widths[2], d, "strongest tier keeps full width");
        assert!(plan.widths[0] < d);
        for j in 0..3 {
            let target = depth_param_count(topo.depth(j), d_in, d, c) as f64;
            let got = cropped_param_count(topo.max_depth(), d_in, plan.widths[j], c) as f64;
            assert!(got >= target, "solver must reach the target");
            assert!(
                (got - target) / target <= 0.05,
                "tier {j}: width {} overshoots target by {:.1}%",
                plan.widths[j],
                100.0 * (got - target) / target
            );
        }
    }

    #[test]
    fn cropped_model_has_consistent_shapes_and_runs_forward() {
        let topo = TierTopology::new(&[2, 4], &[1.0, 1.0]).unwrap();
        let models = build_tier_models(&topo, 5, 8, &[3, 3], Activation::Tanh, &Rng::new(2)).unwrap();
        let cropped = crop_model(&models[1].params, 5).unwrap();
        assert_eq!(cropped.head.in_proj_weight.shape(), &[5, 5]);
        assert_eq!(cropped.layers[0].weight.shape(), &[5, 5]);
        assert_eq!(cropped.head.cls_weight.shape(), &[5, 3]);
        assert_eq!(cropped.head.cls_bias.shape(), &[3]);
        assert_eq!(cropped.layers.len(), 4);
        let small = LayeredModel { tier: 0, activation: Activation::Tanh, params: cropped };
        let x = randn(&[3, 5], 1.0, &mut Rng::new(3)).unwrap();
        let (logits, _) = crate::model::forward(&small, &x).unwrap();
        assert_eq!(logits.shape(), &[3, 3]);
    }

    fn silo_clients(n_per: usize, tiers: usize, seed: u64) -> Vec<ClientSpec> {
        let spec = SynthSpec {
            n: n_per * tiers,
            input_dim: 5,
            classes: 3,
            spread: 0.6,
            label_noise: 0.0,
            warp_depth: 0,
            name: "b".into(),
        };
        let ds = Arc::new(make_synthetic(&spec, &mut Rng::new(seed)).unwrap());
        let mut srng = Rng::new(seed).derive(&[stream::SPLIT]);
        iid_split(&ds, tiers, &mut srng)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, partition)| ClientSpec { id: i, tier: i, partition })
            .collect()
    }

    #[test]
    fn single_full_width_client_replaces_global_bitwise() {
        let topo = TierTopology::new(&[3], &[1.0]).unwrap();
        let models = build_tier_models(&topo, 5, 6, &[3], Activation::Tanh, &Rng::new(4)).unwrap();
        let clients = silo_clients(20, 1, 4);
        let hyper =
            RoundHyper { fraction: 1.0, steps: 2, batch: 4, lr: 0.1, beta: 0.0, parallel: false };
        let plan = WidthPlan { widths: vec![6] };
        let mut state = HeteroWidthState::new(
            topo,
            clients.clone(),
            models[0].clone(),
            plan,
            Rng::new(4),
            hyper,
        )
        .unwrap();
        state.run_round(1).unwrap();

        let mut crng = Rng::new(4).derive(&[stream::CLIENT, 0, 1]);
        let (trained, _) =
            train_locally(&models[0], &clients[0].partition, 2, 4, 0.1, &mut crng).unwrap();
        assert!(state.global.params.bits_equal(&trained.params));
    }

    #[test]
    fn narrow_tier_only_touches_its_covered_region() {
        let topo = TierTopology::new(&[2, 3], &[1.0, 1.0]).unwrap();
        let models =
            build_tier_models(&topo, 5, 6, &[3, 3], Activation::Tanh, &Rng::new(5)).unwrap();
        let global = models[1].clone();
        let before = global.params.clone();
        let clients = silo_clients(20, 2, 5);
        // Leave only the weak tier's client in the pool.
        let weak_only = vec![clients[0].clone()];
        let hyper =
            RoundHyper { fraction: 1.0, steps: 2, batch: 4, lr: 0.1, beta: 0.0, parallel: false };
        let plan = WidthPlan { widths: vec![4, 6] };
        let mut state =
            HeteroWidthState::new(topo, weak_only, global, plan, Rng::new(5), hyper).unwrap();
        state.run_round(1).unwrap();
        let after = &state.global.params;
        // Inside the 4-wide crop values moved; outside they kept their bits.
        let w0 = &after.layers[0].weight;
        let b0 = &before.layers[0].weight;
        assert_ne!(w0.get2(0, 0).to_bits(), b0.get2(0, 0).to_bits());
        assert_eq!(w0.get2(5, 5).to_bits(), b0.get2(5, 5).to_bits());
        assert_eq!(w0.get2(0, 4).to_bits(), b0.get2(0, 4).to_bits());
        // Classifier rows past the crop width are untouched too.
        assert_eq!(
            after.head.cls_weight.get2(5, 0).to_bits(),
            before.head.cls_weight.get2(5, 0).to_bits()
        );
        assert_ne!(
            after.head.cls_weight.get2(0, 0).to_bits(),
            before.head.cls_weight.get2(0, 0).to_bits()
        );
    }

    #[test]
    fn local_single_client_is_centralized_sgd() {
        let topo = TierTopology::new(&[3], &[1.0]).unwrap();
        let models = build_tier_models(&topo, 5, 6, &[3], Activation::Tanh, &Rng::new(6)).unwrap();
        let clients = silo_clients(25, 1, 6);
        let hyper =
            RoundHyper { fraction: 1.0, steps: 3, batch: 5, lr: 0.05, beta: 0.0, parallel: false };
        let mut state = LocalState::new(
            1,
            clients.clone(),
            vec![models[0].clone()],
            Rng::new(6),
            hyper,
        )
        .unwrap();
        for t in 1..=3 {
            state.run_round(t).unwrap();
        }
        let mut direct = models[0].clone();
        for t in 1..=3u64 {
            let mut crng = Rng::new(6).derive(&[stream::CLIENT, 0, t]);
            direct = train_locally(&direct, &clients[0].partition, 3, 5, 0.05, &mut crng)
                .unwrap()
                .0;
        }
        assert!(state.models[0].params.bits_equal(&direct.params));
    }

    #[test]
    fn local_models_never_mix() {
        let topo = TierTopology::new(&[2, 3], &[1.0, 1.0]).unwrap();
        let models =
            build_tier_models(&topo, 5, 6, &[3, 3], Activation::Tanh, &Rng::new(8)).unwrap();
        let clients = silo_clients(20, 2, 8);
        let hyper =
            RoundHyper { fraction: 1.0, steps: 2, batch: 4, lr: 0.1, beta: 0.0, parallel: false };
        let mut state = LocalState::new(
            2,
            clients.clone(),
            vec![models[0].clone(), models[1].clone()],
            Rng::new(8),
            hyper,
        )
        .unwrap();
        state.run_round(1).unwrap();
        // Each client's model evolves exactly as if the other didn't exist.
        let mut crng = Rng::new(8).derive(&[stream::CLIENT, 1, 1]);
        let (solo, _) =
            train_locally(&models[1], &clients[1].partition, 2, 4, 0.1, &mut crng).unwrap();
        assert!(state.models[1].params.bits_equal(&solo.params));
        assert_eq!(state.models[0].depth(), 2);
        assert_eq!(state.models[1].depth(), 3);
    }
}
