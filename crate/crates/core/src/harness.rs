//! Experiment orchestration: dataset setup, client assignment, the round
//! loop, evaluation, and result files.
//!
//! Every run writes, under its output directory:
//! - `metrics.csv` with fixed columns round,tier,eval_accuracy,
//!   eval_macro_f1,train_loss and one row per (round, tier); NaN marks
//!   skipped evaluations and rounds a tier sat out,
//! - `curve_tier{j}.csv` per tier with only the evaluated points,
//! - `summary.json` with best/final metrics per tier and a config echo,
//! - `model_tier{j}.bin` checkpoints.
//!
//! Multi-seed runs nest per-seed directories and add `aggregate.json`
//! with mean and standard deviation across seeds. All files are byte
//! deterministic in (config, seed); wall-clock time is never written.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::baselines::{HeteroWidthState, LocalState, WidthPlan};
use crate::checkpoint::save_model;
use crate::config::{DataMode, ExperimentConfig, Method};
use crate::data::{
    iid_split_prefix, load_dataset, make_synthetic, silo_assign, Dataset, SynthSpec,
};
use crate::error::{Error, Result};
use crate::fed::{ClientSpec, ModeFlags, RoundHyper, ServerOpt, ServerState};
use crate::metrics::evaluate;
use crate::model::{build_tier_models, LayeredModel};
use crate::rng::{stream, Rng};
use crate::topology::TierTopology;

#[derive(Debug, Clone, Serialize)]
pub struct TierReport {
    pub tier: usize,
    pub depth: usize,
    pub best_accuracy: f64,
    /// First evaluated round attaining `best_accuracy`.
    pub best_round: usize,
    pub best_macro_f1: f64,
    pub final_accuracy: f64,
    pub final_macro_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub rounds: usize,
    pub tiers: Vec<TierReport>,
    /// The strongest tier's report, duplicated for global-model reads.
    pub global: TierReport,
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub round: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Everything a single run produces, in memory. Files are a side effect
/// when an output directory is configured.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    /// Per tier, evaluated points in round order (round 0 included).
    pub curves: Vec<Vec<CurvePoint>>,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct AggregateTier {
    tier: usize,
    depth: usize,
    mean_best_accuracy: f64,
    std_best_accuracy: f64,
    mean_final_accuracy: f64,
    std_final_accuracy: f64,
    mean_best_round: f64,
}

#[derive(Debug, Clone, Serialize)]
struct AggregateSummary {
    method: String,
    seeds: Vec<u64>,
    rounds: usize,
    tiers: Vec<AggregateTier>,
    global: AggregateTier,
    config: BTreeMap<String, String>,
}

/// A prepared experiment: topology after exclusions, the engine, and one
/// evaluation set per tier.
struct Prepared {
    topology: TierTopology,
    engine: Engine,
    eval_sets: Vec<(Arc<Dataset>, Vec<usize>)>,
}

enum Engine {
    Tiered(ServerState),
    Width(HeteroWidthState),
    Local(LocalState),
}

impl Engine {
    fn run_round(&mut self, round: usize) -> Result<Vec<crate::fed::TierRoundStat>> {
        match self {
            Engine::Tiered(s) => s.run_round(round),
            Engine::Width(s) => s.run_round(round),
            Engine::Local(s) => s.run_round(round),
        }
    }

    /// The model a tier would deploy right now.
    fn tier_model(&self, tier: usize) -> Result<LayeredModel> {
        match self {
            Engine::Tiered(s) => Ok(s.models[tier].clone()),
            Engine::Width(s) => s.tier_model(tier),
            Engine::Local(s) => s
                .clients
                .iter()
                .position(|c| c.tier == tier)
                .map(|pos| s.models[pos].clone())
                .ok_or_else(|| Error::Topology(format!("no client holds tier {tier}"))),
        }
    }
}

fn draw_tier(cumulative: &[f64], u: f64) -> usize {
    for (j, &c) in cumulative.iter().enumerate() {
        if u < c {
            return j;
        }
    }
    cumulative.len() - 1
}

fn keep_positions<T>(v: Vec<T>, position: &BTreeMap<usize, usize>) -> Vec<T> {
    v.into_iter()
        .enumerate()
        .filter(|(j, _)| position.contains_key(j))
        .map(|(_, x)| x)
        .collect()
}

/// Build datasets, clients, models, and the engine for one seed.
fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let full_topology = cfg.topology()?;
    let root = Rng::new(seed);

    // Tier assignment happens over the full topology; exclusions then drop
    // clients and renumber tiers, so an excluded tier's clients vanish
    // rather than being reassigned.
    let (mut clients, eval_sets_full, class_counts_full, input_dim) = match cfg.data.mode {
        DataMode::SyntheticIid | DataMode::File => {
            let ds: Arc<Dataset> = match cfg.data.mode {
                DataMode::File => {
                    let path = cfg
                        .data
                        .file
                        .as_ref()
                        .ok_or_else(|| Error::Config("data.mode = file requires data.file".into()))?;
                    Arc::new(load_dataset(path)?)
                }
                _ => {
                    let mut drng = root.derive(&[stream::DATA]);
                    Arc::new(make_synthetic(
                        &SynthSpec {
                            n: cfg.data.n,
                            input_dim: cfg.data.input_dim,
                            classes: cfg.data.classes,
                            spread: cfg.data.spread,
                            label_noise: cfg.data.label_noise,
                            warp_depth: cfg.data.warp_depth,
                            name: format!("synthetic-{seed}"),
                        },
                        &mut drng,
                    )?)
                }
            };
            let n = ds.len();
            let eval_n = ((n as f64 * cfg.data.eval_fraction) as usize).max(1);
            if eval_n >= n {
                return Err(Error::Config(format!(
                    "eval fraction {} leaves no training data",
                    cfg.data.eval_fraction
                )));
            }
            let train_n = n - eval_n;
            let mut srng = root.derive(&[stream::SPLIT]);
            let parts = iid_split_prefix(&ds, train_n, cfg.clients, &mut srng)?;
            let mut arng = root.derive(&[stream::ASSIGN]);
            let cumulative: Vec<f64> = full_topology
                .proportions()
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let clients: Vec<ClientSpec> = parts
                .into_iter()
                .enumerate()
                .map(|(id, partition)| ClientSpec {
                    id,
                    tier: draw_tier(&cumulative, arng.uniform()),
                    partition,
                })
                .collect();
            let eval_indices: Vec<usize> = (train_n..n).collect();
            let eval_sets: Vec<(Arc<Dataset>, Vec<usize>)> = (0..full_topology.num_tiers())
                .map(|_| (Arc::clone(&ds), eval_indices.clone()))
                .collect();
            let classes = vec![ds.classes; full_topology.num_tiers()];
            let input_dim = ds.input_dim();
            (clients, eval_sets, classes, input_dim)
        }
        DataMode::Silo => {
            let counts = cfg.silo_class_counts();
            let datasets: Vec<Arc<Dataset>> = (0..full_topology.num_tiers())
                .map(|j| {
                    let mut drng = root.derive(&[stream::DATA, j as u64]);
                    Ok(Arc::new(make_synthetic(
                        &SynthSpec {
                            n: cfg.data.n,
                            input_dim: cfg.data.input_dim,
                            classes: counts[j],
                            spread: cfg.data.spread,
                            label_noise: cfg.data.label_noise,
                            warp_depth: cfg.data.warp_depth,
                            name: format!("silo{j}-{seed}"),
                        },
                        &mut drng,
                    )?))
                })
                .collect::<Result<Vec<_>>>()?;
            let clients = silo_assign(&datasets, &full_topology, cfg.data.silo_rotation)?;
            let eval_sets: Vec<(Arc<Dataset>, Vec<usize>)> = clients
                .iter()
                .map(|c| (Arc::clone(&c.partition.dataset), c.partition.eval.clone()))
                .collect();
            let classes: Vec<usize> =
                clients.iter().map(|c| c.partition.dataset.classes).collect();
            (clients, eval_sets, classes, cfg.data.input_dim)
        }
    };

    // Tier exclusion: shrink the topology, drop orphaned clients, renumber.
    let (topology, eval_sets, class_counts) = if cfg.exclude.is_empty() {
        (full_topology, eval_sets_full, class_counts_full)
    } else {
        let topology = full_topology.exclude(&cfg.exclude)?;
        let position: BTreeMap<usize, usize> =
            (0..topology.num_tiers()).map(|p| (topology.id(p), p)).collect();
        clients.retain(|c| position.contains_key(&c.tier));
        for c in clients.iter_mut() {
            c.tier = position[&c.tier];
        }
        (
            topology,
            keep_positions(eval_sets_full, &position),
            keep_positions(class_counts_full, &position),
        )
    };

    let k = topology.num_tiers();
    let largest = topology.largest();
    match cfg.method {
        Method::AllLarge => clients.iter_mut().for_each(|c| c.tier = largest),
        Method::AllSmall => clients.iter_mut().for_each(|c| c.tier = 0),
        Method::ExclusiveFl => {
            clients.retain(|c| c.tier == largest);
            if clients.is_empty() {
                return Err(Error::Config(
                    "exclusivefl needs at least one strongest-tier client".into(),
                ));
            }
        }
        _ => {}
    }
    if clients.is_empty() {
        return Err(Error::Config("no clients remain after exclusions".into()));
    }

    let models =
        build_tier_models(&topology, input_dim, cfg.dim, &class_counts, cfg.activation, &root)?;
    let hyper = RoundHyper {
        fraction: cfg.fraction,
        steps: cfg.steps,
        batch: cfg.batch,
        lr: cfg.lr,
        beta: cfg.effective_beta(),
        parallel: cfg.parallel,
    };

    let engine = match cfg.method {
        Method::HeteroFl => {
            let plan = WidthPlan::solve(&topology, input_dim, cfg.dim, class_counts[largest])?;
            let global = models[largest].clone();
            Engine::Width(HeteroWidthState::new(
                topology.clone(),
                clients,
                global,
                plan,
                root,
                hyper,
            )?)
        }
        Method::Local => {
            let per_client: Vec<LayeredModel> =
                clients.iter().map(|c| models[c.tier].clone()).collect();
            Engine::Local(LocalState::new(k, clients, per_client, root, hyper)?)
        }
        method => {
            let mode = match method {
                Method::InclusiveFl => ModeFlags { distill: true, share_layers: true },
                Method::InclusiveFlStar => ModeFlags { distill: true, share_layers: false },
                // Layer sharing alone; AllLarge, AllSmall, and ExclusiveFL
                // reduce to it through their client pools.
                _ => ModeFlags { distill: false, share_layers: true },
            };
            let opt = ServerOpt::new(&models, cfg.beta1, cfg.beta2, cfg.eta, cfg.tau)?;
            Engine::Tiered(ServerState::new(topology.clone(), clients, models, opt, root, hyper, mode)?)
        }
    };

    Ok(Prepared { topology, engine, eval_sets })
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

/// Run one seed. When `dir` is given, result files land there; the
/// metrics file is opened before any training so an unwritable location
/// fails immediately.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut csv = match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            let mut w = BufWriter::new(File::create(d.join("metrics.csv"))?);
            writeln!(w, "round,tier,eval_accuracy,eval_macro_f1,train_loss")?;
            Some(w)
        }
        None => None,
    };

    let Prepared { topology, mut engine, eval_sets } = prepare(cfg, seed)?;
    let k = topology.num_tiers();
    let mut curves: Vec<Vec<CurvePoint>> = vec![Vec::new(); k];

    let eval_all = |engine: &Engine,
                    round: usize,
                    curves: &mut Vec<Vec<CurvePoint>>|
     -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let model = engine.tier_model(j)?;
            let (ds, indices) = &eval_sets[j];
            let (acc, f1) = evaluate(&model, ds, indices)?;
            curves[j].push(CurvePoint { round, accuracy: acc, macro_f1: f1 });
            out.push((acc, f1));
        }
        Ok(out)
    };

    let initial = eval_all(&engine, 0, &mut curves)?;
    if let Some(w) = csv.as_mut() {
        for (j, (acc, f1)) in initial.iter().enumerate() {
            writeln!(w, "0,{j},{},{},NaN", fmt_cell(*acc), fmt_cell(*f1))?;
        }
    }

    for t in 1..=cfg.rounds {
        let stats = engine.run_round(t)?;
        let do_eval = t % cfg.eval_interval == 0 || t == cfg.rounds;
        let scores = if do_eval { Some(eval_all(&engine, t, &mut curves)?) } else { None };
        if let Some(w) = csv.as_mut() {
            for j in 0..k {
                let (acc, f1) = match &scores {
                    Some(s) => (fmt_cell(s[j].0), fmt_cell(s[j].1)),
                    None => ("NaN".to_string(), "NaN".to_string()),
                };
                let loss = fmt_cell(stats[j].train_loss.unwrap_or(f64::NAN));
                writeln!(w, "{t},{j},{acc},{f1},{loss}")?;
            }
        }
    }
    if let Some(w) = csv.as_mut() {
        w.flush()?;
    }
    drop(csv);

    let tiers: Vec<TierReport> = (0..k)
        .map(|j| {
            let curve = &curves[j];
            let mut best = &curve[0];
            for p in curve {
                if p.accuracy > best.accuracy {
                    best = p;
                }
            }
            let best_f1 = curve.iter().map(|p| p.macro_f1).fold(f64::NEG_INFINITY, f64::max);
            let last = curve.last().expect("round 0 is always evaluated");
            TierReport {
                tier: topology.id(j),
                depth: topology.depth(j),
                best_accuracy: best.accuracy,
                best_round: best.round,
                best_macro_f1: best_f1,
                final_accuracy: last.accuracy,
                final_macro_f1: last.macro_f1,
            }
        })
        .collect();
    let summary = RunSummary {
        method: cfg.method.name().to_string(),
        seed,
        rounds: cfg.rounds,
        global: tiers[topology.largest()].clone(),
        tiers,
        config: {
            let mut kv = cfg.to_kv();
            kv.insert("seed".into(), seed.to_string());
            kv
        },
    };

    if let Some(d) = dir {
        for j in 0..k {
            let mut w = BufWriter::new(File::create(d.join(format!("curve_tier{j}.csv")))?);
            writeln!(w, "round,eval_accuracy,eval_macro_f1")?;
            for p in &curves[j] {
                writeln!(w, "{},{},{}", p.round, fmt_cell(p.accuracy), fmt_cell(p.macro_f1))?;
            }
            w.flush()?;
        }
        let mut w = BufWriter::new(File::create(d.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut w, &summary)
            .map_err(|e| Error::Format(format!("cannot serialize summary: {e}")))?;
        writeln!(w)?;
        w.flush()?;
        for j in 0..k {
            let model = engine.tier_model(j)?;
            save_model(&model, &d.join(format!("model_tier{j}.bin")))?;
        }
    }

    Ok(RunArtifacts { summary, curves, dir: dir.map(Path::to_path_buf) })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(cfg: &ExperimentConfig, runs: &[RunArtifacts]) -> AggregateSummary {
    let k = runs[0].summary.tiers.len();
    let tiers: Vec<AggregateTier> = (0..k)
        .map(|j| {
            let pick = |f: &dyn Fn(&TierReport) -> f64| -> Vec<f64> {
                runs.iter().map(|r| f(&r.summary.tiers[j])).collect()
            };
            let (mb, sb) = mean_std(&pick(&|t| t.best_accuracy));
            let (mf, sf) = mean_std(&pick(&|t| t.final_accuracy));
            let (mr, _) = mean_std(&pick(&|t| t.best_round as f64));
            AggregateTier {
                tier: runs[0].summary.tiers[j].tier,
                depth: runs[0].summary.tiers[j].depth,
                mean_best_accuracy: mb,
                std_best_accuracy: sb,
                mean_final_accuracy: mf,
                std_final_accuracy: sf,
                mean_best_round: mr,
            }
        })
        .collect();
    let global_tier = runs[0]
        .summary
        .tiers
        .iter()
        .position(|t| t.tier == runs[0].summary.global.tier)
        .unwrap_or(k - 1);
    AggregateSummary {
        method: cfg.method.name().to_string(),
        seeds: runs.iter().map(|r| r.summary.seed).collect(),
        rounds: cfg.rounds,
        global: tiers[global_tier].clone(),
        tiers,
        config: cfg.to_kv(),
    }
}

/// Run a config across its seed list. Single-seed runs write directly
/// into the output directory; multi-seed runs write one `seed{s}`
/// subdirectory per seed plus an `aggregate.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunArtifacts>> {
    cfg.validate()?;
    let seeds = cfg.effective_seeds();
    let multi = seeds.len() > 1;
    if let Some(root) = &cfg.out_dir {
        fs::create_dir_all(root)?;
    }
    let runs: Vec<RunArtifacts> = seeds
        .iter()
        .map(|&seed| {
            let dir: Option<PathBuf> = cfg.out_dir.as_ref().map(|root| {
                if multi {
                    root.join(format!("seed{seed}"))
                } else {
                    root.clone()
                }
            });
            run_single(cfg, seed, dir.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    if multi {
        if let Some(root) = &cfg.out_dir {
            let agg = aggregate(cfg, &runs);
            let mut w = BufWriter::new(File::create(root.join("aggregate.json"))?);
            serde_json::to_writer_pretty(&mut w, &agg)
                .map_err(|e| Error::Format(format!("cannot serialize aggregate: {e}")))?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Proportion,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Proportion => "proportion",
        }
    }

    pub fn from_name(s: &str) -> Result<SweepParam> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "proportion" => Ok(SweepParam::Proportion),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter '{s}', expected beta or proportion"
            ))),
        }
    }
}

/// Default blend weights for a beta sweep.
pub const BETA_SWEEP_DEFAULT: [f64; 5] = [0.0, 0.2, 0.5, 0.8, 1.0];

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: String,
    pub runs: Vec<RunArtifacts>,
}

/// Run one experiment per value with a shared seed schedule; emits
/// `sweep.csv` keyed by value under the base output directory, with each
/// run in its own subdirectory.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[String],
) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut cells = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::Beta => cfg.set("momentum.beta", value)?,
            SweepParam::Proportion => cfg.set("topology.proportions", value)?,
        }
        if let Some(root) = &base.out_dir {
            let slug: String = value
                .chars()
                .map(|c| if c == ':' || c == ',' { '-' } else { c })
                .collect();
            cfg.out_dir = Some(root.join(format!("{}-{slug}", param.name())));
        }
        let runs = run_experiment(&cfg)?;
        cells.push(SweepCell { value: value.clone(), runs });
    }
    if let Some(root) = &base.out_dir {
        let mut w = BufWriter::new(File::create(root.join("sweep.csv"))?);
        writeln!(
            w,
            "parameter,value,seed,tier,depth,best_accuracy,best_round,final_accuracy,final_macro_f1"
        )?;
        for cell in &cells {
            for run in &cell.runs {
                for t in &run.summary.tiers {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{}",
                        param.name(),
                        cell.value,
                        run.summary.seed,
                        t.tier,
                        t.depth,
                        fmt_cell(t.best_accuracy),
                        t.best_round,
                        fmt_cell(t.final_accuracy),
                        fmt_cell(t.final_macro_f1),
                    )?;
                }
            }
        }
        w.flush()?;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("rounds", "3"),
            ("clients.count", "6"),
            ("sample.fraction", "0.5"),
            ("topology.depths", "2,3"),
            ("topology.proportions", "1,1"),
            ("local.steps", "2"),
            ("local.batch", "8"),
            ("model.dim", "6"),
            ("data.n", "200"),
            ("data.input_dim", "5"),
            ("data.classes", "3"),
            ("data.warp_depth", "0"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn run_produces_curves_and_consistent_summary() {
        let cfg = tiny_config();
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs.len(), 1);
        let r = &runs[0];
        assert_eq!(r.curves.len(), 2);
        // Round 0 plus three evaluated rounds.
        assert_eq!(r.curves[0].len(), 4);
        for (j, t) in r.summary.tiers.iter().enumerate() {
            let curve = &r.curves[j];
            let max = curve.iter().map(|p| p.accuracy).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(t.best_accuracy, max);
            let first = curve.iter().find(|p| p.accuracy == max).unwrap();
            assert_eq!(t.best_round, first.round);
            assert_eq!(t.final_accuracy, curve.last().unwrap().accuracy);
        }
        assert_eq!(r.summary.global.tier, 1);
    }

    #[test]
    fn zero_rounds_reports_only_initial_evaluation() {
        let mut cfg = tiny_config();
        cfg.rounds = 0;
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs[0].curves[0].len(), 1);
        assert_eq!(runs[0].curves[0][0].round, 0);
    }

    #[test]
    fn files_are_written_and_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.out_dir = Some(dir.path().join("a"));
        run_experiment(&cfg).unwrap();
        cfg.out_dir = Some(dir.path().join("b"));
        run_experiment(&cfg).unwrap();
        for name in
            ["metrics.csv", "summary.json", "curve_tier0.csv", "curve_tier1.csv", "model_tier0.bin"]
        {
            let a = fs::read(dir.path().join("a").join(name)).unwrap();
            let b = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
            assert!(!a.is_empty());
        }
        let csv = fs::read_to_string(dir.path().join("a").join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "round,tier,eval_accuracy,eval_macro_f1,train_loss");
        // 1 header + (3 rounds + round 0) x 2 tiers.
        assert_eq!(csv.lines().count(), 1 + 4 * 2);
        assert!(csv.lines().nth(1).unwrap().ends_with("NaN"), "round 0 has no train loss");
    }

    #[test]
    fn unwritable_output_fails_before_training() {
        let mut cfg = tiny_config();
        cfg.rounds = 100_000; // would take forever if training started
        cfg.out_dir = Some(PathBuf::from("/proc/definitely/not/writable"));
        let start = std::time::Instant::now();
        let err = run_experiment(&cfg).err().unwrap();
        assert_eq!(err.kind(), "io");
        assert!(start.elapsed().as_secs() < 5);
    }

    #[test]
    fn multi_seed_writes_per_seed_dirs_and_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.seeds = vec![1, 2];
        cfg.rounds = 2;
        cfg.out_dir = Some(dir.path().to_path_buf());
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(dir.path().join("seed1/metrics.csv").exists());
        assert!(dir.path().join("seed2/summary.json").exists());
        let agg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("aggregate.json")).unwrap())
                .unwrap();
        assert_eq!(agg["seeds"], serde_json::json!([1, 2]));
        assert!(agg["global"]["mean_best_accuracy"].is_number());
    }

    #[test]
    fn eval_interval_thins_curves_but_keeps_final_round() {
        let mut cfg = tiny_config();
        cfg.rounds = 5;
        cfg.eval_interval = 2;
        let runs = run_experiment(&cfg).unwrap();
        let rounds: Vec<usize> = runs[0].curves[0].iter().map(|p| p.round).collect();
        assert_eq!(rounds, vec![0, 2, 4, 5]);
    }

    #[test]
    fn every_method_runs_on_a_tiny_task() {
        for method in Method::ALL {
            let mut cfg = tiny_config();
            cfg.method = method;
            if method == Method::Local {
                cfg.set("data.mode", "silo").unwrap();
                cfg.set("data.n", "50").unwrap();
                cfg.set("sample.fraction", "1").unwrap();
            }
            let runs = run_experiment(&cfg)
                .map_err(|e| format!("{}: {e}", method.name()))
                .unwrap();
            assert_eq!(runs[0].curves.len(), 2, "{}", method.name());
        }
    }

    #[test]
    fn excluding_a_tier_drops_its_clients_and_renumbers() {
        let mut cfg = tiny_config();
        cfg.set("topology.depths", "2,3,4").unwrap();
        cfg.set("topology.proportions", "1,1,1").unwrap();
        cfg.set("exclude.tiers", "0").unwrap();
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs[0].curves.len(), 2);
        assert_eq!(runs[0].summary.tiers[0].depth, 3);
        assert_eq!(runs[0].summary.tiers[1].depth, 4);
        // Tier labels keep their original numbering for reporting.
        assert_eq!(runs[0].summary.tiers[0].tier, 1);
        assert_eq!(runs[0].summary.global.tier, 2);
        assert_eq!(runs[0].summary.global.depth, 4);
    }

    #[test]
    fn exclusivefl_without_strong_clients_fails() {
        let mut cfg = tiny_config();
        cfg.method = Method::ExclusiveFl;
        // Weight zero on the strong tier: nobody is ever assigned to it.
        cfg.set("topology.proportions", "1,0").unwrap();
        let err = run_experiment(&cfg).err().unwrap();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn sweep_runs_every_value_with_shared_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.rounds = 2;
        cfg.out_dir = Some(dir.path().to_path_buf());
        let cells =
            sweep(&cfg, SweepParam::Beta, &["0".to_string(), "0.5".to_string()]).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].runs[0].summary.seed, cells[1].runs[0].summary.seed);
        let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert!(table.starts_with("parameter,value,seed,tier,"));
        assert_eq!(table.lines().count(), 1 + 2 * 2);
        assert!(dir.path().join("beta-0/metrics.csv").exists());
        assert!(dir.path().join("beta-0.5/metrics.csv").exists());
        assert!(sweep(&cfg, SweepParam::Beta, &[]).is_err());
    }

    #[test]
    fn proportion_sweep_accepts_ratio_strings() {
        let mut cfg = tiny_config();
        cfg.set("topology.depths", "2,3,4").unwrap();
        cfg.set("topology.proportions", "1,1,1").unwrap();
        cfg.rounds = 1;
        let cells = sweep(&cfg, SweepParam::Proportion, &["7:2:1".to_string()]).unwrap();
        assert_eq!(cells[0].runs[0].summary.config["topology.proportions"], "7,2,1");
    }
}
