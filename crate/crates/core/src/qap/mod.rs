//! Graph alignment with a siamese equivariant network.
//!
//! Each [`MatchInstance`] pairs a random graph `g1` with a noisy copy whose
//! nodes are shuffled by a hidden permutation. The network embeds both
//! graphs with shared weights, scores node pairs by `E1 E2ᵀ`, and is trained
//! with a row-wise cross-entropy towards the hidden permutation. Matchings
//! are decoded with the Hungarian method or by row argmax.

mod lap;

pub use lap::{assignment_score, hungarian_lap, row_argmax};

use crate::error::{Error, Result};
use crate::gnn::{BatchInputs, Family, ModelSpec, Variant};
use crate::graph::{apply_noise, gen_erdos_renyi, gen_random_regular, GraphTensor, MaskedBatch, Permutation};
use crate::par;
use crate::rng::RngSeed;
use crate::tensor::{AdamConfig, AdamState, Params, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Distribution of the first graph of an instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphFamily {
    Er { n: usize, p: f64 },
    Regular { n: usize, d: usize },
}

impl GraphFamily {
    pub fn n(&self) -> usize {
        match *self {
            GraphFamily::Er { n, .. } | GraphFamily::Regular { n, .. } => n,
        }
    }

    /// Edge density used by the noise model.
    pub fn density(&self) -> f64 {
        match *self {
            GraphFamily::Er { p, .. } => p,
            GraphFamily::Regular { n, d } => d as f64 / (n as f64 - 1.0).max(1.0),
        }
    }

    pub fn sample(&self, seed: RngSeed) -> Result<GraphTensor> {
        match *self {
            GraphFamily::Er { n, p } => gen_erdos_renyi(n, p, seed),
            GraphFamily::Regular { n, d } => gen_random_regular(n, d, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchInstance {
    pub g1: GraphTensor,
    pub g2: GraphTensor,
    /// Node `i` of `g1` corresponds to node `truth(i)` of `g2`.
    pub truth: Permutation,
    pub noise: f64,
}

/// Instance `index` of a dataset: `g1` from `family`, noise in `g1`'s
/// frame, then a uniform hidden relabeling (or none).
///
/// The graph, noise and permutation streams depend only on `seed` and
/// `index`, so the same index at different noise levels shares `g1`, the
/// permutation and the noise uniforms.
pub fn make_instance(
    family: &GraphFamily,
    noise: f64,
    hidden_permutation: bool,
    seed: RngSeed,
    index: usize,
) -> Result<MatchInstance> {
    let s = seed.derive(index as u64);
    let g1 = family.sample(s.derive_str("g1"))?;
    let noisy = apply_noise(&g1, noise, family.density(), s.derive_str("noise"))?;
    let truth = if hidden_permutation {
        Permutation::random(g1.n(), &mut s.derive_str("perm").stream())
    } else {
        Permutation::identity(g1.n())
    };
    let g2 = noisy.permute(&truth)?;
    Ok(MatchInstance { g1, g2, truth, noise })
}

pub fn make_instances(
    family: &GraphFamily,
    noise: f64,
    count: usize,
    hidden_permutation: bool,
    seed: RngSeed,
) -> Result<Vec<MatchInstance>> {
    par::map_range(count, |k| make_instance(family, noise, hidden_permutation, seed, k))
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub graph: GraphFamily,
    /// Noise level of the training and validation sets.
    pub train_noise: f64,
    /// Noise levels of the test sets.
    pub eval_noise: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub hidden_permutation: bool,
    pub seed: RngSeed,
}

impl TrainConfig {
    /// Desk-scale defaults: ER(15, 0.2), two folklore layers of width 32.
    pub fn desk_scale() -> Self {
        TrainConfig {
            graph: GraphFamily::Er { n: 15, p: 0.2 },
            train_noise: 0.0,
            eval_noise: vec![0.0, 0.01, 0.02, 0.03, 0.05],
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            model: ModelSpec::uniform(Family::Fgnn2, Variant::Equivariant, 1, 2, 32),
            epochs: 15,
            batch_size: 32,
            adam: AdamConfig::default(),
            hidden_permutation: true,
            seed: RngSeed(7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.variant != Variant::Equivariant {
            return Err(Error::input("matching needs an equivariant model"));
        }
        if self.n_train == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::input("n_train, batch_size and epochs must be positive"));
        }
        if self.graph.n() == 0 {
            return Err(Error::input("graphs need at least one node"));
        }
        for &p in std::iter::once(&self.train_noise).chain(&self.eval_noise) {
            crate::graph::companion_noise(p, self.graph.density())?;
        }
        Ok(())
    }

    fn split_seed(&self, split: &str) -> RngSeed {
        self.seed.derive_str(split)
    }
}

pub struct Dataset {
    pub train: Vec<MatchInstance>,
    pub val: Vec<MatchInstance>,
}

pub fn make_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    cfg.validate()?;
    let inst = |split: &str, count| {
        make_instances(&cfg.graph, cfg.train_noise, count, cfg.hidden_permutation, cfg.split_seed(split))
    };
    Ok(Dataset {
        train: inst("train", cfg.n_train)?,
        val: inst("val", cfg.n_val)?,
    })
}

/// Test instances at `noise`; every level reuses the same base graphs.
pub fn make_test_set(cfg: &TrainConfig, noise: f64) -> Result<Vec<MatchInstance>> {
    make_instances(&cfg.graph, noise, cfg.n_test, cfg.hidden_permutation, cfg.split_seed("test"))
}

/// `S = E1 E2ᵀ` for a batch of instances, shape `[b, n_max, n_max]`.
pub fn siamese_scores(
    tape: &mut Tape,
    spec: &ModelSpec,
    vars: &BTreeMap<String, Var>,
    batch: &[&MatchInstance],
) -> Result<Var> {
    if spec.variant != Variant::Equivariant {
        return Err(Error::input("siamese scoring needs an equivariant model"));
    }
    let g1: Vec<&GraphTensor> = batch.iter().map(|m| &m.g1).collect();
    let g2: Vec<&GraphTensor> = batch.iter().map(|m| &m.g2).collect();
    let e1 = spec.forward(tape, vars, &BatchInputs::new(&MaskedBatch::from_refs(&g1)?))?;
    let e2 = spec.forward(tape, vars, &BatchInputs::new(&MaskedBatch::from_refs(&g2)?))?;
    let e2t = tape.transpose(e2)?;
    tape.matmul(e1, e2t)
}

/// Scores of one instance as an `n x n` tensor.
pub fn siamese_forward(spec: &ModelSpec, params: &Params, inst: &MatchInstance) -> Result<Tensor> {
    spec.check_params(params)?;
    let mut tape = Tape::new();
    let vars = constants(&mut tape, params);
    let s = siamese_scores(&mut tape, spec, &vars, &[inst])?;
    let n = inst.g1.n();
    tape.value(s).clone().reshaped(&[n, n])
}

fn constants(tape: &mut Tape, params: &Params) -> BTreeMap<String, Var> {
    params
        .tensors
        .iter()
        .map(|(k, t)| (k.clone(), tape.constant(t.clone())))
        .collect()
}

/// Mean over instances of the mean over real rows `i` of
/// `-log softmax(S_i)[truth(i)]`, softmax restricted to real columns.
///
/// `scores` is `[b, n_max, n_max]`; `truths[k]` has length `n_k`.
pub fn matching_loss(tape: &mut Tape, scores: Var, truths: &[&Permutation]) -> Result<Var> {
    let (b, n) = match tape.shape(scores) {
        [b, n, m] if n == m => (*b, *n),
        s => return Err(Error::input(format!("scores must be [b, n, n], got {s:?}"))),
    };
    if truths.len() != b {
        return Err(Error::input(format!("{} truths for a batch of {b}", truths.len())));
    }
    let mut mask = vec![false; b * n * n];
    let mut idx = Vec::new();
    let mut weights = Vec::new();
    for (k, t) in truths.iter().enumerate() {
        let nk = t.len();
        if nk == 0 {
            return Err(Error::input("instance without nodes"));
        }
        if nk > n {
            return Err(Error::input("truth longer than the score matrix"));
        }
        for i in 0..n {
            for j in 0..nk {
                mask[(k * n + i) * n + j] = true;
            }
        }
        for i in 0..nk {
            idx.push((k * n + i) * n + t.apply(i));
            weights.push(1.0 / (b * nk) as f64);
        }
    }
    let logp = tape.log_softmax(scores, Some(&mask))?;
    let flat = tape.reshape(logp, &[b * n * n])?;
    let picked = tape.gather(flat, &idx)?;
    let w = tape.constant(Tensor::from_vec(weights));
    let weighted = tape.mul(picked, w)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, -1.0))
}

/// [`matching_loss`] of a single `n x n` score matrix.
pub fn matching_loss_value(scores: &Tensor, truth: &Permutation) -> Result<f64> {
    let n = truth.len();
    if scores.shape() != [n, n] {
        return Err(Error::input(format!("scores {:?} do not match a truth of length {n}", scores.shape())));
    }
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone().reshaped(&[1, n, n])?);
    let l = matching_loss(&mut tape, s, &[truth])?;
    Ok(tape.value(l).data()[0])
}

/// Fraction of positions where `pred` agrees with `truth`.
pub fn node_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::input(format!(
            "cannot compare matchings of lengths {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    Lap,
    RowArgmax,
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decoder::Lap => "lap",
            Decoder::RowArgmax => "row-argmax",
        })
    }
}

impl std::str::FromStr for Decoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lap" => Ok(Decoder::Lap),
            "row-argmax" => Ok(Decoder::RowArgmax),
            _ => Err(Error::input(format!("unknown decoder {s:?} (lap or row-argmax)"))),
        }
    }
}

pub fn decode(scores: &[f64], n: usize, decoder: Decoder) -> Result<Vec<usize>> {
    match decoder {
        Decoder::Lap => hungarian_lap(scores, n),
        Decoder::RowArgmax => Ok(row_argmax(scores, n)),
    }
}

/// Per-instance accuracies, batched forward passes evaluated in parallel.
pub fn instance_accuracies(
    spec: &ModelSpec,
    params: &Params,
    instances: &[MatchInstance],
    decoder: Decoder,
    batch_size: usize,
) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    let chunks: Vec<&[MatchInstance]> = instances.chunks(batch_size.max(1)).collect();
    let per_chunk = par::map_slice(&chunks, |chunk| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = constants(&mut tape, params);
        let refs: Vec<&MatchInstance> = chunk.iter().collect();
        let s = siamese_scores(&mut tape, spec, &vars, &refs)?;
        let n_max = tape.shape(s)[1];
        let sd = tape.value(s).data();
        chunk
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                let n = inst.g1.n();
                let mut local = Vec::with_capacity(n * n);
                for i in 0..n {
                    let row = (k * n_max + i) * n_max;
                    local.extend_from_slice(&sd[row..row + n]);
                }
                let pred = decode(&local, n, decoder)?;
                node_accuracy(&pred, inst.truth.as_slice())
            })
            .collect()
    });
    let mut out = Vec::with_capacity(instances.len());
    for r in per_chunk {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub noise: f64,
    pub mean_acc: f64,
    pub stderr: f64,
    pub n_instances: usize,
    pub decoder: String,
}

pub const EVAL_HEADER: &str = "noise,mean_acc,stderr,n_instances,decoder";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            r.noise, r.mean_acc, r.stderr, r.n_instances, r.decoder
        );
    }
    out
}

/// Accuracy of `params` on the test set of every level in `cfg.eval_noise`.
pub fn evaluate(cfg: &TrainConfig, params: &Params, decoder: Decoder) -> Result<Vec<EvalRow>> {
    cfg.eval_noise
        .iter()
        .map(|&noise| {
            let test = make_test_set(cfg, noise)?;
            let accs = instance_accuracies(&cfg.model, params, &test, decoder, cfg.batch_size)?;
            let (mean_acc, stderr) = mean_stderr(&accs);
            Ok(EvalRow {
                noise,
                mean_acc,
                stderr,
                n_instances: accs.len(),
                decoder: decoder.to_string(),
            })
        })
        .collect()
}

/// Match nodes by sorted `(degree, sorted neighbor degrees)` profiles, ties
/// by index: the k-th node of `g1` in profile order goes to the k-th of `g2`.
pub fn degree_profile_baseline(inst: &MatchInstance) -> Vec<usize> {
    fn order(g: &GraphTensor) -> Vec<usize> {
        let deg = g.degrees();
        let mut keyed: Vec<((usize, Vec<usize>), usize)> = (0..g.n())
            .map(|v| {
                let mut nd: Vec<usize> = g.neighbors(v).iter().map(|&u| deg[u]).collect();
                nd.sort_unstable();
                ((deg[v], nd), v)
            })
            .collect();
        keyed.sort();
        keyed.into_iter().map(|(_, v)| v).collect()
    }
    let (o1, o2) = (order(&inst.g1), order(&inst.g2));
    let mut pred = vec![0; inst.g1.n()];
    for (a, b) in o1.into_iter().zip(o2) {
        pred[a] = b;
    }
    pred
}

pub fn baseline_accuracy(instances: &[MatchInstance]) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|m| node_accuracy(&degree_profile_baseline(m), m.truth.as_slice()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Row-argmax accuracy on the training batches, as seen during the epoch.
    pub train_acc: f64,
    pub val_loss: f64,
    /// Hungarian-decoded accuracy on the validation set.
    pub val_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        let _ = writeln!(out, "{},train,{:.9},{:.6}", m.epoch, m.train_loss, m.train_acc);
        let _ = writeln!(out, "{},val,{:.9},{:.6}", m.epoch, m.val_loss, m.val_acc);
    }
    out
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy
    /// (earliest on ties).
    pub params: Params,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

fn batch_loss(
    spec: &ModelSpec,
    params: &Params,
    batch: &[&MatchInstance],
    with_grad: bool,
) -> Result<(f64, f64, Option<BTreeMap<String, Tensor>>)> {
    let mut tape = Tape::new();
    let vars = if with_grad { params.attach(&mut tape) } else { constants(&mut tape, params) };
    let s = siamese_scores(&mut tape, spec, &vars, batch)?;
    let truths: Vec<&Permutation> = batch.iter().map(|m| &m.truth).collect();
    let loss = matching_loss(&mut tape, s, &truths)?;
    let value = tape.value(loss).data()[0];

    let n_max = tape.shape(s)[1];
    let sd = tape.value(s).data();
    let mut hits = 0usize;
    let mut rows = 0usize;
    for (k, m) in batch.iter().enumerate() {
        let n = m.g1.n();
        let mut local = Vec::with_capacity(n * n);
        for i in 0..n {
            let r = (k * n_max + i) * n_max;
            local.extend_from_slice(&sd[r..r + n]);
        }
        let pred = row_argmax(&local, n);
        hits += pred.iter().zip(m.truth.as_slice()).filter(|(a, b)| a == b).count();
        rows += n;
    }
    let grads = if with_grad {
        let g = tape.backward(loss)?;
        Some(vars.iter().map(|(k, &v)| (k.clone(), g.wrt(&tape, v))).collect())
    } else {
        None
    };
    Ok((value, hits as f64 / rows as f64, grads))
}

/// Loss and gradients of one batch, exposed for gradient checks.
pub fn loss_and_grads(
    spec: &ModelSpec,
    params: &Params,
    batch: &[&MatchInstance],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let (l, _, g) = batch_loss(spec, params, batch, true)?;
    Ok((l, g.unwrap()))
}

/// Adam on the siamese loss; validation after every epoch.
///
/// `on_epoch` sees each epoch's metrics as soon as they are known.
pub fn train(cfg: &TrainConfig, data: &Dataset, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = &cfg.model;
    let mut params = spec.init_params(cfg.seed.derive_str("init"))?;
    let mut adam = AdamState::new(cfg.adam, &params);
    let mut best: Option<(f64, usize, Params)> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs {
        cfg.seed.derive_str("shuffle").derive(epoch as u64).stream().shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&MatchInstance> = idx.iter().map(|&i| &data.train[i]).collect();
            let (loss, acc, grads) = batch_loss(spec, &params, &batch, true)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {loss}"),
                });
            }
            adam.step(&mut params, &grads.unwrap())?;
            loss_sum += loss * batch.len() as f64;
            acc_sum += acc * batch.len() as f64;
            seen += batch.len();
        }
        let (val_loss, val_acc) = if data.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mut vl = 0.0;
            for chunk in data.val.chunks(cfg.batch_size) {
                let refs: Vec<&MatchInstance> = chunk.iter().collect();
                vl += batch_loss(spec, &params, &refs, false)?.0 * chunk.len() as f64;
            }
            let accs = instance_accuracies(spec, &params, &data.val, Decoder::Lap, cfg.batch_size)?;
            (vl / data.val.len() as f64, mean_stderr(&accs).0)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: acc_sum / seen as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&m);
        let score = if val_acc.is_nan() { -m.train_loss } else { val_acc };
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, params.clone()));
        }
        metrics.push(m);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        metrics,
    })
}

/// One row per (checkpoint, evaluation level).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub train_noise: f64,
    pub eval: EvalRow,
}

pub const SWEEP_HEADER: &str = "train_noise,eval_noise,mean_acc,stderr,n_instances,decoder";

/// Evaluate every `(train noise, params)` model on every level of
/// `cfg.eval_noise`, in the given order.
pub fn cross_noise_sweep(cfg: &TrainConfig, models: &[(f64, Params)], decoder: Decoder) -> Result<Vec<SweepCell>> {
    let mut out = Vec::new();
    for (train_noise, params) in models {
        for eval in evaluate(cfg, params, decoder)? {
            out.push(SweepCell {
                train_noise: *train_noise,
                eval,
            });
        }
    }
    Ok(out)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{}",
            c.train_noise, c.eval.noise, c.eval.mean_acc, c.eval.stderr, c.eval.n_instances, c.eval.decoder
        );
    }
    out
}

/// Checkpoint with the training config stored under `meta.config`.
pub fn save_checkpoint(cfg: &TrainConfig, params: &Params, path: impl AsRef<std::path::Path>) -> Result<()> {
    let meta = serde_json::json!({ "config": cfg });
    crate::tensor::Checkpoint::from_params(params, meta).save(path)
}

pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<(TrainConfig, Params)> {
    let ck = crate::tensor::Checkpoint::load(path)?;
    let cfg: TrainConfig = serde_json::from_value(ck.meta["config"].clone())
        .map_err(|e| Error::input(format!("checkpoint has no usable training config: {e}")))?;
    let params = ck.to_params()?;
    cfg.model.check_params(&params)?;
    Ok((cfg, params))
}
