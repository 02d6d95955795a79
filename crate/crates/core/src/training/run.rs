use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_episode, select_confident, Adam, Episode, PseudoLabel, TrainConfig};
use crate::data::{ConceptPair, DatasetSplit, ImageItem};
use crate::encoders::{encode_concept, project_image};
use crate::error::{Error, Result};
use crate::model::{score_pair, ModelParams};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeLoss {
    CrossEntropy,
    /// Generalized cross-entropy with exponent `q`.
    Generalized(f64),
}

/// Mean loss and mean gradient over a batch of episodes.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    /// Episodes whose positive strictly outscored every negative.
    pub correct: usize,
}

struct EpisodeOut {
    loss: f64,
    correct: bool,
    params: Vec<Tensor>,
    concepts: Vec<(usize, Tensor)>,
}

fn episode_pass(
    params: &ModelParams,
    bank: &[Tensor],
    index: &BTreeMap<(usize, usize), usize>,
    ep: &Episode<'_>,
    loss: EpisodeLoss,
    weight: f64,
) -> Result<EpisodeOut> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let blocks = g.constant_ref(&ep.image.blocks);
    let image = project_image(&mut g, &bound, blocks)?;
    let mut leaves = Vec::with_capacity(ep.negatives.len() + 1);
    let mut scores = Vec::with_capacity(ep.negatives.len() + 1);
    for pair in ep.candidates() {
        let k = index[&pair.key()];
        let c = g.variable(bank[k].clone());
        leaves.push((k, c));
        scores.push(score_pair(&mut g, &bound, &params.config, image, c)?);
    }
    let logits = g.concat_cols(&scores)?;
    let l = match loss {
        EpisodeLoss::CrossEntropy => g.cross_entropy(logits, 0)?,
        EpisodeLoss::Generalized(q) => g.generalized_ce(logits, 0, q)?,
    };
    let s = g.value(logits).data();
    let correct = s[1..].iter().all(|&x| s[0] > x);
    let value = g.value(l).item();
    let seed = Tensor::filled(&[1], weight);
    let grads = g.backward_seeded(&[(l, &seed)])?;
    let mut param_grads = params.zeros_like();
    grads.accumulate_params(&mut param_grads);
    let concepts = leaves
        .into_iter()
        .map(|(k, node)| Ok((k, grads.wrt(node)?)))
        .collect::<Result<_>>()?;
    Ok(EpisodeOut {
        loss: value,
        correct,
        params: param_grads,
        concepts,
    })
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
}

/// Gradient of the mean episode loss. Every distinct concept in the batch
/// is encoded once; episodes are then differentiated in parallel against
/// those encodings, and the summed concept gradients are pushed back
/// through the encoder. Reductions run in episode order.
pub fn batch_gradients(params: &ModelParams, episodes: &[Episode<'_>], loss: EpisodeLoss) -> Result<BatchGradients> {
    if episodes.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut pairs: Vec<ConceptPair> = Vec::new();
    for ep in episodes {
        for p in ep.candidates() {
            index.entry(p.key()).or_insert_with(|| {
                pairs.push(p);
                pairs.len() - 1
            });
        }
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let nodes: Vec<NodeId> = pairs
        .iter()
        .map(|p| encode_concept(&mut g, &bound, params, p))
        .collect::<Result<_>>()?;
    let bank: Vec<Tensor> = nodes.iter().map(|&n| g.value(n).clone()).collect();

    let weight = 1.0 / episodes.len() as f64;
    let outs = par::map(episodes, |ep| episode_pass(params, &bank, &index, ep, loss, weight));

    let mut grads = params.zeros_like();
    let mut bank_grads: Vec<Tensor> = bank.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let (mut total, mut correct) = (0.0, 0);
    for out in outs {
        let out = out?;
        total += out.loss;
        correct += usize::from(out.correct);
        for (acc, g) in grads.iter_mut().zip(&out.params) {
            add_into(acc, g);
        }
        for (k, g) in &out.concepts {
            add_into(&mut bank_grads[*k], g);
        }
    }
    let seeds: Vec<(NodeId, &Tensor)> = nodes.iter().copied().zip(&bank_grads).collect();
    g.backward_seeded(&seeds)?.accumulate_params(&mut grads);
    Ok(BatchGradients {
        loss: total * weight,
        grads,
        correct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Inductive,
    Transductive,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Inductive => "inductive",
            Phase::Transductive => "transductive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-step loss.
    pub loss: f64,
    /// Pseudo-labeled items in use during the epoch.
    pub selected: usize,
    /// Fraction of labeled training episodes ranked correctly.
    pub top1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochMetrics>,
}

impl History {
    pub fn extend(&mut self, other: History) {
        self.epochs.extend(other.epochs);
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|m| m.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,loss,selected,top1\n");
        for m in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", m.epoch, m.phase, m.loss, m.selected, m.top1);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

struct EpochStats {
    loss: f64,
    top1: f64,
    shortfall: usize,
}

/// One pass over the labeled items, with pseudo-labeled episodes spread
/// evenly over the same steps.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    params: &mut ModelParams,
    adam: &mut Adam,
    train: &[ImageItem],
    pool: &[ConceptPair],
    pseudo: &[(&ImageItem, ConceptPair)],
    pseudo_pool: &[ConceptPair],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let labeled: Vec<Episode<'_>> = order
        .iter()
        .map(|&i| build_episode(&train[i], train[i].label, pool, cfg.n_t, &mut rng))
        .collect();
    let mut porder: Vec<usize> = (0..pseudo.len()).collect();
    porder.shuffle(&mut rng);
    let unlabeled: Vec<Episode<'_>> = porder
        .iter()
        .map(|&i| build_episode(pseudo[i].0, pseudo[i].1, pseudo_pool, cfg.n_t, &mut rng))
        .collect();
    let shortfall = labeled.iter().chain(&unlabeled).map(|e| e.shortfall).max().unwrap_or(0);

    let steps = labeled.len().div_ceil(cfg.batch_size);
    let chunk = unlabeled.len().div_ceil(steps).max(1);
    let lr = cfg.lr_at(epoch);
    let (mut loss_sum, mut correct) = (0.0, 0);
    let context = |step: usize| move |e: Error| match e {
        Error::NonFinite(op) => Error::Numeric(format!("epoch {epoch} step {step}: non-finite value in {op}")),
        other => other,
    };
    for (step, batch) in labeled.chunks(cfg.batch_size).enumerate() {
        let mut bg = batch_gradients(params, batch, EpisodeLoss::CrossEntropy).map_err(context(step))?;
        correct += bg.correct;
        let mut loss = bg.loss;
        let lo = (step * chunk).min(unlabeled.len());
        let hi = ((step + 1) * chunk).min(unlabeled.len());
        if lo < hi {
            let ug = batch_gradients(params, &unlabeled[lo..hi], EpisodeLoss::Generalized(cfg.q)).map_err(context(step))?;
            loss += ug.loss;
            for (a, g) in bg.grads.iter_mut().zip(&ug.grads) {
                add_into(a, g);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch} step {step}: loss is {loss}")));
        }
        loss_sum += loss;
        adam.update(params, &bg.grads, lr);
    }
    Ok(EpochStats {
        loss: loss_sum / steps as f64,
        top1: correct as f64 / labeled.len() as f64,
        shortfall,
    })
}

fn warn_shortfall(shortfall: usize, cfg: &TrainConfig, phase: Phase) {
    if shortfall > 0 {
        log::warn!(
            "{phase}: candidate pool too small for n_t = {}; episodes use {} negatives",
            cfg.n_t,
            cfg.n_t - shortfall
        );
    }
}

fn check_start(split: &DatasetSplit, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    Ok(())
}

/// Episodic training over the seen pairs, starting from `params`.
pub fn train_inductive(mut params: ModelParams, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(ModelParams, History)> {
    check_start(split, cfg)?;
    let mut adam = Adam::new(&params);
    let mut history = History::default();
    let mut shortfall = 0;
    for epoch in 0..cfg.epochs_inductive {
        let stats = run_epoch(&mut params, &mut adam, &split.train, &split.seen_pairs, &[], &[], cfg, epoch)?;
        shortfall = shortfall.max(stats.shortfall);
        log::info!("inductive epoch {epoch}: loss {:.5} top1 {:.4}", stats.loss, stats.top1);
        history.epochs.push(EpochMetrics {
            epoch,
            phase: Phase::Inductive,
            loss: stats.loss,
            selected: 0,
            top1: stats.top1,
        });
    }
    warn_shortfall(shortfall, cfg, Phase::Inductive);
    Ok((params, history))
}

/// Self-training on the test images. Every `sample_interval` epochs the
/// confident set is re-selected from scratch; each step then minimizes the
/// labeled cross-entropy plus the generalized cross-entropy of episodes
/// built around pseudo-labels. An empty confident set leaves only the
/// labeled term.
pub fn train_transductive(
    mut params: ModelParams,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(ModelParams, History)> {
    check_start(split, cfg)?;
    let pool = split.candidate_pairs();
    let mut adam = Adam::new(&params);
    let mut history = History::default();
    let mut selected: Vec<PseudoLabel> = Vec::new();
    let mut shortfall = 0;
    for epoch in 0..cfg.epochs_transductive {
        if epoch % cfg.sample_interval == 0 {
            selected = select_confident(&params, &split.test, &pool, cfg.gamma)?;
            if selected.is_empty() {
                log::info!("transductive epoch {epoch}: no confident test items, labeled loss only");
            }
        }
        let pseudo: Vec<(&ImageItem, ConceptPair)> = selected.iter().map(|p| (&split.test[p.index], p.pair)).collect();
        let stats = run_epoch(&mut params, &mut adam, &split.train, &split.seen_pairs, &pseudo, &pool, cfg, epoch)?;
        shortfall = shortfall.max(stats.shortfall);
        log::info!(
            "transductive epoch {epoch}: loss {:.5} selected {} top1 {:.4}",
            stats.loss,
            selected.len(),
            stats.top1
        );
        history.epochs.push(EpochMetrics {
            epoch,
            phase: Phase::Transductive,
            loss: stats.loss,
            selected: selected.len(),
            top1: stats.top1,
        });
    }
    warn_shortfall(shortfall, cfg, Phase::Transductive);
    Ok((params, history))
}
