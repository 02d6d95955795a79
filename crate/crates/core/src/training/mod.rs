//! Episodic training: episode construction, losses, confident-sample
//! selection, the Adam optimizer and the inductive and transductive loops.

mod optim;
mod run;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptPair, ImageItem};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Scorer};
use crate::numerics::kernels;

pub use optim::Adam;
pub use run::{batch_gradients, train_inductive, train_transductive, BatchGradients, EpisodeLoss, EpochMetrics, History, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Negatives per episode.
    pub n_t: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate factor applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs_inductive: usize,
    pub epochs_transductive: usize,
    /// Confident samples are re-selected every `sample_interval` epochs.
    pub sample_interval: usize,
    pub gamma: f64,
    pub q: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_t: 50,
            batch_size: 64,
            lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 5,
            epochs_inductive: 25,
            epochs_transductive: 10,
            sample_interval: 1,
            gamma: 10.0,
            q: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_t == 0 || self.batch_size == 0 || self.decay_every == 0 || self.sample_interval == 0 {
            return err("n_t, batch_size, decay_every and sample_interval must be positive".into());
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return err(format!("q = {} outside (0, 1]", self.q));
        }
        if !(self.gamma > 1.0) {
            return err(format!("gamma = {} must exceed 1", self.gamma));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return err(format!("lr = {} must be finite and >= 0", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return err(format!("lr_decay = {} outside (0, 1]", self.lr_decay));
        }
        Ok(())
    }

    /// Step size during the given epoch of a phase.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// One image, its positive pair and sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<'a> {
    pub image: &'a ImageItem,
    pub positive: ConceptPair,
    pub negatives: Vec<ConceptPair>,
    /// Negatives that could not be drawn because the pool was too small.
    pub shortfall: usize,
}

impl Episode<'_> {
    /// Positive first, then the negatives in draw order.
    pub fn candidates(&self) -> Vec<ConceptPair> {
        std::iter::once(self.positive).chain(self.negatives.iter().copied()).collect()
    }
}

/// Draws `n_t` distinct negatives uniformly without replacement from the
/// pool minus the positive. A pool that is too small is used whole and the
/// missing count is recorded in `shortfall`.
pub fn build_episode<'a, R: Rng + ?Sized>(
    image: &'a ImageItem,
    positive: ConceptPair,
    pool: &[ConceptPair],
    n_t: usize,
    rng: &mut R,
) -> Episode<'a> {
    let others: Vec<ConceptPair> = pool.iter().filter(|p| p.key() != positive.key()).copied().collect();
    let take = n_t.min(others.len());
    let negatives = sample(rng, others.len(), take).into_iter().map(|i| others[i]).collect();
    Episode {
        image,
        positive,
        negatives,
        shortfall: n_t - take,
    }
}

/// `-log softmax(scores)[positive]`. Panics if `positive` is out of range.
pub fn episode_ce_loss(scores: &[f64], positive: usize) -> f64 {
    assert!(positive < scores.len(), "positive index {positive} of {}", scores.len());
    kernels::cross_entropy(scores, positive)
}

/// `(1 - p^q) / q` with `p` floored at 1e-12.
pub fn gce_loss(p: f64, q: f64) -> f64 {
    kernels::gce(p, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub image_id: String,
    /// Position of the image in the unlabeled list.
    pub index: usize,
    pub pair: ConceptPair,
    pub ratio: f64,
}

/// Top-1 index and the ratio of the two largest probabilities, if that
/// ratio strictly exceeds `gamma`.
pub fn confident(probs: &[f64], gamma: f64) -> Option<(usize, f64)> {
    if probs.len() < 2 {
        return None;
    }
    let top = kernels::argmax(probs);
    let second = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    let ratio = if second > 0.0 { probs[top] / second } else { f64::INFINITY };
    (ratio > gamma).then_some((top, ratio))
}

/// Pseudo-labels for every item whose top-1 to top-2 probability ratio
/// exceeds `gamma`, in item order.
pub fn select_confident(
    params: &ModelParams,
    items: &[ImageItem],
    candidates: &[ConceptPair],
    gamma: f64,
) -> Result<Vec<PseudoLabel>> {
    if candidates.len() < 2 {
        return Err(Error::Data("confident selection needs at least two candidates".into()));
    }
    let scores = Scorer::new(params, candidates)?.score_all(items)?;
    Ok(items
        .iter()
        .zip(&scores)
        .enumerate()
        .filter_map(|(index, (item, s))| {
            let probs = kernels::softmax(s, 1.0);
            confident(&probs, gamma).map(|(top, ratio)| PseudoLabel {
                image_id: item.id.clone(),
                index,
                pair: candidates[top],
                ratio,
            })
        })
        .collect())
}

/// Highest-scoring candidate; ties go to the lowest index.
pub fn predict(params: &ModelParams, item: &ImageItem, candidates: &[ConceptPair]) -> Result<ConceptPair> {
    let scores = Scorer::new(params, candidates)?.scores(item)?;
    Ok(candidates[kernels::argmax(&scores)])
}
