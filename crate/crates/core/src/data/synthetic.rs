//! Seeded compositional world.
//!
//! Every attribute and object owns a signature vector. An image of pair
//! `(a, o)` carries the signature of `a` (plus noise) in each of its
//! attribute blocks, the signature of `o` in each object block, and pure
//! noise everywhere else.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    split_conventional, split_generalized, ConceptPair, DatasetSplit, Domain, ImageItem, Manifest,
    Vocab,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldConfig {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub blocks: usize,
    pub feature_dim: usize,
    pub attr_blocks: Vec<usize>,
    pub obj_blocks: Vec<usize>,
    pub noise_sigma: f64,
    /// L2 norm of each signature vector.
    pub signature_norm: f64,
    pub images_per_pair: usize,
    pub seen_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            n_attrs: 8,
            n_objs: 8,
            blocks: 16,
            feature_dim: 32,
            attr_blocks: vec![0],
            obj_blocks: vec![8],
            noise_sigma: 0.1,
            signature_norm: 3.0,
            images_per_pair: 20,
            seen_fraction: 0.75,
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_attrs == 0 || self.n_objs == 0 || self.blocks == 0 || self.feature_dim == 0 {
            return cfg("vocabulary sizes, block count and feature width must be positive".into());
        }
        if self.images_per_pair == 0 {
            return cfg("images_per_pair must be positive".into());
        }
        if self.attr_blocks.is_empty() || self.obj_blocks.is_empty() {
            return cfg("attribute and object block sets must be non-empty".into());
        }
        for &b in self.attr_blocks.iter().chain(&self.obj_blocks) {
            if b >= self.blocks {
                return cfg(format!("block index {b} out of range for {} blocks", self.blocks));
            }
        }
        let attr: BTreeSet<_> = self.attr_blocks.iter().collect();
        if let Some(b) = self.obj_blocks.iter().find(|b| attr.contains(b)) {
            return cfg(format!("block {b} is in both attr_blocks and obj_blocks"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return cfg(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if !(self.seen_fraction > 0.0 && self.seen_fraction < 1.0) {
            return cfg(format!("seen_fraction {} outside (0, 1)", self.seen_fraction));
        }
        Ok(())
    }

    pub fn n_seen(&self) -> usize {
        (self.seen_fraction * (self.n_attrs * self.n_objs) as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub manifest: Manifest,
    pub items: Vec<ImageItem>,
    pub attr_signatures: Tensor,
    pub obj_signatures: Tensor,
}

impl SyntheticWorld {
    pub fn vocab(&self) -> &Vocab {
        &self.manifest.vocab
    }

    pub fn conventional(&self) -> Result<DatasetSplit> {
        split_conventional(&self.items, &self.manifest.seen_pairs(), &self.manifest.unseen_pairs())
    }

    pub fn generalized(&self, holdout: f64, seed: u64) -> Result<DatasetSplit> {
        split_generalized(
            &self.items,
            &self.manifest.seen_pairs(),
            &self.manifest.unseen_pairs(),
            holdout,
            seed,
        )
    }
}

/// Random directions, orthonormalized when they fit in the space, each
/// scaled to `norm`.
fn signatures(rng: &mut ChaCha8Rng, count: usize, dim: usize, norm: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if i < dim {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|a| *a /= n);
        out.push(v);
    }
    out.into_iter()
        .map(|v| v.into_iter().map(|a| a * norm).collect())
        .collect()
}

/// Seen pairs: a cover touching every attribute and object, topped up with
/// random extra pairs until the seen count is reached.
fn choose_seen(cfg: &SyntheticWorldConfig, rng: &mut ChaCha8Rng) -> Result<BTreeSet<(usize, usize)>> {
    let total = cfg.n_attrs * cfg.n_objs;
    let n_seen = cfg.n_seen();
    let cover_len = cfg.n_attrs.max(cfg.n_objs);
    if n_seen < cover_len || n_seen >= total {
        return Err(Error::Config(format!(
            "infeasible split: {n_seen} seen of {total} pairs cannot cover {} attributes and {} objects \
             while leaving an unseen pair",
            cfg.n_attrs, cfg.n_objs
        )));
    }
    let mut attrs: Vec<usize> = (0..cfg.n_attrs).collect();
    let mut objs: Vec<usize> = (0..cfg.n_objs).collect();
    attrs.shuffle(rng);
    objs.shuffle(rng);
    let mut seen: BTreeSet<(usize, usize)> = (0..cover_len)
        .map(|i| (attrs[i % cfg.n_attrs], objs[i % cfg.n_objs]))
        .collect();
    let mut rest: Vec<(usize, usize)> = (0..cfg.n_attrs)
        .flat_map(|a| (0..cfg.n_objs).map(move |o| (a, o)))
        .filter(|p| !seen.contains(p))
        .collect();
    rest.shuffle(rng);
    seen.extend(rest.into_iter().take(n_seen - seen.len()));
    Ok(seen)
}

pub fn generate_synthetic(cfg: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigs = signatures(&mut rng, cfg.n_attrs + cfg.n_objs, cfg.feature_dim, cfg.signature_norm);
    let (attr_sigs, obj_sigs) = sigs.split_at(cfg.n_attrs);
    let seen = choose_seen(cfg, &mut rng)?;

    let vocab = Vocab::new(
        (0..cfg.n_attrs).map(|a| format!("a{a}")).collect(),
        (0..cfg.n_objs).map(|o| format!("o{o}")).collect(),
    )?;
    let pairs: Vec<ConceptPair> = (0..cfg.n_attrs)
        .flat_map(|a| (0..cfg.n_objs).map(move |o| (a, o)))
        .map(|(a, o)| {
            let domain = if seen.contains(&(a, o)) {
                Domain::Seen
            } else {
                Domain::Unseen
            };
            ConceptPair::new(a, o, domain)
        })
        .collect();
    let manifest = Manifest::new(vocab, pairs)?;

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut items = Vec::with_capacity(manifest.pairs().len() * cfg.images_per_pair);
    for pair in manifest.pairs() {
        for _ in 0..cfg.images_per_pair {
            let mut data = Vec::with_capacity(cfg.blocks * cfg.feature_dim);
            for b in 0..cfg.blocks {
                let signal = if cfg.attr_blocks.contains(&b) {
                    Some(&attr_sigs[pair.attr])
                } else if cfg.obj_blocks.contains(&b) {
                    Some(&obj_sigs[pair.obj])
                } else {
                    None
                };
                for d in 0..cfg.feature_dim {
                    let base = signal.map_or(0.0, |s| s[d]);
                    // Stored at f32 precision so files reproduce memory exactly.
                    data.push((base + noise.sample(&mut rng)) as f32 as f64);
                }
            }
            items.push(ImageItem {
                id: format!("img{:05}", items.len()),
                blocks: Tensor::new(vec![cfg.blocks, cfg.feature_dim], data)?,
                label: *pair,
            });
        }
    }
    let to_tensor = |rows: &[Vec<f64>]| Tensor::from_rows(rows);
    Ok(SyntheticWorld {
        manifest,
        items,
        attr_signatures: to_tensor(attr_sigs)?,
        obj_signatures: to_tensor(obj_sigs)?,
    })
}
