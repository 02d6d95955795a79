//! The scoring graph: cosine correlation between visual blocks and concept
//! elements, relu-normalized relevance, cross-attention in both directions,
//! gated pooling per modality, and the two-layer relevance network.

mod checkpoint;
mod params;

use std::collections::HashMap;

use crate::data::{ConceptPair, ImageItem};
use crate::encoders::{concept_matrix, project_image};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::par;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use params::{slot, Bound, ModelConfig, ModelParams, Variant, PARAM_NAMES};

/// Cosine similarity of every row of `v` with every row of `c`; zero rows
/// give cosine 0.
pub fn correlation(g: &mut Graph<'_>, v: NodeId, c: NodeId) -> Result<NodeId> {
    let (vw, cw) = (g.value(v).cols(), g.value(c).cols());
    if vw != cw {
        return Err(Error::shape("correlation", format!("widths {vw} and {cw}")));
    }
    let vn = g.row_l2_normalize(v)?;
    let cn = g.row_l2_normalize(c)?;
    let ct = g.transpose(cn)?;
    g.matmul(vn, ct)
}

/// `relu(r) / ||relu(r)||` per row; rows with no positive entry become zero.
pub fn normalize_relevance(g: &mut Graph<'_>, r: NodeId) -> Result<NodeId> {
    let pos = g.relu(r)?;
    g.row_l2_normalize(pos)
}

/// Attention of each query row over the context rows.
pub fn attention_weights(
    g: &mut Graph<'_>,
    query: NodeId,
    context: NodeId,
    lambda: f64,
) -> Result<NodeId> {
    let r = correlation(g, query, context)?;
    let rbar = normalize_relevance(g, r)?;
    g.softmax(rbar, lambda)
}

/// Each query row replaced by its attention-weighted sum of context rows.
pub fn cross_attend(g: &mut Graph<'_>, query: NodeId, context: NodeId, lambda: f64) -> Result<NodeId> {
    let alpha = attention_weights(g, query, context, lambda)?;
    g.matmul(alpha, context)
}

/// Softmax over rows of the per-row gate logits, as a `1 x N` row.
pub fn pool_weights(g: &mut Graph<'_>, x: NodeId, gate: NodeId) -> Result<NodeId> {
    let logits = g.matmul(x, gate)?;
    let logits = g.transpose(logits)?;
    g.softmax(logits, 1.0)
}

/// Gate-weighted sum of the rows of `x`, as a `1 x dk` row.
pub fn gated_pool(g: &mut Graph<'_>, x: NodeId, gate: NodeId) -> Result<NodeId> {
    let w = pool_weights(g, x, gate)?;
    g.matmul(w, x)
}

/// Two-layer relevance network on `[pooled image, pooled concept]`.
pub fn relevance_score(
    g: &mut Graph<'_>,
    bound: &Bound,
    pooled_image: NodeId,
    pooled_concept: NodeId,
) -> Result<NodeId> {
    let z = g.concat_cols(&[pooled_image, pooled_concept])?;
    let h = g.matmul(z, bound.get(slot::REL_W1))?;
    let h = g.add_row(h, bound.get(slot::REL_B1))?;
    let h = g.relu(h)?;
    let s = g.matmul(h, bound.get(slot::REL_W2))?;
    g.add_row(s, bound.get(slot::REL_B2))
}

/// Score of one candidate concept for one projected image (`B x dk`).
pub fn score_pair(
    g: &mut Graph<'_>,
    bound: &Bound,
    config: &ModelConfig,
    image: NodeId,
    concept: NodeId,
) -> Result<NodeId> {
    let variant = config.variant;
    let (v, c) = if variant.cross_attention() {
        let v_hat = cross_attend(g, image, concept, config.lambda)?;
        let c_hat = cross_attend(g, concept, image, config.lambda)?;
        (v_hat, c_hat)
    } else {
        (image, concept)
    };
    let (pv, pc) = if variant.gated_pooling() {
        (
            gated_pool(g, v, bound.get(slot::GATE_IMAGE))?,
            gated_pool(g, c, bound.get(slot::GATE_CONCEPT))?,
        )
    } else {
        (g.mean_rows(v)?, g.mean_rows(c)?)
    };
    relevance_score(g, bound, pv, pc)
}

/// Forward-only scorer with each candidate's concept encoding cached.
pub struct Scorer<'p> {
    params: &'p ModelParams,
    candidates: Vec<ConceptPair>,
    concepts: Vec<Tensor>,
}

impl<'p> Scorer<'p> {
    pub fn new(params: &'p ModelParams, candidates: &[ConceptPair]) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Data("no candidate pairs".into()));
        }
        let mut cache: HashMap<(usize, usize), Tensor> = HashMap::new();
        for p in candidates {
            if !cache.contains_key(&p.key()) {
                cache.insert(p.key(), concept_matrix(params, p)?);
            }
        }
        let concepts = candidates.iter().map(|p| cache[&p.key()].clone()).collect();
        Ok(Scorer {
            params,
            candidates: candidates.to_vec(),
            concepts,
        })
    }

    pub fn candidates(&self) -> &[ConceptPair] {
        &self.candidates
    }

    /// Raw relevance score of `item` against every candidate, in order.
    pub fn scores(&self, item: &ImageItem) -> Result<Vec<f64>> {
        let cfg = &self.params.config;
        if item.feature_dim() != cfg.feature_dim {
            return Err(Error::shape(
                "score",
                format!("item {} has width {}, model expects {}", item.id, item.feature_dim(), cfg.feature_dim),
            ));
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let blocks = g.constant_ref(&item.blocks);
        let image = project_image(&mut g, &bound, blocks)?;
        let mut out = Vec::with_capacity(self.concepts.len());
        for concept in &self.concepts {
            let c = g.constant_ref(concept);
            let s = score_pair(&mut g, &bound, cfg, image, c)?;
            out.push(g.value(s).item());
        }
        Ok(out)
    }

    /// Scores for many items, computed in parallel and returned in order.
    pub fn score_all(&self, items: &[ImageItem]) -> Result<Vec<Vec<f64>>> {
        par::map(items, |item| self.scores(item)).into_iter().collect()
    }
}

/// Raw relevance scores of one image against each candidate.
pub fn score_episode(params: &ModelParams, item: &ImageItem, candidates: &[ConceptPair]) -> Result<Vec<f64>> {
    Scorer::new(params, candidates)?.scores(item)
}
