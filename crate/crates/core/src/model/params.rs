use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};

/// Which parts of the scoring graph are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Unimodal features, gated pooling.
    NoCrossAttention,
    /// Cross-attention, mean pooling.
    NoGatedPooling,
    /// Unimodal features, mean pooling.
    Plain,
}

impl Variant {
    pub fn cross_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::NoGatedPooling)
    }

    pub fn gated_pooling(self) -> bool {
        matches!(self, Variant::Full | Variant::NoCrossAttention)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-cross-attention" => Ok(Variant::NoCrossAttention),
            "no-gated-pooling" => Ok(Variant::NoGatedPooling),
            "plain" => Ok(Variant::Plain),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoCrossAttention => "no-cross-attention",
            Variant::NoGatedPooling => "no-gated-pooling",
            Variant::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Joint concept-image width; each recurrent direction gets half.
    pub joint_dim: usize,
    /// Visual blocks per image. Recorded for validation; the graph is
    /// agnostic to it.
    pub blocks: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    /// Inverse temperature of the attention softmax.
    pub lambda: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joint_dim: 300,
            blocks: 49,
            feature_dim: 512,
            hidden: 512,
            lambda: 9.0,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joint_dim == 0 || self.joint_dim % 2 != 0 {
            return Err(Error::Config(format!("joint_dim {} must be positive and even", self.joint_dim)));
        }
        if self.feature_dim == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::Config("feature_dim, hidden and blocks must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be positive", self.lambda)));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> usize {
        self.joint_dim / 2
    }
}

/// Parameter slots in storage order.
pub mod slot {
    pub const ATTR_EMB: usize = 0;
    pub const OBJ_EMB: usize = 1;
    pub const FWD_WX: usize = 2;
    pub const FWD_WH: usize = 3;
    pub const FWD_B: usize = 4;
    pub const BWD_WX: usize = 5;
    pub const BWD_WH: usize = 6;
    pub const BWD_B: usize = 7;
    pub const VISUAL_PROJ: usize = 8;
    pub const GATE_IMAGE: usize = 9;
    pub const GATE_CONCEPT: usize = 10;
    pub const REL_W1: usize = 11;
    pub const REL_B1: usize = 12;
    pub const REL_W2: usize = 13;
    pub const REL_B2: usize = 14;
    pub const COUNT: usize = 15;
}

pub const PARAM_NAMES: [&str; slot::COUNT] = [
    "embeddings.attr",
    "embeddings.obj",
    "concept.fwd.w_x",
    "concept.fwd.w_h",
    "concept.fwd.b",
    "concept.bwd.w_x",
    "concept.bwd.w_h",
    "concept.bwd.b",
    "visual.proj",
    "pool.gate_image",
    "pool.gate_concept",
    "relevance.w1",
    "relevance.b1",
    "relevance.w2",
    "relevance.b2",
];

/// Every tensor of the model plus its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    /// Frozen embeddings enter graphs as constants and are never updated.
    pub frozen_embeddings: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, &[rows, cols], bound)
}

impl ModelParams {
    /// Seeded initialization. Recurrent weights are uniform in ±0.1 with
    /// forget-gate bias 1; the other matrices use Glorot-uniform bounds and
    /// zero biases.
    pub fn init(
        config: ModelConfig,
        embeddings: &EmbeddingTable,
        n_attrs: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let n_tokens = embeddings.rows.rows();
        if n_attrs > n_tokens {
            return Err(Error::shape("init", format!("{n_attrs} attributes in {n_tokens} rows")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = embeddings.dim();
        let h = config.cell_width();
        let dk = config.joint_dim;
        let mut tensors = Vec::with_capacity(slot::COUNT);
        let (attr_rows, obj_rows) = embeddings.rows.data().split_at(n_attrs * e);
        tensors.push(Tensor::new(vec![n_attrs, e], attr_rows.to_vec())?);
        tensors.push(Tensor::new(vec![n_tokens - n_attrs, e], obj_rows.to_vec())?);
        for _ in 0..2 {
            tensors.push(uniform(&mut rng, &[e, 4 * h], 0.1));
            tensors.push(uniform(&mut rng, &[h, 4 * h], 0.1));
            let mut b = Tensor::zeros(&[1, 4 * h]);
            b.data_mut()[h..2 * h].fill(1.0);
            tensors.push(b);
        }
        tensors.push(glorot(&mut rng, config.feature_dim, dk));
        tensors.push(glorot(&mut rng, dk, 1));
        tensors.push(glorot(&mut rng, dk, 1));
        tensors.push(glorot(&mut rng, 2 * dk, config.hidden));
        tensors.push(Tensor::zeros(&[1, config.hidden]));
        tensors.push(glorot(&mut rng, config.hidden, 1));
        tensors.push(Tensor::zeros(&[1, 1]));
        let params = ModelParams {
            config,
            tensors,
            frozen_embeddings: embeddings.frozen,
        };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn expected_shape(&self, index: usize) -> Vec<usize> {
        let c = &self.config;
        let (dk, h) = (c.joint_dim, c.cell_width());
        let e = self.embed_dim();
        match index {
            slot::ATTR_EMB => vec![self.n_attrs(), e],
            slot::OBJ_EMB => vec![self.n_objs(), e],
            slot::FWD_WX | slot::BWD_WX => vec![e, 4 * h],
            slot::FWD_WH | slot::BWD_WH => vec![h, 4 * h],
            slot::FWD_B | slot::BWD_B => vec![1, 4 * h],
            slot::VISUAL_PROJ => vec![c.feature_dim, dk],
            slot::GATE_IMAGE | slot::GATE_CONCEPT => vec![dk, 1],
            slot::REL_W1 => vec![2 * dk, c.hidden],
            slot::REL_B1 => vec![1, c.hidden],
            slot::REL_W2 => vec![c.hidden, 1],
            slot::REL_B2 => vec![1, 1],
            _ => unreachable!("no parameter slot {index}"),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.tensors.len() != slot::COUNT {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                slot::COUNT,
                self.tensors.len()
            )));
        }
        for i in [slot::ATTR_EMB, slot::OBJ_EMB] {
            if self.tensors[i].shape().len() != 2 {
                return Err(Error::Format(format!("{} must be a matrix", PARAM_NAMES[i])));
            }
        }
        for i in 0..slot::COUNT {
            let want = self.expected_shape(i);
            if self.tensors[i].shape() != want.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {want:?}",
                    PARAM_NAMES[i],
                    self.tensors[i].shape()
                )));
            }
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.tensors[slot::ATTR_EMB].cols()
    }

    pub fn n_attrs(&self) -> usize {
        self.tensors[slot::ATTR_EMB].rows()
    }

    pub fn n_objs(&self) -> usize {
        self.tensors[slot::OBJ_EMB].rows()
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn trainable(&self, index: usize) -> bool {
        !(self.frozen_embeddings && (index == slot::ATTR_EMB || index == slot::OBJ_EMB))
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Binds every tensor into `graph`, as a parameter when trainable.
    pub fn bind<'a>(&'a self, graph: &mut Graph<'a>) -> Bound {
        let nodes = (0..slot::COUNT)
            .map(|i| {
                if self.trainable(i) {
                    graph.param(i, &self.tensors[i])
                } else {
                    graph.constant_ref(&self.tensors[i])
                }
            })
            .collect::<Vec<_>>();
        Bound {
            nodes: nodes.try_into().expect("slot count"),
        }
    }

    /// Rounds every entry through `f32`, matching what a checkpoint stores.
    pub fn to_storage_precision(&self) -> ModelParams {
        let mut out = self.clone();
        for t in &mut out.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        out
    }
}

/// Graph node for each parameter slot.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    pub nodes: [NodeId; slot::COUNT],
}

impl Bound {
    pub fn get(&self, index: usize) -> NodeId {
        self.nodes[index]
    }
}
