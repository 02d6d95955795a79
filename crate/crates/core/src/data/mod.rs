//! Labels, features, splits, and the synthetic compositional world.

mod embeddings;
mod features;
mod manifest;
mod split;
mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use embeddings::{load_embeddings, parse_embeddings, random_embeddings, EmbeddingTable};
pub use features::{
    load_features, read_features, save_features, write_features, RawItem, FEATURE_MAGIC,
};
pub use manifest::{read_vocab, write_vocab, Manifest};
pub use split::{split_conventional, split_generalized, DatasetSplit, Setting};
pub use synthetic::{generate_synthetic, SyntheticWorld, SyntheticWorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Seen,
    Unseen,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Seen => "seen",
            Domain::Unseen => "unseen",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(Domain::Seen),
            "unseen" => Ok(Domain::Unseen),
            other => Err(Error::Format(format!("unknown domain `{other}`"))),
        }
    }
}

/// An attribute-object label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptPair {
    pub attr: usize,
    pub obj: usize,
    pub domain: Domain,
}

impl ConceptPair {
    pub fn new(attr: usize, obj: usize, domain: Domain) -> Self {
        ConceptPair { attr, obj, domain }
    }

    pub fn key(&self) -> (usize, usize) {
        (self.attr, self.obj)
    }
}

/// Attribute and object vocabularies. Indices are positions in each list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    attributes: Vec<String>,
    objects: Vec<String>,
    attr_index: HashMap<String, usize>,
    obj_index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(attributes: Vec<String>, objects: Vec<String>) -> Result<Self> {
        let attr_index = index_unique(&attributes, "attribute")?;
        let obj_index = index_unique(&objects, "object")?;
        Ok(Vocab {
            attributes,
            objects,
            attr_index,
            obj_index,
        })
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }

    pub fn n_objs(&self) -> usize {
        self.objects.len()
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attr(&self, id: usize) -> &str {
        &self.attributes[id]
    }

    pub fn obj(&self, id: usize) -> &str {
        &self.objects[id]
    }

    pub fn attr_id(&self, token: &str) -> Option<usize> {
        self.attr_index.get(token).copied()
    }

    pub fn obj_id(&self, token: &str) -> Option<usize> {
        self.obj_index.get(token).copied()
    }

    /// Embedding rows are laid out attributes first, then objects.
    pub fn n_tokens(&self) -> usize {
        self.attributes.len() + self.objects.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.attributes
            .iter()
            .chain(&self.objects)
            .map(String::as_str)
    }

    pub fn attr_row(&self, attr: usize) -> usize {
        attr
    }

    pub fn obj_row(&self, obj: usize) -> usize {
        self.attributes.len() + obj
    }

    pub fn pair_name(&self, pair: &ConceptPair) -> String {
        format!("{} {}", self.attr(pair.attr), self.obj(pair.obj))
    }
}

fn index_unique(tokens: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        if t.is_empty() || t.contains(char::is_whitespace) {
            return Err(Error::Data(format!("invalid {what} token `{t}`")));
        }
        if index.insert(t.clone(), i).is_some() {
            return Err(Error::Data(format!("duplicate {what} `{t}`")));
        }
    }
    Ok(index)
}

/// One image: `B x Dv` block features and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageItem {
    pub id: String,
    pub blocks: Tensor,
    pub label: ConceptPair,
}

impl ImageItem {
    pub fn n_blocks(&self) -> usize {
        self.blocks.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.cols()
    }
}

/// Checks that every attribute and object of `unseen` also occurs in `seen`.
pub fn check_coverage(seen: &[ConceptPair], unseen: &[ConceptPair]) -> Result<()> {
    for u in unseen {
        if !seen.iter().any(|s| s.attr == u.attr) {
            return Err(Error::Data(format!("attribute {} never seen in training", u.attr)));
        }
        if !seen.iter().any(|s| s.obj == u.obj) {
            return Err(Error::Data(format!("object {} never seen in training", u.obj)));
        }
    }
    Ok(())
}
