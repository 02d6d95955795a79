//! Text split manifests (`attr obj seen|unseen` per line) and vocab files
//! (`attr token` / `obj token` per line).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::features::RawItem;
use super::{ConceptPair, Domain, ImageItem, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub vocab: Vocab,
    pairs: Vec<ConceptPair>,
    index: HashMap<(usize, usize), usize>,
}

impl Manifest {
    pub fn new(vocab: Vocab, pairs: Vec<ConceptPair>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if p.attr >= vocab.n_attrs() || p.obj >= vocab.n_objs() {
                return Err(Error::Data(format!("pair ({}, {}) outside vocabulary", p.attr, p.obj)));
            }
            if let Some(prev) = index.insert(p.key(), i) {
                let what = if pairs[prev].domain == p.domain {
                    "listed twice"
                } else {
                    "both seen and unseen"
                };
                return Err(Error::Data(format!("pair `{}` {what}", vocab.pair_name(p))));
            }
        }
        Ok(Manifest { vocab, pairs, index })
    }

    /// Parses manifest text. Without an explicit vocab, tokens are indexed
    /// in order of first appearance.
    pub fn parse(text: &str, vocab: Option<Vocab>) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [attr, obj, domain] = fields[..] else {
                return Err(Error::Format(format!("manifest line {}: expected 3 fields", lineno + 1)));
            };
            rows.push((attr, obj, domain.parse::<Domain>()?));
        }
        let vocab = match vocab {
            Some(v) => v,
            None => {
                let mut attrs: Vec<String> = Vec::new();
                let mut objs: Vec<String> = Vec::new();
                for (a, o, _) in &rows {
                    if !attrs.iter().any(|x| x == a) {
                        attrs.push(a.to_string());
                    }
                    if !objs.iter().any(|x| x == o) {
                        objs.push(o.to_string());
                    }
                }
                Vocab::new(attrs, objs)?
            }
        };
        let pairs = rows
            .iter()
            .map(|(a, o, d)| {
                let attr = vocab
                    .attr_id(a)
                    .ok_or_else(|| Error::Data(format!("unknown attribute `{a}`")))?;
                let obj = vocab
                    .obj_id(o)
                    .ok_or_else(|| Error::Data(format!("unknown object `{o}`")))?;
                Ok(ConceptPair::new(attr, obj, *d))
            })
            .collect::<Result<Vec<_>>>()?;
        Manifest::new(vocab, pairs)
    }

    pub fn load(path: &Path, vocab: Option<Vocab>) -> Result<Self> {
        Manifest::parse(&fs::read_to_string(path)?, vocab)
    }

    pub fn to_text(&self) -> String {
        self.pairs
            .iter()
            .map(|p| format!("{} {} {}\n", self.vocab.attr(p.attr), self.vocab.obj(p.obj), p.domain))
            .collect()
    }

    pub fn pairs(&self) -> &[ConceptPair] {
        &self.pairs
    }

    pub fn seen_pairs(&self) -> Vec<ConceptPair> {
        self.by_domain(Domain::Seen)
    }

    pub fn unseen_pairs(&self) -> Vec<ConceptPair> {
        self.by_domain(Domain::Unseen)
    }

    fn by_domain(&self, d: Domain) -> Vec<ConceptPair> {
        self.pairs.iter().copied().filter(|p| p.domain == d).collect()
    }

    pub fn lookup(&self, attr: usize, obj: usize) -> Option<ConceptPair> {
        self.index.get(&(attr, obj)).map(|&i| self.pairs[i])
    }

    pub fn resolve(&self, raw: RawItem) -> Result<ImageItem> {
        let attr = self
            .vocab
            .attr_id(&raw.attr)
            .ok_or_else(|| Error::Data(format!("item {}: unknown attribute `{}`", raw.id, raw.attr)))?;
        let obj = self
            .vocab
            .obj_id(&raw.obj)
            .ok_or_else(|| Error::Data(format!("item {}: unknown object `{}`", raw.id, raw.obj)))?;
        let label = self.lookup(attr, obj).ok_or_else(|| {
            Error::Data(format!("item {}: pair `{} {}` not in manifest", raw.id, raw.attr, raw.obj))
        })?;
        Ok(ImageItem {
            id: raw.id,
            blocks: raw.blocks,
            label,
        })
    }
}

pub fn write_vocab(vocab: &Vocab) -> String {
    let attrs = vocab.attributes().iter().map(|t| format!("attr {t}\n"));
    let objs = vocab.objects().iter().map(|t| format!("obj {t}\n"));
    attrs.chain(objs).collect()
}

pub fn read_vocab(text: &str) -> Result<Vocab> {
    let mut attrs = Vec::new();
    let mut objs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_whitespace().collect::<Vec<_>>()[..] {
            ["attr", t] => attrs.push(t.to_string()),
            ["obj", t] => objs.push(t.to_string()),
            _ => return Err(Error::Format(format!("vocab line {}: `{line}`", lineno + 1))),
        }
    }
    Vocab::new(attrs, objs)
}
