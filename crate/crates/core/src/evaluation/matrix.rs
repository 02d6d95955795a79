use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::{ConceptPair, Domain, ImageItem, Vocab};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Scorer};
use crate::numerics::Tensor;

/// Raw scores of a list of labeled items against an ordered candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    pub truths: Vec<ConceptPair>,
    pub candidates: Vec<ConceptPair>,
    /// `items x candidates`.
    pub scores: Tensor,
    truth_index: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, truths: Vec<ConceptPair>, candidates: Vec<ConceptPair>, scores: Tensor) -> Result<Self> {
        if ids.len() != truths.len() {
            return Err(Error::Data(format!("{} ids for {} labels", ids.len(), truths.len())));
        }
        if scores.shape() != [truths.len(), candidates.len()] {
            return Err(Error::shape(
                "score matrix",
                format!("{:?} for {} items x {} candidates", scores.shape(), truths.len(), candidates.len()),
            ));
        }
        let columns: HashMap<(usize, usize), usize> =
            candidates.iter().enumerate().rev().map(|(j, c)| (c.key(), j)).collect();
        let truth_index = truths
            .iter()
            .zip(&ids)
            .map(|(t, id)| {
                columns
                    .get(&t.key())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("label of {id} is not among the candidates")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreMatrix {
            ids,
            truths,
            candidates,
            scores,
            truth_index,
        })
    }

    /// Scores every item against `candidates` with the model.
    pub fn from_model(params: &ModelParams, items: &[ImageItem], candidates: &[ConceptPair]) -> Result<Self> {
        let rows = Scorer::new(params, candidates)?.score_all(items)?;
        let data = rows.into_iter().flatten().collect();
        ScoreMatrix::new(
            items.iter().map(|i| i.id.clone()).collect(),
            items.iter().map(|i| i.label).collect(),
            candidates.to_vec(),
            Tensor::new(vec![items.len(), candidates.len()], data)?,
        )
    }

    pub fn n_items(&self) -> usize {
        self.truths.len()
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Column of item `i`'s ground-truth pair.
    pub fn truth_index(&self, i: usize) -> usize {
        self.truth_index[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.scores.row(i)
    }

    /// Unseen-labeled items scored against unseen candidates only.
    pub fn restrict_to_unseen(&self) -> Result<ScoreMatrix> {
        let cols: Vec<usize> = (0..self.n_candidates())
            .filter(|&j| self.candidates[j].domain == Domain::Unseen)
            .collect();
        let rows: Vec<usize> = (0..self.n_items())
            .filter(|&i| self.truths[i].domain == Domain::Unseen)
            .collect();
        let data = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.scores.get(i, j))
            .collect();
        ScoreMatrix::new(
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows.iter().map(|&i| self.truths[i]).collect(),
            cols.iter().map(|&j| self.candidates[j]).collect(),
            Tensor::new(vec![rows.len(), cols.len()], data)?,
        )
    }

    /// Copy with every score shifted by `c`.
    pub fn shifted(&self, c: f64) -> Result<ScoreMatrix> {
        let mut out = self.clone();
        out.scores = self.scores.map(|v| v + c)?;
        Ok(out)
    }

    /// Header `id,true_attr,true_obj,domain,attr|obj|domain...`, then one
    /// row of scores per item.
    pub fn to_csv(&self, vocab: &Vocab) -> Result<String> {
        let mut out = String::from("id,true_attr,true_obj,domain");
        for c in &self.candidates {
            let _ = write!(out, ",{}|{}|{}", vocab.attr(c.attr), vocab.obj(c.obj), c.domain);
        }
        out.push('\n');
        for i in 0..self.n_items() {
            let id = &self.ids[i];
            if id.contains([',', '\n', '\r']) {
                return Err(Error::Data(format!("item id `{id}` cannot be written to CSV")));
            }
            let t = &self.truths[i];
            let _ = write!(out, "{id},{},{},{}", vocab.attr(t.attr), vocab.obj(t.obj), t.domain);
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str, vocab: &Vocab) -> Result<ScoreMatrix> {
        let bad = |line: usize, m: String| Error::Format(format!("score CSV line {line}: {m}"));
        let pair = |line: usize, a: &str, o: &str, d: &str| -> Result<ConceptPair> {
            let attr = vocab.attr_id(a).ok_or_else(|| bad(line, format!("unknown attribute `{a}`")))?;
            let obj = vocab.obj_id(o).ok_or_else(|| bad(line, format!("unknown object `{o}`")))?;
            let domain: Domain = d.parse().map_err(|_| bad(line, format!("bad domain `{d}`")))?;
            Ok(ConceptPair::new(attr, obj, domain))
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[..4] != ["id", "true_attr", "true_obj", "domain"] {
            return Err(bad(1, "expected header `id,true_attr,true_obj,domain,...`".into()));
        }
        let candidates = cols[4..]
            .iter()
            .map(|c| match c.split('|').collect::<Vec<_>>()[..] {
                [a, o, d] => pair(1, a, o, d),
                _ => Err(bad(1, format!("bad candidate column `{c}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut ids, mut truths, mut data) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(bad(n + 1, format!("{} fields, expected {}", f.len(), cols.len())));
            }
            ids.push(f[0].to_string());
            truths.push(pair(n + 1, f[1], f[2], f[3])?);
            for v in &f[4..] {
                data.push(v.parse::<f64>().map_err(|_| bad(n + 1, format!("bad score `{v}`")))?);
            }
        }
        let scores = Tensor::new(vec![truths.len(), candidates.len()], data)
            .map_err(|e| Error::Format(format!("score CSV: {e}")))?;
        ScoreMatrix::new(ids, truths, candidates, scores)
    }

    pub fn save_csv(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        std::fs::write(path, self.to_csv(vocab)?)?;
        Ok(())
    }

    pub fn load_csv(path: &Path, vocab: &Vocab) -> Result<ScoreMatrix> {
        ScoreMatrix::from_csv(&std::fs::read_to_string(path)?, vocab)
    }
}
