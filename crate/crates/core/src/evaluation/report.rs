use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{auc_curve, biased_topk_acc, top1_unseen, AucCurve, ScoreMatrix};
use crate::data::{DatasetSplit, Domain, Setting};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Top-k levels reported in the generalized setting.
pub const AUC_LEVELS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionalReport {
    pub items: usize,
    pub candidates: usize,
    pub top1: f64,
}

/// Generalized metrics for one item set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedSet {
    pub items: usize,
    pub candidates: usize,
    /// Top-1 accuracies at zero bias.
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub curves: Vec<AucCurve>,
}

impl GeneralizedSet {
    fn from_matrix(m: &ScoreMatrix) -> Result<Self> {
        let (seen_acc, unseen_acc) = biased_topk_acc(m, 0.0, 1)?;
        let curves = AUC_LEVELS
            .iter()
            .map(|&k| auc_curve(m, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneralizedSet {
            items: m.n_items(),
            candidates: m.n_candidates(),
            seen_acc,
            unseen_acc,
            curves,
        })
    }

    pub fn auc(&self, k: usize) -> Option<f64> {
        self.curves.iter().find(|c| c.k == k).map(|c| c.auc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedReport {
    pub val: Option<GeneralizedSet>,
    pub test: GeneralizedSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub conventional: Option<ConventionalReport>,
    pub generalized: Option<GeneralizedReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        EvalReport::from_json(&std::fs::read_to_string(path)?)
    }

    /// One line per headline metric.
    pub fn summary(&self) -> String {
        let mut lines = Vec::new();
        if let Some(c) = &self.conventional {
            lines.push(format!("conventional top-1: {:.4} ({} items, {} candidates)", c.top1, c.items, c.candidates));
        }
        if let Some(g) = &self.generalized {
            let sets = g.val.iter().map(|v| ("val", v)).chain(std::iter::once(("test", &g.test)));
            for (name, set) in sets {
                let aucs: Vec<String> = set.curves.iter().map(|c| format!("top-{} {:.4}", c.k, c.auc)).collect();
                lines.push(format!(
                    "generalized {name}: AUC {}; seen {:.4} unseen {:.4} at zero bias",
                    aucs.join(", "),
                    set.seen_acc,
                    set.unseen_acc
                ));
            }
        }
        lines.join("\n")
    }
}

/// Metrics from precomputed score matrices. In the conventional setting
/// only unseen items and candidates of `test` are used.
pub fn evaluate_matrices(setting: Setting, test: &ScoreMatrix, val: Option<&ScoreMatrix>) -> Result<EvalReport> {
    match setting {
        Setting::Conventional => {
            let m = if test.candidates.iter().any(|c| c.domain == Domain::Seen) {
                test.restrict_to_unseen()?
            } else {
                test.clone()
            };
            Ok(EvalReport {
                setting,
                conventional: Some(ConventionalReport {
                    items: m.n_items(),
                    candidates: m.n_candidates(),
                    top1: top1_unseen(&m)?,
                }),
                generalized: None,
            })
        }
        Setting::Generalized => Ok(EvalReport {
            setting,
            conventional: None,
            generalized: Some(GeneralizedReport {
                val: val.map(GeneralizedSet::from_matrix).transpose()?,
                test: GeneralizedSet::from_matrix(test)?,
            }),
        }),
    }
}

/// Scores the split's evaluation sets with the model and computes the
/// metrics for its setting.
pub fn evaluate(params: &ModelParams, split: &DatasetSplit) -> Result<EvalReport> {
    if split.test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let candidates = split.candidate_pairs();
    let test = ScoreMatrix::from_model(params, &split.test, &candidates)?;
    let val = match (&split.setting, &split.val) {
        (Setting::Generalized, Some(v)) if !v.is_empty() => Some(ScoreMatrix::from_model(params, v, &candidates)?),
        _ => None,
    };
    evaluate_matrices(split.setting, &test, val.as_ref())
}
