use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_coverage, ConceptPair, ImageItem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Test candidates are the unseen pairs only.
    Conventional,
    /// Test candidates are seen and unseen pairs together.
    Generalized,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Conventional => "conventional",
            Setting::Generalized => "generalized",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(Setting::Conventional),
            "generalized" => Ok(Setting::Generalized),
            other => Err(Error::Config(format!("unknown setting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub setting: Setting,
    pub train: Vec<ImageItem>,
    pub val: Option<Vec<ImageItem>>,
    pub test: Vec<ImageItem>,
    pub seen_pairs: Vec<ConceptPair>,
    pub unseen_pairs: Vec<ConceptPair>,
}

impl DatasetSplit {
    /// Candidate labels at test time for this split's setting.
    pub fn candidate_pairs(&self) -> Vec<ConceptPair> {
        match self.setting {
            Setting::Conventional => self.unseen_pairs.clone(),
            Setting::Generalized => self
                .seen_pairs
                .iter()
                .chain(&self.unseen_pairs)
                .copied()
                .collect(),
        }
    }
}

fn check_disjoint(seen: &[ConceptPair], unseen: &[ConceptPair]) -> Result<()> {
    let seen_keys: HashSet<_> = seen.iter().map(ConceptPair::key).collect();
    if let Some(p) = unseen.iter().find(|p| seen_keys.contains(&p.key())) {
        return Err(Error::Data(format!(
            "pair ({}, {}) is both seen and unseen",
            p.attr, p.obj
        )));
    }
    Ok(())
}

fn warn_uncovered(seen: &[ConceptPair], unseen: &[ConceptPair]) {
    if let Err(e) = check_coverage(seen, unseen) {
        log::warn!("{e}");
    }
}

/// Train on every seen-pair image, test on every unseen-pair image.
pub fn split_conventional(
    items: &[ImageItem],
    seen: &[ConceptPair],
    unseen: &[ConceptPair],
) -> Result<DatasetSplit> {
    check_disjoint(seen, unseen)?;
    warn_uncovered(seen, unseen);
    let seen_keys: HashSet<_> = seen.iter().map(ConceptPair::key).collect();
    let unseen_keys: HashSet<_> = unseen.iter().map(ConceptPair::key).collect();
    let train = items
        .iter()
        .filter(|i| seen_keys.contains(&i.label.key()))
        .cloned()
        .collect();
    let test = items
        .iter()
        .filter(|i| unseen_keys.contains(&i.label.key()))
        .cloned()
        .collect();
    Ok(DatasetSplit {
        setting: Setting::Conventional,
        train,
        val: None,
        test,
        seen_pairs: seen.to_vec(),
        unseen_pairs: unseen.to_vec(),
    })
}

/// Holds out `holdout` of each seen pair's images and splits the unseen
/// pairs in half; each half of both goes to validation and test.
/// Held-out images never enter training.
pub fn split_generalized(
    items: &[ImageItem],
    seen: &[ConceptPair],
    unseen: &[ConceptPair],
    holdout: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    check_disjoint(seen, unseen)?;
    warn_uncovered(seen, unseen);
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::Config(format!("holdout fraction {holdout} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut unseen_order: Vec<(usize, usize)> = unseen.iter().map(ConceptPair::key).collect();
    unseen_order.shuffle(&mut rng);
    let val_unseen: HashSet<_> = unseen_order[..unseen_order.len() / 2].iter().copied().collect();
    let unseen_keys: HashSet<_> = unseen.iter().map(ConceptPair::key).collect();

    // Items grouped by seen pair, in first-appearance order of the pair list.
    let mut by_pair: BTreeMap<usize, Vec<&ImageItem>> = BTreeMap::new();
    for item in items {
        if let Some(pos) = seen.iter().position(|p| p.key() == item.label.key()) {
            by_pair.entry(pos).or_default().push(item);
        }
    }

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut to_val = true;
    for group in by_pair.values_mut() {
        group.shuffle(&mut rng);
        let n_hold = (group.len() as f64 * holdout).round() as usize;
        for (k, item) in group.iter().enumerate() {
            if k < n_hold {
                if to_val {
                    val.push((*item).clone());
                } else {
                    test.push((*item).clone());
                }
                to_val = !to_val;
            } else {
                train.push((*item).clone());
            }
        }
    }
    for item in items {
        let key = item.label.key();
        if unseen_keys.contains(&key) {
            if val_unseen.contains(&key) {
                val.push(item.clone());
            } else {
                test.push(item.clone());
            }
        }
    }
    // Restore file order inside each partition.
    let order: std::collections::HashMap<&str, usize> =
        items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|it: &ImageItem| order[it.id.as_str()]);
    }
    Ok(DatasetSplit {
        setting: Setting::Generalized,
        train,
        val: Some(val),
        test,
        seen_pairs: seen.to_vec(),
        unseen_pairs: unseen.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::numerics::Tensor;

    fn items() -> (Vec<ImageItem>, Vec<ConceptPair>, Vec<ConceptPair>) {
        let seen = vec![
            ConceptPair::new(0, 0, Domain::Seen),
            ConceptPair::new(1, 1, Domain::Seen),
            ConceptPair::new(0, 1, Domain::Seen),
        ];
        let unseen = vec![
            ConceptPair::new(1, 0, Domain::Unseen),
            ConceptPair::new(2, 0, Domain::Unseen),
        ];
        let mut items = Vec::new();
        for (pi, p) in seen.iter().chain(&unseen).enumerate() {
            for k in 0..10 {
                items.push(ImageItem {
                    id: format!("i{pi}_{k}"),
                    blocks: Tensor::zeros(&[2, 3]),
                    label: *p,
                });
            }
        }
        (items, seen, unseen)
    }

    #[test]
    fn conventional_split() {
        let (items, seen, unseen) = items();
        let s = split_conventional(&items, &seen, &unseen).unwrap();
        assert!(s.train.iter().all(|i| i.label.domain == Domain::Seen));
        assert!(s.test.iter().all(|i| i.label.domain == Domain::Unseen));
        assert_eq!(s.train.len(), 30);
        assert_eq!(s.candidate_pairs(), unseen);
    }

    #[test]
    fn generalized_split() {
        let (items, seen, unseen) = items();
        let s = split_generalized(&items, &seen, &unseen, 0.2, 3).unwrap();
        assert!(s.train.iter().all(|i| i.label.domain == Domain::Seen));
        assert_eq!(s.candidate_pairs().len(), seen.len() + unseen.len());
        let val = s.val.as_ref().unwrap();
        assert_eq!(s.train.len() + val.len() + s.test.len(), items.len());
        for part in [val, &s.test] {
            assert!(part.iter().any(|i| i.label.domain == Domain::Seen));
            assert!(part.iter().any(|i| i.label.domain == Domain::Unseen));
        }
        let train_ids: HashSet<_> = s.train.iter().map(|i| &i.id).collect();
        assert!(val.iter().chain(&s.test).all(|i| !train_ids.contains(&i.id)));
    }

    #[test]
    fn overlap_is_rejected() {
        let (items, seen, _) = items();
        let bad = vec![ConceptPair::new(0, 0, Domain::Unseen)];
        assert!(split_conventional(&items, &seen, &bad).is_err());
        assert!(split_generalized(&items, &seen, &bad, 0.2, 0).is_err());
    }
}
