use std::fs;
use std::path::Path;

use super::config::{PhaseSel, RunConfig};
use crate::data::{
    generate_synthetic, load_embeddings, load_features, random_embeddings, read_vocab, save_features,
    split_conventional, split_generalized, write_vocab, DatasetSplit, Manifest, Setting,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, ScoreMatrix};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::training::{train_inductive, train_transductive, History};

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} {} not found", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

/// Writes a synthetic dataset: feature file, split manifest and vocab.
/// Returns a one-line summary.
pub fn cmd_gen(cfg: &RunConfig) -> Result<String> {
    cfg.world.validate()?;
    let world = generate_synthetic(&cfg.world)?;
    for p in [&cfg.features, &cfg.split, &cfg.vocab] {
        create_parent(p)?;
    }
    save_features(&cfg.features, &world.items, world.vocab())?;
    fs::write(&cfg.split, world.manifest.to_text())?;
    fs::write(&cfg.vocab, write_vocab(world.vocab()))?;
    Ok(format!(
        "{} images, {} attributes x {} objects, {} seen / {} unseen pairs, {} blocks x {} dims",
        world.items.len(),
        world.vocab().n_attrs(),
        world.vocab().n_objs(),
        world.manifest.seen_pairs().len(),
        world.manifest.unseen_pairs().len(),
        cfg.world.blocks,
        cfg.world.feature_dim
    ))
}

fn check_data_paths(cfg: &RunConfig) -> Result<()> {
    require_file(&cfg.features, "feature file")?;
    require_file(&cfg.split, "split manifest")?;
    require_file(&cfg.vocab, "vocab file")
}

/// Loads the dataset files and splits them for the configured setting.
pub fn load_split(cfg: &RunConfig) -> Result<(Manifest, DatasetSplit)> {
    let vocab = read_vocab(&fs::read_to_string(&cfg.vocab)?)?;
    let manifest = Manifest::load(&cfg.split, Some(vocab))?;
    let items = load_features(&cfg.features, &manifest)?;
    let Some(first) = items.first() else {
        return Err(Error::Data(format!("{} holds no items", cfg.features.display())));
    };
    let shape = (first.n_blocks(), first.feature_dim());
    if let Some(bad) = items.iter().find(|i| (i.n_blocks(), i.feature_dim()) != shape) {
        return Err(Error::Data(format!("item {} has a different block shape", bad.id)));
    }
    let (seen, unseen) = (manifest.seen_pairs(), manifest.unseen_pairs());
    let split = match cfg.setting {
        Setting::Conventional => split_conventional(&items, &seen, &unseen)?,
        Setting::Generalized => split_generalized(&items, &seen, &unseen, cfg.holdout, cfg.seed)?,
    };
    Ok((manifest, split))
}

fn data_shape(split: &DatasetSplit) -> (usize, usize) {
    let item = split.train.first().or(split.test.first()).expect("non-empty split");
    (item.n_blocks(), item.feature_dim())
}

fn model_config(cfg: &RunConfig, split: &DatasetSplit) -> ModelConfig {
    let (blocks, feature_dim) = data_shape(split);
    ModelConfig {
        blocks,
        feature_dim,
        ..cfg.model
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: History,
    /// Evaluation of the model as stored in the final checkpoint.
    pub report: EvalReport,
}

/// Trains from scratch. Writes `inductive.ckpt`, `transductive.ckpt` (when
/// that phase runs) and `metrics.csv` to the output directory, the final
/// checkpoint to `checkpoint` and its evaluation to `report`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data_paths(cfg)?;
    if let Some(p) = &cfg.embeddings {
        require_file(p, "embedding file")?;
    }
    fs::create_dir_all(&cfg.out_dir)?;
    create_parent(&cfg.checkpoint)?;
    create_parent(&cfg.report)?;

    let (manifest, split) = load_split(cfg)?;
    if split.train.is_empty() {
        return Err(Error::Data("no training items".into()));
    }
    let vocab = &manifest.vocab;
    let embeddings = match &cfg.embeddings {
        Some(p) => load_embeddings(p, vocab, cfg.seed, cfg.freeze_embeddings)?,
        None => random_embeddings(vocab, cfg.embed_dim, cfg.seed, cfg.freeze_embeddings),
    };
    let init = ModelParams::init(model_config(cfg, &split), &embeddings, vocab.n_attrs(), cfg.seed)?;

    let (mut params, mut history) = train_inductive(init, &split, &cfg.train)?;
    save_checkpoint(&cfg.out_dir.join("inductive.ckpt"), &params)?;
    if cfg.phase == PhaseSel::All && cfg.train.epochs_transductive > 0 {
        let (p, h) = train_transductive(params, &split, &cfg.train)?;
        save_checkpoint(&cfg.out_dir.join("transductive.ckpt"), &p)?;
        params = p;
        history.extend(h);
    }
    save_checkpoint(&cfg.checkpoint, &params)?;
    history.write_csv(&cfg.out_dir.join("metrics.csv"))?;

    let stored = params.to_storage_precision();
    let report = evaluate(&stored, &split)?;
    report.save(&cfg.report)?;
    Ok(TrainOutcome {
        params: stored,
        history,
        report,
    })
}

fn load_model(cfg: &RunConfig, manifest: &Manifest, split: &DatasetSplit) -> Result<ModelParams> {
    let params = load_checkpoint(&cfg.checkpoint, &cfg.model, cfg.freeze_embeddings)?;
    let (_, feature_dim) = data_shape(split);
    let vocab = &manifest.vocab;
    if params.n_attrs() != vocab.n_attrs() || params.n_objs() != vocab.n_objs() {
        return Err(Error::Data(format!(
            "checkpoint has {} attributes and {} objects, data has {} and {}",
            params.n_attrs(),
            params.n_objs(),
            vocab.n_attrs(),
            vocab.n_objs()
        )));
    }
    if params.config.feature_dim != feature_dim {
        return Err(Error::Data(format!(
            "checkpoint expects {}-dim block features, data has {feature_dim}",
            params.config.feature_dim
        )));
    }
    Ok(params)
}

fn prepare_eval(cfg: &RunConfig) -> Result<(Manifest, DatasetSplit, ModelParams)> {
    require_file(&cfg.checkpoint, "checkpoint")?;
    check_data_paths(cfg)?;
    let (manifest, split) = load_split(cfg)?;
    if split.test.is_empty() {
        return Err(Error::Data("no test items".into()));
    }
    let params = load_model(cfg, &manifest, &split)?;
    Ok((manifest, split, params))
}

/// Evaluates the checkpoint and writes the report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let (_, split, params) = prepare_eval(cfg)?;
    create_parent(&cfg.report)?;
    let report = evaluate(&params, &split)?;
    report.save(&cfg.report)?;
    Ok(report)
}

/// Writes the test-set score matrix of the checkpoint as CSV.
pub fn cmd_score_export(cfg: &RunConfig) -> Result<ScoreMatrix> {
    let (manifest, split, params) = prepare_eval(cfg)?;
    create_parent(&cfg.scores)?;
    let m = ScoreMatrix::from_model(&params, &split.test, &split.candidate_pairs())?;
    m.save_csv(&cfg.scores, &manifest.vocab)?;
    Ok(m)
}
