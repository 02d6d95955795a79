use std::fs;
use std::path::Path;
use std::time::Instant;

use super::*;
use crate::data::{read_vocab, Manifest};
use crate::evaluation::{EvalReport, ScoreMatrix, AUC_LEVELS};

fn tiny(dir: &Path) -> RunConfig {
    let text = format!(
        "n_attrs = 3\nn_objs = 3\nblocks = 4\nfeature_dim = 6\nattr_blocks = 0\nobj_blocks = 1\n\
         images_per_pair = 4\nseen_fraction = 0.67\nsignature_norm = 3\n\
         joint_dim = 8\nhidden = 8\nembed_dim = 5\nbatch_size = 8\nn_t = 4\n\
         epochs_inductive = 3\nepochs_transductive = 2\ngamma = 1.5\n\
         features = {d}/data/f.bin\nsplit = {d}/data/split.txt\nvocab = {d}/data/vocab.txt\n\
         out_dir = {d}/run\ncheckpoint = {d}/run/final.ckpt\nreport = {d}/run/report.json\n\
         scores = {d}/run/scores.csv\n",
        d = dir.display()
    );
    RunConfig::resolve(Some(&text), None, &[]).unwrap()
}

fn with(cfg: &RunConfig, key: &str, value: &str) -> RunConfig {
    let mut c = cfg.clone();
    c.set(key, value).unwrap();
    c
}

#[test]
fn gen_writes_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let summary = cmd_gen(&cfg).unwrap();
    assert!(summary.starts_with("36 images"), "{summary}");
    let vocab = read_vocab(&fs::read_to_string(&cfg.vocab).unwrap()).unwrap();
    let manifest = Manifest::load(&cfg.split, Some(vocab)).unwrap();
    assert_eq!((manifest.seen_pairs().len(), manifest.unseen_pairs().len()), (6, 3));
    let (_, split) = load_split(&cfg).unwrap();
    assert_eq!((split.train.len(), split.test.len()), (24, 12));
    assert_eq!(split.train[0].blocks.shape(), &[4, 6]);
}

#[test]
fn gen_is_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (tiny(a.path()), tiny(b.path()));
    cmd_gen(&ca).unwrap();
    cmd_gen(&cb).unwrap();
    for (pa, pb) in [(&ca.features, &cb.features), (&ca.split, &cb.split), (&ca.vocab, &cb.vocab)] {
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
    }
}

#[test]
fn overlapping_blocks_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny(dir.path()), "obj_blocks", "0,1");
    let e = cmd_gen(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(!dir.path().join("data").exists());
}

#[test]
fn train_then_eval_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_gen(&cfg).unwrap();
    let t = Instant::now();
    let out = cmd_train(&cfg).unwrap();
    assert!(t.elapsed().as_secs() < 60);
    assert_eq!(out.history.epochs.len(), 5);
    for f in ["inductive.ckpt", "transductive.ckpt", "metrics.csv"] {
        assert!(cfg.out_dir.join(f).is_file(), "{f}");
    }
    let trained_report = fs::read(&cfg.report).unwrap();
    let report = cmd_eval(&cfg).unwrap();
    assert_eq!(report, out.report);
    assert_eq!(fs::read(&cfg.report).unwrap(), trained_report);
}

#[test]
fn inductive_phase_skips_transductive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny(dir.path()), "phase", "inductive");
    cmd_gen(&cfg).unwrap();
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.history.epochs.len(), 3);
    assert!(!cfg.out_dir.join("transductive.ckpt").exists());
    let csv = fs::read_to_string(cfg.out_dir.join("metrics.csv")).unwrap();
    assert!(!csv.contains("transductive"));
}

#[test]
fn training_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny(dir.path()), "threads", "1");
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let first: Vec<Vec<u8>> = ["final.ckpt", "metrics.csv", "report.json"]
        .iter()
        .map(|f| fs::read(cfg.out_dir.join(f)).unwrap())
        .collect();
    cmd_train(&cfg).unwrap();
    for (f, bytes) in ["final.ckpt", "metrics.csv", "report.json"].iter().zip(first) {
        assert_eq!(fs::read(cfg.out_dir.join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn generalized_eval_reports_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&with(&tiny(dir.path()), "setting", "generalized"), "holdout", "0.5");
    cmd_gen(&cfg).unwrap();
    cmd_train(&with(&cfg, "phase", "inductive")).unwrap();
    let report = cmd_eval(&cfg).unwrap();
    let g = report.generalized.as_ref().unwrap();
    assert!(report.conventional.is_none());
    for k in AUC_LEVELS {
        let a = g.test.auc(k).unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
    assert_eq!(EvalReport::load(&cfg.report).unwrap(), report);
}

#[test]
fn score_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny(dir.path()), "phase", "inductive");
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let m = cmd_score_export(&cfg).unwrap();
    assert_eq!((m.n_items(), m.n_candidates()), (12, 3));
    let vocab = read_vocab(&fs::read_to_string(&cfg.vocab).unwrap()).unwrap();
    assert_eq!(ScoreMatrix::load_csv(&cfg.scores, &vocab).unwrap(), m);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let e = cmd_train(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    cmd_gen(&cfg).unwrap();
    let e = cmd_eval(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("checkpoint"), "{e}");
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny(dir.path()), "phase", "inductive");
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let other = with(&with(&cfg, "n_attrs", "4"), "features", &format!("{}/f4.bin", dir.path().display()));
    let other = with(&other, "split", &format!("{}/s4.txt", dir.path().display()));
    let other = with(&other, "vocab", &format!("{}/v4.txt", dir.path().display()));
    cmd_gen(&other).unwrap();
    let e = cmd_eval(&other).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("attributes"), "{e}");
}

#[test]
fn nonfinite_loss_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&with(&tiny(dir.path()), "lr", "1e300"), "phase", "inductive");
    cmd_gen(&cfg).unwrap();
    let e = cmd_train(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 4, "{e}");
}

#[test]
fn flags_override_file_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "lr = 0.5\nseed = 2\n").unwrap();
    let p = path.to_str().unwrap();
    let inv = parse_args(["epica", "train", "--config", p, "--lr-decay", "0.9"], Some("4")).unwrap();
    assert_eq!(inv.cmd, Cmd::Train);
    assert_eq!((inv.config.train.lr, inv.config.train.lr_decay, inv.config.seed), (0.5, 0.9, 4));
    let inv = parse_args(["epica", "eval", "-c", p, "--seed", "8", "--setting", "generalized"], None).unwrap();
    assert_eq!((inv.cmd, inv.config.seed), (Cmd::Eval, 8));
    assert_eq!(inv.config.setting, crate::data::Setting::Generalized);
    let inv = parse_args(["epica", "score-export", "--threads", "1"], None).unwrap();
    assert_eq!((inv.cmd, inv.config.threads), (Cmd::ScoreExport, 1));
}

#[test]
fn bad_arguments_exit_with_config_code() {
    for args in [
        vec!["epica", "train", "--no-such-flag", "1"],
        vec!["epica", "fly"],
        vec!["epica", "train", "--lr", "x"],
        vec!["epica", "train", "--config", "/definitely/missing.cfg"],
    ] {
        let e = parse_args(args.clone(), None).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{args:?}");
    }
}
