//! Shared fixtures and an independent scalar re-implementation of the
//! episode loss, generic over the float type so it can run in double-double
//! precision as a finite-difference oracle.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use epica::data::{random_embeddings, ConceptPair, Domain, ImageItem, Vocab};
use epica::evaluation::ScoreMatrix;
use epica::model::{slot, ModelConfig, ModelParams, Variant};
use epica::numerics::{Graph, Tensor};
use epica::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Double-double scalar. Addition and multiplication come from `twofloat`;
/// its division and transcendental functions are only accurate to about
/// 1e-12, so those are rebuilt here on the exact operations.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dd(pub TwoFloat);

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        Dd(self.0 + o.0)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        Dd(self.0 - o.0)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        Dd(self.0 * o.0)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

/// Long division with three f64 quotient digits.
impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.0.hi() / o.0.hi();
        let r = self.0 - o.0 * q1;
        let q2 = r.hi() / o.0.hi();
        let r = r - o.0 * q2;
        let q3 = r.hi() / o.0.hi();
        Dd(TwoFloat::from(q1) + q2 + q3)
    }
}

impl From<Dd> for f64 {
    fn from(x: Dd) -> f64 {
        x.0.hi() + x.0.lo()
    }
}

impl Dd {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }
}

impl Real for Dd {
    fn of(x: f64) -> Self {
        Dd(TwoFloat::from(x))
    }

    /// `2^k * (taylor(r / 2^10))^(2^10)` with `x = k ln 2 + r`.
    fn exp(self) -> Self {
        if self.hi() < -700.0 {
            return Dd::of(0.0);
        }
        let k = (self.hi() / std::f64::consts::LN_2).round();
        let r = Dd(self.0 - twofloat::consts::LN_2 * k) / Dd::of(1024.0);
        let mut term = Dd::of(1.0);
        let mut sum = Dd::of(1.0);
        for n in 1..=12 {
            term = term * r / Dd::of(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum * Dd::of(2f64.powi(k as i32))
    }

    fn ln(self) -> Self {
        let mut y = Dd::of(self.hi().ln());
        for _ in 0..2 {
            y = y + self * Real::exp(-y) - Dd::of(1.0);
        }
        y
    }

    fn sqrt(self) -> Self {
        if self.hi() <= 0.0 {
            return Dd::of(0.0);
        }
        let y = Dd::of(self.hi().sqrt());
        y + (self - y * y) / (y * Dd::of(2.0))
    }

    fn tanh(self) -> Self {
        let e = Real::exp(Dd::of(-2.0) * Dd(self.0.abs()));
        let t = (Dd::of(1.0) - e) / (Dd::of(1.0) + e);
        if self.hi() < 0.0 {
            -t
        } else {
            t
        }
    }
}

type Mat<R> = Vec<Vec<R>>;

fn lift<R: Real>(t: &Tensor) -> Mat<R> {
    let (rows, cols) = t.dims2().unwrap();
    (0..rows)
        .map(|i| (0..cols).map(|j| R::of(t.get(i, j))).collect())
        .collect()
}

fn matmul<R: Real>(a: &Mat<R>, b: &Mat<R>) -> Mat<R> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| {
                    row.iter()
                        .zip(b)
                        .fold(R::of(0.0), |acc, (&x, brow)| acc + x * brow[j])
                })
                .collect()
        })
        .collect()
}

fn transpose<R: Real>(a: &Mat<R>) -> Mat<R> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn relu<R: Real>(x: R) -> R {
    if x > R::of(0.0) {
        x
    } else {
        R::of(0.0)
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    R::of(1.0) / (R::of(1.0) + (-x).exp())
}

fn normalize_rows<R: Real>(a: &Mat<R>) -> Mat<R> {
    a.iter()
        .map(|row| {
            let norm = row.iter().fold(R::of(0.0), |s, &x| s + x * x).sqrt();
            let floor = R::of(1e-12);
            let denom = if norm > floor { norm } else { floor };
            row.iter().map(|&x| x / denom).collect()
        })
        .collect()
}

fn softmax<R: Real>(row: &[R], scale: f64) -> Vec<R> {
    let e: Vec<R> = row.iter().map(|&x| (x * R::of(scale)).exp()).collect();
    let total = e.iter().fold(R::of(0.0), |s, &x| s + x);
    e.into_iter().map(|x| x / total).collect()
}

fn cross_attend<R: Real>(q: &Mat<R>, c: &Mat<R>, lambda: f64) -> Mat<R> {
    let r = matmul(&normalize_rows(q), &transpose(&normalize_rows(c)));
    let positive: Mat<R> = r.iter().map(|row| row.iter().map(|&x| relu(x)).collect()).collect();
    let alpha: Mat<R> = normalize_rows(&positive)
        .iter()
        .map(|row| softmax(row, lambda))
        .collect();
    matmul(&alpha, c)
}

fn pool<R: Real>(x: &Mat<R>, gate: Option<&Mat<R>>) -> Vec<R> {
    let n = x.len();
    let weights = match gate {
        Some(w) => softmax(&matmul(x, w).iter().map(|r| r[0]).collect::<Vec<_>>(), 1.0),
        None => vec![R::of(1.0 / n as f64); n],
    };
    (0..x[0].len())
        .map(|j| (0..n).fold(R::of(0.0), |s, i| s + weights[i] * x[i][j]))
        .collect()
}

fn lstm<R: Real>(x: &[R], state: Option<(&[R], &[R])>, wx: &Mat<R>, wh: &Mat<R>, b: &Mat<R>) -> (Vec<R>, Vec<R>) {
    let h = wh.len();
    let mut pre = matmul(&vec![x.to_vec()], wx).remove(0);
    if let Some((h_prev, _)) = state {
        let rec = matmul(&vec![h_prev.to_vec()], wh).remove(0);
        pre.iter_mut().zip(rec).for_each(|(p, r)| *p = *p + r);
    }
    pre.iter_mut().zip(&b[0]).for_each(|(p, &bb)| *p = *p + bb);
    let mut h_new = Vec::with_capacity(h);
    let mut c_new = Vec::with_capacity(h);
    for k in 0..h {
        let i = sigmoid(pre[k]);
        let f = sigmoid(pre[h + k]);
        let g = pre[2 * h + k].tanh();
        let o = sigmoid(pre[3 * h + k]);
        let c_prev = state.map_or(R::of(0.0), |(_, c)| c[k]);
        let c = f * c_prev + i * g;
        c_new.push(c);
        h_new.push(o * c.tanh());
    }
    (h_new, c_new)
}

fn concept<R: Real>(p: &[Mat<R>], pair: &ConceptPair) -> Mat<R> {
    let xa = &p[slot::ATTR_EMB][pair.attr];
    let xo = &p[slot::OBJ_EMB][pair.obj];
    let (fw, fh, fb) = (&p[slot::FWD_WX], &p[slot::FWD_WH], &p[slot::FWD_B]);
    let (bw, bh, bb) = (&p[slot::BWD_WX], &p[slot::BWD_WH], &p[slot::BWD_B]);
    let f1 = lstm(xa, None, fw, fh, fb);
    let f2 = lstm(xo, Some((&f1.0, &f1.1)), fw, fh, fb);
    let b2 = lstm(xo, None, bw, bh, bb);
    let b1 = lstm(xa, Some((&b2.0, &b2.1)), bw, bh, bb);
    vec![[f1.0, b1.0].concat(), [f2.0, b2.0].concat()]
}

/// Raw relevance scores computed without the tape.
pub fn oracle_scores<R: Real>(tensors: &[Tensor], config: &ModelConfig, blocks: &Tensor, candidates: &[ConceptPair]) -> Vec<R> {
    let p: Vec<Mat<R>> = tensors.iter().map(lift).collect();
    let v = matmul(&lift(blocks), &p[slot::VISUAL_PROJ]);
    candidates
        .iter()
        .map(|pair| {
            let c = concept(&p, pair);
            let (vv, cc) = if config.variant.cross_attention() {
                (cross_attend(&v, &c, config.lambda), cross_attend(&c, &v, config.lambda))
            } else {
                (v.clone(), c)
            };
            let (gi, gc) = if config.variant.gated_pooling() {
                (Some(&p[slot::GATE_IMAGE]), Some(&p[slot::GATE_CONCEPT]))
            } else {
                (None, None)
            };
            let z = [pool(&vv, gi), pool(&cc, gc)].concat();
            let hidden: Vec<R> = matmul(&vec![z], &p[slot::REL_W1])
                .remove(0)
                .into_iter()
                .zip(&p[slot::REL_B1][0])
                .map(|(a, &b)| relu(a + b))
                .collect();
            matmul(&vec![hidden], &p[slot::REL_W2])[0][0] + p[slot::REL_B2][0][0]
        })
        .collect()
}

/// Episode cross-entropy, `log sum exp(s) - s[target]`.
pub fn oracle_loss<R: Real>(
    tensors: &[Tensor],
    config: &ModelConfig,
    blocks: &Tensor,
    candidates: &[ConceptPair],
    target: usize,
) -> R {
    let s = oracle_scores::<R>(tensors, config, blocks, candidates);
    let total = s.iter().fold(R::of(0.0), |acc, &x| acc + x.exp());
    total.ln() - s[target]
}

/// Tape loss and parameter gradients for one episode.
pub fn graph_loss(params: &ModelParams, blocks: &Tensor, candidates: &[ConceptPair], target: usize) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant_ref(blocks);
    let image = epica::encoders::project_image(&mut g, &bound, x)?;
    let mut scores = Vec::new();
    for pair in candidates {
        let c = epica::encoders::encode_concept(&mut g, &bound, params, pair)?;
        scores.push(epica::model::score_pair(&mut g, &bound, &params.config, image, c)?);
    }
    let logits = g.concat_cols(&scores)?;
    let loss = g.cross_entropy(logits, target)?;
    let mut grads = params.zeros_like();
    g.backward(loss)?.accumulate_params(&mut grads);
    Ok((g.value(loss).item(), grads))
}

pub fn tiny_vocab() -> Vocab {
    Vocab::new(
        vec!["red".into(), "old".into(), "wet".into()],
        vec!["car".into(), "dog".into(), "cup".into()],
    )
    .unwrap()
}

/// dk = 8, B = 4, three candidates, trainable embeddings.
pub struct TinyEpisode {
    pub params: ModelParams,
    pub item: ImageItem,
    pub candidates: Vec<ConceptPair>,
    pub target: usize,
}

pub fn tiny_episode(variant: Variant, seed: u64) -> TinyEpisode {
    let vocab = tiny_vocab();
    let emb = random_embeddings(&vocab, 5, seed, false);
    let cfg = ModelConfig {
        joint_dim: 8,
        blocks: 4,
        feature_dim: 6,
        hidden: 6,
        lambda: 9.0,
        variant,
    };
    let params = ModelParams::init(cfg, &emb, vocab.n_attrs(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let blocks = Tensor::new(vec![4, 6], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let candidates = vec![
        ConceptPair::new(0, 1, Domain::Seen),
        ConceptPair::new(1, 2, Domain::Seen),
        ConceptPair::new(2, 0, Domain::Unseen),
    ];
    let target = (seed % 3) as usize;
    TinyEpisode {
        params,
        item: ImageItem {
            id: format!("tiny{seed}"),
            blocks,
            label: candidates[target],
        },
        candidates,
        target,
    }
}

/// Analytic gradients from the tape against central differences of the
/// double-double oracle loss.
pub fn episode_grad_check(ep: &TinyEpisode, h: f64, tol: f64, scheme: epica::numerics::Scheme) -> epica::numerics::GradCheckReport {
    let base = &ep.params;
    epica::numerics::grad_check_with(
        |t: &[Tensor]| {
            let p = ModelParams {
                config: base.config,
                tensors: t.to_vec(),
                frozen_embeddings: base.frozen_embeddings,
            };
            let (_, grads) = graph_loss(&p, &ep.item.blocks, &ep.candidates, ep.target)?;
            let loss: Dd = oracle_loss(t, &base.config, &ep.item.blocks, &ep.candidates, ep.target);
            Ok((loss, grads))
        },
        &base.tensors,
        h,
        tol,
        scheme,
    )
    .unwrap()
}

/// Random scores for `items` items against `seen` + `unseen` candidates.
/// The first item is seen-labeled and the second unseen-labeled.
pub fn random_score_matrix(seed: u64, items: usize, seen: usize, unseen: usize) -> ScoreMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<ConceptPair> = (0..seen + unseen)
        .map(|j| ConceptPair::new(j, j, if j < seen { Domain::Seen } else { Domain::Unseen }))
        .collect();
    let truths: Vec<ConceptPair> = (0..items)
        .map(|i| match i {
            0 => candidates[rng.random_range(0..seen)],
            1 => candidates[seen + rng.random_range(0..unseen)],
            _ => candidates[rng.random_range(0..seen + unseen)],
        })
        .collect();
    let scores = (0..items * (seen + unseen)).map(|_| rng.random_range(-1.0..1.0)).collect();
    ScoreMatrix::new(
        (0..items).map(|i| format!("x{i}")).collect(),
        truths,
        candidates,
        Tensor::new(vec![items, seen + unseen], scores).unwrap(),
    )
    .unwrap()
}

/// Seen/unseen top-k accuracy by sorting each biased score row.
pub fn brute_topk(m: &ScoreMatrix, bias: f64, k: usize) -> (f64, f64) {
    let (mut hits, mut counts) = ([0.0; 2], [0.0; 2]);
    for i in 0..m.n_items() {
        let row: Vec<f64> = m
            .row(i)
            .iter()
            .zip(&m.candidates)
            .map(|(s, c)| if c.domain == Domain::Unseen { s + bias } else { *s })
            .collect();
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let truth = m.candidates.iter().position(|c| c.key() == m.truths[i].key()).unwrap();
        let d = usize::from(m.truths[i].domain == Domain::Unseen);
        counts[d] += 1.0;
        if order[..k].contains(&truth) {
            hits[d] += 1.0;
        }
    }
    (hits[0] / counts[0], hits[1] / counts[1])
}

/// Area under the curve sampled at `n` evenly spaced biases spanning every
/// score difference, with far-out biases standing in for the limits.
pub fn dense_grid_auc(m: &ScoreMatrix, k: usize, n: usize) -> f64 {
    let all = m.scores.data();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo + 1.0;
    let mut pts = vec![brute_topk(m, -1e9, k)];
    for s in 0..n {
        let b = -span + 2.0 * span * s as f64 / (n - 1) as f64;
        pts.push(brute_topk(m, b, k));
    }
    pts.push(brute_topk(m, 1e9, k));
    // Close to both axes, then trapezoids.
    let mut path = vec![(pts[0].0, 0.0)];
    path.extend(&pts);
    path.push((0.0, pts[pts.len() - 1].1));
    path.windows(2).map(|w| (w[0].0 - w[1].0) * (w[0].1 + w[1].1) / 2.0).sum()
}
