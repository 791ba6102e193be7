//! Small pre-norm transformer over the closed vocabulary.
//!
//! Two evaluation paths share one flat parameter vector: a taped full-sequence
//! forward used for training, and an incremental key/value-cached decoder used
//! for sampling and scoring.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{gelu, gemm, log_softmax_in_place, KeyMask, Mat, Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    /// Diagnostic ablation: positions after a think block cannot attend to its content.
    #[serde(default)]
    pub ignore_think: bool,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    norm1: usize,
    wqkv: usize,
    wo: usize,
    norm2: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    norm_f: usize,
    wout: usize,
    bout: usize,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(c.vocab_size * d);
        let pos = take(c.context_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                norm1: take(d),
                wqkv: take(d * 3 * d),
                wo: take(d * d),
                norm2: take(d),
                w1: take(d * c.d_ff),
                b1: take(c.d_ff),
                w2: take(c.d_ff * d),
                b2: take(d),
            })
            .collect();
        let norm_f = take(d);
        let wout = take(d * c.vocab_size);
        let bout = take(c.vocab_size);
        Self {
            tok,
            pos,
            layers,
            norm_f,
            wout,
            bout,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub theta: Vec<f64>,
    layout: Layout,
}

/// Hidden spans for the think-ablation mask: positions strictly between
/// each `think_open` and the following `think_close` token.
pub fn think_spans(
    ids: &[usize],
    think_open: usize,
    think_close: usize,
) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &id) in ids.iter().enumerate() {
        if id == think_open {
            start = Some(i + 1);
        } else if id == think_close {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
        }
    }
    spans
}

impl PolicyModel {
    /// Random initialization: scaled normal weights, unit norm gains, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        assert!(
            config.d_model.is_multiple_of(config.n_heads),
            "heads must divide width"
        );
        let layout = Layout::new(&config);
        let mut theta = vec![0.0; layout.total];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model as f64;
        let mut fill = |theta: &mut [f64], std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            theta.iter_mut().for_each(|x| *x = n.sample(&mut rng));
        };
        let (v, dm, ff) = (config.vocab_size, config.d_model, config.d_ff);
        fill(&mut theta[layout.tok..layout.tok + v * dm], 0.3);
        fill(
            &mut theta[layout.pos..layout.pos + config.context_len * dm],
            0.1,
        );
        let resid = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        for l in &layout.layers {
            theta[l.norm1..l.norm1 + dm].fill(1.0);
            theta[l.norm2..l.norm2 + dm].fill(1.0);
            fill(&mut theta[l.wqkv..l.wqkv + 3 * dm * dm], 1.0 / d.sqrt());
            fill(&mut theta[l.wo..l.wo + dm * dm], resid / d.sqrt());
            fill(&mut theta[l.w1..l.w1 + dm * ff], 1.0 / d.sqrt());
            fill(&mut theta[l.w2..l.w2 + ff * dm], resid / (ff as f64).sqrt());
        }
        theta[layout.norm_f..layout.norm_f + dm].fill(1.0);
        fill(
            &mut theta[layout.wout..layout.wout + dm * v],
            1.0 / d.sqrt(),
        );
        Self {
            config,
            theta,
            layout,
        }
    }

    /// Wraps an existing parameter vector; `None` if its length does not match.
    pub fn from_parts(config: ModelConfig, theta: Vec<f64>) -> Option<Self> {
        let layout = Layout::new(&config);
        (theta.len() == layout.total).then_some(Self {
            config,
            theta,
            layout,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn mask_for(&self, ids: &[usize], think: Option<(usize, usize)>) -> KeyMask {
        match think {
            Some((open, close)) if self.config.ignore_think => KeyMask {
                hidden_spans: think_spans(ids, open, close),
            },
            _ => KeyMask::default(),
        }
    }

    /// Taped forward pass. Returns a `rows.len() x vocab` log-probability node
    /// holding next-token distributions at positions `rows`.
    ///
    /// `think` carries the `(open, close)` tag ids used by the ablation mask.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        rows: &[usize],
        think: Option<(usize, usize)>,
    ) -> Var {
        let c = &self.config;
        let (d, t) = (c.d_model, ids.len());
        assert!(t <= c.context_len, "sequence longer than context");
        let th = &self.theta;
        let tok = tape.param(th, self.layout.tok, c.vocab_size, d);
        let pos = tape.param(th, self.layout.pos, c.context_len, d);
        let e = tape.gather(tok, ids);
        let positions: Vec<usize> = (0..t).collect();
        let p = tape.gather(pos, &positions);
        let mut h = tape.add(e, p);
        let mask = self.mask_for(ids, think);
        let hd = c.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        for l in &self.layout.layers {
            let g1 = tape.param(th, l.norm1, 1, d);
            let a = tape.rms_norm(h, g1);
            let wqkv = tape.param(th, l.wqkv, d, 3 * d);
            let qkv = tape.matmul(a, wqkv);
            let mut heads = Vec::with_capacity(c.n_heads);
            for hi in 0..c.n_heads {
                let q = tape.slice_cols(qkv, hi * hd, hd);
                let k = tape.slice_cols(qkv, d + hi * hd, hd);
                let v = tape.slice_cols(qkv, 2 * d + hi * hd, hd);
                let s = tape.matmul_t(q, k);
                let s = tape.scale(s, scale);
                let pr = tape.causal_softmax(s, &mask);
                heads.push(tape.matmul(pr, v));
            }
            let o = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)
            };
            let wo = tape.param(th, l.wo, d, d);
            let o = tape.matmul(o, wo);
            h = tape.add(h, o);
            let g2 = tape.param(th, l.norm2, 1, d);
            let f = tape.rms_norm(h, g2);
            let w1 = tape.param(th, l.w1, d, c.d_ff);
            let b1 = tape.param(th, l.b1, 1, c.d_ff);
            let f = tape.matmul(f, w1);
            let f = tape.add_row(f, b1);
            let f = tape.gelu(f);
            let w2 = tape.param(th, l.w2, c.d_ff, d);
            let b2 = tape.param(th, l.b2, 1, d);
            let f = tape.matmul(f, w2);
            let f = tape.add_row(f, b2);
            h = tape.add(h, f);
        }
        let sel = tape.select_rows(h, rows);
        let gf = tape.param(th, self.layout.norm_f, 1, d);
        let hf = tape.rms_norm(sel, gf);
        let wout = tape.param(th, self.layout.wout, d, c.vocab_size);
        let bout = tape.param(th, self.layout.bout, 1, c.vocab_size);
        let logits = tape.matmul(hf, wout);
        let logits = tape.add_row(logits, bout);
        tape.log_softmax(logits)
    }

    /// Next-token log-probabilities at `rows`, without recording gradients' use.
    pub fn logprob_rows(
        &self,
        ids: &[usize],
        rows: &[usize],
        think: Option<(usize, usize)>,
    ) -> Mat {
        let mut tape = Tape::new();
        let lp = self.forward(&mut tape, ids, rows, think);
        tape.value(lp).clone()
    }

    pub fn decoder(&self, think: Option<(usize, usize)>) -> Decoder<'_> {
        let c = &self.config;
        Decoder {
            model: self,
            think: if c.ignore_think { think } else { None },
            keys: vec![Vec::new(); c.n_layers],
            values: vec![Vec::new(); c.n_layers],
            ids: Vec::new(),
            open_since: None,
            hidden: Vec::new(),
        }
    }
}

/// Incremental decoder: feeds one token at a time, caching keys and values.
#[derive(Debug, Clone)]
pub struct Decoder<'m> {
    model: &'m PolicyModel,
    think: Option<(usize, usize)>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    ids: Vec<usize>,
    open_since: Option<usize>,
    hidden: Vec<std::ops::Range<usize>>,
}

fn rms_norm_vec(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    x.iter().zip(gain).map(|(a, g)| a * inv * g).collect()
}

/// `x (1 x k) * W (k x n)` for a row-major block of theta.
fn vec_mat(x: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    gemm(
        1,
        x.len(),
        n,
        (x, x.len() as isize, 1),
        (w, n as isize, 1),
        0.0,
        &mut out,
        n as isize,
    );
    out
}

impl Decoder<'_> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Feeds `id`; returns the next-token log-probabilities.
    pub fn push(&mut self, id: usize) -> Vec<f64> {
        let m = self.model;
        let c = &m.config;
        let (d, pos) = (c.d_model, self.ids.len());
        assert!(pos < c.context_len, "context exhausted");
        if let Some((open, close)) = self.think {
            if id == close {
                if let Some(s) = self.open_since.take() {
                    self.hidden.push(s..pos);
                }
            }
            if id == open {
                self.open_since = Some(pos + 1);
            }
        }
        self.ids.push(id);
        let th = &m.theta;
        let lay = &m.layout;
        let mut h: Vec<f64> = th[lay.tok + id * d..lay.tok + (id + 1) * d]
            .iter()
            .zip(&th[lay.pos + pos * d..lay.pos + (pos + 1) * d])
            .map(|(a, b)| a + b)
            .collect();
        let hd = c.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mask = KeyMask {
            hidden_spans: self.hidden.clone(),
        };
        for (li, l) in lay.layers.iter().enumerate() {
            let a = rms_norm_vec(&h, &th[l.norm1..l.norm1 + d]);
            let qkv = vec_mat(&a, &th[l.wqkv..l.wqkv + 3 * d * d], 3 * d);
            self.keys[li].extend_from_slice(&qkv[d..2 * d]);
            self.values[li].extend_from_slice(&qkv[2 * d..]);
            let n = pos + 1;
            let mut o = vec![0.0; d];
            for hi in 0..c.n_heads {
                let q = &qkv[hi * hd..(hi + 1) * hd];
                let mut scores = vec![f64::NEG_INFINITY; n];
                for (j, s) in scores.iter_mut().enumerate() {
                    if mask.allows(pos, j) {
                        let k = &self.keys[li][j * d + hi * hd..j * d + (hi + 1) * hd];
                        *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = w.iter().sum();
                for (j, wj) in w.iter().enumerate() {
                    if *wj == 0.0 {
                        continue;
                    }
                    let v = &self.values[li][j * d + hi * hd..j * d + (hi + 1) * hd];
                    for (oo, vv) in o[hi * hd..(hi + 1) * hd].iter_mut().zip(v) {
                        *oo += wj / z * vv;
                    }
                }
            }
            let o = vec_mat(&o, &th[l.wo..l.wo + d * d], d);
            h.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let f = rms_norm_vec(&h, &th[l.norm2..l.norm2 + d]);
            let mut f = vec_mat(&f, &th[l.w1..l.w1 + d * c.d_ff], c.d_ff);
            for (x, b) in f.iter_mut().zip(&th[l.b1..l.b1 + c.d_ff]) {
                *x = gelu(*x + b);
            }
            let f = vec_mat(&f, &th[l.w2..l.w2 + c.d_ff * d], d);
            for ((a, b), bias) in h.iter_mut().zip(&f).zip(&th[l.b2..l.b2 + d]) {
                *a += b + bias;
            }
        }
        let hf = rms_norm_vec(&h, &th[lay.norm_f..lay.norm_f + d]);
        let mut logits = vec_mat(
            &hf,
            &th[lay.wout..lay.wout + d * c.vocab_size],
            c.vocab_size,
        );
        for (x, b) in logits
            .iter_mut()
            .zip(&th[lay.bout..lay.bout + c.vocab_size])
        {
            *x += b;
        }
        log_softmax_in_place(&mut logits);
        logits
    }

    /// Feeds a run of tokens; returns the distribution after the last one.
    pub fn extend(&mut self, ids: &[usize]) -> Option<Vec<f64>> {
        let mut last = None;
        for &id in ids {
            last = Some(self.push(id));
        }
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(ignore_think: bool) -> PolicyModel {
        PolicyModel::new(
            ModelConfig {
                vocab_size: 13,
                d_model: 8,
                n_layers: 2,
                n_heads: 2,
                d_ff: 12,
                context_len: 24,
                ignore_think,
            },
            3,
        )
    }

    #[test]
    fn taped_forward_matches_incremental_decoder() {
        for ignore in [false, true] {
            let m = tiny(ignore);
            let ids = [1, 5, 7, 9, 4, 4, 10, 2, 11, 6, 3];
            let rows: Vec<usize> = (0..ids.len()).collect();
            let think = Some((9, 10));
            let lp = m.logprob_rows(&ids, &rows, think);
            let mut dec = m.decoder(think);
            for (r, &id) in ids.iter().enumerate() {
                let step = dec.push(id);
                for (a, b) in step.iter().zip(lp.row(r)) {
                    assert!((a - b).abs() < 1e-9, "row {r}: {a} vs {b}");
                }
                let z: f64 = step.iter().map(|x| x.exp()).sum();
                assert!((z - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ablation_makes_later_positions_blind_to_think_content() {
        let m = tiny(true);
        let a = [1, 5, 9, 4, 7, 10, 11, 6];
        let b = [1, 5, 9, 8, 12, 10, 11, 6];
        let rows = [5, 6, 7];
        let (la, lb) = (
            m.logprob_rows(&a, &rows, Some((9, 10))),
            m.logprob_rows(&b, &rows, Some((9, 10))),
        );
        for (x, y) in la.data.iter().zip(&lb.data) {
            assert!((x - y).abs() < 1e-12);
        }
        let full = tiny(false);
        let (la, lb) = (
            full.logprob_rows(&a, &rows, None),
            full.logprob_rows(&b, &rows, None),
        );
        assert!(la
            .data
            .iter()
            .zip(&lb.data)
            .any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn parts_round_trip() {
        let m = tiny(false);
        let back = PolicyModel::from_parts(m.config.clone(), m.theta.clone()).unwrap();
        assert_eq!(back, m);
        assert!(PolicyModel::from_parts(m.config.clone(), vec![0.0; 3]).is_none());
    }
}
