//! Dual-path transformer over the bottleneck: alternating self-attention
//! along time and along frequency, with rotary position embeddings on
//! queries and keys.
//!
//! The bottleneck `(C, F, T)` is projected to width `d` and held as a
//! `(F, T, d)` sequence tensor; time attention batches over bins, frequency
//! attention over frames. Every sublayer is pre-norm with a residual add.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::network::Harness;
use crate::ops::gemm;
use crate::params::{Bound, Declarations, Init, ParamId};
use crate::tensor::Tensor;

pub const ROPE_BASE: f64 = 10000.0;

/// Rotates coordinate pairs `(2i, 2i+1)` of `v` by `pos · base^(-2i/len)`.
pub fn rope_rotate(v: &[f64], pos: f64) -> Result<Vec<f64>> {
    if v.len() % 2 != 0 {
        return Err(Error::Shape(format!("rotary embedding needs an even head dimension, got {}", v.len())));
    }
    let hd = v.len();
    let mut out = vec![0.0; hd];
    for i in 0..hd / 2 {
        let (s, c) = (pos * theta(i, hd)).sin_cos();
        out[2 * i] = v[2 * i] * c - v[2 * i + 1] * s;
        out[2 * i + 1] = v[2 * i] * s + v[2 * i + 1] * c;
    }
    Ok(out)
}

fn theta(i: usize, hd: usize) -> f64 {
    ROPE_BASE.powf(-2.0 * i as f64 / hd as f64)
}

/// Cos/sin tables for positions `0..len`, laid out `[pos][pair]`.
struct RopeTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
    half: usize,
}

impl RopeTable {
    fn new(len: usize, hd: usize) -> Self {
        let half = hd / 2;
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for p in 0..len {
            for i in 0..half {
                let (s, c) = (p as f64 * theta(i, hd)).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        RopeTable { cos, sin, half }
    }

    /// In-place rotation of an `L × hd` block; `inverse` applies the transpose.
    fn apply(&self, m: &mut [f64], inverse: bool) {
        let hd = 2 * self.half;
        let sign = if inverse { -1.0 } else { 1.0 };
        for (p, row) in m.chunks_mut(hd).enumerate() {
            for i in 0..self.half {
                let c = self.cos[p * self.half + i];
                let s = sign * self.sin[p * self.half + i];
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                row[2 * i] = a * c - b * s;
                row[2 * i + 1] = a * s + b * c;
            }
        }
    }
}

struct HeadBlocks {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
}

fn gather(src: &[f64], len: usize, d: usize, col: usize, hd: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * hd);
    for l in 0..len {
        out.extend_from_slice(&src[l * d + col..l * d + col + hd]);
    }
    out
}

fn scatter(dst: &mut [f64], m: &[f64], d: usize, col: usize, hd: usize) {
    for (l, row) in m.chunks(hd).enumerate() {
        dst[l * d + col..l * d + col + hd].copy_from_slice(row);
    }
}

/// Rotated queries/keys and softmax probabilities of one (batch, head) pair.
fn head_forward(q: &[f64], k: &[f64], v: &[f64], len: usize, d: usize, col: usize, hd: usize, rope: &RopeTable) -> HeadBlocks {
    let mut qh = gather(q, len, d, col, hd);
    let mut kh = gather(k, len, d, col, hd);
    rope.apply(&mut qh, false);
    rope.apply(&mut kh, false);
    let mut p = vec![0.0; len * len];
    gemm(len, hd, len, &qh, false, &kh, true, &mut p, 0.0);
    let scale = 1.0 / (hd as f64).sqrt();
    for row in p.chunks_mut(len) {
        let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x * scale));
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x * scale - mx).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    HeadBlocks { q: qh, k: kh, v: gather(v, len, d, col, hd), p }
}

/// Multi-head softmax attention with rotary embeddings on `(B, L, d)` inputs
/// already projected to queries, keys and values.
pub fn rope_attention<'g>(q: Var<'g>, k: Var<'g>, v: Var<'g>, heads: usize) -> Var<'g> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let shape = qv.shape().to_vec();
    let (bsz, len, d) = (shape[0], shape[1], shape[2]);
    let hd = d / heads;
    let rope = std::sync::Arc::new(RopeTable::new(len, hd));
    let mut out = Tensor::zeros(&shape);
    let plane = len * d;
    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(b, ob)| {
        let r = b * plane..(b + 1) * plane;
        for h in 0..heads {
            let hb = head_forward(&qv.data()[r.clone()], &kv.data()[r.clone()], &vv.data()[r.clone()], len, d, h * hd, hd, &rope);
            let mut o = vec![0.0; len * hd];
            gemm(len, len, hd, &hb.p, false, &hb.v, false, &mut o, 0.0);
            scatter(ob, &o, d, h * hd, hd);
        }
    });
    q.graph().custom(out, &[q, k, v], move || {
        Box::new(move |g: &Tensor| {
            let scale = 1.0 / (hd as f64).sqrt();
            let per_batch: Vec<[Vec<f64>; 3]> = (0..bsz)
                .into_par_iter()
                .map(|b| {
                    let r = b * plane..(b + 1) * plane;
                    let gb = &g.data()[r.clone()];
                    let mut dq = vec![0.0; plane];
                    let mut dk = vec![0.0; plane];
                    let mut dv = vec![0.0; plane];
                    for h in 0..heads {
                        let col = h * hd;
                        let hb = head_forward(&qv.data()[r.clone()], &kv.data()[r.clone()], &vv.data()[r.clone()], len, d, col, hd, &rope);
                        let go = gather(gb, len, d, col, hd);
                        let mut gv = vec![0.0; len * hd];
                        gemm(len, len, hd, &hb.p, true, &go, false, &mut gv, 0.0);
                        let mut gp = vec![0.0; len * len];
                        gemm(len, hd, len, &go, false, &hb.v, true, &mut gp, 0.0);
                        for (prow, grow) in hb.p.chunks(len).zip(gp.chunks_mut(len)) {
                            let dot: f64 = prow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                            for (gs, &pv) in grow.iter_mut().zip(prow) {
                                *gs = pv * (*gs - dot) * scale;
                            }
                        }
                        let mut gq = vec![0.0; len * hd];
                        gemm(len, len, hd, &gp, false, &hb.k, false, &mut gq, 0.0);
                        let mut gk = vec![0.0; len * hd];
                        gemm(len, len, hd, &gp, true, &hb.q, false, &mut gk, 0.0);
                        rope.apply(&mut gq, true);
                        rope.apply(&mut gk, true);
                        scatter(&mut dq, &gq, d, col, hd);
                        scatter(&mut dk, &gk, d, col, hd);
                        scatter(&mut dv, &gv, d, col, hd);
                    }
                    [dq, dk, dv]
                })
                .collect();
            let mut grads = [Tensor::zeros(&shape), Tensor::zeros(&shape), Tensor::zeros(&shape)];
            for (b, parts) in per_batch.into_iter().enumerate() {
                for (gt, part) in grads.iter_mut().zip(parts) {
                    gt.data_mut()[b * plane..(b + 1) * plane].copy_from_slice(&part);
                }
            }
            grads.into_iter().map(Some).collect()
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    fn declare(decl: &mut Declarations, prefix: &str, d: usize) -> Self {
        LayerNormParams {
            gamma: decl.declare(format!("{prefix}.gamma"), &[d], Init::Ones),
            beta: decl.declare(format!("{prefix}.beta"), &[d], Init::Zeros),
        }
    }

    fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        if harness.disable_norms {
            x
        } else {
            x.layer_norm(p.var(self.gamma), p.var(self.beta))
        }
    }
}

/// Pre-norm self-attention sublayer (bias-free projections).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayer {
    pub norm: LayerNormParams,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl AttentionLayer {
    fn declare(decl: &mut Declarations, prefix: &str, d: usize, heads: usize) -> Self {
        let mut w = |n: &str| decl.declare(format!("{prefix}.{n}"), &[d, d], Init::Uniform { fan_in: d });
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        AttentionLayer { norm: LayerNormParams::declare(decl, &format!("{prefix}.norm"), d), wq, wk, wv, wo, heads }
    }

    /// `x`: `(B, L, d)`, attending along `L`.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        let h = self.norm.forward(p, x, harness);
        let q = h.linear(p.var(self.wq), None);
        let k = h.linear(p.var(self.wk), None);
        let v = h.linear(p.var(self.wv), None);
        let o = rope_attention(q, k, v, self.heads);
        x.add(o.linear(p.var(self.wo), None))
    }
}

/// Pre-norm feed-forward sublayer `d → f·d → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub norm: LayerNormParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    fn declare(decl: &mut Declarations, prefix: &str, d: usize, factor: usize) -> Self {
        let hidden = factor * d;
        FeedForward {
            norm: LayerNormParams::declare(decl, &format!("{prefix}.norm"), d),
            w1: decl.declare(format!("{prefix}.w1"), &[hidden, d], Init::Uniform { fan_in: d }),
            b1: decl.declare(format!("{prefix}.b1"), &[hidden], Init::Zeros),
            w2: decl.declare(format!("{prefix}.w2"), &[d, hidden], Init::Uniform { fan_in: hidden }),
            b2: decl.declare(format!("{prefix}.b2"), &[d], Init::Zeros),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        let h = self.norm.forward(p, x, harness).linear(p.var(self.w1), Some(p.var(self.b1)));
        let h = harness.activate(h);
        x.add(h.linear(p.var(self.w2), Some(p.var(self.b2))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RopeBlock {
    pub time_attn: AttentionLayer,
    pub time_ffn: FeedForward,
    pub freq_attn: AttentionLayer,
    pub freq_ffn: FeedForward,
}

impl RopeBlock {
    /// `x`: `(F, T, d)`.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        let x = self.time_attn.forward(p, x, harness);
        let x = self.time_ffn.forward(p, x, harness);
        let x = x.permute3([1, 0, 2]);
        let x = self.freq_attn.forward(p, x, harness);
        let x = self.freq_ffn.forward(p, x, harness);
        x.permute3([1, 0, 2])
    }
}

/// Projection to width `d`, a stack of [`RopeBlock`]s, projection back.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqModel {
    pub proj_in: (ParamId, ParamId),
    pub blocks: Vec<RopeBlock>,
    pub proj_out: (ParamId, ParamId),
    pub channels: usize,
    pub width: usize,
    pub heads: usize,
}

impl SeqModel {
    pub fn declare(
        decl: &mut Declarations,
        prefix: &str,
        channels: usize,
        width: usize,
        heads: usize,
        n_rope: usize,
        ffn_factor: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Invariant(format!("seq_dim mod heads != 0 (seq_dim={width}, heads={heads})")));
        }
        if (width / heads) % 2 != 0 {
            return Err(Error::Invariant(format!("head_dim must be even (head_dim={})", width / heads)));
        }
        let proj_in = (
            decl.declare(format!("{prefix}.proj_in.w"), &[width, channels], Init::Uniform { fan_in: channels }),
            decl.declare(format!("{prefix}.proj_in.b"), &[width], Init::Zeros),
        );
        let blocks = (0..n_rope)
            .map(|i| {
                let bp = format!("{prefix}.block{i}");
                RopeBlock {
                    time_attn: AttentionLayer::declare(decl, &format!("{bp}.time_attn"), width, heads),
                    time_ffn: FeedForward::declare(decl, &format!("{bp}.time_ffn"), width, ffn_factor),
                    freq_attn: AttentionLayer::declare(decl, &format!("{bp}.freq_attn"), width, heads),
                    freq_ffn: FeedForward::declare(decl, &format!("{bp}.freq_ffn"), width, ffn_factor),
                }
            })
            .collect();
        let proj_out = (
            decl.declare(format!("{prefix}.proj_out.w"), &[channels, width], Init::Uniform { fan_in: width }),
            decl.declare(format!("{prefix}.proj_out.b"), &[channels], Init::Zeros),
        );
        Ok(SeqModel { proj_in, blocks, proj_out, channels, width, heads })
    }

    /// `x`: `(C, F, T)` → same shape.
    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, harness: &Harness) -> Var<'g> {
        let mut h = x.permute3([1, 2, 0]).linear(p.var(self.proj_in.0), Some(p.var(self.proj_in.1)));
        for block in &self.blocks {
            h = block.forward(p, h, harness);
        }
        h.linear(p.var(self.proj_out.0), Some(p.var(self.proj_out.1))).permute3([2, 0, 1])
    }
}

/// Attention sublayer applied to a `(d, F, T)` tensor along `axis`.
pub fn axis_attention<'g>(layer: &AttentionLayer, p: &Bound<'g>, x: Var<'g>, axis: Axis, harness: &Harness) -> Result<Var<'g>> {
    let shape = x.shape();
    let d = p.var(layer.wq).shape()[1];
    if shape.len() != 3 || shape[0] != d {
        return Err(Error::Shape(format!("axis attention expects ({d}, F, T), got {shape:?}")));
    }
    Ok(match axis {
        Axis::Time => layer.forward(p, x.permute3([1, 2, 0]), harness).permute3([2, 0, 1]),
        Axis::Frequency => layer.forward(p, x.permute3([2, 1, 0]), harness).permute3([2, 1, 0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::ParamStore;

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 12.9898).sin() * 0.8).collect()
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let v = pseudo(8, 1.0);
        assert_eq!(rope_rotate(&v, 0.0).unwrap(), v);
        assert!(rope_rotate(&v[..7], 1.0).is_err());
    }

    #[test]
    fn table_matches_scalar_rotation() {
        let table = RopeTable::new(5, 6);
        let mut m = pseudo(30, 2.0);
        let orig = m.clone();
        table.apply(&mut m, false);
        for p in 0..5 {
            let want = rope_rotate(&orig[p * 6..(p + 1) * 6], p as f64).unwrap();
            for (a, b) in m[p * 6..(p + 1) * 6].iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        table.apply(&mut m, true);
        for (a, b) in m.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Tensor {
        let (bsz, len, d) = (q.dim(0), q.dim(1), q.dim(2));
        let hd = d / heads;
        let mut out = Tensor::zeros(q.shape());
        for b in 0..bsz {
            for h in 0..heads {
                let rot = |t: &Tensor, l: usize| rope_rotate(&t.data()[(b * len + l) * d + h * hd..][..hd], l as f64).unwrap();
                for i in 0..len {
                    let qi = rot(q, i);
                    let logits: Vec<f64> = (0..len)
                        .map(|j| qi.iter().zip(rot(k, j)).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                        .collect();
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for c in 0..hd {
                        let acc: f64 = (0..len).map(|j| e[j] / z * v.data()[(b * len + j) * d + h * hd + c]).sum();
                        out.data_mut()[(b * len + i) * d + h * hd + c] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn fused_attention_matches_naive() {
        let shape = [3, 5, 8];
        let q = Tensor::from_vec(&shape, pseudo(120, 1.0));
        let k = Tensor::from_vec(&shape, pseudo(120, 2.0));
        let v = Tensor::from_vec(&shape, pseudo(120, 3.0));
        let g = Graph::inference();
        let o = rope_attention(g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()), 2);
        assert!(o.value().max_abs_diff(&naive_attention(&q, &k, &v, 2)) < 1e-12);
    }

    #[test]
    fn single_key_attention_returns_values() {
        let shape = [4, 1, 6];
        let v = Tensor::from_vec(&shape, pseudo(24, 9.0));
        let g = Graph::inference();
        let o = rope_attention(g.leaf(Tensor::from_vec(&shape, pseudo(24, 1.0))), g.leaf(Tensor::from_vec(&shape, pseudo(24, 4.0))), g.leaf(v.clone()), 3);
        assert!(o.value().max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn empty_stack_is_two_projections() {
        let mut decl = Declarations::default();
        let sm = SeqModel::declare(&mut decl, "seq", 6, 4, 2, 0, 2).unwrap();
        assert_eq!(decl.specs().len(), 4);
        let store = ParamStore::initialize(decl.specs(), 3);
        let x = Tensor::from_vec(&[6, 3, 2], pseudo(36, 5.0));
        let g = Graph::inference();
        let p = store.bind(&g);
        let y = sm.forward(&p, g.leaf(x.clone()), &Harness::default()).value();
        let (w1, b1, w2, b2) = (store.get(sm.proj_in.0), store.get(sm.proj_in.1), store.get(sm.proj_out.0), store.get(sm.proj_out.1));
        for f in 0..3 {
            for t in 0..2 {
                let h: Vec<f64> = (0..4).map(|o| b1.data()[o] + (0..6).map(|c| w1.data()[o * 6 + c] * x.at3(c, f, t)).sum::<f64>()).collect();
                for c in 0..6 {
                    let want = b2.data()[c] + (0..4).map(|o| w2.data()[c * 4 + o] * h[o]).sum::<f64>();
                    assert!((y.at3(c, f, t) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn width_must_divide_into_even_heads() {
        let mut decl = Declarations::default();
        assert!(SeqModel::declare(&mut decl, "s", 4, 6, 4, 1, 2).is_err());
        assert!(SeqModel::declare(&mut decl, "s", 4, 6, 2, 1, 2).is_err());
    }
}
