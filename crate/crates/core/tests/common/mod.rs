//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use chartloop::chartlang::Token;
use chartloop::grpo::{advantages, ADV_EPS};
use chartloop::policy::{GradBuffer, PolicyParams};
use chartloop::rollout::GroupRollout;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const V: usize = 85;
pub const D: usize = 16;
pub const K: usize = 16;
pub const H: usize = 32;
pub const N_IN: usize = (K + 1) * D;
pub const EMB: usize = 0;
pub const W1: usize = V * D;
pub const B1: usize = W1 + H * N_IN;
pub const W2: usize = B1 + H;
pub const B2: usize = W2 + V * H;
pub const N_PARAMS: usize = B2 + V;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Naive re-implementation of the policy's forward pass, straight from the
/// documented parameter layout. Returns log π(out_t | ctx, out_<t) per token.
pub fn oracle_logprobs(p: &[f64], ctx: &[Token], out: &[Token]) -> Vec<f64> {
    assert_eq!(p.len(), N_PARAMS);
    let emb = |t: Token, i: usize| p[EMB + t.0 as usize * D + i];
    let mut pool = [0.0; D];
    for &t in ctx {
        for (i, v) in pool.iter_mut().enumerate() {
            *v += emb(t, i);
        }
    }
    for v in pool.iter_mut() {
        *v /= ctx.len() as f64;
    }
    let seq: Vec<Token> = ctx.iter().chain(out).copied().collect();
    let mut result = Vec::new();
    for (t, target) in out.iter().enumerate() {
        let end = ctx.len() + t;
        let mut x = vec![0.0; N_IN];
        for slot in 0..K {
            // slot K-1 holds the newest token
            let back = K - slot;
            if back <= end {
                let tok = seq[end - back];
                for i in 0..D {
                    x[slot * D + i] = emb(tok, i);
                }
            }
        }
        x[K * D..].copy_from_slice(&pool);
        let mut h = [0.0; H];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut z = p[B1 + j];
            for (i, xi) in x.iter().enumerate() {
                z += p[W1 + j * N_IN + i] * xi;
            }
            *hj = z.tanh();
        }
        let mut logits = vec![0.0; V];
        for (v, l) in logits.iter_mut().enumerate() {
            *l = p[B2 + v];
            for (j, hj) in h.iter().enumerate() {
                *l += p[W2 + v * H + j] * hj;
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        result.push(logits[target.0 as usize] - lse);
    }
    result
}

pub fn oracle_total(p: &[f64], ctx: &[Token], out: &[Token]) -> f64 {
    oracle_logprobs(p, ctx, out).iter().sum()
}

/// Central difference of `f` along parameter `i`.
pub fn central_diff(p: &[f64], i: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut q = p.to_vec();
    q[i] = p[i] + h;
    let up = f(&q);
    q[i] = p[i] - h;
    let down = f(&q);
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor: central differences at h = 1e-5
/// carry roughly 1e-9 of round-off, so components below the floor are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn random_tokens(r: &mut ChaCha8Rng, n: usize) -> Vec<Token> {
    (0..n).map(|_| Token(r.gen_range(0..V as u16))).collect()
}

/// Parameters with a wider spread than the default init so that gradients
/// are not all tiny.
pub fn random_params(r: &mut ChaCha8Rng) -> PolicyParams {
    let mut p = PolicyParams::init(r.gen());
    for x in p.as_mut_slice() {
        *x = r.gen_range(-0.5..0.5);
    }
    p
}

/// Indices to probe: a few per parameter block, biased toward embedding rows
/// of tokens that actually occur.
pub fn probe_indices(r: &mut ChaCha8Rng, seen: &[Token], per_block: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for _ in 0..per_block {
        let tok = if r.gen_bool(0.8) { seen[r.gen_range(0..seen.len())].0 as usize } else { r.gen_range(0..V) };
        out.push(EMB + tok * D + r.gen_range(0..D));
        out.push(W1 + r.gen_range(0..H * N_IN));
        out.push(B1 + r.gen_range(0..H));
        out.push(W2 + r.gen_range(0..V * H));
        out.push(B2 + r.gen_range(0..V));
    }
    out
}

/// Brute-force mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-turn accumulation in member order, only for the listed turns.
pub fn composition_oracle(g: &GroupRollout, p: &PolicyParams, turns: &[usize]) -> GradBuffer {
    let adv = advantages(&g.rewards, ADV_EPS);
    let mut buf = GradBuffer::for_params(p);
    for (traj, a) in g.trajectories.iter().zip(&adv) {
        for &t in turns {
            let turn = &traj.turns[t];
            if *a != 0.0 && !turn.response.is_empty() {
                p.accumulate_grad(&turn.context, &turn.response, a / turn.response.len() as f64, &mut buf)
                    .unwrap();
            }
        }
    }
    buf
}

/// Constant-advantage surrogate over the listed turns, through the naive forward pass.
pub fn surrogate(q: &[f64], g: &GroupRollout, adv: &[f64], turns: &[usize]) -> f64 {
    g.trajectories
        .iter()
        .zip(adv)
        .map(|(traj, a)| {
            a * turns
                .iter()
                .map(|&t| {
                    let turn = &traj.turns[t];
                    oracle_total(q, &turn.context, &turn.response) / turn.response.len() as f64
                })
                .sum::<f64>()
        })
        .sum()
}

/// Worst relative error between `buf` and central differences of the surrogate.
pub fn strategy_fd_err(g: &GroupRollout, p: &PolicyParams, buf: &GradBuffer, turns: &[usize], seed: u64) -> f64 {
    let adv = advantages(&g.rewards, ADV_EPS);
    let mut r = rng(seed);
    let seen: Vec<_> = g.trajectories.iter().flat_map(|t| t.turns.iter().flat_map(|x| x.response.clone())).collect();
    probe_indices(&mut r, &seen, 3)
        .into_iter()
        .map(|i| rel_err(buf.data[i], central_diff(p.as_slice(), i, 1e-5, |q| surrogate(q, g, &adv, turns))))
        .fold(0.0, f64::max)
}
