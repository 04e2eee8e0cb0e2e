//! A small autoregressive token policy with exact log-probabilities and
//! hand-derived gradients.
//!
//! At each position the input is the concatenation of
//! - the embeddings of the last `window` tokens of `context ++ output_prefix`
//!   (left-padded with zero vectors), and
//! - the mean embedding of every context token.
//!
//! One `tanh` hidden layer feeds a softmax over the vocabulary.
//!
//! Parameters live in one flat vector, in this order:
//! 1. embeddings, `vocab × embed`, row per token;
//! 2. hidden weights, `hidden × (window + 1)·embed`, row per hidden unit;
//! 3. hidden bias, `hidden`;
//! 4. output weights, `vocab × hidden`, row per token;
//! 5. output bias, `vocab`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::chartlang::{vocab, Token, Vocabulary};
use crate::error::{Error, Result};
use crate::seed;

pub const EMBED_DIM: usize = 16;
pub const WINDOW: usize = 16;
pub const HIDDEN: usize = 32;
/// Longest context the policy accepts.
pub const MAX_CONTEXT: usize = 512;
/// Default per-turn generation cap.
pub const MAX_TURN_LEN: usize = 128;

const CHECKPOINT_VERSION: u32 = 1;
const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub window: usize,
    pub hidden: usize,
}

impl Dims {
    pub const DEFAULT: Dims = Dims {
        vocab: vocab::VOCAB_SIZE,
        embed: EMBED_DIM,
        window: WINDOW,
        hidden: HIDDEN,
    };

    pub fn input(&self) -> usize {
        (self.window + 1) * self.embed
    }

    pub fn num_params(&self) -> usize {
        self.vocab * self.embed + self.hidden * self.input() + self.hidden + self.vocab * self.hidden + self.vocab
    }

    fn offsets(&self) -> Offsets {
        let w_hidden = self.vocab * self.embed;
        let b_hidden = w_hidden + self.hidden * self.input();
        let w_out = b_hidden + self.hidden;
        let b_out = w_out + self.vocab * self.hidden;
        Offsets {
            w_hidden,
            b_hidden,
            w_out,
            b_out,
        }
    }
}

#[derive(Clone, Copy)]
struct Offsets {
    w_hidden: usize,
    b_hidden: usize,
    w_out: usize,
    b_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u16),
    #[error("empty context")]
    EmptyContext,
}

/// Policy parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dims: Dims,
    seed: u64,
    data: Vec<f64>,
}

/// Per-token log-probabilities of an output and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbs {
    pub per_token: Vec<f64>,
    pub total: f64,
}

/// A sampled output with the log-probability of each emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<Token>,
    pub logprobs: Vec<f64>,
}

/// Accumulated gradient, congruent with [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub data: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros(n: usize) -> Self {
        GradBuffer { data: vec![0.0; n] }
    }

    pub fn for_params(p: &PolicyParams) -> Self {
        Self::zeros(p.data.len())
    }

    pub fn add(&mut self, other: &GradBuffer) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Sums buffers in slice order, so the result does not depend on how
    /// they were produced.
    pub fn sum_ordered(n: usize, parts: &[GradBuffer]) -> GradBuffer {
        let mut out = GradBuffer::zeros(n);
        for p in parts {
            out.add(p);
        }
        out
    }
}

/// Scratch space for one forward step.
struct Step {
    x: Vec<f64>,
    h: Vec<f64>,
    logp: Vec<f64>,
}

impl PolicyParams {
    /// Uniform `[-0.1, 0.1)` initialization from `seed`.
    pub fn init(seed: u64) -> Self {
        let dims = Dims::DEFAULT;
        let mut rng = seed::stream(&[seed::tag::INIT, seed]);
        let data = (0..dims.num_params())
            .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
            .collect();
        PolicyParams { dims, seed, data }
    }

    /// All-zero parameters: every position is the uniform distribution.
    pub fn zeros() -> Self {
        let dims = Dims::DEFAULT;
        PolicyParams {
            dims,
            seed: 0,
            data: vec![0.0; dims.num_params()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn embedding(&self, t: Token) -> &[f64] {
        let d = self.dims.embed;
        &self.data[t.id() * d..(t.id() + 1) * d]
    }

    fn check(&self, tokens: &[Token]) -> Result<(), PolicyError> {
        match tokens.iter().find(|t| t.id() >= self.dims.vocab) {
            Some(t) => Err(PolicyError::UnknownToken(t.0)),
            None => Ok(()),
        }
    }

    fn pool(&self, context: &[Token]) -> Vec<f64> {
        let d = self.dims.embed;
        let mut pool = vec![0.0; d];
        for &t in context {
            for (p, e) in pool.iter_mut().zip(self.embedding(t)) {
                *p += e;
            }
        }
        let n = context.len() as f64;
        pool.iter_mut().for_each(|p| *p /= n);
        pool
    }

    fn new_step(&self) -> Step {
        Step {
            x: vec![0.0; self.dims.input()],
            h: vec![0.0; self.dims.hidden],
            logp: vec![0.0; self.dims.vocab],
        }
    }

    /// Forward pass predicting the token after `seq[..end]`.
    fn forward(&self, seq: &[Token], end: usize, pool: &[f64], step: &mut Step) {
        let Dims {
            embed: d,
            window: k,
            hidden,
            vocab,
        } = self.dims;
        let off = self.dims.offsets();
        for slot in 0..k {
            let dst = &mut step.x[slot * d..(slot + 1) * d];
            match (end + slot).checked_sub(k) {
                Some(pos) => dst.copy_from_slice(self.embedding(seq[pos])),
                None => dst.fill(0.0),
            }
        }
        step.x[k * d..].copy_from_slice(pool);

        let n_in = self.dims.input();
        let w1 = &self.data[off.w_hidden..off.b_hidden];
        let b1 = &self.data[off.b_hidden..off.w_out];
        for j in 0..hidden {
            let z = b1[j] + dot(&w1[j * n_in..(j + 1) * n_in], &step.x);
            step.h[j] = z.tanh();
        }
        let w2 = &self.data[off.w_out..off.b_out];
        let b2 = &self.data[off.b_out..];
        let mut max = f64::NEG_INFINITY;
        for v in 0..vocab {
            let l = b2[v] + dot(&w2[v * hidden..(v + 1) * hidden], &step.h);
            step.logp[v] = l;
            max = max.max(l);
        }
        let lse = max + step.logp.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        step.logp.iter_mut().for_each(|l| *l -= lse);
    }

    /// Log-distribution over the next token after `context ++ prefix`.
    pub fn next_logprobs(&self, context: &[Token], prefix: &[Token]) -> Result<Vec<f64>, PolicyError> {
        if context.is_empty() {
            return Err(PolicyError::EmptyContext);
        }
        self.check(context)?;
        self.check(prefix)?;
        let seq: Vec<Token> = context.iter().chain(prefix).copied().collect();
        let pool = self.pool(context);
        let mut step = self.new_step();
        self.forward(&seq, seq.len(), &pool, &mut step);
        Ok(step.logp)
    }

    /// Exact log π(output | context), token by token.
    pub fn logprob(&self, context: &[Token], output: &[Token]) -> Result<LogProbs, PolicyError> {
        if context.is_empty() {
            return Err(PolicyError::EmptyContext);
        }
        self.check(context)?;
        self.check(output)?;
        let seq: Vec<Token> = context.iter().chain(output).copied().collect();
        let pool = self.pool(context);
        let mut step = self.new_step();
        let per_token: Vec<f64> = output
            .iter()
            .enumerate()
            .map(|(t, tok)| {
                self.forward(&seq, context.len() + t, &pool, &mut step);
                step.logp[tok.id()]
            })
            .collect();
        let total = per_token.iter().sum();
        Ok(LogProbs { per_token, total })
    }

    /// Samples until `<EOT>` or `max_len` tokens. Temperature 0 is greedy
    /// (ties to the lowest id). Recorded log-probs are untempered.
    pub fn sample(&self, context: &[Token], temperature: f64, max_len: usize, rng: &mut seed::Rng) -> Sample {
        assert!(!context.is_empty(), "sample needs a context");
        let pool = self.pool(context);
        let mut seq = context.to_vec();
        let mut step = self.new_step();
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut probs = vec![0.0; self.dims.vocab];
        while tokens.len() < max_len {
            self.forward(&seq, seq.len(), &pool, &mut step);
            let choice = if temperature <= 0.0 {
                argmax(&step.logp)
            } else {
                let max = step.logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (p, l) in probs.iter_mut().zip(&step.logp) {
                    *p = ((l - max) / temperature).exp();
                    total += *p;
                }
                let mut u = rng.gen::<f64>() * total;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    if u < *p {
                        pick = i;
                        break;
                    }
                    u -= p;
                }
                pick
            };
            let tok = Token(choice as u16);
            tokens.push(tok);
            logprobs.push(step.logp[choice]);
            seq.push(tok);
            if tok == vocab::EOT {
                break;
            }
        }
        Sample { tokens, logprobs }
    }

    /// Adds `coefficient · ∇θ Σ_t log π(output_t | context, output_<t)` to `buf`.
    pub fn accumulate_grad(
        &self,
        context: &[Token],
        output: &[Token],
        coefficient: f64,
        buf: &mut GradBuffer,
    ) -> Result<(), PolicyError> {
        if context.is_empty() {
            return Err(PolicyError::EmptyContext);
        }
        self.check(context)?;
        self.check(output)?;
        if coefficient == 0.0 || output.is_empty() {
            return Ok(());
        }
        let Dims {
            embed: d,
            window: k,
            hidden,
            vocab,
        } = self.dims;
        let off = self.dims.offsets();
        let n_in = self.dims.input();
        let seq: Vec<Token> = context.iter().chain(output).copied().collect();
        let pool = self.pool(context);
        let mut step = self.new_step();
        let mut dlogit = vec![0.0; vocab];
        let mut dz = vec![0.0; hidden];
        let mut dx = vec![0.0; n_in];
        let mut dpool = vec![0.0; d];

        for (t, tok) in output.iter().enumerate() {
            let end = context.len() + t;
            self.forward(&seq, end, &pool, &mut step);
            // d log p_tok / d logits = onehot - p
            for (g, l) in dlogit.iter_mut().zip(&step.logp) {
                *g = -coefficient * l.exp();
            }
            dlogit[tok.id()] += coefficient;

            let g2 = &mut buf.data[off.w_out..off.b_out];
            for v in 0..vocab {
                axpy(dlogit[v], &step.h, &mut g2[v * hidden..(v + 1) * hidden]);
            }
            for (g, dl) in buf.data[off.b_out..].iter_mut().zip(&dlogit) {
                *g += dl;
            }
            let w2 = &self.data[off.w_out..off.b_out];
            for (j, z) in dz.iter_mut().enumerate() {
                let mut dh = 0.0;
                for v in 0..vocab {
                    dh += dlogit[v] * w2[v * hidden + j];
                }
                *z = dh * (1.0 - step.h[j] * step.h[j]);
            }
            let g1 = &mut buf.data[off.w_hidden..off.b_hidden];
            for j in 0..hidden {
                axpy(dz[j], &step.x, &mut g1[j * n_in..(j + 1) * n_in]);
            }
            for (g, z) in buf.data[off.b_hidden..off.w_out].iter_mut().zip(&dz) {
                *g += z;
            }
            let w1 = &self.data[off.w_hidden..off.b_hidden];
            dx.fill(0.0);
            for j in 0..hidden {
                axpy(dz[j], &w1[j * n_in..(j + 1) * n_in], &mut dx);
            }
            for slot in 0..k {
                if let Some(pos) = (end + slot).checked_sub(k) {
                    let id = seq[pos].id();
                    axpy(1.0, &dx[slot * d..(slot + 1) * d], &mut buf.data[id * d..(id + 1) * d]);
                }
            }
            axpy(1.0, &dx[k * d..], &mut dpool);
        }
        let share = 1.0 / context.len() as f64;
        for &tok in context {
            let id = tok.id();
            axpy(share, &dpool, &mut buf.data[id * d..(id + 1) * d]);
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            dims: self.dims,
            vocab_hash: Vocabulary::get().hash(),
            seed: self.seed,
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        let mut line = String::with_capacity(32);
        for x in &self.data {
            line.clear();
            // Display for f64 is the shortest representation that round-trips exactly.
            writeln!(line, "{x}").expect("write to string");
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let bad = |m: String| Error::Checkpoint(m);
        let header_line = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let header: CheckpointHeader =
            serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported format_version {}", header.format_version)));
        }
        if header.dims != Dims::DEFAULT {
            return Err(bad(format!("dims {:?} do not match {:?}", header.dims, Dims::DEFAULT)));
        }
        if header.vocab_hash != Vocabulary::get().hash() {
            return Err(bad("vocabulary hash mismatch".into()));
        }
        let mut data = Vec::with_capacity(header.dims.num_params());
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            let x: f64 = line
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: not a float: {line:?}", i + 2)))?;
            if !x.is_finite() {
                return Err(bad(format!("line {}: non-finite parameter", i + 2)));
            }
            data.push(x);
        }
        if data.len() != header.dims.num_params() {
            return Err(bad(format!(
                "expected {} parameters, found {}",
                header.dims.num_params(),
                data.len()
            )));
        }
        Ok(PolicyParams {
            dims: header.dims,
            seed: header.seed,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    dims: Dims,
    vocab_hash: String,
    seed: u64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
