//! Tiny autoregressive token policy with exact gradients.
//!
//! The prompt is summarised by a gated mean of its token embeddings,
//!
//! ```text
//! g_j = sigmoid(w_g . e_j + b_g)        c = sum_j g_j e_j / sum_j g_j
//! h_0 = tanh(W_c c + b_c)
//! ```
//!
//! and a single GRU cell decodes the response, starting from the `BOS`
//! embedding and feeding back each emitted token. Next-token logits are
//! `W_o h_t + b_o`.
//!
//! The only gradient the training losses need is that of a weighted sum of
//! token log-probabilities with the weights held constant; [`Trace::backward`]
//! computes it by backpropagation through time.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};
use crate::reward::ParseResult;
use crate::seeding::{self, Purpose};
use crate::vocab::{TokenId, BOS, EOS};

pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Arch {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        if vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(AparlError::Config(
                "vocab_size, embed_dim and hidden_dim must be positive".into(),
            ));
        }
        Ok(Arch {
            vocab_size,
            embed_dim,
            hidden_dim,
        })
    }

    pub fn num_params(&self) -> usize {
        Layout::new(*self).total
    }
}

/// Offsets of each tensor inside the flat parameter vector. Matrices are
/// row-major with shape (rows, cols) = (output, input).
#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    d: usize,
    h: usize,
    emb: usize,
    gate_w: usize,
    gate_b: usize,
    init_w: usize,
    init_b: usize,
    // update, reset and candidate blocks of the GRU
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wn: usize,
    un: usize,
    bn: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(arch: Arch) -> Self {
        let (v, d, h) = (arch.vocab_size, arch.embed_dim, arch.hidden_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let off = at;
            at += n;
            off
        };
        let emb = take(v * d);
        let gate_w = take(d);
        let gate_b = take(1);
        let init_w = take(h * d);
        let init_b = take(h);
        let wz = take(h * d);
        let uz = take(h * h);
        let bz = take(h);
        let wr = take(h * d);
        let ur = take(h * h);
        let br = take(h);
        let wn = take(h * d);
        let un = take(h * h);
        let bn = take(h);
        let out_w = take(v * h);
        let out_b = take(v);
        Layout {
            v,
            d,
            h,
            emb,
            gate_w,
            gate_b,
            init_w,
            init_b,
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
            out_w,
            out_b,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: Arch,
    pub values: Vec<f64>,
}

pub fn init_policy(arch: Arch, seed: u64) -> PolicyParams {
    let mut rng = seeding::stream(seed, Purpose::Init, &[]);
    let dist = Uniform::new_inclusive(-INIT_SCALE, INIT_SCALE);
    let values = (0..arch.num_params()).map(|_| dist.sample(&mut rng)).collect();
    PolicyParams { arch, values }
}

impl PolicyParams {
    pub fn zeros(arch: Arch) -> Self {
        PolicyParams {
            arch,
            values: vec![0.0; arch.num_params()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    fn layout(&self) -> Layout {
        Layout::new(self.arch)
    }

    fn check_tokens(&self, tokens: &[TokenId], what: &str) -> Result<()> {
        let v = self.arch.vocab_size;
        match tokens.iter().find(|&&t| t as usize >= v) {
            Some(t) => Err(AparlError::Input(format!(
                "{what} token id {t} is out of range for vocabulary size {v}"
            ))),
            None => Ok(()),
        }
    }

    fn check_prompt(&self, prompt: &[TokenId]) -> Result<()> {
        if prompt.is_empty() {
            return Err(AparlError::Input("prompt must not be empty".into()));
        }
        self.check_tokens(prompt, "prompt")
    }
}

/// `out += W x` for row-major `W` of shape (out.len(), x.len()).
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T y` for row-major `W` of shape (y.len(), out.len()).
fn matvec_t_add(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &yi) in w.chunks_exact(cols).zip(y) {
        if yi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

/// `G += y x^T` for row-major `G` of shape (y.len(), x.len()).
fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &yi) in g.chunks_exact_mut(cols).zip(y) {
        if yi != 0.0 {
            for (gij, xj) in row.iter_mut().zip(x) {
                *gij += yi * xj;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-softmax.
fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Prompt summary: gates, gate normaliser, pooled context and initial state.
struct Encoded {
    gates: Vec<f64>,
    gate_sum: f64,
    context: Vec<f64>,
    h0: Vec<f64>,
}

fn encode(p: &[f64], ly: &Layout, prompt: &[TokenId]) -> Encoded {
    let (d, h) = (ly.d, ly.h);
    let gate_w = &p[ly.gate_w..ly.gate_w + d];
    let gate_b = p[ly.gate_b];
    let mut gates = Vec::with_capacity(prompt.len());
    let mut context = vec![0.0; d];
    let mut gate_sum = 0.0;
    for &tok in prompt {
        let e = &p[ly.emb + tok as usize * d..][..d];
        let a = gate_b + gate_w.iter().zip(e).map(|(w, x)| w * x).sum::<f64>();
        let g = sigmoid(a);
        gate_sum += g;
        for (c, x) in context.iter_mut().zip(e) {
            *c += g * x;
        }
        gates.push(g);
    }
    for c in &mut context {
        *c /= gate_sum;
    }
    let mut h0 = p[ly.init_b..ly.init_b + h].to_vec();
    matvec_add(&p[ly.init_w..ly.init_w + h * d], &context, &mut h0);
    for x in &mut h0 {
        *x = x.tanh();
    }
    Encoded {
        gates,
        gate_sum,
        context,
        h0,
    }
}

/// Intermediate values of one GRU step, kept for backpropagation.
struct StepCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// `U_n h_prev + b_n`-free term: `U_n h_prev`.
    un_h: Vec<f64>,
    h: Vec<f64>,
}

fn gru_step(p: &[f64], ly: &Layout, h_prev: &[f64], input: TokenId) -> StepCache {
    let (d, h) = (ly.d, ly.h);
    let x = &p[ly.emb + input as usize * d..][..d];
    let gate = |w: usize, u: usize, b: usize| {
        let mut a = p[b..b + h].to_vec();
        matvec_add(&p[w..w + h * d], x, &mut a);
        matvec_add(&p[u..u + h * h], h_prev, &mut a);
        a.iter_mut().for_each(|v| *v = sigmoid(*v));
        a
    };
    let z = gate(ly.wz, ly.uz, ly.bz);
    let r = gate(ly.wr, ly.ur, ly.br);
    let mut un_h = vec![0.0; h];
    matvec_add(&p[ly.un..ly.un + h * h], h_prev, &mut un_h);
    let mut n = p[ly.bn..ly.bn + h].to_vec();
    matvec_add(&p[ly.wn..ly.wn + h * d], x, &mut n);
    for i in 0..h {
        n[i] = (n[i] + r[i] * un_h[i]).tanh();
    }
    let hn = (0..h)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    StepCache { z, r, n, un_h, h: hn }
}

fn output_logprobs(p: &[f64], ly: &Layout, hidden: &[f64]) -> Vec<f64> {
    let mut logits = p[ly.out_b..ly.out_b + ly.v].to_vec();
    matvec_add(&p[ly.out_w..ly.out_w + ly.v * ly.h], hidden, &mut logits);
    let mut lp = vec![0.0; ly.v];
    log_softmax(&logits, &mut lp);
    lp
}

/// Forward pass over a fixed response with all activations retained.
pub struct Trace {
    prompt: Vec<TokenId>,
    response: Vec<TokenId>,
    enc: Encoded,
    steps: Vec<StepCache>,
    /// Full next-token log-distribution at each response position.
    step_logprobs: Vec<Vec<f64>>,
    logps: Vec<f64>,
}

impl Trace {
    pub fn new(params: &PolicyParams, prompt: &[TokenId], response: &[TokenId]) -> Result<Self> {
        params.check_prompt(prompt)?;
        params.check_tokens(response, "response")?;
        let ly = params.layout();
        let p = &params.values;
        let enc = encode(p, &ly, prompt);
        let mut steps: Vec<StepCache> = Vec::with_capacity(response.len());
        let mut step_logprobs = Vec::with_capacity(response.len());
        let mut logps = Vec::with_capacity(response.len());
        for (t, &tok) in response.iter().enumerate() {
            let input = if t == 0 { BOS } else { response[t - 1] };
            let h_prev = steps.last().map_or(&enc.h0, |s| &s.h);
            let step = gru_step(p, &ly, h_prev, input);
            let lp = output_logprobs(p, &ly, &step.h);
            logps.push(lp[tok as usize]);
            step_logprobs.push(lp);
            steps.push(step);
        }
        Ok(Trace {
            prompt: prompt.to_vec(),
            response: response.to_vec(),
            enc,
            steps,
            step_logprobs,
            logps,
        })
    }

    pub fn logps(&self) -> &[f64] {
        &self.logps
    }

    /// Next-token log-distribution before response position `t`.
    pub fn step_distribution(&self, t: usize) -> &[f64] {
        &self.step_logprobs[t]
    }

    /// Accumulates `grad += d/dθ Σ_t weights[t] · log π(response[t] | ...)`.
    pub fn backward(&self, params: &PolicyParams, weights: &[f64], grad: &mut [f64]) -> Result<()> {
        if weights.len() != self.response.len() {
            return Err(AparlError::Input(format!(
                "{} weights for a response of {} tokens",
                weights.len(),
                self.response.len()
            )));
        }
        if grad.len() != params.len() {
            return Err(AparlError::Input("gradient buffer has the wrong length".into()));
        }
        let ly = params.layout();
        let p = &params.values;
        let (d, h, v) = (ly.d, ly.h, ly.v);

        let mut dh = vec![0.0; h];
        let mut dlogits = vec![0.0; v];
        let mut dx = vec![0.0; d];
        let mut daz = vec![0.0; h];
        let mut dar = vec![0.0; h];
        let mut dan = vec![0.0; h];
        let mut dun_h = vec![0.0; h];
        for t in (0..self.response.len()).rev() {
            let step = &self.steps[t];
            let h_prev = if t == 0 { &self.enc.h0 } else { &self.steps[t - 1].h };
            let w = weights[t];
            if w != 0.0 {
                let lp = &self.step_logprobs[t];
                for (k, dl) in dlogits.iter_mut().enumerate() {
                    *dl = -w * lp[k].exp();
                }
                dlogits[self.response[t] as usize] += w;
                outer_add(&mut grad[ly.out_w..ly.out_w + v * h], &dlogits, &step.h);
                for (g, dl) in grad[ly.out_b..ly.out_b + v].iter_mut().zip(&dlogits) {
                    *g += dl;
                }
                matvec_t_add(&p[ly.out_w..ly.out_w + v * h], &dlogits, &mut dh);
            }

            // h = (1 - z) n + z h_prev
            let mut dh_prev = vec![0.0; h];
            for i in 0..h {
                let dn = dh[i] * (1.0 - step.z[i]);
                let dz = dh[i] * (h_prev[i] - step.n[i]);
                dh_prev[i] = dh[i] * step.z[i];
                dan[i] = dn * (1.0 - step.n[i] * step.n[i]);
                let dr = dan[i] * step.un_h[i];
                dun_h[i] = dan[i] * step.r[i];
                daz[i] = dz * step.z[i] * (1.0 - step.z[i]);
                dar[i] = dr * step.r[i] * (1.0 - step.r[i]);
            }
            let input = if t == 0 { BOS } else { self.response[t - 1] };
            let x = &p[ly.emb + input as usize * d..][..d];
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (wo, uo, bo, da) in [
                (ly.wz, Some(ly.uz), ly.bz, &daz),
                (ly.wr, Some(ly.ur), ly.br, &dar),
                (ly.wn, None, ly.bn, &dan),
            ] {
                outer_add(&mut grad[wo..wo + h * d], da, x);
                for (g, a) in grad[bo..bo + h].iter_mut().zip(da.iter()) {
                    *g += a;
                }
                matvec_t_add(&p[wo..wo + h * d], da, &mut dx);
                // The candidate block reaches h_prev through the reset gate (dun_h below).
                if let Some(uo) = uo {
                    outer_add(&mut grad[uo..uo + h * h], da, h_prev);
                    matvec_t_add(&p[uo..uo + h * h], da, &mut dh_prev);
                }
            }
            outer_add(&mut grad[ly.un..ly.un + h * h], &dun_h, h_prev);
            matvec_t_add(&p[ly.un..ly.un + h * h], &dun_h, &mut dh_prev);
            for (g, dxi) in grad[ly.emb + input as usize * d..][..d].iter_mut().zip(&dx) {
                *g += dxi;
            }
            dh = dh_prev;
        }

        // h0 = tanh(W_c c + b_c)
        let dai: Vec<f64> = (0..h)
            .map(|i| dh[i] * (1.0 - self.enc.h0[i] * self.enc.h0[i]))
            .collect();
        outer_add(&mut grad[ly.init_w..ly.init_w + h * d], &dai, &self.enc.context);
        for (g, a) in grad[ly.init_b..ly.init_b + h].iter_mut().zip(&dai) {
            *g += a;
        }
        let mut dc = vec![0.0; d];
        matvec_t_add(&p[ly.init_w..ly.init_w + h * d], &dai, &mut dc);

        // c = Σ g_j e_j / Σ g_j
        let s = self.enc.gate_sum;
        let c = &self.enc.context;
        let gate_w = &p[ly.gate_w..ly.gate_w + d];
        let mut dgate_w = vec![0.0; d];
        let mut dgate_b = 0.0;
        for (&tok, &g) in self.prompt.iter().zip(&self.enc.gates) {
            let off = ly.emb + tok as usize * d;
            let e = &p[off..off + d];
            let dg: f64 = (0..d).map(|k| dc[k] * (e[k] - c[k])).sum::<f64>() / s;
            let da = dg * g * (1.0 - g);
            for k in 0..d {
                dgate_w[k] += da * e[k];
            }
            dgate_b += da;
            for k in 0..d {
                grad[off + k] += dc[k] * g / s + da * gate_w[k];
            }
        }
        for (g, v) in grad[ly.gate_w..ly.gate_w + d].iter_mut().zip(&dgate_w) {
            *g += v;
        }
        grad[ly.gate_b] += dgate_b;
        Ok(())
    }
}

/// Per-token log-probabilities of `response` given `prompt`.
pub fn log_prob(params: &PolicyParams, prompt: &[TokenId], response: &[TokenId]) -> Result<Vec<f64>> {
    Ok(Trace::new(params, prompt, response)?.logps)
}

/// Gradient of `Σ_t weights[t] · log π(response[t] | prompt, response[<t])`.
pub fn weighted_score_grad(
    params: &PolicyParams,
    prompt: &[TokenId],
    response: &[TokenId],
    weights: &[f64],
) -> Result<Vec<f64>> {
    if weights.len() != response.len() {
        return Err(AparlError::Input(format!(
            "{} weights for a response of {} tokens",
            weights.len(),
            response.len()
        )));
    }
    let trace = Trace::new(params, prompt, response)?;
    let mut grad = vec![0.0; params.len()];
    trace.backward(params, weights, &mut grad)?;
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Decoding {
    /// Zero-temperature limit: argmax with ties broken by the lowest id.
    Greedy,
    Sample { temperature: f64 },
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub sample_id: u64,
    pub response: Vec<TokenId>,
    /// Untempered per-token log-probabilities under the behaviour policy.
    pub logp_old: Vec<f64>,
    pub reward: f64,
    pub parse: Option<ParseResult>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }
}

fn pick_token(logprobs: &[f64], decoding: Decoding, rng: &mut impl Rng) -> TokenId {
    match decoding {
        Decoding::Greedy => {
            let mut best = 0;
            for (k, &lp) in logprobs.iter().enumerate() {
                if lp > logprobs[best] {
                    best = k;
                }
            }
            best as TokenId
        }
        Decoding::Sample { temperature } => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            if temperature == 1.0 {
                for (k, &lp) in logprobs.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return k as TokenId;
                    }
                }
            } else {
                let scaled: Vec<f64> = logprobs.iter().map(|lp| lp / temperature).collect();
                let mut tempered = vec![0.0; scaled.len()];
                log_softmax(&scaled, &mut tempered);
                for (k, &lp) in tempered.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return k as TokenId;
                    }
                }
            }
            // u fell in the rounding gap above the cumulative sum.
            (logprobs.len() - 1) as TokenId
        }
    }
}

/// Ancestral sampling until `EOS` or `max_len` tokens.
pub fn sample_response(
    params: &PolicyParams,
    sample_id: u64,
    prompt: &[TokenId],
    decoding: Decoding,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    params.check_prompt(prompt)?;
    if max_len == 0 {
        return Err(AparlError::Input("max_len must be at least 1".into()));
    }
    if let Decoding::Sample { temperature } = decoding {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(AparlError::Input(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
    }
    let ly = params.layout();
    let p = &params.values;
    let enc = encode(p, &ly, prompt);
    let mut hidden = enc.h0;
    let mut input = BOS;
    let mut response = Vec::new();
    let mut logp_old = Vec::new();
    while response.len() < max_len {
        hidden = gru_step(p, &ly, &hidden, input).h;
        let lp = output_logprobs(p, &ly, &hidden);
        let tok = pick_token(&lp, decoding, rng);
        response.push(tok);
        logp_old.push(lp[tok as usize]);
        if tok == EOS {
            break;
        }
        input = tok;
    }
    Ok(Rollout {
        sample_id,
        response,
        logp_old,
        reward: 0.0,
        parse: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotTag {
    /// Behaviour policy that generated the current batch.
    Old,
    /// KL anchor.
    Ref,
}

/// Frozen copy of the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    tag: SnapshotTag,
    params: Arc<PolicyParams>,
}

pub fn snapshot(params: &PolicyParams, tag: SnapshotTag) -> PolicySnapshot {
    PolicySnapshot {
        tag,
        params: Arc::new(params.clone()),
    }
}

impl PolicySnapshot {
    pub fn tag(&self) -> SnapshotTag {
        self.tag
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn values(&self) -> &[f64] {
        &self.params.values
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APRLPOL\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 8;

/// Encodes the parameter checkpoint: magic, format version, V, d, h (u32),
/// parameter count (u64), then the parameters as little-endian f64.
pub fn encode_params(params: &PolicyParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [
        params.arch.vocab_size,
        params.arch.embed_dim,
        params.arch.hidden_dim,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub(crate) fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Decodes a parameter checkpoint, returning it and the number of bytes used.
pub fn decode_params(bytes: &[u8], path: &Path) -> Result<(PolicyParams, usize)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(AparlError::corrupt(path, "not a policy checkpoint"));
    }
    let version = read_u32(bytes, 8);
    if version != CHECKPOINT_VERSION {
        return Err(AparlError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let arch = Arch::new(
        read_u32(bytes, 12) as usize,
        read_u32(bytes, 16) as usize,
        read_u32(bytes, 20) as usize,
    )
    .map_err(|e| AparlError::corrupt(path, e.to_string()))?;
    let count = read_u64(bytes, 24) as usize;
    if count != arch.num_params() {
        return Err(AparlError::corrupt(
            path,
            format!(
                "header declares {count} parameters but the architecture has {}",
                arch.num_params()
            ),
        ));
    }
    let end = HEADER_LEN + 8 * count;
    if bytes.len() < end {
        return Err(AparlError::corrupt(path, "truncated parameter block"));
    }
    let values = bytes[HEADER_LEN..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((PolicyParams { arch, values }, end))
}

pub fn save_params(path: &Path, params: &PolicyParams) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| AparlError::io(path, e))?;
    file.write_all(&encode_params(params))
        .map_err(|e| AparlError::io(path, e))
}

pub fn load_params(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| AparlError::io(path, e))?;
    let (params, used) = decode_params(&bytes, path)?;
    if used != bytes.len() {
        return Err(AparlError::corrupt(path, "trailing bytes after parameters"));
    }
    Ok(params)
}
