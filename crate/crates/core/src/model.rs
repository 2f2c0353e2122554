//! The classifier: a character BiLSTM builds one vector per token, a
//! per-dimension gate mixes it with the token's pre-trained word vector, a
//! sentence BiLSTM with additive attention pools the sequence, and an affine
//! layer plus softmax scores the three sentiment classes.
//!
//! ```text
//! chars ─ emb ─ BiLSTM ─┐ v_c
//!                       ├─ gate ─ dropout ─ BiLSTM ─ attention ─ dropout ─ affine ─ softmax
//! token ─ word table ───┘ v_w
//! ```
//!
//! Every layer keeps the intermediate values it needs in a [`ForwardTrace`],
//! and [`Model::backward`] walks that trace in reverse.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, NUM_CLASSES};
use crate::diffmath::{
    affine, affine_backward, concat, dot, masked_softmax, sigmoid, softmax, softmax_backward,
    GradTape, Matrix, Parameters,
};
use crate::embeddings::{CharTable, CharVocab, EmbeddingTable};
use crate::error::{Error, Result};
use crate::training::{cross_entropy, dropout_mask, PROB_FLOOR};

/// Which token representation feeds the sentence encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    #[default]
    Gated,
    WordOnly,
    CharOnly,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Gated => "gated",
            FusionMode::WordOnly => "word_only",
            FusionMode::CharOnly => "char_only",
        }
    }

    fn uses_chars(self) -> bool {
        self != FusionMode::WordOnly
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(FusionMode::Gated),
            "word_only" => Ok(FusionMode::WordOnly),
            "char_only" => Ok(FusionMode::CharOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (gated, word_only, char_only)"
            ))),
        }
    }
}

/// Layer widths. The character encoder's output (`2 * char_hidden`) must
/// equal `word_dim` so the gate can mix the two element by element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_dim: usize,
    pub sent_hidden: usize,
    pub mode: FusionMode,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            char_dim: 150,
            char_hidden: 150,
            word_dim: 300,
            sent_hidden: 150,
            mode: FusionMode::Gated,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.char_dim == 0 || self.char_hidden == 0 || self.word_dim == 0 || self.sent_hidden == 0 {
            return Err(Error::Config("all layer sizes must be positive".into()));
        }
        if 2 * self.char_hidden != self.word_dim {
            return Err(Error::dim(
                "Architecture",
                format!("char BiLSTM output {}", 2 * self.char_hidden),
                format!("word_dim {}", self.word_dim),
            ));
        }
        Ok(())
    }
}

/// The four gate blocks of one LSTM direction; each acts on `[h_prev, x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_f: Matrix,
    pub b_i: Matrix,
    pub b_o: Matrix,
    pub b_c: Matrix,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        let b = || Matrix::zeros(hidden, 1);
        LstmParams {
            w_f: w(),
            w_i: w(),
            w_o: w(),
            w_c: w(),
            b_f: b(),
            b_i: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn init<R: RngCore + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let cols = hidden + input;
        LstmParams {
            w_f: Matrix::glorot(hidden, cols, rng),
            w_i: Matrix::glorot(hidden, cols, rng),
            w_o: Matrix::glorot(hidden, cols, rng),
            w_c: Matrix::glorot(hidden, cols, rng),
            b_f: Matrix::filled(hidden, 1, 1.0),
            b_i: Matrix::zeros(hidden, 1),
            b_o: Matrix::zeros(hidden, 1),
            b_c: Matrix::zeros(hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    fn tensors<'a>(&'a self, names: &[&'static str; 8]) -> Vec<(&'static str, &'a Matrix)> {
        let t = [
            &self.w_f, &self.w_i, &self.w_o, &self.w_c, &self.b_f, &self.b_i, &self.b_o, &self.b_c,
        ];
        names.iter().copied().zip(t).collect()
    }

    fn tensors_mut<'a>(&'a mut self, names: &[&'static str; 8]) -> Vec<(&'static str, &'a mut Matrix)> {
        let t = [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.b_c,
        ];
        names.iter().copied().zip(t).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w: Matrix,
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnParams {
    /// 1 x 2h: one scalar score per timestep.
    pub w: Matrix,
    pub b: Matrix,
}

/// Every trainable tensor. Also used as the gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub char_emb: Matrix,
    pub char_fwd: LstmParams,
    pub char_bwd: LstmParams,
    pub gate: GateParams,
    pub sent_fwd: LstmParams,
    pub sent_bwd: LstmParams,
    pub attn: AttnParams,
    pub cls_w: Matrix,
    pub cls_b: Matrix,
}

const CHAR_FWD: [&str; 8] = [
    "char_fwd.w_f", "char_fwd.w_i", "char_fwd.w_o", "char_fwd.w_c",
    "char_fwd.b_f", "char_fwd.b_i", "char_fwd.b_o", "char_fwd.b_c",
];
const CHAR_BWD: [&str; 8] = [
    "char_bwd.w_f", "char_bwd.w_i", "char_bwd.w_o", "char_bwd.w_c",
    "char_bwd.b_f", "char_bwd.b_i", "char_bwd.b_o", "char_bwd.b_c",
];
const SENT_FWD: [&str; 8] = [
    "sent_fwd.w_f", "sent_fwd.w_i", "sent_fwd.w_o", "sent_fwd.w_c",
    "sent_fwd.b_f", "sent_fwd.b_i", "sent_fwd.b_o", "sent_fwd.b_c",
];
const SENT_BWD: [&str; 8] = [
    "sent_bwd.w_f", "sent_bwd.w_i", "sent_bwd.w_o", "sent_bwd.w_c",
    "sent_bwd.b_f", "sent_bwd.b_i", "sent_bwd.b_o", "sent_bwd.b_c",
];

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![("char_emb", &self.char_emb)];
        v.extend(self.char_fwd.tensors(&CHAR_FWD));
        v.extend(self.char_bwd.tensors(&CHAR_BWD));
        v.push(("gate.w", &self.gate.w));
        v.push(("gate.b", &self.gate.b));
        v.extend(self.sent_fwd.tensors(&SENT_FWD));
        v.extend(self.sent_bwd.tensors(&SENT_BWD));
        v.push(("attn.w", &self.attn.w));
        v.push(("attn.b", &self.attn.b));
        v.push(("cls.w", &self.cls_w));
        v.push(("cls.b", &self.cls_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = vec![("char_emb", &mut self.char_emb)];
        v.extend(self.char_fwd.tensors_mut(&CHAR_FWD));
        v.extend(self.char_bwd.tensors_mut(&CHAR_BWD));
        v.push(("gate.w", &mut self.gate.w));
        v.push(("gate.b", &mut self.gate.b));
        v.extend(self.sent_fwd.tensors_mut(&SENT_FWD));
        v.extend(self.sent_bwd.tensors_mut(&SENT_BWD));
        v.push(("attn.w", &mut self.attn.w));
        v.push(("attn.b", &mut self.attn.b));
        v.push(("cls.w", &mut self.cls_w));
        v.push(("cls.b", &mut self.cls_b));
        v
    }
}

impl ModelParams {
    pub fn zeros(arch: &Architecture, char_rows: usize) -> Self {
        let h2 = 2 * arch.sent_hidden;
        ModelParams {
            char_emb: Matrix::zeros(char_rows, arch.char_dim),
            char_fwd: LstmParams::zeros(arch.char_hidden, arch.char_dim),
            char_bwd: LstmParams::zeros(arch.char_hidden, arch.char_dim),
            gate: GateParams {
                w: Matrix::zeros(arch.word_dim, arch.word_dim),
                b: Matrix::zeros(arch.word_dim, 1),
            },
            sent_fwd: LstmParams::zeros(arch.sent_hidden, arch.word_dim),
            sent_bwd: LstmParams::zeros(arch.sent_hidden, arch.word_dim),
            attn: AttnParams {
                w: Matrix::zeros(1, h2),
                b: Matrix::zeros(1, 1),
            },
            cls_w: Matrix::zeros(NUM_CLASSES, h2),
            cls_b: Matrix::zeros(NUM_CLASSES, 1),
        }
    }

    pub fn init<R: RngCore + ?Sized>(arch: &Architecture, char_emb: Matrix, rng: &mut R) -> Self {
        let h2 = 2 * arch.sent_hidden;
        ModelParams {
            char_emb,
            char_fwd: LstmParams::init(arch.char_hidden, arch.char_dim, rng),
            char_bwd: LstmParams::init(arch.char_hidden, arch.char_dim, rng),
            gate: GateParams {
                w: Matrix::glorot(arch.word_dim, arch.word_dim, rng),
                b: Matrix::zeros(arch.word_dim, 1),
            },
            sent_fwd: LstmParams::init(arch.sent_hidden, arch.word_dim, rng),
            sent_bwd: LstmParams::init(arch.sent_hidden, arch.word_dim, rng),
            attn: AttnParams {
                w: Matrix::glorot(1, h2, rng),
                b: Matrix::zeros(1, 1),
            },
            cls_w: Matrix::glorot(NUM_CLASSES, h2, rng),
            cls_b: Matrix::zeros(NUM_CLASSES, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn accumulate(&mut self, other: &ModelParams) -> Result<()> {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(k);
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// `(h_t, c_t)` for one LSTM step.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, step) = step_forward(p, x, h_prev, c_prev)?;
    Ok((h, step.c))
}

#[derive(Clone, Debug)]
struct StepCache {
    z: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn step_forward(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, StepCache)> {
    let hidden = p.hidden();
    if h_prev.len() != hidden || c_prev.len() != hidden || x.len() != p.input() {
        return Err(Error::dim(
            "lstm_cell",
            format!("params h={hidden} n={}", p.input()),
            format!("x[{}] h[{}] c[{}]", x.len(), h_prev.len(), c_prev.len()),
        ));
    }
    let z = concat(h_prev, x);
    let gate = |w: &Matrix, b: &Matrix, act: fn(f64) -> f64| -> Result<Vec<f64>> {
        Ok(affine(w, &z, b.data())?.into_iter().map(act).collect())
    };
    let f = gate(&p.w_f, &p.b_f, sigmoid)?;
    let i = gate(&p.w_i, &p.b_i, sigmoid)?;
    let o = gate(&p.w_o, &p.b_o, sigmoid)?;
    let g = gate(&p.w_c, &p.b_c, f64::tanh)?;
    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    Ok((
        h,
        StepCache {
            z,
            f,
            i,
            o,
            g,
            c_prev: c_prev.to_vec(),
            c,
            tanh_c,
        },
    ))
}

#[derive(Clone, Debug)]
struct SeqCache {
    steps: Vec<StepCache>,
    hs: Vec<Vec<f64>>,
}

fn run_lstm<'a>(p: &LstmParams, xs: impl Iterator<Item = &'a [f64]>) -> Result<SeqCache> {
    let hidden = p.hidden();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut cache = SeqCache {
        steps: Vec::new(),
        hs: Vec::new(),
    };
    for x in xs {
        let (h_next, step) = step_forward(p, x, &h, &c)?;
        c.clone_from(&step.c);
        h.clone_from(&h_next);
        cache.steps.push(step);
        cache.hs.push(h_next);
    }
    Ok(cache)
}

/// Backpropagation through time. `dhs[t]` is the upstream gradient on
/// `h_t`; returns the gradient on each input `x_t`.
fn lstm_backward(p: &LstmParams, cache: &SeqCache, dhs: &[Vec<f64>], grads: &mut LstmParams) -> Vec<Vec<f64>> {
    let hidden = p.hidden();
    let input = p.input();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![Vec::new(); cache.steps.len()];
    for t in (0..cache.steps.len()).rev() {
        let s = &cache.steps[t];
        let mut da_f = vec![0.0; hidden];
        let mut da_i = vec![0.0; hidden];
        let mut da_o = vec![0.0; hidden];
        let mut da_c = vec![0.0; hidden];
        for k in 0..hidden {
            let dh = dhs[t][k] + dh_next[k];
            let d_o = dh * s.tanh_c[k];
            let dc = dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
            let d_f = dc * s.c_prev[k];
            let d_i = dc * s.g[k];
            let d_g = dc * s.i[k];
            dc_next[k] = dc * s.f[k];
            da_f[k] = d_f * s.f[k] * (1.0 - s.f[k]);
            da_i[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            da_o[k] = d_o * s.o[k] * (1.0 - s.o[k]);
            da_c[k] = d_g * (1.0 - s.g[k] * s.g[k]);
        }
        let mut dz = vec![0.0; hidden + input];
        affine_backward(&p.w_f, &s.z, &da_f, &mut grads.w_f, grads.b_f.data_mut(), Some(&mut dz));
        affine_backward(&p.w_i, &s.z, &da_i, &mut grads.w_i, grads.b_i.data_mut(), Some(&mut dz));
        affine_backward(&p.w_o, &s.z, &da_o, &mut grads.w_o, grads.b_o.data_mut(), Some(&mut dz));
        affine_backward(&p.w_c, &s.z, &da_c, &mut grads.w_c, grads.b_c.data_mut(), Some(&mut dz));
        dh_next.copy_from_slice(&dz[..hidden]);
        dxs[t] = dz[hidden..].to_vec();
    }
    dxs
}

#[derive(Clone, Debug)]
struct BiCache {
    fwd: SeqCache,
    /// Run over the reversed sequence; index r holds position T-1-r.
    bwd: SeqCache,
}

fn bilstm_forward(fwd: &LstmParams, bwd: &LstmParams, seq: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BiCache)> {
    if seq.is_empty() {
        return Err(Error::Empty { op: "bilstm" });
    }
    let f = run_lstm(fwd, seq.iter().map(Vec::as_slice))?;
    let b = run_lstm(bwd, seq.iter().rev().map(Vec::as_slice))?;
    let n = seq.len();
    let out = (0..n).map(|t| concat(&f.hs[t], &b.hs[n - 1 - t])).collect();
    Ok((out, BiCache { fwd: f, bwd: b }))
}

fn bilstm_backward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    cache: &BiCache,
    douts: &[Vec<f64>],
    g_fwd: &mut LstmParams,
    g_bwd: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let n = douts.len();
    let h = fwd.hidden();
    let df: Vec<Vec<f64>> = douts.iter().map(|d| d[..h].to_vec()).collect();
    let db: Vec<Vec<f64>> = (0..n).map(|r| douts[n - 1 - r][h..].to_vec()).collect();
    let mut dx = lstm_backward(fwd, &cache.fwd, &df, g_fwd);
    let dx_b = lstm_backward(bwd, &cache.bwd, &db, g_bwd);
    for (t, d) in dx.iter_mut().enumerate() {
        for (a, b) in d.iter_mut().zip(&dx_b[n - 1 - t]) {
            *a += b;
        }
    }
    dx
}

/// `out[t] = [h_fwd(t), h_bwd(t)]` from zero initial states; the backward
/// direction reads the sequence reversed and is re-aligned to `t`.
pub fn bilstm(seq: &[Vec<f64>], fwd: &LstmParams, bwd: &LstmParams) -> Result<Vec<Vec<f64>>> {
    bilstm_forward(fwd, bwd, seq).map(|(out, _)| out)
}

/// Gate values `σ(W v_w + b)` and the mix `g ⊙ v_c + (1 − g) ⊙ v_w`.
pub fn gate_forward(v_w: &[f64], v_c: &[f64], g: &GateParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if v_w.len() != v_c.len() {
        return Err(Error::dim("vector_gate", v_w.len(), v_c.len()));
    }
    let gate: Vec<f64> = affine(&g.w, v_w, g.b.data())?.into_iter().map(sigmoid).collect();
    let mixed = gate
        .iter()
        .zip(v_c.iter().zip(v_w))
        .map(|(g, (c, w))| g * c + (1.0 - g) * w)
        .collect();
    Ok((gate, mixed))
}

pub fn vector_gate(v_w: &[f64], v_c: &[f64], g: &GateParams) -> Result<Vec<f64>> {
    gate_forward(v_w, v_c, g).map(|(_, mixed)| mixed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    /// `tanh(W_e h_t + b_e)` per step.
    pub scores: Vec<f64>,
}

pub fn attention(hidden: &[Vec<f64>], attn: &AttnParams, mask: &[bool]) -> Result<Attention> {
    if hidden.is_empty() {
        return Err(Error::Empty { op: "attention" });
    }
    if hidden.len() != mask.len() {
        return Err(Error::dim("attention", format!("{} states", hidden.len()), format!("{} mask", mask.len())));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Empty { op: "attention (all positions masked)" });
    }
    let width = attn.w.cols();
    let mut scores = Vec::with_capacity(hidden.len());
    for h in hidden {
        if h.len() != width {
            return Err(Error::dim("attention", width, h.len()));
        }
        scores.push((dot(attn.w.row(0), h) + attn.b.data()[0]).tanh());
    }
    let weights = masked_softmax(&scores, mask)?;
    let mut context = vec![0.0; width];
    for (a, h) in weights.iter().zip(hidden) {
        if *a == 0.0 {
            continue;
        }
        for (c, v) in context.iter_mut().zip(h) {
            *c += a * v;
        }
    }
    Ok(Attention {
        weights,
        context,
        scores,
    })
}

/// Whether a forward pass is for inference or for training with dropout.
pub enum Pass<'a> {
    Inference,
    Train { dropout: f64, rng: &'a mut dyn RngCore },
}

impl Pass<'_> {
    fn mask(&mut self, len: usize) -> Result<Option<Vec<f64>>> {
        match self {
            Pass::Inference => Ok(None),
            Pass::Train { dropout, rng } => {
                if *dropout == 0.0 {
                    Ok(None)
                } else {
                    dropout_mask(len, *dropout, &mut **rng).map(Some)
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
struct CharTrace {
    indices: Vec<usize>,
    cache: BiCache,
    out: Vec<f64>,
}

#[derive(Clone, Debug)]
struct TokenTrace {
    word: Vec<f64>,
    oov: bool,
    chars: Option<CharTrace>,
    gate: Option<Vec<f64>>,
    mask: Option<Vec<f64>>,
}

/// Everything backward needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    tokens: Vec<TokenTrace>,
    inputs: Vec<Vec<f64>>,
    sent: BiCache,
    hidden: Vec<Vec<f64>>,
    attention: Attention,
    ctx_mask: Option<Vec<f64>>,
    ctx_in: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn attention_weights(&self) -> &[f64] {
        &self.attention.weights
    }

    /// Mean gate activation per token (None outside gated mode).
    pub fn gate_means(&self) -> Option<Vec<f64>> {
        self.tokens
            .iter()
            .map(|t| t.gate.as_ref().map(|g| g.iter().sum::<f64>() / g.len() as f64))
            .collect()
    }

    pub fn oov_flags(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.oov).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub chars: CharVocab,
    pub params: ModelParams,
}

impl Model {
    /// Fresh model around an initialised character table.
    pub fn new(arch: Architecture, chars: CharTable, seed: u64) -> Result<Self> {
        arch.validate()?;
        if chars.matrix.shape() != (chars.vocab.len(), arch.char_dim) {
            return Err(Error::dim(
                "Model::new",
                format!("char table {}x{}", chars.matrix.rows(), chars.matrix.cols()),
                format!("{} chars x char_dim {}", chars.vocab.len(), arch.char_dim),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&arch, chars.matrix, &mut rng);
        Ok(Model {
            arch,
            chars: chars.vocab,
            params,
        })
    }

    /// All parameters zero.
    pub fn zeroed(arch: Architecture, chars: CharVocab) -> Result<Self> {
        arch.validate()?;
        let params = ModelParams::zeros(&arch, chars.len());
        Ok(Model { arch, chars, params })
    }

    fn check_vocab(&self, vocab: &EmbeddingTable) -> Result<()> {
        if vocab.dim() != self.arch.word_dim {
            return Err(Error::dim("Model", format!("word_dim {}", self.arch.word_dim), format!("table dim {}", vocab.dim())));
        }
        Ok(())
    }

    fn encode_chars(&self, token: &str) -> Result<CharTrace> {
        if token.is_empty() {
            return Err(Error::Empty { op: "char_encode" });
        }
        let indices: Vec<usize> = token.chars().map(|c| self.chars.index(c)).collect();
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.params.char_emb.row(i).to_vec()).collect();
        let (_, cache) = bilstm_forward(&self.params.char_fwd, &self.params.char_bwd, &rows)?;
        let out = concat(
            cache.fwd.hs.last().expect("nonempty"),
            cache.bwd.hs.last().expect("nonempty"),
        );
        Ok(CharTrace { indices, cache, out })
    }

    /// `[final forward state, final backward state]` of the character BiLSTM.
    pub fn char_encode(&self, token: &str) -> Result<Vec<f64>> {
        self.encode_chars(token).map(|t| t.out)
    }

    fn trace(&self, tokens: &[String], vocab: &EmbeddingTable, mut pass: Pass<'_>) -> Result<ForwardTrace> {
        if tokens.is_empty() {
            return Err(Error::Empty { op: "forward" });
        }
        self.check_vocab(vocab)?;
        let mode = self.arch.mode;
        let mut traces = Vec::with_capacity(tokens.len());
        let mut inputs = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let (word, oov) = match vocab.get(tok) {
                Some(v) => (v.to_vec(), false),
                None => (vec![0.0; self.arch.word_dim], true),
            };
            let chars = if mode.uses_chars() { Some(self.encode_chars(tok)?) } else { None };
            let (gate, fused) = match mode {
                FusionMode::Gated => {
                    let v_c = &chars.as_ref().expect("gated mode encodes chars").out;
                    let (g, mixed) = gate_forward(&word, v_c, &self.params.gate)?;
                    (Some(g), mixed)
                }
                FusionMode::WordOnly => (None, word.clone()),
                FusionMode::CharOnly => (None, chars.as_ref().expect("char mode encodes chars").out.clone()),
            };
            let mask = pass.mask(fused.len())?;
            let input = match &mask {
                Some(m) => fused.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => fused,
            };
            inputs.push(input);
            traces.push(TokenTrace {
                word,
                oov,
                chars,
                gate,
                mask,
            });
        }
        let (hidden, sent) = bilstm_forward(&self.params.sent_fwd, &self.params.sent_bwd, &inputs)?;
        let attn = attention(&hidden, &self.params.attn, &vec![true; hidden.len()])?;
        let ctx_mask = pass.mask(attn.context.len())?;
        let ctx_in: Vec<f64> = match &ctx_mask {
            Some(m) => attn.context.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => attn.context.clone(),
        };
        let logits = affine(&self.params.cls_w, &ctx_in, self.params.cls_b.data())?;
        let probs = softmax(&logits)?;
        Ok(ForwardTrace {
            tokens: traces,
            inputs,
            sent,
            hidden,
            attention: attn,
            ctx_mask,
            ctx_in,
            probs,
        })
    }

    /// Class probabilities (negative, neutral, positive).
    pub fn forward(&self, s: &Sentence, vocab: &EmbeddingTable, pass: Pass<'_>) -> Result<Vec<f64>> {
        self.trace(&s.tokens, vocab, pass).map(|t| t.probs)
    }

    pub fn forward_tokens(&self, tokens: &[String], vocab: &EmbeddingTable, pass: Pass<'_>) -> Result<Vec<f64>> {
        self.trace(tokens, vocab, pass).map(|t| t.probs)
    }

    /// Inference pass that keeps the trace for inspection (attention, gates).
    pub fn inspect(&self, tokens: &[String], vocab: &EmbeddingTable) -> Result<ForwardTrace> {
        self.trace(tokens, vocab, Pass::Inference)
    }

    pub fn predict(&self, s: &Sentence, vocab: &EmbeddingTable) -> Result<usize> {
        self.forward(s, vocab, Pass::Inference).map(|p| argmax(&p))
    }

    /// Forward pass that records its trace on `tape`; returns probabilities.
    pub fn record(
        &self,
        s: &Sentence,
        vocab: &EmbeddingTable,
        pass: Pass<'_>,
        tape: &mut GradTape<ForwardTrace>,
    ) -> Result<Vec<f64>> {
        let trace = self.trace(&s.tokens, vocab, pass)?;
        let probs = trace.probs.clone();
        tape.record(trace);
        Ok(probs)
    }

    /// Adds d(cross-entropy)/d(param) for the recorded pass into `grads` and
    /// returns the loss. Consumes the tape's trace.
    pub fn backward(&self, tape: &mut GradTape<ForwardTrace>, gold: usize, grads: &mut ModelParams) -> Result<f64> {
        let tr = tape.take()?;
        let loss = cross_entropy(&tr.probs, gold)?;
        let p = &self.params;

        let mut dlogits = tr.probs.clone();
        if tr.probs[gold] > PROB_FLOOR {
            dlogits[gold] -= 1.0;
        } else {
            // clipped region: loss is constant
            dlogits.iter_mut().for_each(|d| *d = 0.0);
        }
        let mut dctx = vec![0.0; tr.ctx_in.len()];
        affine_backward(&p.cls_w, &tr.ctx_in, &dlogits, &mut grads.cls_w, grads.cls_b.data_mut(), Some(&mut dctx));
        if let Some(m) = &tr.ctx_mask {
            dctx.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }

        // attention
        let alpha = &tr.attention.weights;
        let dalpha: Vec<f64> = tr.hidden.iter().map(|h| dot(&dctx, h)).collect();
        let dscore = softmax_backward(alpha, &dalpha);
        let mut dhidden: Vec<Vec<f64>> = alpha.iter().map(|a| dctx.iter().map(|d| a * d).collect()).collect();
        for (t, h) in tr.hidden.iter().enumerate() {
            let s = tr.attention.scores[t];
            let dpre = [dscore[t] * (1.0 - s * s)];
            affine_backward(&p.attn.w, h, &dpre, &mut grads.attn.w, grads.attn.b.data_mut(), Some(&mut dhidden[t]));
        }

        let dinputs = bilstm_backward(&p.sent_fwd, &p.sent_bwd, &tr.sent, &dhidden, &mut grads.sent_fwd, &mut grads.sent_bwd);
        debug_assert_eq!(dinputs.len(), tr.inputs.len());

        for (tok, mut dfused) in tr.tokens.iter().zip(dinputs) {
            if let Some(m) = &tok.mask {
                dfused.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            let dchar = match self.arch.mode {
                FusionMode::WordOnly => continue,
                FusionMode::CharOnly => dfused,
                FusionMode::Gated => {
                    let g = tok.gate.as_ref().expect("gated trace keeps gate");
                    let v_c = &tok.chars.as_ref().expect("gated trace keeps chars").out;
                    let dpre: Vec<f64> = (0..g.len())
                        .map(|k| dfused[k] * (v_c[k] - tok.word[k]) * g[k] * (1.0 - g[k]))
                        .collect();
                    affine_backward(&p.gate.w, &tok.word, &dpre, &mut grads.gate.w, grads.gate.b.data_mut(), None);
                    dfused.iter().zip(g).map(|(d, g)| d * g).collect()
                }
            };
            self.char_backward(tok.chars.as_ref().expect("char path traced"), &dchar, grads);
        }
        Ok(loss)
    }

    fn char_backward(&self, ct: &CharTrace, dout: &[f64], grads: &mut ModelParams) {
        let p = &self.params;
        let h = self.arch.char_hidden;
        let n = ct.indices.len();
        let mut df = vec![vec![0.0; h]; n];
        let mut db = vec![vec![0.0; h]; n];
        df[n - 1].copy_from_slice(&dout[..h]);
        db[n - 1].copy_from_slice(&dout[h..]);
        let dx_f = lstm_backward(&p.char_fwd, &ct.cache.fwd, &df, &mut grads.char_fwd);
        let dx_b = lstm_backward(&p.char_bwd, &ct.cache.bwd, &db, &mut grads.char_bwd);
        for (k, &row) in ct.indices.iter().enumerate() {
            let target = grads.char_emb.row_mut(row);
            for ((t, a), b) in target.iter_mut().zip(&dx_f[k]).zip(&dx_b[n - 1 - k]) {
                *t += a + b;
            }
        }
    }

    /// Loss and a fresh gradient for one labelled sentence.
    pub fn loss_and_grad(&self, s: &Sentence, vocab: &EmbeddingTable, pass: Pass<'_>, gold: usize) -> Result<(f64, ModelParams)> {
        let mut tape = GradTape::new();
        self.record(s, vocab, pass, &mut tape)?;
        let mut grads = self.params.zeros_like();
        let loss = self.backward(&mut tape, gold, &mut grads)?;
        Ok((loss, grads))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
