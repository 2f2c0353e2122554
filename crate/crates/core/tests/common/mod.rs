#![allow(dead_code, clippy::needless_range_loop)]

use std::fs;
use std::path::{Path, PathBuf};

use codemix::corpus::{write_conll, Dataset, Split};
use codemix::diffmath::Matrix;
use codemix::embeddings::EmbeddingTable;
use codemix::model::{FusionMode, LstmParams, Model};
use codemix::synthetic::{separable_corpus, toy_embeddings};

// ---- scalar oracle -------------------------------------------------------
// Written from the equations with plain loops over `Matrix::get`, sharing
// nothing with the model code beyond the parameter containers.

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate_pre(w: &Matrix, b: &Matrix, h: &[f64], x: &[f64], j: usize) -> f64 {
    let mut z = b.get(j, 0);
    for k in 0..h.len() {
        z += w.get(j, k) * h[k];
    }
    for k in 0..x.len() {
        z += w.get(j, h.len() + k) * x[k];
    }
    z
}

fn cell(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let f = sig(gate_pre(&p.w_f, &p.b_f, h, x, j));
        let i = sig(gate_pre(&p.w_i, &p.b_i, h, x, j));
        let o = sig(gate_pre(&p.w_o, &p.b_o, h, x, j));
        let g = gate_pre(&p.w_c, &p.b_c, h, x, j).tanh();
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

fn unroll(p: &LstmParams, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.w_f.rows();
    let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
    let mut out = Vec::new();
    for x in seq {
        let (h2, c2) = cell(p, x, &h, &c);
        h = h2;
        c = c2;
        out.push(h.clone());
    }
    out
}

fn both_ways(fwd: &LstmParams, bwd: &LstmParams, seq: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let f = unroll(fwd, seq);
    let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
    let mut b = unroll(bwd, &rev);
    b.reverse();
    (f, b)
}

/// Class probabilities computed step by step.
pub fn oracle_forward(model: &Model, tokens: &[&str], vocab: &EmbeddingTable) -> Vec<f64> {
    let p = &model.params;
    let wd = model.arch.word_dim;
    let mut inputs = Vec::new();
    for tok in tokens {
        let rows: Vec<Vec<f64>> = tok
            .chars()
            .map(|ch| {
                let r = model.chars.index(ch);
                (0..p.char_emb.cols()).map(|d| p.char_emb.get(r, d)).collect()
            })
            .collect();
        let (f, b) = both_ways(&p.char_fwd, &p.char_bwd, &rows);
        // final forward state and the backward state after the first char
        let mut v_c = f[f.len() - 1].clone();
        v_c.extend_from_slice(&b[0]);
        let v_w: Vec<f64> = vocab.get(tok).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; wd]);
        let fused: Vec<f64> = match model.arch.mode {
            FusionMode::WordOnly => v_w,
            FusionMode::CharOnly => v_c,
            FusionMode::Gated => (0..wd)
                .map(|j| {
                    let mut z = p.gate.b.get(j, 0);
                    for k in 0..wd {
                        z += p.gate.w.get(j, k) * v_w[k];
                    }
                    let g = sig(z);
                    g * v_c[j] + (1.0 - g) * v_w[j]
                })
                .collect(),
        };
        inputs.push(fused);
    }
    let (f, b) = both_ways(&p.sent_fwd, &p.sent_bwd, &inputs);
    let hidden: Vec<Vec<f64>> = f.iter().zip(&b).map(|(x, y)| [x.as_slice(), y.as_slice()].concat()).collect();
    let scores: Vec<f64> = hidden
        .iter()
        .map(|h| {
            let mut s = p.attn.b.get(0, 0);
            for k in 0..h.len() {
                s += p.attn.w.get(0, k) * h[k];
            }
            s.tanh()
        })
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    let width = hidden[0].len();
    let mut ctx = vec![0.0; width];
    for (e, h) in exps.iter().zip(&hidden) {
        for k in 0..width {
            ctx[k] += e / z * h[k];
        }
    }
    let logits: Vec<f64> = (0..3)
        .map(|c| {
            let mut l = p.cls_b.get(c, 0);
            for k in 0..width {
                l += p.cls_w.get(c, k) * ctx[k];
            }
            l
        })
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

// ---- preprocessing fixtures ---------------------------------------------

/// (name, raw tweet, expected normalized tokens joined by one space)
pub const GOLDEN: [(&str, &str, &str); 25] = [
    ("url", "check this http://t.co/abc out", "check this out"),
    ("url_www", "see WWW.example.com now", "see now"),
    ("mention", "@Bob_99 hello", "user hello"),
    ("hashtag", "#Bollywood rocks", "hashtag rocks"),
    ("lowercase", "THIS Is GREAT", "this is great"),
    ("mark_collapse", "what???", "what ?"),
    ("slang", "lol ur gr8", "laughing out loud your great"),
    ("emoji", "😭", "loudly crying face"),
    ("combined", "@Bob http://x.co GREAT!!!", "user great !"),
    ("contraction", "I can't believe it", "i can not believe it"),
    ("curly_apostrophe", "don\u{2019}t go", "do not go"),
    ("emoji_attached", "sad😭😭", "sad loudly crying face loudly crying face"),
    ("emoticon", ":) nice", "smiling face nice"),
    ("emoticon_inside_word", "a:)b", "a:)b"),
    ("spanglish_slang", "jajaja q bueno", "laughing que bueno"),
    ("hinglish", "Yaar bahut accha hai!!", "friend bahut accha hai !"),
    ("leading_marks", "...really", ". really"),
    ("mention_marks", "@anna_m!!", "user !"),
    ("hashtag_emoji", "#LoveIt❤️", "hashtag red heart"),
    ("whitespace", "  hola   amigo \t ", "hola amigo"),
    ("empty", "", ""),
    ("only_url", "https://x.y", ""),
    ("flags_and_fire", "🇮🇳 jeet gaye 🔥🔥", "flag india jeet gaye fire fire"),
    ("contraction_then_slang", "I'm gonna luv it", "i am going to love it"),
    ("contraction_marks", "Wasn't it?!", "was not it ?"),
];

// ---- toy files on disk ---------------------------------------------------

pub struct ToyFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub vectors: PathBuf,
}

fn glove_text(t: &EmbeddingTable) -> String {
    let mut out = String::new();
    for w in t.words() {
        out.push_str(w);
        for v in t.get(w).unwrap() {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Separable train/dev CoNLL files and 8-d GloVe-style vectors.
pub fn write_toy_files(dir: &Path, n_train: usize) -> ToyFiles {
    let train = separable_corpus(n_train, 11);
    let dev = Dataset {
        sentences: separable_corpus(n_train + 9, 12).sentences.split_off(n_train),
        split: Split::Dev,
    };
    let files = ToyFiles {
        train: dir.join("toy_train.conll"),
        dev: dir.join("toy_dev.conll"),
        vectors: dir.join("toy_vectors.txt"),
    };
    fs::write(&files.train, write_conll(&train)).unwrap();
    fs::write(&files.dev, write_conll(&dev)).unwrap();
    fs::write(&files.vectors, glove_text(&toy_embeddings(8, 3))).unwrap();
    files
}

/// Layer sizes matching the 8-d toy vectors.
pub fn toy_dims() -> Vec<String> {
    ["char_dim=6", "char_hidden=4", "word_dim=8", "sent_hidden=5"]
        .iter()
        .flat_map(|kv| ["--set".to_string(), kv.to_string()])
        .collect()
}

pub fn args(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}
