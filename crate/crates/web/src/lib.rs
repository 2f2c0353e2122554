//! Browser bindings for the demo page. Each exported function returns a
//! JSON string; the plain-Rust functions underneath are what the tests use.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use codemix::config::TrainConfig;
use codemix::corpus::Sentiment;
use codemix::diffmath::{sigmoid, Matrix};
use codemix::embeddings::EmbeddingTable;
use codemix::model::{gate_forward, GateParams, Model};
use codemix::pipeline::{fresh_model, EMPTY_PLACEHOLDER};
use codemix::preprocess::{normalize, NormRules};
use codemix::synthetic::{separable_corpus, toy_embeddings};
use codemix::training::{train, History};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 8;

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

pub fn normalize_tokens(raw: &str) -> Vec<String> {
    normalize(raw, &NormRules::starter())
}

/// Normalized tokens of a raw tweet, as a JSON array.
#[wasm_bindgen]
pub fn normalize_tweet(raw: &str) -> String {
    to_json(&normalize_tokens(raw))
}

#[derive(Debug, Serialize)]
pub struct GateView {
    pub word: Vec<f64>,
    pub chars: Vec<f64>,
    pub gate: Vec<f64>,
    pub mixed: Vec<f64>,
}

/// One gate on random word/char vectors: weights drawn from
/// U[-weight_scale, weight_scale], every bias set to `bias`.
pub fn explore_gate(bias: f64, weight_scale: f64, seed: u64) -> GateView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let chars: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let w = if weight_scale > 0.0 {
        Matrix::uniform(DIM, DIM, weight_scale, &mut rng)
    } else {
        Matrix::zeros(DIM, DIM)
    };
    let params = GateParams {
        w,
        b: Matrix::filled(DIM, 1, bias),
    };
    let (gate, mixed) = gate_forward(&word, &chars, &params).expect("fixed shapes");
    GateView {
        word,
        chars,
        gate,
        mixed,
    }
}

#[wasm_bindgen]
pub fn gate_explorer(bias: f64, weight_scale: f64, seed: u32) -> String {
    to_json(&explore_gate(bias, weight_scale, seed as u64))
}

/// σ(bias) for the page's slider readout.
#[wasm_bindgen]
pub fn gate_at_bias(bias: f64) -> f64 {
    sigmoid(bias)
}

#[derive(Debug, Serialize)]
pub struct TokenView {
    pub token: String,
    pub attention: f64,
    pub gate_mean: Option<f64>,
    pub oov: bool,
}

#[derive(Debug, Serialize)]
pub struct Classification {
    pub label: &'static str,
    pub probs: [f64; 3],
    pub tokens: Vec<TokenView>,
}

/// A small gated model trained on the synthetic lexicon corpus.
#[wasm_bindgen]
pub struct DemoClassifier {
    model: Model,
    vocab: EmbeddingTable,
    history: History,
}

impl DemoClassifier {
    pub fn train_new(seed: u64, epochs: usize) -> codemix::Result<Self> {
        let data = separable_corpus(90, seed);
        let dev = separable_corpus(30, seed.wrapping_add(1));
        let vocab = toy_embeddings(DIM, seed);
        let cfg = TrainConfig {
            epochs,
            batch_size: 6,
            lr: 0.01,
            patience: epochs.max(1),
            seed,
            char_dim: 8,
            char_hidden: DIM / 2,
            word_dim: DIM,
            sent_hidden: 8,
            ..TrainConfig::default()
        };
        let model = fresh_model(&cfg, &data)?;
        let out = train(&data, &dev, &cfg, &vocab, model)?;
        Ok(DemoClassifier {
            model: out.model,
            vocab,
            history: out.history,
        })
    }

    pub fn classify_text(&self, raw: &str) -> codemix::Result<Classification> {
        let mut tokens = normalize_tokens(raw);
        if tokens.is_empty() {
            tokens.push(EMPTY_PLACEHOLDER.to_string());
        }
        let trace = self.model.inspect(&tokens, &self.vocab)?;
        let p = trace.probs();
        let best = codemix::model::argmax(p);
        let gates = trace.gate_means();
        let views = tokens
            .iter()
            .zip(trace.attention_weights())
            .zip(trace.oov_flags())
            .enumerate()
            .map(|(i, ((t, &a), oov))| TokenView {
                token: t.clone(),
                attention: a,
                gate_mean: gates.as_ref().map(|g| g[i]),
                oov,
            })
            .collect();
        Ok(Classification {
            label: Sentiment::from_index(best)?.as_str(),
            probs: [p[0], p[1], p[2]],
            tokens: views,
        })
    }

    pub fn history(&self) -> &History {
        &self.history
    }
}

#[wasm_bindgen]
impl DemoClassifier {
    /// Trains on construction; a few hundred milliseconds natively.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, epochs: u32) -> Result<DemoClassifier, JsError> {
        Self::train_new(seed as u64, epochs as usize).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn classify(&self, raw: &str) -> Result<String, JsError> {
        self.classify_text(raw)
            .map(|c| to_json(&c))
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// Training history as CSV.
    pub fn history_csv(&self) -> String {
        self.history.to_csv()
    }

    /// Words the classifier was trained on, split into (known, char-only).
    pub fn lexicon(&self) -> String {
        let oov: Vec<&str> = codemix::synthetic::OOV.to_vec();
        to_json(&(self.vocab.words(), oov))
    }
}
