//! Glue between the modules: dataset preparation, vocabulary loading and
//! the small gradient-check harness.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::{Dataset, Sentence};
use crate::diffmath::{gradient_check, GradCheckReport, Matrix, Parameters};
use crate::embeddings::{init_char_table, load_shared, EmbeddingTable, SharedVocab};
use crate::error::Result;
use crate::model::{Architecture, FusionMode, Model, Pass};
use crate::preprocess::{load_rules_or_starter, normalize, NormRules};
use crate::training::cross_entropy;

/// Stands in for a sentence that normalises to nothing (all URLs, say).
pub const EMPTY_PLACEHOLDER: &str = "<empty>";

pub fn rules_for(cfg: &TrainConfig) -> Result<NormRules> {
    load_rules_or_starter(cfg.slang.as_deref(), cfg.emoji.as_deref(), cfg.contractions.as_deref())
}

pub fn normalize_sentence(s: &Sentence, rules: &NormRules) -> Sentence {
    let tokens = normalize(&s.tokens.join(" "), rules);
    let lang_tags = s.lang_tags.clone().filter(|t| t.len() == tokens.len());
    Sentence {
        id: s.id.clone(),
        tokens,
        lang_tags,
        label: s.label,
    }
}

/// Applies the normaliser when the config asks for it and fills empty
/// sentences with [`EMPTY_PLACEHOLDER`].
pub fn prepare(d: &Dataset, cfg: &TrainConfig, rules: &NormRules) -> Dataset {
    let sentences = d
        .sentences
        .iter()
        .map(|s| {
            let mut s = if cfg.normalize {
                normalize_sentence(s, rules)
            } else {
                s.clone()
            };
            s.tokens.retain(|t| !t.is_empty());
            if s.tokens.is_empty() {
                s.tokens.push(EMPTY_PLACEHOLDER.to_string());
                s.lang_tags = None;
            }
            s
        })
        .collect();
    Dataset {
        sentences,
        split: d.split,
    }
}

pub fn word_set<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> HashSet<String> {
    datasets
        .into_iter()
        .flat_map(|d| d.sentences.iter())
        .flat_map(|s| s.tokens.iter().cloned())
        .collect()
}

/// Word vectors for the configured sources, restricted to words that occur
/// in `datasets`.
pub fn load_vocab(cfg: &TrainConfig, datasets: &[&Dataset]) -> Result<SharedVocab> {
    let keep = word_set(datasets.iter().copied());
    let shared = load_shared(&cfg.embeddings, cfg.word_dim, Some(&keep))?;
    if shared.collisions > 0 {
        log::info!("{} words shared between embedding files; first file wins", shared.collisions);
    }
    Ok(shared)
}

/// A freshly initialised model whose character table covers `train`.
pub fn fresh_model(cfg: &TrainConfig, train: &Dataset) -> Result<Model> {
    let chars = init_char_table(&train.sentences, cfg.char_dim, cfg.char_init_radius, cfg.seed);
    Model::new(cfg.architecture(), chars, cfg.seed)
}

#[derive(Clone, Debug)]
pub struct GradCheckRun {
    pub report: GradCheckReport,
    pub loss: f64,
}

/// Central-difference check of every parameter of a small model on a
/// two-token sentence with one in-vocabulary and one OOV word.
pub fn gradcheck_tiny(seed: u64, eps: f64, mode: FusionMode) -> Result<GradCheckRun> {
    let arch = Architecture {
        char_dim: 3,
        char_hidden: 2,
        word_dim: 4,
        sent_hidden: 3,
        mode,
    };
    let s = Sentence::new("g", vec!["hola".into(), "ok".into()], None);
    let chars = init_char_table([&s], arch.char_dim, 0.5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let vector: Vec<f64> = (0..arch.word_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vocab = EmbeddingTable::from_pairs(arch.word_dim, [("hola", vector)])?;
    let mut model = Model::new(arch, chars, seed)?;
    for (_, t) in model.params.tensors_mut() {
        if t.cols() == 1 {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let gold = (seed % 3) as usize;
    let (loss, grads) = model.loss_and_grad(&s, &vocab, Pass::Inference, gold)?;
    let analytic: Vec<Matrix> = grads.tensors().into_iter().map(|(_, m)| m.clone()).collect();
    let chars = model.chars.clone();
    let report = gradient_check(&mut model.params, &analytic, eps, |p| {
        let m = Model {
            arch,
            chars: chars.clone(),
            params: p.clone(),
        };
        cross_entropy(&m.forward(&s, &vocab, Pass::Inference)?, gold)
    })?;
    Ok(GradCheckRun { report, loss })
}
