//! Small generated corpora for tests, benchmarks and the demo page.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Sentence, Sentiment, Split};
use crate::embeddings::EmbeddingTable;

pub const POSITIVE: [&str; 6] = ["good", "great", "love", "bueno", "feliz", "khush"];
pub const NEGATIVE: [&str; 6] = ["bad", "hate", "sad", "malo", "triste", "bura"];
pub const NEUTRAL: [&str; 6] = ["okay", "normal", "maybe", "quizas", "shayad", "theek"];
pub const FILLER: [&str; 8] = ["the", "phone", "today", "es", "casa", "hai", "yaar", "with"];

/// Words deliberately left out of [`toy_embeddings`] so the character path
/// has to carry them.
pub const OOV: [&str; 3] = ["khush", "bura", "theek"];

/// Random vectors in U[-1, 1] for every lexicon word except [`OOV`].
pub fn toy_embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = POSITIVE
        .iter()
        .chain(&NEGATIVE)
        .chain(&NEUTRAL)
        .chain(&FILLER)
        .filter(|w| !OOV.contains(w));
    let pairs: Vec<(&str, Vec<f64>)> = words
        .map(|w| (*w, (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
        .collect();
    EmbeddingTable::from_pairs(dim, pairs).expect("fixed dimension")
}

// u64 draws keep the corpus identical on 32-bit targets
fn pick<'a>(words: &[&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    words[rng.gen_range(0..words.len() as u64) as usize]
}

/// `n` sentences cycling through the three classes. Each holds one marker
/// word from its class lexicon among one to three filler words, so the
/// label is a function of the marker alone. Markers also cycle, so every
/// lexicon word appears once `n >= 18`.
pub fn separable_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n)
        .map(|i| {
            let label = Sentiment::ALL[i % 3];
            let lexicon = match label {
                Sentiment::Negative => &NEGATIVE,
                Sentiment::Neutral => &NEUTRAL,
                Sentiment::Positive => &POSITIVE,
            };
            let fillers = rng.gen_range(1..=3u64);
            let mut tokens: Vec<String> = (0..fillers).map(|_| pick(&FILLER, &mut rng).to_string()).collect();
            let at = rng.gen_range(0..=tokens.len() as u64) as usize;
            tokens.insert(at, lexicon[(i / 3) % lexicon.len()].to_string());
            Sentence::new(format!("s{i}"), tokens, Some(label))
        })
        .collect();
    Dataset {
        sentences,
        split: Split::Train,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_balanced_and_deterministic() {
        let d = separable_corpus(21, 4);
        assert_eq!(d, separable_corpus(21, 4));
        let st = crate::corpus::stats(&d);
        assert_eq!(st.per_label, [7, 7, 7]);
        assert!(d.sentences.iter().all(|s| (2..=4).contains(&s.tokens.len())));
    }

    #[test]
    fn embeddings_skip_oov_words() {
        let t = toy_embeddings(8, 1);
        assert_eq!(t.dim(), 8);
        assert!(OOV.iter().all(|w| !t.contains(w)));
        assert!(t.contains("good"));
    }
}
