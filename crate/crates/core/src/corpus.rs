//! Code-mixed dataset files.
//!
//! Two layouts are read:
//!
//! * CoNLL-style blocks, as in the released SentiMix data:
//!   ```text
//!   meta 7 positive
//!   have<TAB>lang1
//!   fun<TAB>lang1
//!
//!   ```
//!   The label on the `meta` line is absent for the test split.
//! * Flat TSV rows `id<TAB>text[<TAB>label]`, with no language tags.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; NUM_CLASSES] =
        [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Sentiment::ALL.get(i).copied().ok_or(Error::ClassIndex(i))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            "positive" => Ok(Sentiment::Positive),
            other => Err(Error::Label(other.to_string())),
        }
    }
}

/// negative → 0, neutral → 1, positive → 2.
pub fn encode_label(s: &str) -> Result<usize> {
    s.parse::<Sentiment>().map(Sentiment::index)
}

pub fn decode_label(i: usize) -> Result<&'static str> {
    Sentiment::from_index(i).map(Sentiment::as_str)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    /// One tag per token when the source file carries them.
    pub lang_tags: Option<Vec<String>>,
    pub label: Option<Sentiment>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: Option<Sentiment>) -> Self {
        Sentence {
            id: id.into(),
            tokens,
            lang_tags: None,
            label,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// Guesses the split from a file name (`..train..`, `..dev..`/`..valid..`
    /// /`..trial..`, otherwise test).
    pub fn infer(path: &Path) -> Split {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if name.contains("train") {
            Split::Train
        } else if name.contains("dev") || name.contains("valid") || name.contains("trial") {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub split: Split,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate sentence id {:?} in {} split",
                    s.id,
                    split.as_str()
                )));
            }
        }
        Ok(Dataset { sentences, split })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub total: usize,
    /// Indexed by class: negative, neutral, positive.
    pub per_label: [usize; NUM_CLASSES],
    pub unlabeled: usize,
}

pub fn stats(d: &Dataset) -> SplitStats {
    let mut st = SplitStats {
        total: d.len(),
        ..Default::default()
    };
    for s in &d.sentences {
        match s.label {
            Some(l) => st.per_label[l.index()] += 1,
            None => st.unlabeled += 1,
        }
    }
    st
}

/// Fixed-order table: one row per dataset name, columns total and labels.
pub fn format_stats_table(rows: &[(String, SplitStats)]) -> String {
    let mut out = format!(
        "{:<24} {:>8} {:>9} {:>8} {:>9} {:>10}\n",
        "dataset", "total", "negative", "neutral", "positive", "unlabeled"
    );
    for (name, st) in rows {
        out.push_str(&format!(
            "{:<24} {:>8} {:>9} {:>8} {:>9} {:>10}\n",
            name, st.total, st.per_label[0], st.per_label[1], st.per_label[2], st.unlabeled
        ));
    }
    out
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_conll(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_conll_str(&read(path)?, path, Split::infer(path))
}

/// A `meta` line opens a block when no tokens have been read yet, or when it
/// carries a valid label (so blocks missing their blank separator still split).
/// Otherwise it is a token `meta` with its tag.
fn opens_block(line: &str, current: Option<&Sentence>) -> bool {
    if current.is_none_or(|s| s.tokens.is_empty()) {
        return true;
    }
    let fields: Vec<&str> = line.split(['\t', ' ']).filter(|f| !f.is_empty()).collect();
    fields.len() == 3 && fields[2].parse::<Sentiment>().is_ok()
}

pub fn parse_conll_str(text: &str, path: &Path, split: Split) -> Result<Dataset> {
    struct Open {
        sentence: Sentence,
        tags: Vec<String>,
        line: usize,
    }

    let mut sentences = Vec::new();
    let mut current: Option<Open> = None;
    let mut ids = HashSet::new();
    let mut finish = |open: Option<Open>, sentences: &mut Vec<Sentence>| -> Result<()> {
        if let Some(mut o) = open {
            if !ids.insert(o.sentence.id.clone()) {
                return Err(Error::parse(
                    path,
                    o.line,
                    format!("duplicate sentence id {:?}", o.sentence.id),
                ));
            }
            o.sentence.lang_tags = Some(o.tags);
            sentences.push(o.sentence);
        }
        Ok(())
    };

    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            finish(current.take(), &mut sentences)?;
            continue;
        }
        let mut fields = line.split(['\t', ' ']).filter(|f| !f.is_empty());
        let first = fields.next().unwrap_or_default();
        if first == "meta" && opens_block(line, current.as_ref().map(|o| &o.sentence)) {
            finish(current.take(), &mut sentences)?;
            let id = fields
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "meta line without id"))?;
            let label = match fields.next() {
                Some(l) => Some(
                    l.parse::<Sentiment>()
                        .map_err(|_| Error::parse(path, lineno, format!("unknown label {l:?}")))?,
                ),
                None => None,
            };
            if fields.next().is_some() {
                return Err(Error::parse(path, lineno, "trailing fields on meta line"));
            }
            current = Some(Open {
                sentence: Sentence::new(id, Vec::new(), label),
                tags: Vec::new(),
                line: lineno,
            });
            continue;
        }
        let open = current
            .as_mut()
            .ok_or_else(|| Error::parse(path, lineno, "token line before any meta line"))?;
        let (token, tag) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "token line without a language tag"))?;
        if token.is_empty() || tag.is_empty() {
            return Err(Error::parse(path, lineno, "empty token or language tag"));
        }
        open.sentence.tokens.push(token.to_string());
        open.tags.push(tag.to_string());
    }
    finish(current.take(), &mut sentences)?;
    Ok(Dataset { sentences, split })
}

pub fn parse_tsv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_tsv_str(&read(path)?, path, Split::infer(path))
}

/// Rows are `id<TAB>text<TAB>label`; a row with only two columns is an
/// unlabeled (test) sentence.
pub fn parse_tsv_str(text: &str, path: &Path, split: Split) -> Result<Dataset> {
    let mut sentences = Vec::new();
    let mut ids = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (id, text, label) = match cols.as_slice() {
            [id, text] => (*id, *text, None),
            [id, text, label] => (
                *id,
                *text,
                Some(
                    label
                        .parse::<Sentiment>()
                        .map_err(|_| Error::parse(path, lineno, format!("unknown label {label:?}")))?,
                ),
            ),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 2 or 3 tab-separated columns, found {}", cols.len()),
                ))
            }
        };
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty id"));
        }
        if !ids.insert(id.to_string()) {
            return Err(Error::parse(path, lineno, format!("duplicate sentence id {id:?}")));
        }
        let tokens = text.split_whitespace().map(str::to_string).collect();
        sentences.push(Sentence::new(id, tokens, label));
    }
    Ok(Dataset { sentences, split })
}

/// Picks the reader from the extension: `.tsv` is flat, anything else CoNLL.
pub fn parse_any(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => parse_tsv(path),
        _ => parse_conll(path),
    }
}

pub fn write_conll(d: &Dataset) -> String {
    let mut out = String::new();
    for s in &d.sentences {
        out.push_str("meta\t");
        out.push_str(&s.id);
        if let Some(l) = s.label {
            out.push('\t');
            out.push_str(l.as_str());
        }
        out.push('\n');
        for (i, t) in s.tokens.iter().enumerate() {
            let tag = s
                .lang_tags
                .as_ref()
                .and_then(|tags| tags.get(i))
                .map_or("other", String::as_str);
            out.push_str(t);
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn write_tsv(d: &Dataset) -> String {
    let mut out = String::new();
    for s in &d.sentences {
        out.push_str(&s.id);
        out.push('\t');
        out.push_str(&s.tokens.join(" "));
        if let Some(l) = s.label {
            out.push('\t');
            out.push_str(l.as_str());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.conll")
    }

    #[test]
    fn table_two_block() {
        let d = parse_conll_str("meta 7 positive\nhave\tlang1\nfun\tlang1\n", p(), Split::Train).unwrap();
        assert_eq!(d.len(), 1);
        let s = &d.sentences[0];
        assert_eq!(s.id, "7");
        assert_eq!(s.tokens, vec!["have", "fun"]);
        assert_eq!(s.lang_tags.as_deref().unwrap(), ["lang1", "lang1"]);
        assert_eq!(s.label, Some(Sentiment::Positive));
    }

    #[test]
    fn empty_and_unlabeled() {
        assert!(parse_conll_str("", p(), Split::Test).unwrap().is_empty());
        let d = parse_conll_str("meta\t9\nhola\tlang2\n\n", p(), Split::Test).unwrap();
        assert_eq!(d.sentences[0].label, None);
    }

    #[test]
    fn conll_errors_carry_line_numbers() {
        match parse_conll_str("\nhave\tlang1\n", p(), Split::Train).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        match parse_conll_str("meta 1 happy\n", p(), Split::Train).unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 1);
                assert!(msg.contains("happy"));
            }
            e => panic!("{e}"),
        }
        assert!(parse_conll_str("meta 1 neutral\nx\ty\n\nmeta 1 neutral\nz\tq\n", p(), Split::Train).is_err());
    }

    #[test]
    fn tsv_rows() {
        let d = parse_tsv_str("3\tque bonito day\tpositive\n", p(), Split::Dev).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.sentences[0].tokens.len(), 3);
        assert!(parse_tsv_str("3\n", p(), Split::Dev).is_err());
        let unlabeled = parse_tsv_str("4\thi there\n", p(), Split::Test).unwrap();
        assert_eq!(unlabeled.sentences[0].label, None);
    }

    #[test]
    fn label_encoding() {
        assert_eq!(encode_label("negative").unwrap(), 0);
        assert_eq!(encode_label("neutral").unwrap(), 1);
        assert_eq!(encode_label("positive").unwrap(), 2);
        assert!(encode_label("Positive").is_err());
        for s in ["negative", "neutral", "positive"] {
            assert_eq!(decode_label(encode_label(s).unwrap()).unwrap(), s);
        }
    }

    #[test]
    fn stats_counts() {
        let d = parse_conll_str(
            "meta 1 negative\na\tx\n\nmeta 2 positive\nb\tx\n\nmeta 3\nc\tx\n",
            p(),
            Split::Train,
        )
        .unwrap();
        let st = stats(&d);
        assert_eq!(st.total, 3);
        assert_eq!(st.per_label, [1, 0, 1]);
        assert_eq!(st.unlabeled, 1);
        let empty = Dataset::new(vec![], Split::Dev).unwrap();
        assert_eq!(stats(&empty), SplitStats::default());
    }

    #[test]
    fn split_inference() {
        assert_eq!(Split::infer(Path::new("data/spanglish_train.conll")), Split::Train);
        assert_eq!(Split::infer(Path::new("Hinglish_dev_3k.txt")), Split::Dev);
        assert_eq!(Split::infer(Path::new("test_labeled.txt")), Split::Test);
    }

    fn sentence_strategy() -> impl Strategy<Value = Sentence> {
        let token = "[a-zA-Z0-9ñáéü@#😭!?.'-]{1,8}";
        (
            "[0-9]{1,6}",
            proptest::collection::vec((token, "(lang1|lang2|other|Hin|Eng)"), 1..6),
            proptest::option::of(0usize..3),
        )
            .prop_map(|(id, toks, label)| {
                let (tokens, tags): (Vec<String>, Vec<String>) = toks.into_iter().unzip();
                Sentence {
                    id,
                    tokens,
                    lang_tags: Some(tags),
                    label: label.map(|l| Sentiment::from_index(l).unwrap()),
                }
            })
    }

    fn dedup(mut v: Vec<Sentence>) -> Vec<Sentence> {
        let mut seen = HashSet::new();
        v.retain(|s| seen.insert(s.id.clone()));
        v
    }

    proptest! {
        #[test]
        fn conll_round_trip(sents in proptest::collection::vec(sentence_strategy(), 0..8)) {
            let d = Dataset { sentences: dedup(sents), split: Split::Train };
            let back = parse_conll_str(&write_conll(&d), p(), Split::Train).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn tsv_round_trip(sents in proptest::collection::vec(sentence_strategy(), 0..8)) {
            let sents: Vec<Sentence> = dedup(sents)
                .into_iter()
                .map(|mut s| { s.lang_tags = None; s })
                .collect();
            let d = Dataset { sentences: sents, split: Split::Dev };
            let back = parse_tsv_str(&write_tsv(&d), p(), Split::Dev).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
