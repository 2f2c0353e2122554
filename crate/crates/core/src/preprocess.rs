//! Tweet normalisation.
//!
//! `normalize` runs a fixed sequence of rewrites over a raw post and returns
//! whitespace-split tokens:
//!
//! 1. drop URL tokens (`http://`, `https://`, `www.` prefixes)
//! 2. `@mention` becomes `user`, `#tag` becomes `hashtag`
//! 3. lowercase
//! 4. collapse runs of `.` `?` `!` to one mark (split off as its own token
//!    when it sits at a token edge) and expand contractions
//! 5. slang dictionary
//! 6. emoji/emoticon dictionary; each word of the meaning becomes a token
//!
//! Dictionaries are two-column UTF-8 TSV files with `#` comment lines.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

const STARTER_SLANG: &str = include_str!("../data/slang.tsv");
const STARTER_EMOJI: &str = include_str!("../data/emoji.tsv");
const STARTER_CONTRACTIONS: &str = include_str!("../data/contractions.tsv");

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

fn is_mark(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^@\w+").unwrap())
}

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#\w+").unwrap())
}

/// Longest-match table for emoji. Non-ASCII keys match anywhere inside a
/// token; ASCII emoticons such as `:)` only match a whole token.
#[derive(Clone, Debug, Default)]
struct EmojiMap {
    by_first: HashMap<char, Vec<(String, Vec<String>)>>,
    emoticons: HashMap<String, Vec<String>>,
}

impl EmojiMap {
    fn insert(&mut self, key: String, phrase: Vec<String>) {
        if key.is_ascii() {
            self.emoticons.insert(key, phrase);
            return;
        }
        let first = key.chars().next().expect("dictionary keys are nonempty");
        let bucket = self.by_first.entry(first).or_default();
        bucket.retain(|(k, _)| *k != key);
        bucket.push((key, phrase));
        // longest key first, ties broken lexically for determinism
        bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    }

    fn len(&self) -> usize {
        self.emoticons.len() + self.by_first.values().map(Vec::len).sum::<usize>()
    }

    fn expand(&self, token: &str, out: &mut Vec<String>) {
        if let Some(phrase) = self.emoticons.get(token) {
            out.extend(phrase.iter().cloned());
            return;
        }
        let mut pending = String::new();
        let mut rest = token;
        'scan: while let Some(c) = rest.chars().next() {
            if let Some(candidates) = self.by_first.get(&c) {
                for (key, phrase) in candidates {
                    if rest.starts_with(key.as_str()) {
                        if !pending.is_empty() {
                            out.push(std::mem::take(&mut pending));
                        }
                        out.extend(phrase.iter().cloned());
                        rest = &rest[key.len()..];
                        continue 'scan;
                    }
                }
            }
            pending.push(c);
            rest = &rest[c.len_utf8()..];
        }
        if !pending.is_empty() {
            out.push(pending);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NormRules {
    slang: HashMap<String, Vec<String>>,
    emoji: EmojiMap,
    contractions: HashMap<String, Vec<String>>,
    warnings: Vec<String>,
}

impl NormRules {
    /// Rules with empty dictionaries: only the structural rewrites apply.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The small dictionaries bundled with the crate.
    pub fn starter() -> Self {
        let mut rules = NormRules::default();
        let origin = Path::new("<starter>");
        for (k, v) in parse_dictionary(STARTER_SLANG, &origin.join("slang.tsv"), &mut rules.warnings)
            .expect("bundled slang dictionary parses")
        {
            rules.slang.insert(k, v);
        }
        for (k, v) in parse_dictionary(STARTER_EMOJI, &origin.join("emoji.tsv"), &mut rules.warnings)
            .expect("bundled emoji dictionary parses")
        {
            rules.emoji.insert(k, v);
        }
        for (k, v) in parse_dictionary(
            STARTER_CONTRACTIONS,
            &origin.join("contractions.tsv"),
            &mut rules.warnings,
        )
        .expect("bundled contraction dictionary parses")
        {
            rules.contractions.insert(k, v);
        }
        rules
    }

    pub fn slang(&self, token: &str) -> Option<&[String]> {
        self.slang.get(token).map(Vec::as_slice)
    }

    pub fn contraction(&self, token: &str) -> Option<&[String]> {
        self.contractions.get(token).map(Vec::as_slice)
    }

    pub fn insert_slang(&mut self, key: &str, replacement: &str) {
        self.slang.insert(key.to_lowercase(), split_lower(replacement));
    }

    pub fn insert_contraction(&mut self, key: &str, expansion: &str) {
        self.contractions.insert(key.to_lowercase(), split_lower(expansion));
    }

    pub fn insert_emoji(&mut self, key: &str, phrase: &str) {
        self.emoji.insert(key.to_lowercase(), split_lower(phrase));
    }

    /// (slang, emoji, contraction) entry counts.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.slang.len(), self.emoji.len(), self.contractions.len())
    }

    /// Duplicate-key warnings collected while loading.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

fn split_lower(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses `key<TAB>value` lines. Later duplicates replace earlier ones and
/// leave a warning.
fn parse_dictionary(
    text: &str,
    path: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<(String, Vec<String>)>> {
    let mut entries: Vec<(String, Vec<String>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected two tab-separated columns"))?;
        let key = key.trim().to_lowercase();
        let value = split_lower(value);
        if key.is_empty() || value.is_empty() {
            return Err(Error::parse(path, lineno, "empty key or replacement"));
        }
        if let Some(&i) = index.get(&key) {
            let msg = format!("{}:{lineno}: duplicate key {key:?}, later entry wins", path.display());
            log::warn!("{msg}");
            warnings.push(msg);
            entries[i].1 = value;
        } else {
            index.insert(key.clone(), entries.len());
            entries.push((key, value));
        }
    }
    Ok(entries)
}

fn read_dictionary(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text, path, warnings)
}

pub fn load_rules(
    slang_path: impl AsRef<Path>,
    emoji_path: impl AsRef<Path>,
    contraction_path: impl AsRef<Path>,
) -> Result<NormRules> {
    let mut rules = NormRules::default();
    for (k, v) in read_dictionary(slang_path.as_ref(), &mut rules.warnings)? {
        rules.slang.insert(k, v);
    }
    for (k, v) in read_dictionary(emoji_path.as_ref(), &mut rules.warnings)? {
        rules.emoji.insert(k, v);
    }
    for (k, v) in read_dictionary(contraction_path.as_ref(), &mut rules.warnings)? {
        rules.contractions.insert(k, v);
    }
    Ok(rules)
}

/// Starter dictionaries, each replaced by its file when a path is given.
pub fn load_rules_or_starter(
    slang_path: Option<&Path>,
    emoji_path: Option<&Path>,
    contraction_path: Option<&Path>,
) -> Result<NormRules> {
    let mut rules = NormRules::starter();
    if let Some(p) = slang_path {
        rules.slang = read_dictionary(p, &mut rules.warnings)?.into_iter().collect();
    }
    if let Some(p) = emoji_path {
        rules.emoji = EmojiMap::default();
        for (k, v) in read_dictionary(p, &mut rules.warnings)? {
            rules.emoji.insert(k, v);
        }
    }
    if let Some(p) = contraction_path {
        rules.contractions = read_dictionary(p, &mut rules.warnings)?.into_iter().collect();
    }
    Ok(rules)
}

fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    URL_PREFIXES.iter().any(|p| lower.starts_with(p))
}

fn replace_handles(token: &str) -> String {
    if let Some(m) = mention_re().find(token) {
        format!("user{}", &token[m.end()..])
    } else if let Some(m) = hashtag_re().find(token) {
        format!("hashtag{}", &token[m.end()..])
    } else {
        token.to_string()
    }
}

/// Collapses every run of marks to its first mark.
fn collapse_marks(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_run = false;
    for c in s.chars() {
        if is_mark(c) {
            if !in_run {
                out.push(c);
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    out
}

/// Splits a lowercased token into (leading mark, core, trailing mark), with
/// interior runs collapsed in place.
fn detach_marks(token: &str, out: &mut Vec<String>) {
    let collapsed = collapse_marks(token);
    let core_start = collapsed.find(|c: char| !is_mark(c));
    let Some(start) = core_start else {
        // token is a single collapsed mark
        out.push(collapsed);
        return;
    };
    let end = collapsed
        .rfind(|c: char| !is_mark(c))
        .map(|i| i + collapsed[i..].chars().next().unwrap().len_utf8())
        .unwrap();
    if start > 0 {
        out.push(collapsed[..start].to_string());
    }
    out.push(collapsed[start..end].to_string());
    if end < collapsed.len() {
        out.push(collapsed[end..].to_string());
    }
}

pub fn normalize(raw_text: &str, rules: &NormRules) -> Vec<String> {
    let mut tokens: Vec<String> = raw_text
        .split_whitespace()
        .filter(|t| !is_url(t))
        .map(replace_handles)
        .map(|t| t.to_lowercase())
        .collect();

    let mut marked = Vec::with_capacity(tokens.len());
    for t in &tokens {
        detach_marks(&t.replace('\u{2019}', "'"), &mut marked);
    }
    tokens = Vec::with_capacity(marked.len());
    for t in marked {
        match rules.contractions.get(&t) {
            Some(exp) => tokens.extend(exp.iter().cloned()),
            None => tokens.push(t),
        }
    }

    let mut unslanged = Vec::with_capacity(tokens.len());
    for t in tokens {
        match rules.slang.get(&t) {
            Some(rep) => unslanged.extend(rep.iter().cloned()),
            None => unslanged.push(t),
        }
    }

    let mut out = Vec::with_capacity(unslanged.len());
    for t in &unslanged {
        rules.emoji.expand(t, &mut out);
    }
    out
}

/// Unicode scalar values of a token, in order.
pub fn split_chars(token: &str) -> Result<Vec<char>> {
    if token.is_empty() {
        return Err(Error::Empty { op: "split_chars" });
    }
    Ok(token.chars().collect())
}
