//! Word-vector tables (frozen) and the trainable character table.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Sentence;
use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_CHAR_RADIUS: f64 = 0.05;
pub const UNK_INDEX: usize = 0;

const CACHE_MAGIC: &[u8; 8] = b"CMXEMBED";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorFormat {
    /// `token v1 … vd` per line, no header.
    GloveText,
    /// `count dim` header, then GloVe-style rows.
    FasttextVec,
}

impl FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glove_text" | "glove" => Ok(VectorFormat::GloveText),
            "fasttext_vec" | "fasttext" | "vec" => Ok(VectorFormat::FasttextVec),
            other => Err(Error::Config(format!("unknown vector format {other:?}"))),
        }
    }
}

impl fmt::Display for VectorFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorFormat::GloveText => "glove_text",
            VectorFormat::FasttextVec => "fasttext_vec",
        })
    }
}

/// Token → row lookup over a dense matrix of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    words: Vec<String>,
    matrix: Matrix,
}

impl EmbeddingTable {
    pub fn empty(dim: usize) -> Self {
        EmbeddingTable {
            vocab: HashMap::new(),
            words: Vec::new(),
            matrix: Matrix::zeros(0, dim),
        }
    }

    /// Builds a table from `(word, vector)` pairs; the first occurrence of a
    /// word wins.
    pub fn from_pairs<I, S>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut t = EmbeddingTable::empty(dim);
        let mut data = Vec::new();
        for (w, v) in pairs {
            if v.len() != dim {
                return Err(Error::dim("EmbeddingTable::from_pairs", dim, v.len()));
            }
            let w = w.into();
            if t.vocab.contains_key(&w) {
                continue;
            }
            t.vocab.insert(w.clone(), t.words.len());
            t.words.push(w);
            data.extend(v);
        }
        t.matrix = Matrix::from_vec(t.words.len(), dim, data)?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.matrix.row(i))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordLookup {
    pub vector: Vec<f64>,
    pub oov: bool,
}

/// Stored vector for known tokens, zeros with `oov = true` otherwise.
pub fn lookup_word(table: &EmbeddingTable, token: &str) -> WordLookup {
    match table.get(token) {
        Some(v) => WordLookup {
            vector: v.to_vec(),
            oov: false,
        },
        None => WordLookup {
            vector: vec![0.0; table.dim()],
            oov: true,
        },
    }
}

/// Fraction of tokens missing from the table.
pub fn oov_rate<'a>(table: &EmbeddingTable, sentences: impl IntoIterator<Item = &'a Sentence>) -> f64 {
    let (mut total, mut missing) = (0usize, 0usize);
    for s in sentences {
        for t in &s.tokens {
            total += 1;
            if !table.contains(t) {
                missing += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        missing as f64 / total as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions<'a> {
    /// Reject files whose dimension differs.
    pub expected_dim: Option<usize>,
    /// Keep only these words (rows are still validated).
    pub keep: Option<&'a HashSet<String>>,
}

pub fn load_vectors(path: impl AsRef<Path>, format: VectorFormat) -> Result<EmbeddingTable> {
    load_vectors_with(path, format, &LoadOptions::default())
}

pub fn load_vectors_with(
    path: impl AsRef<Path>,
    format: VectorFormat,
    opts: &LoadOptions<'_>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_vectors(BufReader::new(file), path, format, opts)
}

pub fn read_vectors<R: BufRead>(
    reader: R,
    path: &Path,
    format: VectorFormat,
    opts: &LoadOptions<'_>,
) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut declared_rows = None;
    let mut vocab = HashMap::new();
    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut header_pending = format == VectorFormat::FasttextVec;

    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            let mut it = line.split_whitespace();
            let parsed = (
                it.next().and_then(|c| c.parse::<usize>().ok()),
                it.next().and_then(|d| d.parse::<usize>().ok()),
                it.next(),
            );
            match parsed {
                (Some(count), Some(d), None) if d > 0 => {
                    declared_rows = Some(count);
                    dim = Some(d);
                }
                _ => return Err(Error::parse(path, lineno, "expected \"<count> <dim>\" header")),
            }
            if let (Some(want), Some(d)) = (opts.expected_dim, dim) {
                if want != d {
                    return Err(Error::parse(path, lineno, format!("dimension {d}, expected {want}")));
                }
            }
            continue;
        }

        let mut fields = line.split_whitespace();
        let word = fields.next().expect("nonempty line has a field");
        let values: Vec<&str> = fields.collect();
        let d = *dim.get_or_insert(values.len());
        if d == 0 {
            return Err(Error::parse(path, lineno, "row without vector components"));
        }
        if let Some(want) = opts.expected_dim {
            if want != d {
                return Err(Error::parse(path, lineno, format!("dimension {d}, expected {want}")));
            }
        }
        if values.len() != d {
            return Err(Error::parse(
                path,
                lineno,
                format!("row has {} components, expected {d}", values.len()),
            ));
        }
        let keep = opts.keep.is_none_or(|k| k.contains(word)) && !vocab.contains_key(word);
        if !keep {
            // still validate numbers so a corrupt file is caught
            for v in &values {
                parse_component(v, path, lineno)?;
            }
            continue;
        }
        for v in &values {
            data.push(parse_component(v, path, lineno)?);
        }
        vocab.insert(word.to_string(), words.len());
        words.push(word.to_string());
    }

    let dim = dim.or(opts.expected_dim).unwrap_or(0);
    if let Some(count) = declared_rows {
        if opts.keep.is_none() && count != words.len() {
            log::warn!("{}: header declares {count} rows, read {}", path.display(), words.len());
        }
    }
    Ok(EmbeddingTable {
        vocab,
        matrix: Matrix::from_vec(words.len(), dim, data)?,
        words,
    })
}

fn parse_component(v: &str, path: &Path, lineno: usize) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::parse(path, lineno, format!("non-numeric component {v:?}"))),
    }
}

#[derive(Clone, Debug)]
pub struct SharedVocab {
    pub table: EmbeddingTable,
    pub collisions: usize,
}

/// Union of the tables' vocabularies; on a spelling collision the earlier
/// table in `tables` wins.
pub fn build_shared(tables: &[EmbeddingTable]) -> Result<SharedVocab> {
    let Some(first) = tables.first() else {
        return Err(Error::Empty { op: "build_shared" });
    };
    let dim = first.dim();
    for t in tables {
        if t.dim() != dim {
            return Err(Error::dim("build_shared", dim, t.dim()));
        }
    }
    let mut out = EmbeddingTable::empty(dim);
    let mut data = Vec::with_capacity(tables.iter().map(|t| t.matrix.len()).sum());
    let mut collisions = 0;
    for t in tables {
        for (i, w) in t.words.iter().enumerate() {
            if out.vocab.contains_key(w) {
                collisions += 1;
                continue;
            }
            out.vocab.insert(w.clone(), out.words.len());
            out.words.push(w.clone());
            data.extend_from_slice(t.matrix.row(i));
        }
    }
    out.matrix = Matrix::from_vec(out.words.len(), dim, data)?;
    Ok(SharedVocab {
        table: out,
        collisions,
    })
}

/// Writes the table as a versioned little-endian binary cache.
pub fn save_cache(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CACHE_MAGIC).map_err(io)?;
    w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(table.dim() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(table.len() as u64).to_le_bytes()).map_err(io)?;
    for (i, word) in table.words.iter().enumerate() {
        w.write_all(&(word.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(word.as_bytes()).map_err(io)?;
        for v in table.matrix.row(i) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CACHE_MAGIC {
        return Err(bad("not an embedding cache"));
    }
    let version = read_u32(&mut r, path)?;
    if version != CACHE_VERSION {
        return Err(bad(&format!("cache version {version}, expected {CACHE_VERSION}")));
    }
    let dim = read_u64(&mut r, path)? as usize;
    let n = read_u64(&mut r, path)? as usize;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u32(&mut r, path)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let word = String::from_utf8(buf).map_err(|_| bad("word is not UTF-8"))?;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(read_f64(&mut r, path)?);
        }
        pairs.push((word, v));
    }
    EmbeddingTable::from_pairs(dim, pairs)
}

pub(crate) fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(f64::from_le_bytes(b))
}

/// One pre-trained vector file in the shared vocabulary, in precedence order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSource {
    pub format: VectorFormat,
    pub path: PathBuf,
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    /// `format:path`, e.g. `glove_text:/data/glove.300d.txt`.
    fn from_str(s: &str) -> Result<Self> {
        let (fmt, path) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("embedding source {s:?} is not format:path")))?;
        Ok(EmbeddingSource {
            format: fmt.trim().parse()?,
            path: PathBuf::from(path.trim()),
        })
    }
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.format, self.path.display())
    }
}

/// Loads every source (restricted to `keep` if given) and merges them.
pub fn load_shared(
    sources: &[EmbeddingSource],
    expected_dim: usize,
    keep: Option<&HashSet<String>>,
) -> Result<SharedVocab> {
    if sources.is_empty() {
        return Ok(SharedVocab {
            table: EmbeddingTable::empty(expected_dim),
            collisions: 0,
        });
    }
    let opts = LoadOptions {
        expected_dim: Some(expected_dim),
        keep,
    };
    let tables = sources
        .iter()
        .map(|s| load_vectors_with(&s.path, s.format, &opts))
        .collect::<Result<Vec<_>>>()?;
    build_shared(&tables)
}

/// Character → row index, with [`UNK_INDEX`] reserved for unseen characters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// `chars` excludes UNK; duplicates are dropped, order kept.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = CharVocab {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            if !v.index.contains_key(&c) {
                v.index.insert(c, v.chars.len() + 1);
                v.chars.push(c);
            }
        }
        v
    }

    /// Rows including UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Known characters in row order (row = position + 1).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_INDEX)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharTable {
    pub vocab: CharVocab,
    pub matrix: Matrix,
}

/// One row per distinct character in `corpus` (sorted by code point) plus
/// UNK, entries drawn from U[-radius, radius].
pub fn init_char_table<'a>(
    corpus: impl IntoIterator<Item = &'a Sentence>,
    dim: usize,
    radius: f64,
    seed: u64,
) -> CharTable {
    let chars: BTreeSet<char> = corpus
        .into_iter()
        .flat_map(|s| s.tokens.iter())
        .flat_map(|t| t.chars())
        .collect();
    let vocab = CharVocab::new(chars);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = Matrix::uniform(vocab.len(), dim, radius, &mut rng);
    CharTable { vocab, matrix }
}
