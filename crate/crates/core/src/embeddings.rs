//! Character vocabulary, the embedding table and input dropout.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::Rng;

use crate::corpus::{Corpus, Token};
use crate::error::{Error, Result};
use crate::params::{Gradients, Init, ParamId, ParamStore, INIT_SCALE};
use crate::tensor::Tensor;

pub const UNK: usize = 0;
pub const ENG: usize = 1;
pub const NUM: usize = 2;

const SPECIAL_NAMES: [&str; 3] = ["<UNK>", "<ENG>", "<NUM>"];

/// Maps normalized tokens to dense ids. Ids 0..3 are UNK, ENG and NUM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    entries: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl CharVocab {
    /// Vocabulary holding only the special tokens.
    pub fn specials() -> Self {
        Self::from_entries(SPECIAL_NAMES.iter().map(|s| (s.to_string(), 0)).collect())
            .expect("special names are distinct")
    }

    /// Rebuilds a vocabulary from its listing in id order; the specials must lead.
    pub fn from_entries(entries: Vec<(String, usize)>) -> Result<Self> {
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if entries.get(i).map(|e| e.0.as_str()) != Some(name) {
                return Err(Error::ModelFormat(format!("vocabulary entry {i} must be {name}")));
            }
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::ModelFormat(format!("duplicate vocabulary entry {name:?}")));
            }
        }
        let (entries, counts) = entries.into_iter().unzip();
        Ok(CharVocab {
            entries,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Id of a token; anything unseen resolves to UNK.
    pub fn id(&self, token: Token) -> usize {
        match token {
            Token::Eng => ENG,
            Token::Num => NUM,
            other => self.index.get(&other.as_string()).copied().unwrap_or(UNK),
        }
    }

    pub fn id_of_str(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|&t| self.id(t)).collect()
    }

    pub fn entry(&self, id: usize) -> &str {
        &self.entries[id]
    }

    /// Training frequency of an entry (0 for specials never seen).
    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(String::as_str).zip(self.counts.iter().copied())
    }
}

/// Builds the vocabulary from a preprocessed corpus. Tokens seen fewer than
/// `min_count` times fold into UNK; ids follow descending frequency, then codepoint.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<CharVocab> {
    let mut counts: BTreeMap<Token, usize> = BTreeMap::new();
    let mut special = [0usize; 3];
    for s in &corpus.sentences {
        for &t in &s.tokens {
            match t {
                Token::Eng => special[ENG] += 1,
                Token::Num => special[NUM] += 1,
                other => *counts.entry(other).or_default() += 1,
            }
        }
    }
    if counts.is_empty() && special.iter().all(|&c| c == 0) {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(Token, usize)> = counts.into_iter().collect();
    // BTreeMap order is the codepoint order, so a stable sort by count keeps it as the tie-break.
    ranked.sort_by_key(|e| std::cmp::Reverse(e.1));
    let mut entries: Vec<(String, usize)> = SPECIAL_NAMES
        .iter()
        .zip(special)
        .map(|(n, c)| (n.to_string(), c))
        .collect();
    for (token, count) in ranked {
        if count >= min_count.max(1) {
            entries.push((token.as_string(), count));
        } else {
            entries[UNK].1 += count;
        }
    }
    CharVocab::from_entries(entries)
}

/// The `d × |D|` character embedding table, one column per vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingMatrix {
    pub id: ParamId,
    pub dim: usize,
    pub vocab_size: usize,
}

pub const EMBEDDING_PARAM: &str = "embedding.M";

impl EmbeddingMatrix {
    pub fn register(store: &mut ParamStore, dim: usize, vocab_size: usize) -> Result<Self> {
        let id = store.register(EMBEDDING_PARAM, &[dim, vocab_size], Init::Uniform(INIT_SCALE))?;
        store.get_mut(id).sparse_columns = true;
        Ok(EmbeddingMatrix { id, dim, vocab_size })
    }

    pub(crate) fn attach(store: &ParamStore, dim: usize, vocab_size: usize) -> Result<Self> {
        let id = store
            .id(EMBEDDING_PARAM)
            .ok_or_else(|| Error::ModelFormat(format!("missing parameter {EMBEDDING_PARAM}")))?;
        if store.get(id).value.shape() != [dim, vocab_size] {
            return Err(Error::ModelFormat(format!(
                "{EMBEDDING_PARAM} has shape {:?}, expected [{dim}, {vocab_size}]",
                store.get(id).value.shape()
            )));
        }
        Ok(EmbeddingMatrix { id, dim, vocab_size })
    }

    /// Column `index` of the table.
    pub fn column(&self, store: &ParamStore, index: usize) -> Vec<f64> {
        let m = store.value(self.id);
        (0..self.dim).map(|r| m[r * self.vocab_size + index]).collect()
    }

    pub fn set_column(&self, store: &mut ParamStore, index: usize, values: &[f64]) {
        let m = store.get_mut(self.id).value.data_mut();
        for (r, &v) in values.iter().enumerate() {
            m[r * self.vocab_size + index] = v;
        }
    }

    /// Accumulates `grad` into the gradient of column `index` only.
    pub fn backward(&self, grads: &mut Gradients, index: usize, grad: &[f64]) {
        let col = grads.column_mut(self.id, index, self.dim);
        for (c, g) in col.iter_mut().zip(grad) {
            *c += g;
        }
    }
}

/// Embedding vector for a token (the UNK column if unseen).
pub fn lookup(vocab: &CharVocab, m: &EmbeddingMatrix, store: &ParamStore, token: Token) -> Tensor {
    Tensor::vector(m.column(store, vocab.id(token)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    /// Vocabulary entries found in the file.
    pub matched: usize,
    /// Vocabulary entries absent from the file.
    pub missed: usize,
    /// File entries not in the vocabulary.
    pub extraneous: usize,
}

/// Loads word2vec text vectors into the matching embedding columns.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &CharVocab,
    m: &EmbeddingMatrix,
    store: &mut ParamStore,
) -> Result<Coverage> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    let mut fields = header.split_whitespace();
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(c), Some(d), None) => (
            c.parse::<usize>().map_err(|_| parse_err(1, format!("bad vector count {c:?}")))?,
            d.parse::<usize>().map_err(|_| parse_err(1, format!("bad dimension {d:?}")))?,
        ),
        _ => return Err(parse_err(1, "header must be \"count dim\"".into())),
    };
    if dim != m.dim {
        return Err(Error::InvalidArgument(format!(
            "{}: vectors have dimension {dim}, model expects {}",
            path.display(),
            m.dim
        )));
    }

    let mut seen = vec![false; vocab.len()];
    let mut read = 0;
    let mut extraneous = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("nonempty line");
        let values = parts
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err(lineno, "non-numeric vector component".into()))?;
        if values.len() != dim {
            return Err(parse_err(
                lineno,
                format!("expected {dim} components, found {}", values.len()),
            ));
        }
        read += 1;
        match vocab.id_of_str(token) {
            Some(id) if !seen[id] => {
                seen[id] = true;
                m.set_column(store, id, &values);
            }
            Some(_) => {}
            None => extraneous += 1,
        }
    }
    if read != count {
        return Err(parse_err(1, format!("header declares {count} vectors, file has {read}")));
    }
    let matched = seen.iter().filter(|&&s| s).count();
    Ok(Coverage {
        matched,
        missed: vocab.len() - matched,
        extraneous,
    })
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn dropout_input<R: Rng + ?Sized>(x: &Tensor, rate: f64, training: bool, rng: &mut R) -> Tensor {
    if !training || rate == 0.0 {
        return x.clone();
    }
    let mask = dropout_mask(x.len(), rate, rng);
    Tensor::vector(x.data().iter().zip(mask).map(|(v, m)| v * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NormalizeMode, Sentence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(tokens: &[char]) -> Corpus {
        let mut s = Sentence::from_raw("", 1, NormalizeMode::Off);
        s.tokens = tokens.iter().map(|&c| Token::Char(c)).collect();
        Corpus::new(vec![s])
    }

    #[test]
    fn vocab_from_hand_counts() {
        let c = corpus(&['A', 'B', 'A']);
        let v = build_vocab(&c, 1).unwrap();
        let names: Vec<&str> = v.entries().map(|e| e.0).collect();
        assert_eq!(names, vec!["<UNK>", "<ENG>", "<NUM>", "A", "B"]);

        let v = build_vocab(&c, 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id(Token::Char('B')), UNK);
        assert_eq!(v.count(UNK), 1);
    }

    #[test]
    fn vocab_ties_break_by_codepoint() {
        let v = build_vocab(&corpus(&['C', 'B', 'A', 'B']), 1).unwrap();
        let names: Vec<&str> = v.entries().map(|e| e.0).skip(3).collect();
        assert_eq!(names, vec!["B", "A", "C"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab(&Corpus::default(), 1).is_err());
    }

    #[test]
    fn unseen_lookup_is_unk_column() {
        let v = build_vocab(&corpus(&['A']), 1).unwrap();
        let mut store = ParamStore::new(3);
        let m = EmbeddingMatrix::register(&mut store, 4, v.len()).unwrap();
        let unk = lookup(&v, &m, &store, Token::Char('Z'));
        assert_eq!(unk.data(), m.column(&store, UNK).as_slice());
        let a1 = lookup(&v, &m, &store, Token::Char('A'));
        let a2 = lookup(&v, &m, &store, Token::Char('A'));
        assert_eq!(a1, a2);
    }

    #[test]
    fn lookup_gradient_lands_on_one_column() {
        let v = build_vocab(&corpus(&['A', 'B']), 1).unwrap();
        let mut store = ParamStore::new(3);
        let m = EmbeddingMatrix::register(&mut store, 3, v.len()).unwrap();
        let id = v.id(Token::Char('B'));
        let mut grads = Gradients::new();
        m.backward(&mut grads, id, &[1.0; 3]);
        store.accumulate(&grads, 1.0);
        let loss = |s: &ParamStore| lookup(&v, &m, s, Token::Char('B')).data().iter().sum::<f64>();
        let err = crate::gradcheck::finite_difference_check(loss, &mut store, 1e-5);
        assert!(err < 1e-8, "{err}");
        let g = store.get(m.id).grad.data();
        for r in 0..3 {
            for c in 0..v.len() {
                assert_eq!(g[r * v.len() + c], if c == id { 1.0 } else { 0.0 });
            }
        }
    }

    fn write_vectors(text: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn pretrained_partial_coverage() {
        let v = build_vocab(&corpus(&['A', 'B']), 1).unwrap();
        let mut store = ParamStore::new(1);
        let m = EmbeddingMatrix::register(&mut store, 2, v.len()).unwrap();
        let before = m.column(&store, v.id(Token::Char('B')));
        let f = write_vectors("3 2\nA 1.0 2.0\n<NUM> 0.5 0.5\nX 9 9\n");
        let cov = load_pretrained(f.path(), &v, &m, &mut store).unwrap();
        assert_eq!(cov, Coverage { matched: 2, missed: 3, extraneous: 1 });
        assert_eq!(m.column(&store, v.id(Token::Char('A'))), vec![1.0, 2.0]);
        assert_eq!(m.column(&store, v.id(Token::Char('B'))), before);
    }

    #[test]
    fn pretrained_full_coverage() {
        let v = build_vocab(&corpus(&['A']), 1).unwrap();
        let mut store = ParamStore::new(1);
        let m = EmbeddingMatrix::register(&mut store, 1, v.len()).unwrap();
        let f = write_vectors("4 1\n<UNK> 0\n<ENG> 0\n<NUM> 0\nA 1\n");
        assert_eq!(load_pretrained(f.path(), &v, &m, &mut store).unwrap().missed, 0);
    }

    #[test]
    fn pretrained_errors() {
        let v = build_vocab(&corpus(&['A']), 1).unwrap();
        let mut store = ParamStore::new(1);
        let m = EmbeddingMatrix::register(&mut store, 2, v.len()).unwrap();
        let f = write_vectors("1 100\nA 1\n");
        assert!(load_pretrained(f.path(), &v, &m, &mut store).is_err());
        let f = write_vectors("2 2\nA 1 2\nB 1 x\n");
        let err = load_pretrained(f.path(), &v, &m, &mut store).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        assert_eq!(dropout_input(&x, 0.5, false, &mut rng), x);
        assert_eq!(dropout_input(&x, 0.0, true, &mut rng), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::vector(vec![1.0]);
        let trials = 100_000;
        let mean: f64 = (0..trials)
            .map(|_| dropout_input(&x, 0.2, true, &mut rng).data()[0])
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }
}
