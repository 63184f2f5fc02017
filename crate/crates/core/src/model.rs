//! The full scoring model and its on-disk format.
//!
//! # Model file layout
//!
//! A UTF-8 manifest of newline-terminated lines, then a binary payload:
//!
//! ```text
//! seglearn-model
//! version 1
//! dim <d>
//! hidden <H>
//! max_word_len <w>
//! gcnn_max_len <longest composable word>
//! composition gated|simple
//! score_parts both|word_only|link_only
//! normalize split|single|off
//! vocab <|D|>
//! <JSON string token>\t<training count>      (|D| lines, id order)
//! params <count>
//! <name> <dim0>x<dim1>...                     (one line per parameter)
//! end
//! <payload>
//! ```
//!
//! The payload is every parameter value in manifest order, row-major, as
//! little-endian IEEE-754 32-bit floats.

use std::path::Path;

use rand::Rng;

use crate::corpus::NormalizeMode;
use crate::embeddings::{dropout_mask, CharVocab, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::gcnn::{Composition, CompositionTrace, GcnnParams};
use crate::params::{Gradients, ParamStore, Parameter};
use crate::scorer::{sentence_backward, sentence_forward, LstmParams, ScoreParts};
use crate::segmentation::Segmentation;
use crate::tensor::Tensor;

pub const FORMAT_MAGIC: &str = "seglearn-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Longest word the decoder proposes.
    pub max_word_len: usize,
    /// Longest word the composition network has parameters for (≥ `max_word_len`).
    pub gcnn_max_len: usize,
    pub composition: Composition,
    pub score_parts: ScoreParts,
    pub normalize: NormalizeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 50,
            hidden: 50,
            max_word_len: 4,
            gcnn_max_len: 4,
            composition: Composition::Gated,
            score_parts: ScoreParts::Both,
            normalize: NormalizeMode::Split,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.max_word_len == 0 {
            return Err(Error::InvalidArgument(
                "dim, hidden and max_word_len must be positive".into(),
            ));
        }
        if self.gcnn_max_len < self.max_word_len {
            return Err(Error::InvalidArgument(format!(
                "composition length {} is shorter than max word length {}",
                self.gcnn_max_len, self.max_word_len
            )));
        }
        Ok(())
    }
}

/// Character vectors of one sentence as fed to the composition network.
#[derive(Debug, Clone)]
pub struct CharInputs {
    pub ids: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
    /// Inverted-dropout masks, when dropout was applied.
    pub masks: Option<Vec<Vec<f64>>>,
}

impl CharInputs {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: CharVocab,
    pub store: ParamStore,
    pub embedding: EmbeddingMatrix,
    pub gcnn: GcnnParams,
    pub lstm: LstmParams,
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: CharVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let embedding = EmbeddingMatrix::register(&mut store, config.dim, vocab.len())?;
        let gcnn = GcnnParams::register(&mut store, config.dim, config.gcnn_max_len)?;
        let lstm = LstmParams::register(&mut store, config.dim, config.hidden)?;
        Ok(Model {
            config,
            vocab,
            store,
            embedding,
            gcnn,
            lstm,
        })
    }

    /// Looks up (and optionally drops out) the embedding of every character id.
    pub fn char_inputs<R: Rng + ?Sized>(&self, ids: &[usize], dropout: Option<(f64, &mut R)>) -> CharInputs {
        let mut vectors: Vec<Vec<f64>> = ids.iter().map(|&i| self.embedding.column(&self.store, i)).collect();
        let masks = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let masks: Vec<Vec<f64>> = ids.iter().map(|_| dropout_mask(self.config.dim, rate, rng)).collect();
                for (v, m) in vectors.iter_mut().zip(&masks) {
                    v.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
                }
                Some(masks)
            }
            _ => None,
        };
        CharInputs {
            ids: ids.to_vec(),
            vectors,
            masks,
        }
    }

    /// Dropout-free inputs.
    pub fn inputs(&self, ids: &[usize]) -> CharInputs {
        self.char_inputs::<rand_chacha::ChaCha8Rng>(ids, None)
    }

    pub fn compose(&self, chars: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self
            .gcnn
            .forward(&self.store, self.config.composition, chars)?
            .into_output())
    }

    /// Sentence score of a segmentation, computed in one pass.
    pub fn score(&self, inputs: &CharInputs, seg: &Segmentation) -> Result<f64> {
        self.check_covers(inputs, seg)?;
        let words = seg
            .spans()
            .iter()
            .map(|&(s, e)| self.compose(&inputs.vectors[s..e]))
            .collect::<Result<Vec<_>>>()?;
        Ok(sentence_forward(&self.store, &self.lstm, self.config.score_parts, &words)?.score)
    }

    /// Accumulates the gradient of `coef · score(seg)` and returns the score.
    pub fn backward(&self, inputs: &CharInputs, seg: &Segmentation, coef: f64, grads: &mut Gradients) -> Result<f64> {
        self.check_covers(inputs, seg)?;
        let traces = seg
            .spans()
            .iter()
            .map(|&(s, e)| self.gcnn.forward(&self.store, self.config.composition, &inputs.vectors[s..e]))
            .collect::<Result<Vec<CompositionTrace>>>()?;
        let words: Vec<&[f64]> = traces.iter().map(CompositionTrace::output).collect();
        let trace = sentence_forward(&self.store, &self.lstm, self.config.score_parts, &words)?;
        let dwords = sentence_backward(&self.store, &self.lstm, self.config.score_parts, &trace, coef, grads);
        for ((&(start, _), ct), dw) in seg.spans().iter().zip(&traces).zip(&dwords) {
            let dchars = self.gcnn.backward(&self.store, ct, dw, grads);
            for (offset, dc) in dchars.iter().enumerate() {
                let pos = start + offset;
                let dc = match &inputs.masks {
                    Some(masks) => dc.iter().zip(&masks[pos]).map(|(a, b)| a * b).collect(),
                    None => dc.clone(),
                };
                self.embedding.backward(grads, inputs.ids[pos], &dc);
            }
        }
        Ok(trace.score)
    }

    fn check_covers(&self, inputs: &CharInputs, seg: &Segmentation) -> Result<()> {
        if seg.char_count() != inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "segmentation covers {} characters, sentence has {}",
                seg.char_count(),
                inputs.len()
            )));
        }
        Ok(())
    }

    pub fn set_embeddings_frozen(&mut self, frozen: bool) {
        self.store.get_mut(self.embedding.id).frozen = frozen;
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut m = String::new();
        m.push_str(&format!("{FORMAT_MAGIC}\nversion {FORMAT_VERSION}\n"));
        m.push_str(&format!("dim {}\nhidden {}\n", c.dim, c.hidden));
        m.push_str(&format!("max_word_len {}\ngcnn_max_len {}\n", c.max_word_len, c.gcnn_max_len));
        m.push_str(&format!("composition {}\n", c.composition.name()));
        m.push_str(&format!("score_parts {}\n", c.score_parts.name()));
        m.push_str(&format!("normalize {}\n", c.normalize.name()));
        m.push_str(&format!("vocab {}\n", self.vocab.len()));
        for (name, count) in self.vocab.entries() {
            let quoted = serde_json::to_string(name).expect("strings serialize");
            m.push_str(&format!("{quoted}\t{count}\n"));
        }
        m.push_str(&format!("params {}\n", self.store.len()));
        for p in self.store.iter() {
            let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            m.push_str(&format!("{} {}\n", p.name, shape.join("x")));
        }
        m.push_str("end\n");
        let mut bytes = m.into_bytes();
        bytes.reserve(self.store.element_count() * 4);
        for p in self.store.iter() {
            for &v in p.value.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ManifestReader { bytes, pos: 0 };
        let magic = reader.line()?;
        if magic != FORMAT_MAGIC {
            return Err(Error::ModelFormat(format!("not a model file (header {magic:?})")));
        }
        let version: u32 = reader.field("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "manifest version {version} is not supported (expected version {FORMAT_VERSION})"
            )));
        }
        let dim = reader.field("dim")?;
        let hidden = reader.field("hidden")?;
        let max_word_len = reader.field("max_word_len")?;
        let gcnn_max_len = reader.field("gcnn_max_len")?;
        let composition: String = reader.field("composition")?;
        let score_parts: String = reader.field("score_parts")?;
        let normalize: String = reader.field("normalize")?;
        let config = ModelConfig {
            dim,
            hidden,
            max_word_len,
            gcnn_max_len,
            composition: Composition::from_name(&composition)
                .ok_or_else(|| Error::ModelFormat(format!("unknown composition {composition}")))?,
            score_parts: ScoreParts::from_name(&score_parts)
                .ok_or_else(|| Error::ModelFormat(format!("unknown score parts {score_parts}")))?,
            normalize: NormalizeMode::from_name(&normalize)
                .ok_or_else(|| Error::ModelFormat(format!("unknown normalization {normalize}")))?,
        };
        config.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;

        let vocab_len: usize = reader.field("vocab")?;
        let mut entries = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let line = reader.line()?;
            let (quoted, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::ModelFormat(format!("bad vocabulary line {line:?}")))?;
            let name: String = serde_json::from_str(quoted)
                .map_err(|e| Error::ModelFormat(format!("bad vocabulary token {quoted}: {e}")))?;
            let count = count
                .parse()
                .map_err(|_| Error::ModelFormat(format!("bad vocabulary count {count:?}")))?;
            entries.push((name, count));
        }
        let vocab = CharVocab::from_entries(entries)?;

        let param_count: usize = reader.field("params")?;
        let mut specs = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            let line = reader.line()?;
            let (name, shape) = line
                .split_once(' ')
                .ok_or_else(|| Error::ModelFormat(format!("bad parameter line {line:?}")))?;
            let shape = shape
                .split('x')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::ModelFormat(format!("bad shape in {line:?}")))?;
            specs.push((name.to_string(), shape));
        }
        if reader.line()? != "end" {
            return Err(Error::ModelFormat("manifest is missing its end marker".into()));
        }

        let payload = &bytes[reader.pos..];
        let total: usize = specs.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if payload.len() != total * 4 {
            return Err(Error::ModelFormat(format!(
                "payload holds {} bytes, manifest requires {}",
                payload.len(),
                total * 4
            )));
        }
        let mut store = ParamStore::new(0);
        let mut floats = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        for (name, shape) in specs {
            let len = shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(len).collect();
            let value = Tensor::from_vec(&shape, data).map_err(|e| Error::ModelFormat(format!("{name}: {e}")))?;
            let mut p = Parameter::new(name.clone(), value);
            if store.id(&name).is_some() {
                return Err(Error::ModelFormat(format!("duplicate parameter {name}")));
            }
            if name == crate::embeddings::EMBEDDING_PARAM {
                p.sparse_columns = true;
            }
            store.insert(p);
        }

        let embedding = EmbeddingMatrix::attach(&store, config.dim, vocab.len())?;
        let gcnn = GcnnParams::attach(&store, config.dim, config.gcnn_max_len)?;
        let lstm = LstmParams::attach(&store, config.dim, config.hidden)?;
        Ok(Model {
            config,
            vocab,
            store,
            embedding,
            gcnn,
            lstm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ManifestReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ManifestReader<'_> {
    fn line(&mut self) -> Result<&str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::ModelFormat("truncated manifest".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::ModelFormat("manifest is not UTF-8".into()))
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.line()?;
        let value = line
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| Error::ModelFormat(format!("expected {key:?} line, found {line:?}")))?;
        value
            .parse()
            .map_err(|_| Error::ModelFormat(format!("bad value for {key}: {value:?}")))
    }
}
