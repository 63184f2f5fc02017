//! Beam-search decoding over word candidates.
//!
//! `π[i]` holds up to `k` partial segmentations of the first `i` characters.
//! Each item keeps its running score, the LSTM state after its last word and
//! the prediction for the next word, plus a backpointer into `π[start]`.
//! Extending position `i` composes one word vector per candidate length and
//! scores every `(item, candidate)` pair with two dot products; only the `k`
//! survivors pay for an LSTM step.

use std::cmp::Ordering;

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::model::{CharInputs, Model};
use crate::scorer::{link_score, lstm_step, predict_next, word_score, LstmState};
use crate::segmentation::{Segmentation, Span};

/// Limit on the number of segmentations [`enumerate_all`] will score.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Word-candidate compositions.
    pub compositions: usize,
    /// LSTM transitions taken to extend beam items.
    pub lstm_steps: usize,
    /// Scored `(item, candidate)` pairs.
    pub extensions: usize,
}

/// A complete segmentation with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub segmentation: Segmentation,
    /// Model score, plus the margin when decoding is loss-augmented.
    pub score: f64,
    /// Characters whose word differs from the gold one (0 without a gold reference).
    pub mismatches: usize,
    /// `mu · mismatches`
    pub margin_added: f64,
}

/// Per-character margin for loss-augmented decoding.
#[derive(Debug, Clone, Copy)]
pub struct Margin<'a> {
    pub gold: &'a Segmentation,
    pub mu: f64,
}

impl Margin<'_> {
    /// Characters of `span` whose gold word is a different span.
    fn mismatches(&self, span: Span) -> usize {
        if self.gold.contains_span(span) {
            0
        } else {
            span.1 - span.0
        }
    }
}

struct Node {
    score: f64,
    mismatches: usize,
    state: LstmState,
    pred: Vec<f64>,
    start: usize,
    end: usize,
    parent: usize,
}

const ROOT: usize = usize::MAX;

struct Lattice {
    cells: Vec<Vec<Node>>,
}

impl Lattice {
    fn spans(&self, mut pos: usize, mut idx: usize) -> Vec<Span> {
        let mut spans = Vec::new();
        while pos > 0 {
            let node = &self.cells[pos][idx];
            spans.push((node.start, node.end));
            idx = node.parent;
            pos = node.start;
        }
        spans.reverse();
        spans
    }
}

/// Orders hypotheses best first: higher score, then longer last word, then
/// lexicographically smaller span list.
pub fn rank(a_score: f64, a_spans: &[Span], b_score: f64, b_spans: &[Span]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| last_len(b_spans).cmp(&last_len(a_spans)))
        .then_with(|| a_spans.cmp(b_spans))
}

fn last_len(spans: &[Span]) -> usize {
    spans.last().map_or(0, |s| s.1 - s.0)
}

struct Candidate {
    score: f64,
    mismatches: usize,
    start: usize,
    parent: usize,
    word: usize,
}

fn check_args(model: &Model, n: usize, k: usize, w: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot segment an empty sentence"));
    }
    if k == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("beam size {k} and max word length {w} must be positive")));
    }
    if w > model.gcnn.max_len() {
        return Err(Error::WordLength {
            len: w,
            max: model.gcnn.max_len(),
        });
    }
    Ok(())
}

/// Beam search returning up to `k` segmentations, best first.
pub fn beam_search(model: &Model, inputs: &CharInputs, k: usize, w: usize) -> Result<Vec<Scored>> {
    search(model, inputs, k, w, None, &mut SearchStats::default())
}

pub fn beam_search_with_stats(
    model: &Model,
    inputs: &CharInputs,
    k: usize,
    w: usize,
) -> Result<(Vec<Scored>, SearchStats)> {
    let mut stats = SearchStats::default();
    let out = search(model, inputs, k, w, None, &mut stats)?;
    Ok((out, stats))
}

/// Beam search over `score + Δ(gold, ·)`; returns the best (most violating) hypothesis.
pub fn loss_augmented_beam_search(
    model: &Model,
    inputs: &CharInputs,
    gold: &Segmentation,
    mu: f64,
    k: usize,
    w: usize,
) -> Result<Scored> {
    if gold.char_count() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "gold covers {} characters, sentence has {}",
            gold.char_count(),
            inputs.len()
        )));
    }
    let margin = Margin { gold, mu };
    let mut out = search(model, inputs, k, w, Some(margin), &mut SearchStats::default())?;
    Ok(out.swap_remove(0))
}

pub fn search(
    model: &Model,
    inputs: &CharInputs,
    k: usize,
    w: usize,
    margin: Option<Margin<'_>>,
    stats: &mut SearchStats,
) -> Result<Vec<Scored>> {
    let n = inputs.len();
    check_args(model, n, k, w)?;
    let store = &model.store;
    let lstm = &model.lstm;
    let parts = model.config.score_parts;

    let root_state = lstm.initial_state(store);
    let root_pred = predict_next(store, lstm, &root_state);
    let mut lattice = Lattice {
        cells: Vec::with_capacity(n + 1),
    };
    lattice.cells.push(vec![Node {
        score: 0.0,
        mismatches: 0,
        state: root_state,
        pred: root_pred,
        start: 0,
        end: 0,
        parent: ROOT,
    }]);

    for end in 1..=n {
        let mut words = Vec::with_capacity(w.min(end));
        let mut candidates = Vec::new();
        for len in 1..=w.min(end) {
            let start = end - len;
            let y = model.compose(&inputs.vectors[start..end])?;
            stats.compositions += 1;
            let word_part = word_score(store, lstm, &y);
            let extra = margin.map_or(0, |m| m.mismatches((start, end)));
            for (parent, node) in lattice.cells[start].iter().enumerate() {
                let mut score = node.score + parts.combine(word_part, link_score(&node.pred, &y));
                if let Some(m) = margin {
                    score += m.mu * extra as f64;
                }
                candidates.push(Candidate {
                    score,
                    mismatches: node.mismatches + extra,
                    start,
                    parent,
                    word: words.len(),
                });
            }
            words.push(y);
        }
        stats.extensions += candidates.len();

        let cmp = |a: &Candidate, b: &Candidate| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| (end - b.start).cmp(&(end - a.start)))
                .then_with(|| {
                    let mut sa = lattice.spans(a.start, a.parent);
                    sa.push((a.start, end));
                    let mut sb = lattice.spans(b.start, b.parent);
                    sb.push((b.start, end));
                    sa.cmp(&sb)
                })
        };
        if candidates.len() > k {
            candidates.select_nth_unstable_by(k - 1, cmp);
            candidates.truncate(k);
        }
        candidates.sort_by(cmp);

        let mut cell = Vec::with_capacity(candidates.len());
        for c in candidates {
            let parent = &lattice.cells[c.start][c.parent];
            let state = lstm_step(store, lstm, &words[c.word], &parent.state);
            let pred = predict_next(store, lstm, &state);
            stats.lstm_steps += 1;
            cell.push(Node {
                score: c.score,
                mismatches: c.mismatches,
                state,
                pred,
                start: c.start,
                end,
                parent: c.parent,
            });
        }
        lattice.cells.push(cell);
    }

    let mu = margin.map_or(0.0, |m| m.mu);
    Ok(lattice.cells[n]
        .iter()
        .enumerate()
        .map(|(idx, node)| Scored {
            segmentation: Segmentation::from_spans_unchecked(lattice.spans(n, idx)),
            score: node.score,
            mismatches: node.mismatches,
            margin_added: mu * node.mismatches as f64,
        })
        .collect())
}

/// Number of tilings of `n` characters with words of at most `w` characters.
pub fn count_segmentations(n: usize, w: usize) -> u128 {
    let mut f = vec![0u128; n + 1];
    f[0] = 1;
    for i in 1..=n {
        f[i] = (1..=w.min(i)).map(|l| f[i - l]).fold(0u128, u128::saturating_add);
    }
    f[n]
}

/// Every segmentation with words of at most `w` characters, scored with the
/// one-pass sentence score and ranked like [`beam_search`].
pub fn enumerate_all(model: &Model, inputs: &CharInputs, w: usize) -> Result<Vec<Scored>> {
    let n = inputs.len();
    check_args(model, n, 1, w)?;
    let count = count_segmentations(n, w);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut all = Vec::with_capacity(count as usize);
    let mut current = Vec::new();
    tilings(n, w, 0, &mut current, &mut all);
    let mut scored = all
        .into_iter()
        .map(|spans| {
            let seg = Segmentation::from_spans_unchecked(spans);
            let score = model.score(inputs, &seg)?;
            Ok(Scored {
                segmentation: seg,
                score,
                mismatches: 0,
                margin_added: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| rank(a.score, a.segmentation.spans(), b.score, b.segmentation.spans()));
    Ok(scored)
}

fn tilings(n: usize, w: usize, pos: usize, current: &mut Vec<Span>, out: &mut Vec<Vec<Span>>) {
    if pos == n {
        out.push(current.clone());
        return;
    }
    for len in 1..=w.min(n - pos) {
        current.push((pos, pos + len));
        tilings(n, w, pos + len, current, out);
        current.pop();
    }
}

/// Decodes a normalized token sequence with the model's own vocabulary.
pub fn segment_tokens(model: &Model, tokens: &[Token], k: usize, w: usize) -> Result<Scored> {
    let inputs = model.inputs(&model.vocab.ids(tokens));
    let mut out = beam_search(model, &inputs, k, w)?;
    Ok(out.swap_remove(0))
}
