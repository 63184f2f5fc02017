use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open character span `[start, end)`.
pub type Span = (usize, usize);

/// An ordered list of word spans tiling `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segmentation {
    spans: Vec<Span>,
}

impl Segmentation {
    pub fn from_spans(spans: Vec<Span>) -> Result<Self> {
        let mut expected = 0;
        for &(start, end) in &spans {
            if start != expected || end <= start {
                return Err(Error::InvalidArgument(format!(
                    "spans {spans:?} do not tile a prefix of the sentence"
                )));
            }
            expected = end;
        }
        Ok(Segmentation { spans })
    }

    pub fn from_word_lengths(lengths: &[usize]) -> Result<Self> {
        let mut start = 0;
        let mut spans = Vec::with_capacity(lengths.len());
        for &len in lengths {
            spans.push((start, start + len));
            start += len;
        }
        Self::from_spans(spans)
    }

    /// Every character its own word.
    pub fn singletons(n: usize) -> Self {
        Segmentation {
            spans: (0..n).map(|i| (i, i + 1)).collect(),
        }
    }

    pub(crate) fn from_spans_unchecked(spans: Vec<Span>) -> Self {
        debug_assert!(Self::from_spans(spans.clone()).is_ok());
        Segmentation { spans }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn word_count(&self) -> usize {
        self.spans.len()
    }

    /// Number of characters covered.
    pub fn char_count(&self) -> usize {
        self.spans.last().map_or(0, |s| s.1)
    }

    pub fn max_word_len(&self) -> usize {
        self.spans.iter().map(|(s, e)| e - s).max().unwrap_or(0)
    }

    pub fn word_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().map(|(s, e)| e - s)
    }

    pub fn contains_span(&self, span: Span) -> bool {
        self.spans.binary_search(&span).is_ok()
    }

    /// Span of the word containing every character position.
    pub fn span_per_char(&self) -> Vec<Span> {
        let mut out = Vec::with_capacity(self.char_count());
        for &span in &self.spans {
            for _ in span.0..span.1 {
                out.push(span);
            }
        }
        out
    }
}

impl fmt::Display for Segmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.spans.iter().map(|(s, e)| format!("{s}..{e}")).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_gaps_and_empty_spans() {
        assert!(Segmentation::from_spans(vec![(0, 1), (2, 3)]).is_err());
        assert!(Segmentation::from_spans(vec![(0, 0)]).is_err());
        assert!(Segmentation::from_spans(vec![(1, 2)]).is_err());
        assert!(Segmentation::from_spans(vec![(0, 2), (2, 3)]).is_ok());
    }

    #[test]
    fn per_char_spans() {
        let s = Segmentation::from_word_lengths(&[2, 1]).unwrap();
        assert_eq!(s.span_per_char(), vec![(0, 2), (0, 2), (2, 3)]);
        assert_eq!(s.char_count(), 3);
        assert!(s.contains_span((2, 3)));
        assert!(!s.contains_span((1, 3)));
    }
}
