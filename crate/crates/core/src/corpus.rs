//! Bakeoff corpus ingestion, normalization, splitting and word-level scoring.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{Segmentation, Span};

/// One model input unit after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Char(char),
    /// A run of Latin letters.
    Eng,
    /// A run of digits, decimals included.
    Num,
    /// A run of letters and digits when both classes share one token.
    Alnum,
}

impl Token {
    pub fn as_string(&self) -> String {
        match self {
            Token::Char(c) => c.to_string(),
            Token::Eng => "<ENG>".into(),
            Token::Num => "<NUM>".into(),
            Token::Alnum => "<ALNUM>".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Token> {
        match s {
            "<ENG>" => Some(Token::Eng),
            "<NUM>" => Some(Token::Num),
            "<ALNUM>" => Some(Token::Alnum),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some(Token::Char(c)),
                    _ => None,
                }
            }
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

/// How letter and digit runs are replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Letter runs become ENG, digit runs become NUM.
    #[default]
    Split,
    /// Any run of letters and digits becomes one ALNUM token.
    Single,
    /// Every non-whitespace character is its own token.
    Off,
}

impl NormalizeMode {
    pub fn name(self) -> &'static str {
        match self {
            NormalizeMode::Split => "split",
            NormalizeMode::Single => "single",
            NormalizeMode::Off => "off",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "split" | "two" => Some(NormalizeMode::Split),
            "single" | "one" => Some(NormalizeMode::Single),
            "off" | "none" => Some(NormalizeMode::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub tokens: Vec<Token>,
    /// Byte range of each token in the source text.
    pub alignment: Vec<Range<usize>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Other,
}

/// Folds full-width digits, letters and the full-width full stop to ASCII.
fn fold_width(c: char) -> char {
    match c {
        '\u{FF10}'..='\u{FF19}' | '\u{FF21}'..='\u{FF3A}' | '\u{FF41}'..='\u{FF5A}' | '\u{FF0E}' => {
            char::from_u32(c as u32 - 0xFEE0).unwrap_or(c)
        }
        _ => c,
    }
}

fn classify(c: char) -> Class {
    let c = fold_width(c);
    if c.is_ascii_alphabetic() {
        Class::Letter
    } else if c.is_ascii_digit() {
        Class::Digit
    } else {
        Class::Other
    }
}

enum Unit {
    Char(char, Range<usize>),
    Atom(Token, Range<usize>),
}

fn normalize_units(units: Vec<Unit>, mode: NormalizeMode) -> Normalized {
    let mut tokens = Vec::new();
    let mut alignment = Vec::new();
    let mut i = 0;
    while i < units.len() {
        let (c, range) = match &units[i] {
            Unit::Atom(t, r) => {
                tokens.push(*t);
                alignment.push(r.clone());
                i += 1;
                continue;
            }
            Unit::Char(c, r) => (*c, r.clone()),
        };
        let class = classify(c);
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if mode == NormalizeMode::Off || class == Class::Other {
            tokens.push(Token::Char(c));
            alignment.push(range);
            i += 1;
            continue;
        }
        let (end, token) = scan_run(&units, i, class, mode);
        let last = match &units[end - 1] {
            Unit::Char(_, r) | Unit::Atom(_, r) => r.end,
        };
        tokens.push(token);
        alignment.push(range.start..last);
        i = end;
    }
    Normalized { tokens, alignment }
}

/// Finds the end of the letter/digit run starting at `start`.
fn scan_run(units: &[Unit], start: usize, class: Class, mode: NormalizeMode) -> (usize, Token) {
    let class_at = |j: usize| match units.get(j) {
        Some(Unit::Char(c, _)) => Some((fold_width(*c), classify(*c))),
        _ => None,
    };
    let mut end = start + 1;
    match mode {
        NormalizeMode::Single => {
            while let Some((_, cls)) = class_at(end) {
                if cls == Class::Other {
                    break;
                }
                end += 1;
            }
            (end, Token::Alnum)
        }
        _ if class == Class::Letter => {
            while let Some((_, Class::Letter)) = class_at(end) {
                end += 1;
            }
            (end, Token::Eng)
        }
        _ => {
            loop {
                match class_at(end) {
                    Some((_, Class::Digit)) => end += 1,
                    Some(('.', _)) if matches!(class_at(end + 1), Some((_, Class::Digit))) => end += 2,
                    _ => break,
                }
            }
            (end, Token::Num)
        }
    }
}

/// Replaces letter and digit runs with ENG/NUM tokens; whitespace produces no token.
pub fn normalize(text: &str) -> Normalized {
    normalize_with(text, NormalizeMode::Split)
}

pub fn normalize_with(text: &str, mode: NormalizeMode) -> Normalized {
    let units = text
        .char_indices()
        .map(|(i, c)| Unit::Char(c, i..i + c.len_utf8()))
        .collect();
    normalize_units(units, mode)
}

/// Normalizes an already tokenized sequence; special tokens pass through.
pub fn normalize_tokens(tokens: &[Token], mode: NormalizeMode) -> Vec<Token> {
    let units = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            Token::Char(c) => Unit::Char(*c, i..i + 1),
            other => Unit::Atom(*other, i..i + 1),
        })
        .collect();
    normalize_units(units, mode).tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Source line as read.
    pub text: String,
    /// One-based line number in the source file.
    pub line: usize,
    pub tokens: Vec<Token>,
    pub alignment: Vec<Range<usize>>,
    pub gold: Option<Segmentation>,
}

impl Sentence {
    pub fn from_raw(text: &str, line: usize, mode: NormalizeMode) -> Self {
        let n = normalize_with(text, mode);
        Sentence {
            text: text.to_string(),
            line,
            tokens: n.tokens,
            alignment: n.alignment,
            gold: None,
        }
    }

    /// Parses a gold line of whitespace-separated words.
    pub fn from_gold(text: &str, line: usize, mode: NormalizeMode) -> Self {
        let mut tokens = Vec::new();
        let mut alignment = Vec::new();
        let mut lengths = Vec::new();
        for word in text.split_whitespace() {
            let offset = word.as_ptr() as usize - text.as_ptr() as usize;
            let n = normalize_with(word, mode);
            if n.tokens.is_empty() {
                continue;
            }
            lengths.push(n.tokens.len());
            tokens.extend(n.tokens);
            alignment.extend(n.alignment.into_iter().map(|r| r.start + offset..r.end + offset));
        }
        let gold = Segmentation::from_word_lengths(&lengths).expect("word lengths are positive");
        Sentence {
            text: text.to_string(),
            line,
            tokens,
            alignment,
            gold: Some(gold),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Source text of a token span, with the original letter/digit surface restored.
    pub fn surface(&self, span: Span) -> String {
        self.alignment[span.0..span.1]
            .iter()
            .map(|r| &self.text[r.clone()])
            .collect()
    }

    /// Words of a segmentation joined by two spaces.
    pub fn render(&self, seg: &Segmentation) -> String {
        seg.spans()
            .iter()
            .map(|&s| self.surface(s))
            .collect::<Vec<_>>()
            .join("  ")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub chars: usize,
    pub words: usize,
    /// `word_lengths[l]` counts gold words of `l` tokens.
    pub word_lengths: Vec<usize>,
}

impl CorpusStats {
    /// Gold words longer than `max_len` tokens.
    pub fn long_words(&self, max_len: usize) -> usize {
        self.word_lengths.iter().skip(max_len + 1).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub source: Option<PathBuf>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus {
            sentences,
            source: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let mut stats = CorpusStats::default();
        for s in &self.sentences {
            stats.chars += s.len();
            if let Some(g) = &s.gold {
                for l in g.word_lengths() {
                    stats.words += 1;
                    if stats.word_lengths.len() <= l {
                        stats.word_lengths.resize(l + 1, 0);
                    }
                    stats.word_lengths[l] += 1;
                }
            }
        }
        stats
    }

    /// Gold lines in bakeoff form, one sentence per line.
    pub fn to_bakeoff(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            match &s.gold {
                Some(g) => out.push_str(&s.render(g)),
                None => out.push_str(&s.text),
            }
            out.push('\n');
        }
        out
    }
}

/// Parses bakeoff text: one sentence per nonempty line, words separated by whitespace when `has_gold`.
pub fn parse_bakeoff_str(text: &str, has_gold: bool, mode: NormalizeMode) -> Corpus {
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_prefix('\u{FEFF}').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let s = if has_gold {
            Sentence::from_gold(line, i + 1, mode)
        } else {
            Sentence::from_raw(line, i + 1, mode)
        };
        if !s.is_empty() {
            sentences.push(s);
        }
    }
    Corpus::new(sentences)
}

pub fn parse_bakeoff(path: impl AsRef<Path>, has_gold: bool, mode: NormalizeMode) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = decode_utf8(path, &bytes)?;
    let mut corpus = parse_bakeoff_str(&text, has_gold, mode);
    corpus.source = Some(path.to_path_buf());
    Ok(corpus)
}

/// Decodes UTF-8, reporting the line of the first invalid byte.
pub fn decode_utf8(path: &Path, bytes: &[u8]) -> Result<String> {
    match std::str::from_utf8(bytes) {
        Ok(s) => Ok(s.to_string()),
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
            Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "invalid UTF-8".into(),
            })
        }
    }
}

/// First `⌊fraction·N⌋` sentences for training, the rest for development; order preserved.
pub fn split_train_dev(corpus: &Corpus, fraction: f64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a corpus of {n} sentence(s)"
        )));
    }
    let cut = (fraction * n as f64 + 1e-9).floor() as usize;
    if cut == 0 {
        return Err(Error::InvalidArgument(format!(
            "train fraction {fraction} leaves no training sentences out of {n}"
        )));
    }
    let part = |s: &[Sentence]| Corpus {
        sentences: s.to_vec(),
        source: corpus.source.clone(),
    };
    Ok((part(&corpus.sentences[..cut]), part(&corpus.sentences[cut..])))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SentencePrf {
    pub correct: usize,
    pub gold_words: usize,
    pub pred_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub gold_words: usize,
    pub pred_words: usize,
    pub per_sentence: Vec<SentencePrf>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Word-level precision, recall and F1; a predicted word is correct iff its exact span is in the gold.
pub fn score_prf(golds: &[Segmentation], preds: &[Segmentation]) -> Result<PrfReport> {
    if golds.len() != preds.len() {
        return Err(Error::Misaligned {
            index: golds.len().min(preds.len()),
            message: format!("{} gold vs {} predicted sentences", golds.len(), preds.len()),
        });
    }
    let mut per_sentence = Vec::with_capacity(golds.len());
    for (index, (g, p)) in golds.iter().zip(preds).enumerate() {
        if g.char_count() != p.char_count() {
            return Err(Error::Misaligned {
                index,
                message: format!("{} gold vs {} predicted characters", g.char_count(), p.char_count()),
            });
        }
        let correct = p.spans().iter().filter(|&&s| g.contains_span(s)).count();
        per_sentence.push(SentencePrf {
            correct,
            gold_words: g.word_count(),
            pred_words: p.word_count(),
        });
    }
    let correct: usize = per_sentence.iter().map(|s| s.correct).sum();
    let gold_words: usize = per_sentence.iter().map(|s| s.gold_words).sum();
    let pred_words: usize = per_sentence.iter().map(|s| s.pred_words).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(correct, pred_words);
    let recall = ratio(correct, gold_words);
    Ok(PrfReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        correct,
        gold_words,
        pred_words,
        per_sentence,
    })
}

/// Scores two segmented files line by line on raw characters.
pub fn score_files(gold: &Corpus, pred: &Corpus) -> Result<PrfReport> {
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.tokens != p.tokens {
            return Err(Error::Misaligned {
                index: i,
                message: format!(
                    "gold line {} and prediction line {} contain different characters",
                    g.line, p.line
                ),
            });
        }
    }
    if gold.len() != pred.len() {
        let i = gold.len().min(pred.len());
        let line = gold
            .sentences
            .get(i)
            .or(pred.sentences.get(i))
            .map_or(0, |s| s.line);
        return Err(Error::Misaligned {
            index: i,
            message: format!(
                "{} gold vs {} predicted sentences (first unmatched at line {line})",
                gold.len(),
                pred.len()
            ),
        });
    }
    let golds: Vec<_> = gold.sentences.iter().filter_map(|s| s.gold.clone()).collect();
    let preds: Vec<_> = pred.sentences.iter().filter_map(|s| s.gold.clone()).collect();
    score_prf(&golds, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(spans: &[Span]) -> Segmentation {
        Segmentation::from_spans(spans.to_vec()).unwrap()
    }

    #[test]
    fn gold_line_maps_to_spans() {
        let c = parse_bakeoff_str("AB C\n", true, NormalizeMode::Off);
        let s = &c.sentences[0];
        assert_eq!(s.tokens, vec![Token::Char('A'), Token::Char('B'), Token::Char('C')]);
        assert_eq!(s.gold.as_ref().unwrap().spans(), &[(0, 2), (2, 3)]);
    }

    #[test]
    fn empty_lines_skipped() {
        let c = parse_bakeoff_str("中国\n\n   \n人民\n", true, NormalizeMode::Split);
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[1].line, 4);
    }

    #[test]
    fn latin_and_digits_become_tokens_inside_spans() {
        let c = parse_bakeoff_str("用 abc123 测试", true, NormalizeMode::Split);
        let s = &c.sentences[0];
        assert_eq!(
            s.tokens,
            vec![Token::Char('用'), Token::Eng, Token::Num, Token::Char('测'), Token::Char('试')]
        );
        assert_eq!(s.gold.as_ref().unwrap().spans(), &[(0, 1), (1, 3), (3, 5)]);
        assert_eq!(s.surface((1, 3)), "abc123");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("x2020y").tokens, vec![Token::Eng, Token::Num, Token::Eng]);
        assert_eq!(
            normalize("中国人").tokens,
            vec![Token::Char('中'), Token::Char('国'), Token::Char('人')]
        );
        assert!(normalize("").tokens.is_empty());
    }

    #[test]
    fn decimals_and_full_width_fold_into_num() {
        assert_eq!(normalize("3.14元").tokens, vec![Token::Num, Token::Char('元')]);
        assert_eq!(normalize("１９９８年").tokens, vec![Token::Num, Token::Char('年')]);
        assert_eq!(normalize("ＡＢＣ").tokens, vec![Token::Eng]);
        // a trailing full stop is punctuation, not part of the number
        assert_eq!(normalize("12.").tokens, vec![Token::Num, Token::Char('.')]);
    }

    #[test]
    fn single_mode_collapses_classes() {
        assert_eq!(normalize_with("x2020y好", NormalizeMode::Single).tokens, vec![Token::Alnum, Token::Char('好')]);
    }

    #[test]
    fn alignment_restores_surface() {
        let n = normalize("我有3.5个iPad");
        let text = "我有3.5个iPad";
        let pieces: Vec<&str> = n.alignment.iter().map(|r| &text[r.clone()]).collect();
        assert_eq!(pieces, vec!["我", "有", "3.5", "个", "iPad"]);
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let bytes = b"ok\nalso ok\n\xff\xfe bad\n";
        let err = decode_utf8(Path::new("f.txt"), bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn split_examples() {
        let make = |n: usize| Corpus::new((0..n).map(|i| Sentence::from_raw(&format!("句{i}"), i + 1, NormalizeMode::Off)).collect());
        let (t, d) = split_train_dev(&make(10), 0.9).unwrap();
        assert_eq!((t.len(), d.len()), (9, 1));
        let (t, d) = split_train_dev(&make(7), 0.9).unwrap();
        assert_eq!((t.len(), d.len()), (6, 1));
        assert_eq!(t.sentences[0].text, "句0");
        assert_eq!(d.sentences[0].text, "句6");
        assert!(split_train_dev(&make(1), 0.9).is_err());
        assert!(split_train_dev(&make(10), 1.0).is_err());
    }

    #[test]
    fn prf_examples() {
        let g = seg(&[(0, 2), (2, 3), (3, 4)]);
        let r = score_prf(&[g.clone()], &[g.clone()]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        let p = seg(&[(0, 2), (2, 4)]);
        let r = score_prf(&[g], &[p]).unwrap();
        assert_eq!(r.correct, 1);
        assert_eq!(r.precision, 0.5);
        assert!((r.recall - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 0.4).abs() < 1e-15);

        let r = score_prf(&[seg(&[(0, 3)])], &[Segmentation::singletons(3)]).unwrap();
        assert_eq!((r.correct, r.f1), (0, 0.0));
    }

    #[test]
    fn prf_rejects_misaligned_input() {
        assert!(score_prf(&[seg(&[(0, 2)])], &[]).is_err());
        assert!(score_prf(&[seg(&[(0, 2)])], &[seg(&[(0, 3)])]).is_err());
    }

    #[test]
    fn stats_count_long_words() {
        let c = parse_bakeoff_str("中华人民共和国 成立\n", true, NormalizeMode::Split);
        let stats = c.stats();
        assert_eq!((stats.chars, stats.words), (9, 2));
        assert_eq!(stats.long_words(4), 1);
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[a-z0-9中国人 .，１Ａ]{0,24}") {
            for mode in [NormalizeMode::Split, NormalizeMode::Single, NormalizeMode::Off] {
                let once = normalize_with(&s, mode).tokens;
                proptest::prop_assert_eq!(normalize_tokens(&once, mode), once);
            }
        }

        #[test]
        fn serialize_round_trip_preserves_spans(words in proptest::collection::vec("[中国人民abc12]{1,4}", 1..8)) {
            let line = words.join(" ");
            let c = parse_bakeoff_str(&line, true, NormalizeMode::Split);
            let again = parse_bakeoff_str(&c.to_bakeoff(), true, NormalizeMode::Split);
            proptest::prop_assert_eq!(&c.sentences[0].tokens, &again.sentences[0].tokens);
            proptest::prop_assert_eq!(&c.sentences[0].gold, &again.sentences[0].gold);
        }

        #[test]
        fn prf_bounds(lengths in proptest::collection::vec(1usize..4, 1..10), seed in 0u64..1000) {
            let g = Segmentation::from_word_lengths(&lengths).unwrap();
            let n = g.char_count();
            // deterministic pseudo-random second segmentation of the same length
            let mut p_lengths = Vec::new();
            let mut left = n;
            let mut x = seed;
            while left > 0 {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let l = 1 + (x >> 33) as usize % left.min(3);
                p_lengths.push(l);
                left -= l;
            }
            let p = Segmentation::from_word_lengths(&p_lengths).unwrap();
            let r = score_prf(&[g.clone()], &[p.clone()]).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&r.precision));
            proptest::prop_assert!((0.0..=1.0).contains(&r.recall));
            let m = r.precision.min(r.recall);
            proptest::prop_assert!(r.f1 <= 2.0 * m / (1.0 + m) + 1e-12);
            let direct = p.spans().iter().filter(|s| g.spans().contains(s)).count();
            proptest::prop_assert_eq!(r.correct, direct);
            let same = score_prf(&[g.clone()], &[g]).unwrap();
            proptest::prop_assert_eq!(same.f1, 1.0);
        }
    }
}
