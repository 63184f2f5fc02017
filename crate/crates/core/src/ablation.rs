//! Beam-size, composition and score-term comparisons on a held-out split.

use serde::Serialize;

use crate::corpus::Corpus;
use crate::decoder::beam_search;
use crate::error::{Error, Result};
use crate::gcnn::Composition;
use crate::model::Model;
use crate::scorer::ScoreParts;
use crate::trainer::{evaluate, train_run, TrainConfig};

pub const SWEEP_BEAMS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    BeamSweep,
    SimpleVsGcnn,
    ScoreParts,
}

impl AblationMode {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "beam_sweep" => Some(AblationMode::BeamSweep),
            "simple_vs_gcnn" => Some(AblationMode::SimpleVsGcnn),
            "score_parts" => Some(AblationMode::ScoreParts),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean top-1 sentence score on the evaluation sentences.
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub mode: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tP\tR\tF1\tmean_score\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\n",
                r.label, r.precision, r.recall, r.f1, r.mean_score
            ));
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Mean score of the best segmentation of every sentence.
pub fn mean_top_score(model: &Model, corpus: &Corpus, beam: usize, max_word_len: usize) -> Result<f64> {
    if corpus.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in &corpus.sentences {
        let inputs = model.inputs(&model.vocab.ids(&s.tokens));
        total += beam_search(model, &inputs, beam, max_word_len)?[0].score;
    }
    Ok(total / corpus.len() as f64)
}

fn row(label: String, model: &Model, eval: &Corpus, beam: usize, config: &TrainConfig) -> Result<AblationRow> {
    let prf = evaluate(model, eval, beam, config.max_word_len, config.threads)?;
    Ok(AblationRow {
        label,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        mean_score: mean_top_score(model, eval, beam, config.max_word_len)?,
    })
}

fn trained(corpus: &Corpus, config: &TrainConfig) -> Result<(Model, Corpus)> {
    let run = train_run(corpus, config, |_| {})?;
    if run.dev.is_empty() {
        return Err(Error::InvalidArgument("the development split is empty".into()));
    }
    Ok((run.model, run.dev))
}

pub fn run_ablation(mode: AblationMode, corpus: &Corpus, config: &TrainConfig) -> Result<AblationTable> {
    let mut rows = Vec::new();
    let name = match mode {
        AblationMode::BeamSweep => {
            let (model, dev) = trained(corpus, config)?;
            for k in SWEEP_BEAMS {
                rows.push(row(format!("k={k}"), &model, &dev, k, config)?);
            }
            "beam_sweep"
        }
        AblationMode::SimpleVsGcnn => {
            for composition in [Composition::Simple, Composition::Gated] {
                let cfg = TrainConfig {
                    composition,
                    ..config.clone()
                };
                let (model, dev) = trained(corpus, &cfg)?;
                rows.push(row(composition.name().to_string(), &model, &dev, config.beam, &cfg)?);
            }
            "simple_vs_gcnn"
        }
        AblationMode::ScoreParts => {
            for parts in [ScoreParts::WordOnly, ScoreParts::LinkOnly, ScoreParts::Both] {
                let cfg = TrainConfig {
                    score_parts: parts,
                    ..config.clone()
                };
                let (model, dev) = trained(corpus, &cfg)?;
                rows.push(row(parts.name().to_string(), &model, &dev, config.beam, &cfg)?);
            }
            "score_parts"
        }
    };
    Ok(AblationTable {
        mode: name.to_string(),
        rows,
    })
}
