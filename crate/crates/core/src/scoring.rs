//! Answer-option scoring by token-probability product.
//!
//! An option's score is the product of the probabilities of its tokens; the
//! prediction is the option with the largest score. Products are accumulated
//! as sums of logs so that long options do not underflow.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{read_jsonl, DataError};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("option {option}, token {token}: probability {value} is outside (0, 1]")]
    InvalidProbability {
        option: usize,
        token: usize,
        value: f64,
    },
    #[error("option {0} has no tokens")]
    EmptyOption(usize),
    #[error("need at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("{predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("example `{id}`: gold index {gold} out of range for {options} options")]
    GoldOutOfRange {
        id: String,
        gold: usize,
        options: usize,
    },
    #[error("example `{id}`: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<ScoreError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ScoreError> = std::result::Result<T, E>;

/// Per-token probabilities of one answer option.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionProbabilities {
    pub token_probs: Vec<f64>,
}

impl OptionProbabilities {
    pub fn new(token_probs: Vec<f64>) -> Self {
        Self { token_probs }
    }
}

fn option_score(index: usize, opt: &OptionProbabilities) -> Result<f64> {
    if opt.token_probs.is_empty() {
        return Err(ScoreError::EmptyOption(index));
    }
    let mut sum = 0.0;
    for (token, &p) in opt.token_probs.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ScoreError::InvalidProbability {
                option: index,
                token,
                value: p,
            });
        }
        sum += p.ln();
    }
    Ok(sum)
}

/// Log of the product of the option's token probabilities.
pub fn option_probability(opt: &OptionProbabilities) -> Result<f64> {
    option_score(0, opt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub chosen: usize,
    pub scores: Vec<f64>,
}

/// Picks the highest-scoring option; the lowest index wins ties.
pub fn predict(options: &[OptionProbabilities]) -> Result<Prediction> {
    if options.len() < 2 {
        return Err(ScoreError::TooFewOptions(options.len()));
    }
    let scores = options
        .iter()
        .enumerate()
        .map(|(i, o)| option_score(i, o))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen = 0;
    for i in 1..scores.len() {
        if beats(&options[i], scores[i], &options[chosen], scores[chosen]) {
            chosen = i;
        }
    }
    Ok(Prediction { chosen, scores })
}

/// True when option `a` has a strictly larger probability product than `b`.
/// Log sums decide unless they are within rounding distance of each other, in
/// which case the products are compared exactly.
fn beats(a: &OptionProbabilities, sa: f64, b: &OptionProbabilities, sb: f64) -> bool {
    let margin = 1e-9 * (1.0 + sa.abs().max(sb.abs()));
    if (sa - sb).abs() > margin {
        return sa > sb;
    }
    exact_product(&a.token_probs) > exact_product(&b.token_probs)
}

/// A positive f64 product held exactly as `mantissa * 2^exponent`.
#[derive(PartialEq, Eq)]
struct ExactProduct {
    mantissa: BigUint,
    exponent: i64,
}

impl PartialOrd for ExactProduct {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExactProduct {
    fn cmp(&self, other: &Self) -> Ordering {
        let lo = self.exponent.min(other.exponent);
        let a = &self.mantissa << (self.exponent - lo) as u64;
        let b = &other.mantissa << (other.exponent - lo) as u64;
        a.cmp(&b)
    }
}

/// Callers have already checked every value is in (0, 1].
fn exact_product(probs: &[f64]) -> ExactProduct {
    let mut mantissa = BigUint::from(1u8);
    let mut exponent = 0i64;
    for &p in probs {
        let bits = p.to_bits();
        let field = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if field == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), field - 1075)
        };
        mantissa *= m;
        exponent += e;
    }
    ExactProduct { mantissa, exponent }
}

pub fn accuracy(predictions: &[Prediction], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(ScoreError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let correct = predictions
        .iter()
        .zip(gold)
        .filter(|(p, &g)| p.chosen == g)
        .count();
    Ok(correct as f64 / gold.len() as f64)
}

/// One line of a scoring input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringExample {
    pub id: String,
    pub gold: usize,
    pub options: Vec<OptionProbabilities>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    pub gold: usize,
    pub chosen: usize,
    pub correct: bool,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub examples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

pub fn score_examples(examples: &[ScoringExample]) -> Result<(Vec<ScoredExample>, ScoreSummary)> {
    let mut scored = Vec::with_capacity(examples.len());
    let mut predictions = Vec::with_capacity(examples.len());
    let mut gold = Vec::with_capacity(examples.len());
    for ex in examples {
        let wrap = |source| ScoreError::Example {
            id: ex.id.clone(),
            source: Box::new(source),
        };
        let pred = predict(&ex.options).map_err(wrap)?;
        if ex.gold >= ex.options.len() {
            return Err(ScoreError::GoldOutOfRange {
                id: ex.id.clone(),
                gold: ex.gold,
                options: ex.options.len(),
            });
        }
        scored.push(ScoredExample {
            id: ex.id.clone(),
            gold: ex.gold,
            chosen: pred.chosen,
            correct: pred.chosen == ex.gold,
            scores: pred.scores.clone(),
        });
        predictions.push(pred);
        gold.push(ex.gold);
    }
    let summary = ScoreSummary {
        examples: scored.len(),
        correct: scored.iter().filter(|s| s.correct).count(),
        accuracy: accuracy(&predictions, &gold)?,
    };
    Ok((scored, summary))
}

pub fn read_scoring_input(path: impl AsRef<Path>) -> Result<Vec<ScoringExample>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, ex)| ex).collect())
}

/// Writes one JSON line per example, then `{"summary": ...}`.
pub fn write_scores(
    scored: &[ScoredExample],
    summary: &ScoreSummary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in scored {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, &serde_json::json!({ "summary": summary }))
        .map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
