//! Token and sample accounting for a selection.
//!
//! All sums are exact integers. Percentages keep their numerator and
//! denominator; rounding happens only in the two-decimal display string.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::SampleRecord;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("selected id `{0}` is not in the corpus")]
    UnknownId(String),
    #[error("selected id `{0}` appears twice")]
    DuplicateId(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentage {
    pub numerator: u64,
    pub denominator: u64,
    /// `100 * numerator / denominator` rounded half-up to two decimals.
    pub display: String,
}

impl Percentage {
    /// A zero denominator reads as 0%.
    pub fn new(numerator: u64, denominator: u64) -> Self {
        let display = if denominator == 0 {
            "0.00".to_string()
        } else {
            let num = numerator as u128 * 10_000;
            let den = denominator as u128;
            let hundredths = (2 * num + den) / (2 * den);
            format!("{}.{:02}", hundredths / 100, hundredths % 100)
        };
        Self {
            numerator,
            denominator,
            display,
        }
    }

    pub fn value(&self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            100.0 * self.numerator as f64 / self.denominator as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub samples: u64,
    pub tokens: u64,
}

impl Totals {
    fn add(&mut self, rec: &SampleRecord) {
        self.samples += 1;
        self.tokens += rec.token_count;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub per_task: BTreeMap<String, Totals>,
    pub corpus: Totals,
    pub selected: Totals,
    /// Task whose totals are the denominator of `percent_of_task`; the whole
    /// corpus when absent.
    pub task: Option<String>,
    pub task_totals: Totals,
    pub percent_of_task: Percentage,
    pub percent_samples_of_task: Percentage,
    pub reference_tokens: Option<u64>,
    pub percent_of_reference: Option<Percentage>,
}

/// Token budget of the samples `selected` (corpus ids) out of `corpus`.
pub fn stats(
    corpus: &[SampleRecord],
    selected: &[String],
    task: Option<&str>,
    reference_tokens: Option<u64>,
) -> Result<BudgetReport, StatsError> {
    let by_id: HashMap<&str, &SampleRecord> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut per_task: BTreeMap<String, Totals> = BTreeMap::new();
    let mut corpus_totals = Totals::default();
    for rec in corpus {
        per_task.entry(rec.task.clone()).or_default().add(rec);
        corpus_totals.add(rec);
    }

    let mut seen = std::collections::HashSet::with_capacity(selected.len());
    let mut selected_totals = Totals::default();
    for id in selected {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| StatsError::UnknownId(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(StatsError::DuplicateId(id.clone()));
        }
        selected_totals.add(rec);
    }

    let task_totals = match task {
        Some(t) => per_task.get(t).copied().unwrap_or_default(),
        None => corpus_totals,
    };
    Ok(BudgetReport {
        per_task,
        corpus: corpus_totals,
        selected: selected_totals,
        task: task.map(str::to_string),
        task_totals,
        percent_of_task: Percentage::new(selected_totals.tokens, task_totals.tokens),
        percent_samples_of_task: Percentage::new(selected_totals.samples, task_totals.samples),
        reference_tokens,
        percent_of_reference: reference_tokens.map(|r| Percentage::new(selected_totals.tokens, r)),
    })
}
