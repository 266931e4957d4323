//! ANLS scoring and multi-page answer selection.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocr::QARecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no gold answers to score against")]
    NoGolds,
    #[error("prediction for unknown question_id `{0}`")]
    UnknownQuestion(String),
    #[error("duplicate prediction for question_id `{0}`")]
    DuplicatePrediction(String),
    #[error("no candidates to select from")]
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub answer: String,
    /// 0..=100; only produced by the multi-page confidence flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
}

impl Prediction {
    pub fn new(question_id: impl Into<String>, answer: impl Into<String>) -> Self {
        Prediction {
            question_id: question_id.into(),
            answer: answer.into(),
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnlsOptions {
    /// Normalised distances at or above this score zero.
    pub threshold: f64,
    /// Lowercase both sides before comparing.
    pub lowercase: bool,
}

impl Default for AnlsOptions {
    fn default() -> Self {
        AnlsOptions {
            threshold: 0.5,
            lowercase: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnlsReport {
    pub per_question: BTreeMap<String, f64>,
    pub mean: f64,
    pub count: usize,
    /// Questions with no prediction; they score 0.
    pub missing: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_group: BTreeMap<String, f64>,
}

/// Character-level Levenshtein distance (two-row DP).
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over the longer length; 0 when both are empty.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

pub fn normalize_answer(s: &str, lowercase: bool) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if lowercase {
        collapsed.to_lowercase()
    } else {
        collapsed
    }
}

/// Best similarity against any gold answer.
pub fn anls_question(pred: &str, golds: &[String], opts: &AnlsOptions) -> Result<f64, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::NoGolds);
    }
    let pred = normalize_answer(pred, opts.lowercase);
    Ok(golds
        .iter()
        .map(|g| {
            let nl = normalized_levenshtein(&pred, &normalize_answer(g, opts.lowercase));
            if nl < opts.threshold {
                1.0 - nl
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max))
}

/// Score predictions against every record that has gold answers. Records
/// without a prediction score 0.
pub fn anls_dataset(
    preds: &[Prediction],
    records: &[QARecord],
    opts: &AnlsOptions,
) -> Result<AnlsReport, EvalError> {
    let known: HashMap<&str, &QARecord> = records.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in preds {
        if !known.contains_key(p.question_id.as_str()) {
            return Err(EvalError::UnknownQuestion(p.question_id.clone()));
        }
        if by_id.insert(p.question_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.question_id.clone()));
        }
    }

    let mut per_question = BTreeMap::new();
    let mut missing = Vec::new();
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.gold_answers.is_empty()) {
        let score = match by_id.get(r.question_id.as_str()) {
            Some(p) => anls_question(&p.answer, &r.gold_answers, opts)?,
            None => {
                missing.push(r.question_id.clone());
                0.0
            }
        };
        per_question.insert(r.question_id.clone(), score);
        if let Some(g) = &r.group {
            let e = groups.entry(g.clone()).or_default();
            e.0 += score;
            e.1 += 1;
        }
    }
    let count = per_question.len();
    // sum in key order so the mean does not depend on input order
    let mean = if count == 0 {
        0.0
    } else {
        per_question.values().sum::<f64>() / count as f64
    };
    Ok(AnlsReport {
        per_question,
        mean,
        count,
        missing,
        per_group: groups.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    })
}

/// Split a `"<confidence>, <answer>"` completion at its first comma. Anything
/// that does not start with an integer keeps the whole text as the answer
/// with confidence 0.
pub fn parse_confident_answer(question_id: &str, raw: &str) -> Prediction {
    let raw = raw.trim();
    let parsed = raw
        .split_once(',')
        .and_then(|(left, right)| parse_confidence(left).map(|c| (c, right.trim())));
    let (confidence, answer) = parsed.unwrap_or((0, raw));
    Prediction {
        question_id: question_id.to_string(),
        answer: answer.to_string(),
        confidence: Some(confidence),
    }
}

fn parse_confidence(s: &str) -> Option<u8> {
    let s = s.trim();
    let (negative, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if negative {
        return Some(0);
    }
    // saturates on overflow
    let value = digits.parse::<u64>().unwrap_or(u64::MAX);
    Some(value.min(100) as u8)
}

/// Index of the most confident candidate; the earliest wins ties. A missing
/// confidence counts as 0.
pub fn max_conf_index(candidates: &[Prediction]) -> Result<usize, EvalError> {
    let mut best: Option<(usize, u8)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let conf = c.confidence.unwrap_or(0);
        if best.is_none_or(|(_, b)| conf > b) {
            best = Some((i, conf));
        }
    }
    best.map(|(i, _)| i).ok_or(EvalError::NoCandidates)
}

pub fn max_conf_select(candidates: &[Prediction]) -> Result<&Prediction, EvalError> {
    max_conf_index(candidates).map(|i| &candidates[i])
}
