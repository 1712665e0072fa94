//! Action prior, prior re-weighting of verb x noun scores, and top-k accuracy.

use crate::data::Episode;
use crate::sap::{infer, AblationVariant, SapConfig, SapError, SapParams};
use crate::training::Labels;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no labels to estimate a prior from")]
    EmptyLabels,
    #[error("label ({verb}, {noun}) outside {verbs} x {nouns}")]
    LabelOutOfRange {
        verb: usize,
        noun: usize,
        verbs: usize,
        nouns: usize,
    },
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("k must be at least 1")]
    BadK,
    #[error("{0} scores but {1} ground-truth labels")]
    CountMismatch(usize, usize),
    #[error("prior entries must be finite and non-negative")]
    BadPrior,
    #[error(transparent)]
    Sap(#[from] SapError),
}

/// Training-set co-occurrence frequency of each (verb, noun) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPrior {
    verbs: usize,
    nouns: usize,
    /// Row-major `verbs x nouns`.
    table: Vec<f64>,
    total_count: u64,
}

impl ActionPrior {
    /// `table[v][u] = count(v, u) / total`; unseen pairs are exactly 0.
    pub fn estimate(labels: &[Labels], verbs: usize, nouns: usize) -> Result<Self, EvalError> {
        Self::estimate_with_min_count(labels, verbs, nouns, 0)
    }

    /// As [`ActionPrior::estimate`], but pairs seen fewer than `min_count`
    /// times are dropped before normalizing.
    pub fn estimate_with_min_count(
        labels: &[Labels],
        verbs: usize,
        nouns: usize,
        min_count: u64,
    ) -> Result<Self, EvalError> {
        if labels.is_empty() {
            return Err(EvalError::EmptyLabels);
        }
        let mut counts = vec![0u64; verbs * nouns];
        for l in labels {
            if l.verb >= verbs || l.noun >= nouns {
                return Err(EvalError::LabelOutOfRange {
                    verb: l.verb,
                    noun: l.noun,
                    verbs,
                    nouns,
                });
            }
            counts[l.verb * nouns + l.noun] += 1;
        }
        for c in counts.iter_mut() {
            if *c < min_count {
                *c = 0;
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(EvalError::EmptyLabels);
        }
        Ok(Self {
            verbs,
            nouns,
            table: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            total_count: total,
        })
    }

    /// Arbitrary non-negative table; not renormalized.
    pub fn from_table(verbs: usize, nouns: usize, table: Vec<f64>) -> Result<Self, EvalError> {
        if table.len() != verbs * nouns {
            return Err(EvalError::Dimension {
                what: "prior table",
                expected: verbs * nouns,
                found: table.len(),
            });
        }
        if !table.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(EvalError::BadPrior);
        }
        Ok(Self {
            verbs,
            nouns,
            table,
            total_count: 0,
        })
    }

    /// `mu = 1` everywhere: re-weighting becomes the plain product.
    pub fn flat(verbs: usize, nouns: usize) -> Self {
        Self {
            verbs,
            nouns,
            table: vec![1.0; verbs * nouns],
            total_count: 0,
        }
    }

    pub fn verbs(&self) -> usize {
        self.verbs
    }

    pub fn nouns(&self) -> usize {
        self.nouns
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn get(&self, verb: usize, noun: usize) -> f64 {
        self.table[verb * self.nouns + noun]
    }

    /// Copy scaled to sum to 1.
    pub fn normalized(&self) -> Self {
        let s: f64 = self.table.iter().sum();
        let mut out = self.clone();
        if s > 0.0 {
            out.table.iter_mut().for_each(|x| *x /= s);
        }
        out
    }

    /// Fraction of pairs with zero prior.
    pub fn zero_fraction(&self) -> f64 {
        self.table.iter().filter(|&&x| x == 0.0).count() as f64 / self.table.len() as f64
    }
}

/// `scores[v][u] = mu(v, u) * P(verb = v) * P(noun = u)`, row-major.
pub fn reweight_action_scores(
    verb_probs: &[f64],
    noun_probs: &[f64],
    prior: &ActionPrior,
) -> Result<Vec<f64>, EvalError> {
    check_prior(verb_probs.len(), noun_probs.len(), prior)?;
    let mut out = Vec::with_capacity(prior.table.len());
    for (v, pv) in verb_probs.iter().enumerate() {
        for (u, pn) in noun_probs.iter().enumerate() {
            out.push(prior.get(v, u) * pv * pn);
        }
    }
    Ok(out)
}

fn check_prior(verbs: usize, nouns: usize, prior: &ActionPrior) -> Result<(), EvalError> {
    if verbs != prior.verbs {
        return Err(EvalError::Dimension {
            what: "verb probabilities vs prior",
            expected: prior.verbs,
            found: verbs,
        });
    }
    if nouns != prior.nouns {
        return Err(EvalError::Dimension {
            what: "noun probabilities vs prior",
            expected: prior.nouns,
            found: nouns,
        });
    }
    Ok(())
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = crate::tensor::log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Branch probabilities and both action score matrices of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub verb_probs: Vec<f64>,
    pub noun_probs: Vec<f64>,
    /// Prior-weighted products, `verbs x nouns` row-major.
    pub action_scores: Vec<f64>,
    /// `log` of `action_scores` computed without underflow; `-inf` where the
    /// prior is zero. Ranks identically to `action_scores`.
    pub action_log_scores: Vec<f64>,
    /// `log P(verb) + log P(noun)`, no prior.
    pub raw_action_log_scores: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(verb_logits: &[f64], noun_logits: &[f64], prior: &ActionPrior) -> Result<Self, EvalError> {
        check_prior(verb_logits.len(), noun_logits.len(), prior)?;
        let lv = log_softmax(verb_logits);
        let ln = log_softmax(noun_logits);
        let verb_probs: Vec<f64> = lv.iter().map(|x| x.exp()).collect();
        let noun_probs: Vec<f64> = ln.iter().map(|x| x.exp()).collect();
        let action_scores = reweight_action_scores(&verb_probs, &noun_probs, prior)?;
        let mut action_log_scores = Vec::with_capacity(action_scores.len());
        let mut raw_action_log_scores = Vec::with_capacity(action_scores.len());
        for (v, a) in lv.iter().enumerate() {
            for (u, b) in ln.iter().enumerate() {
                let mu = prior.get(v, u);
                raw_action_log_scores.push(a + b);
                action_log_scores.push(if mu > 0.0 { mu.ln() + a + b } else { f64::NEG_INFINITY });
            }
        }
        Ok(Self {
            verb_probs,
            noun_probs,
            action_scores,
            action_log_scores,
            raw_action_log_scores,
        })
    }

    pub fn nouns(&self) -> usize {
        self.noun_probs.len()
    }

    /// Highest prior-weighted action as `(verb, noun)`.
    pub fn predicted_action(&self) -> (usize, usize) {
        let i = argmax(&self.action_log_scores);
        (i / self.nouns(), i % self.nouns())
    }

    pub fn predicted_raw_action(&self) -> (usize, usize) {
        let i = argmax(&self.raw_action_log_scores);
        (i / self.nouns(), i % self.nouns())
    }
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// 0-based rank of `target`; ties are broken by ascending class index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Fraction of samples whose true class is among the `k` highest scores.
///
/// `k` larger than the class count is clamped, with a warning.
pub fn topk_accuracy(scores: &[Vec<f64>], truth: &[usize], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if scores.len() != truth.len() {
        return Err(EvalError::CountMismatch(scores.len(), truth.len()));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let classes = scores[0].len();
    let k = if k > classes {
        log::warn!("top-{k} requested over {classes} classes; clamping to {classes}");
        classes
    } else {
        k
    };
    let mut hits = 0usize;
    for (s, &t) in scores.iter().zip(truth) {
        if s.len() != classes {
            return Err(EvalError::Dimension {
                what: "score vector",
                expected: classes,
                found: s.len(),
            });
        }
        if t >= classes {
            return Err(EvalError::Dimension {
                what: "true class index bound",
                expected: classes,
                found: t,
            });
        }
        if rank_of(s, t) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// Accuracies at one `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub verb: f64,
    pub noun: f64,
    /// Prior re-weighted action accuracy.
    pub action: f64,
    /// Plain verb x noun product accuracy.
    pub action_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub topk: Vec<TopK>,
    /// Prior-weighted argmax per sample.
    pub predicted_actions: Vec<(usize, usize)>,
    pub fallbacks: usize,
}

impl Evaluation {
    pub fn at(&self, k: usize) -> Option<&TopK> {
        self.topk.iter().find(|t| t.k == k)
    }
}

/// Runs the model over `dataset` and scores verb, noun and action top-k.
pub fn evaluate(
    params: &SapParams,
    dataset: &[Episode],
    prior: &ActionPrior,
    variant: AblationVariant,
    cfg: &SapConfig,
    ks: &[usize],
) -> Result<Evaluation, EvalError> {
    let mut verb_scores = Vec::with_capacity(dataset.len());
    let mut noun_scores = Vec::with_capacity(dataset.len());
    let mut action_scores = Vec::with_capacity(dataset.len());
    let mut raw_scores = Vec::with_capacity(dataset.len());
    let mut predicted_actions = Vec::with_capacity(dataset.len());
    let mut fallbacks = 0;
    for ep in dataset {
        let out = infer(params, ep.inputs(), variant, cfg)?;
        fallbacks += usize::from(out.fallback);
        let pred = Prediction::from_logits(&out.verb_logits, &out.noun_logits, prior)?;
        predicted_actions.push(pred.predicted_action());
        verb_scores.push(out.verb_logits);
        noun_scores.push(out.noun_logits);
        action_scores.push(pred.action_log_scores);
        raw_scores.push(pred.raw_action_log_scores);
    }
    let verb_truth: Vec<usize> = dataset.iter().map(|e| e.labels.verb).collect();
    let noun_truth: Vec<usize> = dataset.iter().map(|e| e.labels.noun).collect();
    let action_truth: Vec<usize> = dataset
        .iter()
        .map(|e| e.labels.verb * prior.nouns() + e.labels.noun)
        .collect();
    let topk = ks
        .iter()
        .map(|&k| {
            Ok(TopK {
                k,
                verb: topk_accuracy(&verb_scores, &verb_truth, k)?,
                noun: topk_accuracy(&noun_scores, &noun_truth, k)?,
                action: topk_accuracy(&action_scores, &action_truth, k)?,
                action_raw: topk_accuracy(&raw_scores, &action_truth, k)?,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(Evaluation {
        topk,
        predicted_actions,
        fallbacks,
    })
}
