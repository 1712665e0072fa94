//! Symbiotic attention over privileged detection features.
//!
//! Each branch (verb, noun) runs the same three stages on its own parameter
//! set: the object bank is fused with the branch's global feature, the fused
//! matrix is rescaled by a sigmoid gate computed from the *other* branch, and
//! the gated rows are pooled by softmax attention whose query is again the
//! other branch's global feature.

mod forward;
mod params;
mod stages;
mod variant;

pub use forward::{infer, sap_forward, BranchTrace, ForwardVars, Inference, SapActivations, SapInputs};
pub use params::{BoundBranch, BoundParams, BranchParams, ModelDims, SapParams, PARAM_NAMES};
pub use stages::{
    attend_relation, cross_stream_gate, integrate_privileged, pool_bank, BranchInput, GateSource,
    PoolMode,
};
pub use variant::AblationVariant;

use crate::tensor::{Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SapError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("object bank has no rows")]
    EmptyBank,
    #[error("cross-stream gating needs the opposite branch's feature, got the {0:?} branch")]
    SameBranchGate(Branch),
    #[error("same-stream gating needs the {expected:?} branch's own feature, got {found:?}")]
    WrongGateSource { expected: Branch, found: Branch },
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("invalid object bank: {0}")]
    InvalidBank(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Verb,
    Noun,
}

impl Branch {
    pub fn opposite(self) -> Self {
        match self {
            Branch::Verb => Branch::Noun,
            Branch::Noun => Branch::Verb,
        }
    }
}

/// Global clip-level feature of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchFeature {
    pub values: Vec<f64>,
    pub branch: Branch,
}

impl BranchFeature {
    pub fn verb(values: Vec<f64>) -> Self {
        Self {
            values,
            branch: Branch::Verb,
        }
    }

    pub fn noun(values: Vec<f64>) -> Self {
        Self {
            values,
            branch: Branch::Noun,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One detection before top-K filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub confidence: f64,
    pub feature: Vec<f64>,
}

/// `N x C` matrix of detection features, `K` rows per sampled frame.
///
/// Rows are grouped by frame and sorted by non-increasing confidence within
/// each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBank {
    features: Vec<f64>,
    channels: usize,
    confidences: Vec<f64>,
    frame_index: Vec<usize>,
}

impl ObjectBank {
    pub fn new(
        features: Vec<f64>,
        channels: usize,
        confidences: Vec<f64>,
        frame_index: Vec<usize>,
    ) -> Result<Self, SapError> {
        let n = confidences.len();
        if frame_index.len() != n {
            return Err(SapError::InvalidBank(format!(
                "{} confidences but {} frame indices",
                n,
                frame_index.len()
            )));
        }
        if features.len() != n * channels {
            return Err(SapError::Dimension {
                what: "bank features",
                expected: n * channels,
                found: features.len(),
            });
        }
        if !features.iter().all(|x| x.is_finite()) {
            return Err(SapError::InvalidBank("non-finite feature".into()));
        }
        if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(SapError::InvalidBank(format!("confidence {c} outside [0, 1]")));
        }
        for i in 1..n {
            let (prev, cur) = (frame_index[i - 1], frame_index[i]);
            if cur < prev {
                return Err(SapError::InvalidBank("rows not grouped by frame".into()));
            }
            if cur == prev && confidences[i] > confidences[i - 1] {
                return Err(SapError::InvalidBank(format!(
                    "confidences increase within frame {cur}"
                )));
            }
        }
        Ok(Self {
            features,
            channels,
            confidences,
            frame_index,
        })
    }

    pub fn empty(channels: usize) -> Self {
        Self {
            features: Vec::new(),
            channels,
            confidences: Vec::new(),
            frame_index: Vec::new(),
        }
    }

    /// Keeps the `k` most confident detections of every frame.
    pub fn from_frames(frames: Vec<Vec<Detection>>, k: usize, channels: usize) -> Result<Self, SapError> {
        Self::select_top_k(frames, k, channels).map(|(bank, _)| bank)
    }

    /// As [`ObjectBank::from_frames`], also returning for every kept row its
    /// position in the frame's original detection list.
    pub fn select_top_k(
        frames: Vec<Vec<Detection>>,
        k: usize,
        channels: usize,
    ) -> Result<(Self, Vec<usize>), SapError> {
        let mut features = Vec::with_capacity(frames.len() * k * channels);
        let mut confidences = Vec::with_capacity(frames.len() * k);
        let mut frame_index = Vec::with_capacity(frames.len() * k);
        let mut sources = Vec::with_capacity(frames.len() * k);
        for (f, dets) in frames.into_iter().enumerate() {
            if dets.len() < k {
                return Err(SapError::InvalidBank(format!(
                    "frame {f} has {} detections, need {k}",
                    dets.len()
                )));
            }
            let mut dets: Vec<(usize, Detection)> = dets.into_iter().enumerate().collect();
            // stable: equal confidences keep detector order
            dets.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));
            for (src, d) in dets.into_iter().take(k) {
                sources.push(src);
                if d.feature.len() != channels {
                    return Err(SapError::Dimension {
                        what: "detection feature",
                        expected: channels,
                        found: d.feature.len(),
                    });
                }
                features.extend(d.feature);
                confidences.push(d.confidence);
                frame_index.push(f);
            }
        }
        Ok((Self::new(features, channels, confidences, frame_index)?, sources))
    }

    pub fn rows(&self) -> usize {
        self.confidences.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn frame_index(&self) -> &[usize] {
        &self.frame_index
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.rows(), self.channels, self.features.clone())
            .expect("bank shape validated at construction")
    }

    /// Reorders rows; `order[i]` is the source row of output row `i`.
    ///
    /// The result is not re-validated, so frame grouping may be broken.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut features = Vec::with_capacity(self.features.len());
        for &i in order {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            channels: self.channels,
            confidences: order.iter().map(|&i| self.confidences[i]).collect(),
            frame_index: order.iter().map(|&i| self.frame_index[i]).collect(),
        }
    }
}

/// Model-level switches that are not learned.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SapConfig {
    /// Multiplier applied to attention logits. `None` keeps raw dot products.
    pub attention_scale: Option<f64>,
}
