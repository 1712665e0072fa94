use super::SapError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Rows of the component ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Integrate, cross-stream gate, cross-stream attention.
    Full,
    /// Classifier on the branch's own global feature.
    Baseline,
    /// Cross-stream gate applied directly to the global feature; no bank.
    NounPlusVerb,
    /// Classifier on the row mean of the raw bank.
    AvgPool,
    /// Classifier on the row max of the raw bank.
    MaxPool,
    /// Integrate, then row mean.
    NoCsgNoArm,
    /// Cross-stream modulation without the sigmoid, then cross-stream attention.
    NoGating,
    /// Gate and attend with the branch's own global feature.
    NoCrossStream,
    /// Integrate, then cross-stream attention.
    NoCsg,
    /// Integrate, cross-stream gate, then row mean.
    NoArm,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 10] = [
        AblationVariant::Baseline,
        AblationVariant::NounPlusVerb,
        AblationVariant::AvgPool,
        AblationVariant::MaxPool,
        AblationVariant::NoCsgNoArm,
        AblationVariant::NoGating,
        AblationVariant::NoCrossStream,
        AblationVariant::NoCsg,
        AblationVariant::NoArm,
        AblationVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::Baseline => "baseline",
            AblationVariant::NounPlusVerb => "noun_plus_verb",
            AblationVariant::AvgPool => "avg_pool",
            AblationVariant::MaxPool => "max_pool",
            AblationVariant::NoCsgNoArm => "no_csg_no_arm",
            AblationVariant::NoGating => "no_gating",
            AblationVariant::NoCrossStream => "no_cross_stream",
            AblationVariant::NoCsg => "no_csg",
            AblationVariant::NoArm => "no_arm",
        }
    }

    /// Whether the variant reads the object bank at all.
    pub fn uses_bank(self) -> bool {
        !matches!(self, AblationVariant::Baseline | AblationVariant::NounPlusVerb)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = SapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| SapError::UnknownVariant(s.to_string()))
    }
}
