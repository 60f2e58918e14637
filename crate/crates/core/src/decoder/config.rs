use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilm::IlmVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Transducer scores only.
    None,
    /// Shallow fusion with the external LM.
    Sf,
    /// Shallow fusion with internal-LM subtraction.
    SfIlm,
    /// As `SfIlm`, plus the LM EOS probability folded into the final blank.
    SfIlmEos,
}

impl FusionMode {
    pub fn uses_lm(self) -> bool {
        !matches!(self, FusionMode::None)
    }

    pub fn uses_ilm(self) -> bool {
        matches!(self, FusionMode::SfIlm | FusionMode::SfIlmEos)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Sf => "sf",
            FusionMode::SfIlm => "sf_ilm",
            FusionMode::SfIlmEos => "sf_ilm_eos",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "sf" => Ok(FusionMode::Sf),
            "sf_ilm" => Ok(FusionMode::SfIlm),
            "sf_ilm_eos" => Ok(FusionMode::SfIlmEos),
            _ => Err(Error::invalid(format!("unknown fusion mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScalePolicy {
    /// Use `lambda` as given (1 by default).
    #[serde(rename = "fixed_1", alias = "fixed")]
    Fixed,
    /// `lambda = 1 - beta`.
    OneMinusBeta,
}

impl std::str::FromStr for LabelScalePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_1" | "fixed" => Ok(LabelScalePolicy::Fixed),
            "one_minus_beta" => Ok(LabelScalePolicy::OneMinusBeta),
            _ => Err(Error::invalid(format!("unknown label scale policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Label scale `λ` on `log q`.
    pub lambda: f64,
    pub lambda_policy: LabelScalePolicy,
    /// External LM scale `β`.
    pub beta: f64,
    /// Internal LM scale `γ`.
    pub gamma: f64,
    /// Scale on `log p(Δt)`. Kept at 1 unless explicitly changed.
    pub delta: f64,
    /// LM EOS scale at the final blank.
    pub beta_eos: f64,
    /// Blank scale at the final blank.
    pub lambda_eos: f64,
    pub beam_size: usize,
    pub ilm_variant: IlmVariant,
    /// At most `ceil(max_label_ratio * T)` labels per utterance.
    pub max_label_ratio: f64,
    /// Absolute label cap; overrides `max_label_ratio` when set.
    pub max_labels: Option<usize>,
    /// Number of finished hypotheses reported besides the best.
    pub nbest: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::None,
            lambda: 1.0,
            lambda_policy: LabelScalePolicy::Fixed,
            beta: 0.0,
            gamma: 0.0,
            delta: 1.0,
            beta_eos: 0.5,
            lambda_eos: 0.5,
            beam_size: 24,
            ilm_variant: IlmVariant::Avg,
            max_label_ratio: 1.0,
            max_labels: None,
            nbest: 8,
        }
    }
}

/// Scales after applying the mode and label-scale policy. A scale of exactly
/// zero switches its term off entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedScales {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `Some((lambda_eos, beta_eos))` when EOS folding is on.
    pub eos: Option<(f64, f64)>,
}

impl ResolvedScales {
    pub fn lm_needed(&self) -> bool {
        self.beta != 0.0 || self.eos.is_some_and(|(_, b)| b != 0.0)
    }

    pub fn ilm_needed(&self) -> bool {
        self.gamma != 0.0
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size must be >= 1"));
        }
        let scales = [
            self.lambda,
            self.beta,
            self.gamma,
            self.delta,
            self.beta_eos,
            self.lambda_eos,
        ];
        if scales.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("fusion scales".into()));
        }
        if !(self.max_label_ratio > 0.0 && self.max_label_ratio.is_finite()) {
            return Err(Error::invalid("max_label_ratio must be positive"));
        }
        Ok(())
    }

    pub fn resolve(&self) -> ResolvedScales {
        let (beta, gamma) = match self.mode {
            FusionMode::None => (0.0, 0.0),
            FusionMode::Sf => (self.beta, 0.0),
            FusionMode::SfIlm | FusionMode::SfIlmEos => (self.beta, self.gamma),
        };
        let lambda = match self.lambda_policy {
            LabelScalePolicy::Fixed => self.lambda,
            LabelScalePolicy::OneMinusBeta => 1.0 - beta,
        };
        ResolvedScales {
            lambda,
            beta,
            gamma,
            delta: self.delta,
            eos: (self.mode == FusionMode::SfIlmEos).then_some((self.lambda_eos, self.beta_eos)),
        }
    }

    pub fn label_cap(&self, frames: usize) -> usize {
        if let Some(cap) = self.max_labels {
            return cap;
        }
        (self.max_label_ratio * frames as f64).ceil() as usize
    }
}
