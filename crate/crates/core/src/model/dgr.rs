//! Dynamic gradient reversal control.
//!
//! The ideal identification loss of a head over `N_c` identities is the
//! entropy of the uniform distribution, `ln N_c`. After every step the
//! reversal coefficient is reset to the relative gap between the observed
//! identification loss and that ideal, starting from 1.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, AsifError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgrMode {
    /// Coefficient follows the loss gap every step.
    Dynamic,
    /// Constant coefficient, as in a DANN-style reversal layer.
    Fixed,
}

/// How a dynamic `lambda` becomes the reversal layer's coefficient.
///
/// The reversal layer's backward pass multiplies by `-coefficient`.
/// `Literal` uses `coefficient = lambda`. `Suppression` uses
/// `coefficient = -lambda`, so while the identifier beats chance
/// (`lambda < 0`) the extractor receives a reversed gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgrSign {
    Literal,
    #[default]
    Suppression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgrState {
    pub lambda: f64,
    pub ideal_loss: f64,
    pub mode: DgrMode,
}

/// `ln(n_c)`.
pub fn ideal_identification_loss(n_c: usize) -> Result<f64> {
    if n_c < 1 {
        return Err(invalid("n_c", "a head needs at least one identity"));
    }
    Ok((n_c as f64).ln())
}

impl DgrState {
    pub const INITIAL_LAMBDA: f64 = 1.0;

    pub fn dynamic(n_c: usize) -> Result<Self> {
        Ok(Self {
            lambda: Self::INITIAL_LAMBDA,
            ideal_loss: ideal_identification_loss(n_c)?,
            mode: DgrMode::Dynamic,
        })
    }

    pub fn fixed(n_c: usize, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(invalid("lambda", format!("{lambda}")));
        }
        Ok(Self {
            lambda,
            ideal_loss: ideal_identification_loss(n_c)?,
            mode: DgrMode::Fixed,
        })
    }

    /// Records one observed identification loss.
    pub fn update(&mut self, observed_loss: f64) -> Result<()> {
        if !observed_loss.is_finite() {
            return Err(AsifError::NonFinite {
                context: "identification loss fed to the reversal controller".into(),
            });
        }
        if !(self.ideal_loss > 0.0) {
            return Err(invalid("ideal_loss", format!("{} must be > 0", self.ideal_loss)));
        }
        if self.mode == DgrMode::Dynamic {
            self.lambda = (observed_loss - self.ideal_loss) / self.ideal_loss;
        }
        Ok(())
    }

    /// Whether [`DgrState::update`] can be applied (a single-identity head
    /// has a zero ideal loss and nothing to control).
    pub fn controllable(&self) -> bool {
        self.ideal_loss > 0.0
    }

    /// Coefficient handed to the reversal layer. Fixed mode always uses the
    /// DANN convention (`coefficient = lambda`).
    pub fn reversal_coefficient(&self, sign: DgrSign) -> f64 {
        match (self.mode, sign) {
            (DgrMode::Dynamic, DgrSign::Suppression) => -self.lambda,
            _ => self.lambda,
        }
    }
}

/// Functional form of [`DgrState::update`].
pub fn dgr_update(state: &DgrState, observed_loss: f64) -> Result<DgrState> {
    let mut next = state.clone();
    next.update(observed_loss)?;
    Ok(next)
}
