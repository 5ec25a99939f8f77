//! The five potential-outcome quantities, the five path-specific effects built
//! from them, an exact oracle over discrete models, and a plug-in estimator.

pub(crate) mod plugin;
mod scm;

pub use plugin::plugin_sequential;
pub use scm::{standardized_arm_means, DiscreteScm, OutcomeNoise};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    X0,
    X1,
}

impl Arm {
    pub fn is_x1(self) -> bool {
        self == Arm::X1
    }

    pub fn index(self) -> usize {
        usize::from(self.is_x1())
    }

    pub fn code(self) -> f64 {
        f64::from(u8::from(self.is_x1()))
    }
}

/// Interventional schedule over the outcome, B-generating and R-generating stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub y_arm: Arm,
    pub b_arm: Arm,
    pub r_arm: Arm,
    pub nested: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::Q1,
        Quantity::Q2,
        Quantity::Q3,
        Quantity::Q4,
        Quantity::Q5,
    ];

    pub fn spec(self) -> EstimandSpec {
        use Arm::*;
        let (y_arm, b_arm, r_arm, nested) = match self {
            Quantity::Q1 => (X0, X0, X0, false),
            Quantity::Q2 => (X1, X1, X1, false),
            Quantity::Q3 => (X1, X0, X0, false),
            Quantity::Q4 => (X1, X0, X1, true),
            Quantity::Q5 => (X1, X1, X0, true),
        };
        EstimandSpec {
            y_arm,
            b_arm,
            r_arm,
            nested,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl EstimandSpec {
    /// The supported quantity this schedule denotes.
    pub fn quantity(&self) -> Result<Quantity> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.spec() == *self)
            .ok_or_else(|| Error::invalid(format!("unsupported estimand {self:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Effect {
    #[serde(rename = "TE")]
    Te,
    #[serde(rename = "NDE")]
    Nde,
    #[serde(rename = "NIE")]
    Nie,
    #[serde(rename = "BIE")]
    Bie,
    #[serde(rename = "RIE")]
    Rie,
}

impl Effect {
    pub const ALL: [Effect; 5] = [
        Effect::Te,
        Effect::Nde,
        Effect::Nie,
        Effect::Bie,
        Effect::Rie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Effect::Te => "TE",
            Effect::Nde => "NDE",
            Effect::Nie => "NIE",
            Effect::Bie => "BIE",
            Effect::Rie => "RIE",
        }
    }

    /// Coefficients of the effect as a linear form in (q1..q5).
    pub fn weights(self) -> [f64; 5] {
        match self {
            Effect::Te => [-1.0, 1.0, 0.0, 0.0, 0.0],
            Effect::Nde => [-1.0, 0.0, 1.0, 0.0, 0.0],
            Effect::Nie => [0.0, 1.0, -1.0, 0.0, 0.0],
            Effect::Bie => [0.0, 0.5, -0.5, -0.5, 0.5],
            Effect::Rie => [0.0, 0.5, -0.5, 0.5, -0.5],
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct Effects<T> {
    pub te: T,
    pub nde: T,
    pub nie: T,
    pub bie: T,
    pub rie: T,
}

impl<T> Effects<T> {
    pub fn get(&self, e: Effect) -> &T {
        match e {
            Effect::Te => &self.te,
            Effect::Nde => &self.nde,
            Effect::Nie => &self.nie,
            Effect::Bie => &self.bie,
            Effect::Rie => &self.rie,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Effect) -> T) -> Self {
        Effects {
            te: f(Effect::Te),
            nde: f(Effect::Nde),
            nie: f(Effect::Nie),
            bie: f(Effect::Bie),
            rie: f(Effect::Rie),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Effect, &T) -> U) -> Effects<U> {
        Effects::from_fn(|e| f(e, self.get(e)))
    }
}

pub type EffectSet = Effects<f64>;

/// Effects from the five quantities.
///
/// BIE and RIE are formed first; NIE is their sum, NDE is `q3 - q1`, and TE is
/// `NDE + NIE`, so both decompositions hold exactly in floating point.
pub fn effects_from_quantities(q: [f64; 5]) -> Result<EffectSet> {
    if let Some(i) = q.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            quantity: format!("Q{}", i + 1),
            row: 0,
        });
    }
    let [q1, q2, q3, q4, q5] = q;
    let bie = 0.5 * ((q2 - q4) + (q5 - q3));
    let rie = 0.5 * ((q2 - q5) + (q4 - q3));
    let nie = bie + rie;
    let nde = q3 - q1;
    Ok(EffectSet {
        te: nde + nie,
        nde,
        nie,
        bie,
        rie,
    })
}
