//! Activation functions usable in the LSTM cell.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default initial slope of the parameterised Elliot function.
pub const DEFAULT_PEF_ALPHA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    /// `x / (1 + |x|)`
    Elliot,
    /// `alpha * x / (1 + |x|)` with trainable `alpha`.
    ParamElliot,
}

impl ActivationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Elliot => "elliot",
            Self::ParamElliot => "param_elliot",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "elliot" | "ef" => Ok(Self::Elliot),
            "param_elliot" | "pef" => Ok(Self::ParamElliot),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// An activation with its shape parameter. `alpha` only matters (and is only
/// trained) for [`ActivationKind::ParamElliot`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub alpha: f64,
}

impl Activation {
    pub const fn sigmoid() -> Self {
        Self { kind: ActivationKind::Sigmoid, alpha: 1.0 }
    }

    pub const fn tanh() -> Self {
        Self { kind: ActivationKind::Tanh, alpha: 1.0 }
    }

    pub const fn elliot() -> Self {
        Self { kind: ActivationKind::Elliot, alpha: 1.0 }
    }

    pub const fn param_elliot(alpha: f64) -> Self {
        Self { kind: ActivationKind::ParamElliot, alpha }
    }

    /// `kind` with the default alpha (1.5 for the parameterised Elliot).
    pub fn from_kind(kind: ActivationKind) -> Self {
        match kind {
            ActivationKind::Sigmoid => Self::sigmoid(),
            ActivationKind::Tanh => Self::tanh(),
            ActivationKind::Elliot => Self::elliot(),
            ActivationKind::ParamElliot => Self::param_elliot(DEFAULT_PEF_ALPHA),
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ActivationKind::ParamElliot
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Elliot => elliot(x),
            ActivationKind::ParamElliot => self.alpha * elliot(x),
        }
    }

    /// Derivative with respect to `x`.
    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Elliot => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            ActivationKind::ParamElliot => {
                let d = 1.0 + x.abs();
                self.alpha / (d * d)
            }
        }
    }

    /// Derivative with respect to `alpha`: `x / (1 + |x|)` for the
    /// parameterised Elliot, zero otherwise.
    #[inline]
    pub fn alpha_grad(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::ParamElliot => elliot(x),
            _ => 0.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ActivationKind::ParamElliot => write!(f, "param_elliot(alpha={})", self.alpha),
            k => write!(f, "{k}"),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn elliot(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

pub fn activation_eval(a: &Activation, x: f64) -> f64 {
    a.eval(x)
}

pub fn activation_grad(a: &Activation, x: f64) -> f64 {
    a.grad(x)
}
