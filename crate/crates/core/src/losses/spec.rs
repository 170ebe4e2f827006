use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LossError, Result};

pub const ALPHA: &str = "alpha";
pub const BETA: &str = "beta";
pub const LAMBDA: &str = "lambda";
pub const EPSILON: &str = "epsilon";
pub const EXPONENT: &str = "exponent";
pub const ITERATIONS: &str = "iterations";

macro_rules! loss_ids {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// One loss formula with a pinned implementation variant.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum LossId {
            $($variant),*
        }

        impl LossId {
            pub const ALL: &'static [LossId] = &[$(LossId::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(LossId::$variant => $name),*
                }
            }
        }

        impl FromStr for LossId {
            type Err = LossError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(LossId::$variant),)*
                    other => Err(LossError::UnknownLoss(other.to_string())),
                }
            }
        }
    };
}

loss_ids! {
    Asym => "ASYM",
    Bce => "BCE",
    Dice => "DICE",
    SoftDice => "SOFTD",
    GDiceL => "GDICE_L",
    GDiceW => "GDICE_W",
    GDiceM => "GDICE_M",
    HausdorffDt => "HDDT",
    HausdorffEr => "HDER",
    Iou => "IOU",
    Jaccard => "JAC",
    SensitivitySpecificity => "SS",
    Tversky => "TVERSKY",
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl LossId {
    /// Default parameters. Every parameter a formula reads is listed here.
    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            LossId::Asym => &[(BETA, 1.5), (EPSILON, 1.0)],
            LossId::Bce => &[(EPSILON, 1e-7)],
            LossId::Dice => &[(EPSILON, 1e-5)],
            LossId::SoftDice => &[(EPSILON, 1.0)],
            LossId::GDiceL => &[(EPSILON, 1e-10)],
            LossId::GDiceW => &[(EPSILON, 1e-6)],
            LossId::GDiceM => &[(EPSILON, 1e-5)],
            LossId::HausdorffDt => &[(EXPONENT, 2.0)],
            LossId::HausdorffEr => &[(EXPONENT, 2.0), (ITERATIONS, 10.0)],
            LossId::Iou => &[(EPSILON, 1e-6)],
            LossId::Jaccard => &[(EPSILON, 1e-5)],
            LossId::SensitivitySpecificity => &[(LAMBDA, 0.05), (EPSILON, 1e-5)],
            LossId::Tversky => &[(ALPHA, 0.3), (BETA, 0.7), (EPSILON, 1e-5)],
        }
    }
}

/// A loss formula together with its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub id: LossId,
    pub params: BTreeMap<String, f64>,
}

impl LossSpec {
    pub fn new(id: LossId) -> Self {
        let params = id.defaults().iter().map(|(k, v)| (k.to_string(), *v)).collect();
        LossSpec { id, params }
    }

    pub fn tversky(alpha: f64, beta: f64) -> Result<Self> {
        LossSpec::new(LossId::Tversky).with(ALPHA, alpha)?.with(BETA, beta)
    }

    /// Replace one parameter. Names the formula does not read are rejected.
    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        if !self.params.contains_key(name) {
            return Err(LossError::InvalidParameter {
                loss: self.id,
                name: name.to_string(),
                message: "not a parameter of this loss".into(),
            });
        }
        self.params.insert(name.to_string(), value);
        self.validate()?;
        Ok(self)
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, message: &str| LossError::InvalidParameter {
            loss: self.id,
            name: name.to_string(),
            message: message.to_string(),
        };
        for (name, _) in self.id.defaults() {
            if !self.params.contains_key(*name) {
                return Err(bad(name, "missing"));
            }
        }
        for (name, v) in &self.params {
            if !self.id.defaults().iter().any(|(k, _)| k == name) {
                return Err(bad(name, "not a parameter of this loss"));
            }
            if !v.is_finite() {
                return Err(bad(name, "must be finite"));
            }
            match name.as_str() {
                EPSILON if self.id == LossId::Bce && !(*v > 0.0 && *v < 0.5) => {
                    return Err(bad(name, "clamp must lie in (0, 0.5)"))
                }
                EPSILON | ALPHA | BETA | EXPONENT if *v < 0.0 => return Err(bad(name, "must be >= 0")),
                LAMBDA if !(0.0..=1.0).contains(v) => return Err(bad(name, "must lie in [0, 1]")),
                ITERATIONS if *v < 0.0 || v.fract() != 0.0 || *v > 1000.0 => {
                    return Err(bad(name, "must be an integer in [0, 1000]"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Column label: the id, Tversky weights always appended, other parameters
    /// appended only when they differ from the defaults.
    pub fn label(&self) -> String {
        let mut label = self.id.to_string();
        if self.id == LossId::Tversky {
            label.push_str(&format!("_{}_{}", self.param(ALPHA), self.param(BETA)));
            if self.param(EPSILON) != 1e-5 {
                label.push_str(&format!("_epsilon={}", self.param(EPSILON)));
            }
            return label;
        }
        for (name, default) in self.id.defaults() {
            let v = self.param(name);
            if v != *default {
                label.push_str(&format!("_{name}={v}"));
            }
        }
        label
    }

    /// Short stable digest of the id and exact parameter bits.
    pub fn params_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.id.as_str().as_bytes());
        for (k, v) in &self.params {
            h.update(format!("|{k}={:016x}", v.to_bits()).as_bytes());
        }
        h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parse a label produced by [`LossSpec::label`].
    pub fn from_label(label: &str) -> Result<Self> {
        let mut parts = label.split('_');
        let mut id_str = parts.next().unwrap_or_default().to_string();
        let mut rest: Vec<&str> = parts.collect();
        if id_str == "GDICE" && !rest.is_empty() {
            id_str = format!("GDICE_{}", rest.remove(0));
        }
        let id: LossId = id_str.parse()?;
        let mut spec = LossSpec::new(id);
        let mut positional = Vec::new();
        for part in rest {
            match part.split_once('=') {
                Some((k, v)) => {
                    let v: f64 = v.parse().map_err(|_| LossError::UnknownLoss(label.to_string()))?;
                    spec = spec.with(k, v)?;
                }
                None => positional.push(part),
            }
        }
        match (id, positional.as_slice()) {
            (LossId::Tversky, [a, b]) => {
                let parse = |s: &str| s.parse::<f64>().map_err(|_| LossError::UnknownLoss(label.to_string()));
                spec = spec.with(ALPHA, parse(a)?)?.with(BETA, parse(b)?)?;
            }
            (_, []) => {}
            _ => return Err(LossError::UnknownLoss(label.to_string())),
        }
        Ok(spec)
    }

    /// The default battery: every loss once, Tversky with (0.3, 0.7) and (0.7, 0.3).
    pub fn default_battery() -> Vec<LossSpec> {
        let mut out = Vec::new();
        for id in LossId::ALL {
            if *id == LossId::Tversky {
                out.push(LossSpec::tversky(0.3, 0.7).expect("valid"));
                out.push(LossSpec::tversky(0.7, 0.3).expect("valid"));
            } else {
                out.push(LossSpec::new(*id));
            }
        }
        out
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
