use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ClassifierKind, FitError};

/// A hyperparameter value as written in configs and grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Num(f64),
    Text(String),
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Num(v)
    }
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Num(v as f64)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Num(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl std::str::FromStr for ParamValue {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s {
            "true" => ParamValue::Bool(true),
            "false" => ParamValue::Bool(false),
            _ => s
                .parse::<f64>()
                .map(ParamValue::Num)
                .unwrap_or_else(|_| ParamValue::Text(s.to_string())),
        })
    }
}

/// Typed access to a spec's parameter map.
pub(crate) struct Reader<'a> {
    kind: ClassifierKind,
    params: &'a BTreeMap<String, ParamValue>,
}

fn invalid(name: &str, reason: impl Into<String>) -> FitError {
    FitError::InvalidParam {
        name: name.to_string(),
        reason: reason.into(),
    }
}

impl<'a> Reader<'a> {
    pub(crate) fn new(kind: ClassifierKind, params: &'a BTreeMap<String, ParamValue>) -> Self {
        Reader { kind, params }
    }

    /// Rejects names outside the kind's schema.
    pub(crate) fn finish(&self) -> Result<(), FitError> {
        let allowed = self.kind.param_names();
        for name in self.params.keys() {
            if name != "scaler" && !allowed.contains(&name.as_str()) {
                return Err(FitError::UnknownParam {
                    kind: self.kind,
                    name: name.clone(),
                });
            }
        }
        Ok(())
    }

    fn num(&self, name: &str) -> Result<Option<f64>, FitError> {
        match self.params.get(name) {
            None => Ok(None),
            Some(ParamValue::Num(v)) if v.is_finite() => Ok(Some(*v)),
            Some(other) => Err(invalid(name, format!("expected a finite number, got {other}"))),
        }
    }

    /// A real satisfying `ok`, described by `what` in errors.
    pub(crate) fn real(
        &self,
        name: &str,
        default: f64,
        what: &str,
        ok: impl Fn(f64) -> bool,
    ) -> Result<f64, FitError> {
        let v = self.num(name)?.unwrap_or(default);
        if ok(v) {
            Ok(v)
        } else {
            Err(invalid(name, format!("must be {what}, got {v}")))
        }
    }

    pub(crate) fn opt_real(
        &self,
        name: &str,
        what: &str,
        ok: impl Fn(f64) -> bool,
    ) -> Result<Option<f64>, FitError> {
        match self.num(name)? {
            None => Ok(None),
            Some(v) if ok(v) => Ok(Some(v)),
            Some(v) => Err(invalid(name, format!("must be {what}, got {v}"))),
        }
    }

    fn int(&self, name: &str) -> Result<Option<u64>, FitError> {
        match self.num(name)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(Some(v as u64)),
            Some(v) => Err(invalid(name, format!("must be a non-negative integer, got {v}"))),
        }
    }

    pub(crate) fn count(&self, name: &str, default: usize, min: usize) -> Result<usize, FitError> {
        let v = self.int(name)?.map_or(default, |v| v as usize);
        if v < min {
            return Err(invalid(name, format!("must be at least {min}, got {v}")));
        }
        Ok(v)
    }

    /// Absent or 0 means "unbounded".
    pub(crate) fn opt_count(&self, name: &str) -> Result<Option<usize>, FitError> {
        Ok(self.int(name)?.filter(|&v| v > 0).map(|v| v as usize))
    }

    pub(crate) fn seed(&self, name: &str) -> Result<u64, FitError> {
        Ok(self.int(name)?.unwrap_or(0))
    }

    pub(crate) fn flag(&self, name: &str, default: bool) -> Result<bool, FitError> {
        match self.params.get(name) {
            None => Ok(default),
            Some(ParamValue::Bool(b)) => Ok(*b),
            Some(ParamValue::Num(v)) if *v == 0.0 || *v == 1.0 => Ok(*v == 1.0),
            Some(other) => Err(invalid(name, format!("expected true/false, got {other}"))),
        }
    }

    pub(crate) fn text(&self, name: &str) -> Result<Option<&'a str>, FitError> {
        match self.params.get(name) {
            None => Ok(None),
            Some(ParamValue::Text(s)) => Ok(Some(s.as_str())),
            Some(other) => Err(invalid(name, format!("expected a name, got {other}"))),
        }
    }
}
