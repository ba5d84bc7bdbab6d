use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Pareto};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Tool arguments, keyed by name. Ordered so envelopes serialize stably.
pub type Args = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Number,
    Integer,
    Boolean,
    List,
    Object,
    Any,
}

impl ValueType {
    fn name(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Number => "number",
            ValueType::Integer => "integer",
            ValueType::Boolean => "boolean",
            ValueType::List => "list",
            ValueType::Object => "object",
            ValueType::Any => "any",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => ValueType::String,
            "number" => ValueType::Number,
            "integer" => ValueType::Integer,
            "boolean" => ValueType::Boolean,
            "list" => ValueType::List,
            "object" => ValueType::Object,
            "any" => ValueType::Any,
            _ => return None,
        })
    }

    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ValueType::String => v.is_string(),
            ValueType::Number => v.is_number(),
            ValueType::Integer => v.is_i64() || v.is_u64(),
            ValueType::Boolean => v.is_boolean(),
            ValueType::List => v.is_array(),
            ValueType::Object => v.is_object(),
            ValueType::Any => !v.is_null(),
        }
    }
}

/// Schema entry written as `"string"` (required) or `"string?"` (optional).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArgSpec {
    pub ty: ValueType,
    pub required: bool,
}

impl ArgSpec {
    pub const fn required(ty: ValueType) -> Self {
        Self { ty, required: true }
    }

    pub const fn optional(ty: ValueType) -> Self {
        Self { ty, required: false }
    }
}

impl TryFrom<String> for ArgSpec {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        let (name, required) = match s.strip_suffix('?') {
            Some(base) => (base, false),
            None => (s.as_str(), true),
        };
        let ty = ValueType::parse(name).ok_or_else(|| format!("unknown type '{s}'"))?;
        Ok(ArgSpec { ty, required })
    }
}

impl From<ArgSpec> for String {
    fn from(a: ArgSpec) -> String {
        a.to_string()
    }
}

impl fmt::Display for ArgSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.ty.name())?;
        if !self.required {
            f.write_str("?")?;
        }
        Ok(())
    }
}

/// Simulated latency distribution, in virtual milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyModel {
    Fixed {
        ms: u64,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Pareto {
        scale: f64,
        shape: f64,
    },
    /// Never completes; only a deadline ends the call.
    Stall,
}

impl LatencyModel {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LatencyModel::Fixed { .. } | LatencyModel::Stall => true,
            LatencyModel::Lognormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            LatencyModel::Pareto { scale, shape } => scale > 0.0 && shape > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Registration(format!("invalid latency model {self:?}")))
        }
    }

    /// Draw one latency; `None` means the call never returns.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        let ms = match *self {
            LatencyModel::Fixed { ms } => return Some(ms),
            LatencyModel::Stall => return None,
            LatencyModel::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
            LatencyModel::Pareto { scale, shape } => Pareto::new(scale, shape).expect("validated").sample(rng),
        };
        Some(ms.round().max(0.0) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub tool_id: String,
    #[serde(default)]
    pub description: String,
    pub arg_schema: BTreeMap<String, ArgSpec>,
    pub result_schema: BTreeMap<String, ArgSpec>,
    pub latency_model: LatencyModel,
    #[serde(default)]
    pub failure_rate: f64,
    /// External tools receive the envelope as a POST body here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ToolDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.tool_id.trim().is_empty() {
            return Err(Error::Registration("tool id is empty".into()));
        }
        if self.arg_schema.is_empty() || self.result_schema.is_empty() {
            return Err(Error::Registration(format!(
                "{}: argument and result schemas must be non-empty",
                self.tool_id
            )));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(Error::Registration(format!(
                "{}: failure_rate {} is not a probability",
                self.tool_id, self.failure_rate
            )));
        }
        self.latency_model.validate()
    }

    /// Check arguments against the schema: required present, no unknown
    /// names, types match.
    pub fn validate_args(&self, args: &Args) -> std::result::Result<(), String> {
        check_against(&self.arg_schema, args, "argument")
    }

    pub fn validate_result(&self, value: &Value) -> std::result::Result<(), String> {
        let obj = value.as_object().ok_or_else(|| "result is not an object".to_string())?;
        for (name, spec) in &self.result_schema {
            match obj.get(name) {
                Some(v) if spec.ty.accepts(v) => {}
                Some(_) => return Err(format!("result field '{name}' is not {}", spec.ty.name())),
                None if spec.required => return Err(format!("result field '{name}' missing")),
                None => {}
            }
        }
        Ok(())
    }
}

pub(crate) fn check_against(
    schema: &BTreeMap<String, ArgSpec>,
    args: &Args,
    what: &str,
) -> std::result::Result<(), String> {
    for (name, spec) in schema {
        match args.get(name) {
            Some(v) if spec.ty.accepts(v) => {}
            Some(_) => return Err(format!("{what} '{name}' must be {}", spec.ty.name())),
            None if spec.required => return Err(format!("missing required {what} '{name}'")),
            None => {}
        }
    }
    if let Some(extra) = args.keys().find(|k| !schema.contains_key(*k)) {
        return Err(format!("unknown {what} '{extra}'"));
    }
    Ok(())
}
