//! JSON run reports emitted by the command-line driver.
//!
//! Reports are plain serde structs. Radii may be `+∞`, which JSON cannot
//! carry as a number, so those fields go through [`float_or_inf`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certifier::{Certificate, Method};
use crate::error::{Error, Result};
use crate::linalg::NormOrder;

pub const SCHEMA_VERSION: u32 = 1;

/// Serializes finite floats as numbers and `+∞` as the string `"inf"`.
pub mod float_or_inf {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom(format!("cannot serialize {v}")))
        }
    }

    struct FloatOrInf;

    impl Visitor<'_> for FloatOrInf {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a number or \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatOrInf)
    }

    /// Same encoding for optional values.
    pub mod option {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(Wrap).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Targeted,
    Untargeted,
}

/// One method's result for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub certificate: Certificate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_target: Vec<Certificate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleStatus {
    Found,
    NotFound,
    Error,
    Skipped,
}

/// Outcome of an independent reference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub name: String,
    pub status: OracleStatus,
    #[serde(
        default,
        with = "float_or_inf::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl OracleEntry {
    pub fn found(name: impl Into<String>, value: f64) -> Self {
        OracleEntry {
            name: name.into(),
            status: OracleStatus::Found,
            value: Some(value),
            message: None,
        }
    }

    pub fn not_found(name: impl Into<String>, message: impl Into<String>) -> Self {
        OracleEntry {
            name: name.into(),
            status: OracleStatus::NotFound,
            value: None,
            message: Some(message.into()),
        }
    }

    pub fn skipped(name: impl Into<String>, message: impl Into<String>) -> Self {
        OracleEntry {
            name: name.into(),
            status: OracleStatus::Skipped,
            value: None,
            message: Some(message.into()),
        }
    }

    pub fn error(name: impl Into<String>, message: impl Into<String>) -> Self {
        OracleEntry {
            name: name.into(),
            status: OracleStatus::Error,
            value: None,
            message: Some(message.into()),
        }
    }
}

/// One row of a method comparison: the radius and its ratio to a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    #[serde(with = "float_or_inf")]
    pub radius: f64,
    /// `radius / reference`, absent when the reference is 0 or missing.
    #[serde(
        default,
        with = "float_or_inf::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub ratio: Option<f64>,
    pub wall_time_ms: f64,
    pub sound: Option<bool>,
}

/// Timing of one method on one network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dims: Vec<usize>,
    pub method: Method,
    pub threads: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    /// Single-thread mean over this row's mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<NormOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_class: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, MethodResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oracles: Vec<OracleEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<CompareRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bench: Vec<BenchRow>,
    #[serde(default)]
    pub timing_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: impl Into<String>) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            model_path: None,
            input_path: None,
            p: None,
            mode: None,
            methods: Vec::new(),
            true_class: None,
            results: BTreeMap::new(),
            oracles: Vec::new(),
            compare: Vec::new(),
            bench: Vec::new(),
            timing_ms: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Parse {
            what: "report",
            source,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(s).map_err(|source| Error::Parse {
            what: "report",
            source,
        })?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                layer: None,
                message: format!("unsupported report schema version {}", r.schema_version),
            });
        }
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
