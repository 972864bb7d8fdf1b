//! Allocator parameter spaces and their mapping onto environment variables.
//!
//! A [`ParameterSpace`] is an ordered list of [`ParameterSpec`]s. A
//! [`Genotype`] is a plain vector of numbers aligned with that list:
//! range genes hold their value, categorical genes hold an index into
//! `choices`, boolean genes hold `0` or `1`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GLIBC_TABLE: &str = include_str!("../spaces/glibc.toml");
const TCMALLOC_TABLE: &str = include_str!("../spaces/tcmalloc.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocator {
    Glibc,
    Tcmalloc,
}

impl Allocator {
    pub fn as_str(self) -> &'static str {
        match self {
            Allocator::Glibc => "glibc",
            Allocator::Tcmalloc => "tcmalloc",
        }
    }
}

impl fmt::Display for Allocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Allocator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glibc" => Ok(Allocator::Glibc),
            "tcmalloc" => Ok(Allocator::Tcmalloc),
            other => Err(Error::Config(format!("unknown allocator `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    IntegerRange,
    ContinuousRange,
    Categorical,
    Boolean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log2,
}

/// A default as written in a space table: a number, a categorical label or
/// a boolean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DefaultValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub env_var: String,
    pub kind: ParamKind,
    #[serde(default)]
    pub lower: f64,
    #[serde(default)]
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    pub default: DefaultValue,
    #[serde(default)]
    pub scale: Scale,
}

impl ParameterSpec {
    pub fn integer(name: &str, env_var: &str, lower: i64, upper: i64, default: i64) -> Self {
        ParameterSpec {
            name: name.into(),
            env_var: env_var.into(),
            kind: ParamKind::IntegerRange,
            lower: lower as f64,
            upper: upper as f64,
            choices: Vec::new(),
            default: DefaultValue::Number(default as f64),
            scale: Scale::Linear,
        }
    }

    pub fn continuous(name: &str, env_var: &str, lower: f64, upper: f64, default: f64) -> Self {
        ParameterSpec {
            kind: ParamKind::ContinuousRange,
            lower,
            upper,
            default: DefaultValue::Number(default),
            ..ParameterSpec::integer(name, env_var, 0, 0, 0)
        }
    }

    pub fn categorical(name: &str, env_var: &str, choices: &[&str], default: &str) -> Self {
        ParameterSpec {
            kind: ParamKind::Categorical,
            choices: choices.iter().map(|c| c.to_string()).collect(),
            default: DefaultValue::Text(default.into()),
            ..ParameterSpec::integer(name, env_var, 0, 0, 0)
        }
    }

    pub fn boolean(name: &str, env_var: &str, default: bool) -> Self {
        ParameterSpec {
            kind: ParamKind::Boolean,
            default: DefaultValue::Bool(default),
            ..ParameterSpec::integer(name, env_var, 0, 1, 0)
        }
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        self.scale = scale;
        self
    }

    /// Inclusive numeric bounds of the gene encoding.
    pub fn gene_bounds(&self) -> (f64, f64) {
        match self.kind {
            ParamKind::IntegerRange | ParamKind::ContinuousRange => (self.lower, self.upper),
            ParamKind::Categorical => (0.0, self.choices.len().saturating_sub(1) as f64),
            ParamKind::Boolean => (0.0, 1.0),
        }
    }

    pub fn is_numeric_range(&self) -> bool {
        matches!(
            self.kind,
            ParamKind::IntegerRange | ParamKind::ContinuousRange
        )
    }

    pub fn is_log2(&self) -> bool {
        self.is_numeric_range() && self.scale == Scale::Log2
    }

    /// Gene value of the documented default.
    pub fn default_gene(&self) -> Result<f64> {
        let bad = || {
            Error::Config(format!(
                "spec `{}`: default {:?} does not fit kind {:?}",
                self.name, self.default, self.kind
            ))
        };
        match (self.kind, &self.default) {
            (ParamKind::IntegerRange | ParamKind::ContinuousRange, DefaultValue::Number(v)) => {
                Ok(*v)
            }
            (ParamKind::Categorical, DefaultValue::Text(t)) => self
                .choices
                .iter()
                .position(|c| c == t)
                .map(|i| i as f64)
                .ok_or_else(bad),
            (ParamKind::Categorical, DefaultValue::Number(v)) => {
                let t = render_decimal(*v);
                self.choices
                    .iter()
                    .position(|c| *c == t)
                    .map(|i| i as f64)
                    .ok_or_else(bad)
            }
            (ParamKind::Boolean, DefaultValue::Bool(b)) => Ok(if *b { 1.0 } else { 0.0 }),
            _ => Err(bad()),
        }
    }

    fn check(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("spec `{}`: {msg}", self.name)));
        if self.env_var.is_empty() {
            return fail("env_var is empty");
        }
        match self.kind {
            ParamKind::IntegerRange | ParamKind::ContinuousRange => {
                if !(self.lower.is_finite() && self.upper.is_finite()) || self.lower > self.upper
                {
                    return fail("bounds must be finite with lower <= upper");
                }
                if self.kind == ParamKind::IntegerRange
                    && (self.lower.fract() != 0.0 || self.upper.fract() != 0.0)
                {
                    return fail("integer bounds must be integral");
                }
                if self.scale == Scale::Log2 && self.lower < 1.0 {
                    return fail("log2-scaled specs need lower >= 1");
                }
            }
            ParamKind::Categorical => {
                if self.choices.is_empty() {
                    return fail("categorical spec without choices");
                }
            }
            ParamKind::Boolean => {}
        }
        let d = self.default_gene()?;
        if let Some(reason) = self.violation(d) {
            return fail(&format!("default is invalid: {reason}"));
        }
        Ok(())
    }

    fn violation(&self, v: f64) -> Option<ViolationReason> {
        if !v.is_finite() {
            return Some(ViolationReason::NotFinite);
        }
        let (lo, hi) = self.gene_bounds();
        let integral = !matches!(self.kind, ParamKind::ContinuousRange);
        if integral && v.fract() != 0.0 {
            return Some(ViolationReason::NonIntegral);
        }
        if v < lo {
            return Some(ViolationReason::BelowLower);
        }
        if v > hi {
            return Some(ViolationReason::AboveUpper);
        }
        None
    }

    /// Renders a valid gene value as the environment-variable string.
    pub fn render(&self, v: f64) -> String {
        match self.kind {
            ParamKind::IntegerRange => format!("{}", v as i64),
            ParamKind::ContinuousRange => render_decimal(v),
            ParamKind::Categorical => self.choices[v as usize].clone(),
            ParamKind::Boolean => if v != 0.0 { "1" } else { "0" }.to_string(),
        }
    }

    /// Inverse of [`render`](Self::render), within rendering precision.
    pub fn parse_rendered(&self, s: &str) -> Option<f64> {
        match self.kind {
            ParamKind::IntegerRange => s.parse::<i64>().ok().map(|v| v as f64),
            ParamKind::ContinuousRange => s.parse::<f64>().ok(),
            ParamKind::Categorical => self.choices.iter().position(|c| c == s).map(|i| i as f64),
            ParamKind::Boolean => match s {
                "1" => Some(1.0),
                "0" => Some(0.0),
                _ => None,
            },
        }
    }
}

/// Plain decimal with at most six fractional digits and no trailing zeros.
pub fn render_decimal(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        &s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub allocator: Allocator,
    pub specs: Vec<ParameterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preload_library: Option<String>,
}

#[derive(Deserialize)]
struct SpaceFile {
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<u32>,
    allocator: Allocator,
    #[serde(default)]
    preload_library: Option<String>,
    specs: Vec<ParameterSpec>,
}

impl ParameterSpace {
    pub fn new(
        allocator: Allocator,
        specs: Vec<ParameterSpec>,
        preload_library: Option<String>,
    ) -> Result<Self> {
        let space = ParameterSpace {
            allocator,
            specs,
            preload_library,
        };
        space.check()?;
        Ok(space)
    }

    /// Parses a space table in TOML form.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SpaceFile = toml::from_str(text)?;
        ParameterSpace::new(file.allocator, file.specs, file.preload_library)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn check(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::Config("parameter space has no specs".into()));
        }
        let mut seen = HashSet::new();
        for spec in &self.specs {
            spec.check()?;
            if !seen.insert(spec.env_var.as_str()) {
                return Err(Error::Config(format!(
                    "environment variable `{}` bound twice",
                    spec.env_var
                )));
            }
        }
        if self.allocator == Allocator::Tcmalloc && self.preload_library.is_none() {
            return Err(Error::Config("tcmalloc space needs a preload_library".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Returns a copy with a different preload library.
    pub fn with_preload(mut self, path: impl Into<String>) -> Self {
        self.preload_library = Some(path.into());
        self
    }
}

/// Built-in space for `allocator`.
pub fn builtin_space(allocator: Allocator) -> ParameterSpace {
    let table = match allocator {
        Allocator::Glibc => GLIBC_TABLE,
        Allocator::Tcmalloc => TCMALLOC_TABLE,
    };
    ParameterSpace::from_toml(table).expect("built-in space table is valid")
}

/// Looks up a built-in space by name.
pub fn builtin_space_named(name: &str) -> Result<ParameterSpace> {
    Ok(builtin_space(name.parse()?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genotype(pub Vec<f64>);

impl Genotype {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Genotype {
    fn from(v: Vec<f64>) -> Self {
        Genotype(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationReason {
    LengthMismatch { expected: usize, found: usize },
    NotFinite,
    NonIntegral,
    BelowLower,
    AboveUpper,
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationReason::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected} genes, found {found}")
            }
            ViolationReason::NotFinite => f.write_str("not finite"),
            ViolationReason::NonIntegral => f.write_str("non-integral"),
            ViolationReason::BelowLower => f.write_str("below lower bound"),
            ViolationReason::AboveUpper => f.write_str("above upper bound"),
        }
    }
}

/// One failed check of [`validate`]. `position` is `None` for length mismatches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub position: Option<usize>,
    pub reason: ViolationReason,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some(p) => write!(f, "position {p}: {}", self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

pub fn default_genotype(space: &ParameterSpace) -> Genotype {
    Genotype(
        space
            .specs
            .iter()
            .map(|s| s.default_gene().expect("space checked at construction"))
            .collect(),
    )
}

pub fn validate(space: &ParameterSpace, g: &Genotype) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if g.0.len() != space.specs.len() {
        out.push(Violation {
            position: None,
            reason: ViolationReason::LengthMismatch {
                expected: space.specs.len(),
                found: g.0.len(),
            },
        });
    }
    for (i, (spec, &v)) in space.specs.iter().zip(&g.0).enumerate() {
        if let Some(reason) = spec.violation(v) {
            out.push(Violation {
                position: Some(i),
                reason,
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Environment-variable assignments for one candidate, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvMap(pub BTreeMap<String, String>);

impl EnvMap {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn to_env(space: &ParameterSpace, g: &Genotype) -> Result<EnvMap> {
    validate(space, g).map_err(Error::InvalidGenotype)?;
    Ok(EnvMap(
        space
            .specs
            .iter()
            .zip(&g.0)
            .map(|(s, &v)| (s.env_var.clone(), s.render(v)))
            .collect(),
    ))
}

/// Recovers a genotype from rendered assignments. Every spec must be present.
pub fn from_env(space: &ParameterSpace, env: &EnvMap) -> Result<Genotype> {
    space
        .specs
        .iter()
        .map(|s| {
            let raw = env
                .get(&s.env_var)
                .ok_or_else(|| Error::Data(format!("missing variable {}", s.env_var)))?;
            s.parse_rendered(raw)
                .ok_or_else(|| Error::Data(format!("cannot parse {}={raw}", s.env_var)))
        })
        .collect::<Result<Vec<_>>>()
        .map(Genotype)
}
