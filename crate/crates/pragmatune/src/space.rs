//! Constrained parameter spaces: categorical/ordinal parameters, parent-child
//! activation conditions, forbidden clauses, seeded sampling, and numeric
//! encodings for surrogate models.
//!
//! A value of an inactive parameter is represented explicitly (it is part of
//! the configuration, not absent), so two assignments that differ only in a
//! deactivated child collapse to the same configuration.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Domain-product threshold below which exact (condition-aware) member
/// counting and exhaustive enumeration are performed. Above it, only the
/// plain product of domain sizes is reported, flagged as an upper bound.
pub const EXACT_ENUMERATION_BOUND: u128 = 1_000_000;

/// Domain-product threshold below which the sampler enumerates the valid
/// members once and samples from the materialized pool. Above it, rejection
/// sampling is used.
const SAMPLER_POOL_BOUND: u128 = 100_000;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("space has no valid configuration")]
    EmptySpace,
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("encoding has {got} components, expected {expected}")]
    EncodingShape { expected: usize, got: usize },
    #[error("encoding component for `{name}` is out of range: {value}")]
    EncodingValue { name: String, value: f64 },
    #[error("cannot read space file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse space file: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpaceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Unordered choice set; the declared order is used as the integer code.
    Categorical,
    /// Ordered choice set; the declared order is the rank order.
    Ordinal,
}

/// One tunable parameter with a finite string-valued domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub values: Vec<String>,
    pub default: String,
}

/// Child parameter is active exactly when the parent holds one of the
/// triggering values (and the parent itself is active).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationCondition {
    pub child: String,
    pub parent: String,
    #[serde(rename = "when")]
    pub triggering_values: Vec<String>,
}

/// Conjunction of parameter-value equalities that must never all hold among
/// the active assignments of a valid configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForbiddenClause {
    pub assignments: BTreeMap<String, String>,
}

/// Value slot of one parameter inside a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamValue {
    Active(String),
    Inactive,
}

impl ParamValue {
    pub fn as_active(&self) -> Option<&str> {
        match self {
            ParamValue::Active(v) => Some(v),
            ParamValue::Inactive => None,
        }
    }

    pub fn is_inactive(&self) -> bool {
        matches!(self, ParamValue::Inactive)
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Active(v) => write!(f, "{v}"),
            ParamValue::Inactive => write!(f, "<inactive>"),
        }
    }
}

/// Full assignment of parameter name to value-or-inactive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Configuration {
    assignment: BTreeMap<String, ParamValue>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let assignment = pairs
            .into_iter()
            .map(|(k, v)| (k.into(), ParamValue::Active(v.into())))
            .collect();
        Self { assignment }
    }

    pub fn set(&mut self, name: impl Into<String>, value: ParamValue) {
        self.assignment.insert(name.into(), value);
    }

    pub fn set_active(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.set(name, ParamValue::Active(value.into()));
    }

    pub fn set_inactive(&mut self, name: impl Into<String>) {
        self.set(name, ParamValue::Inactive);
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.assignment.get(name)
    }

    pub fn active_value(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(ParamValue::as_active)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.assignment.iter()
    }

    /// Stable digest of the assignment, used to name generated files.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, value) in &self.assignment {
            hasher.update(name.as_bytes());
            hasher.update([0x1f]);
            match value {
                ParamValue::Active(v) => hasher.update(v.as_bytes()),
                ParamValue::Inactive => hasher.update([0x00]),
            }
            hasher.update([0x1e]);
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// One reason a configuration failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingParameter { name: String },
    ValueNotInDomain { name: String, value: String },
    ShouldBeInactive { child: String, parent: String },
    ShouldBeActive { child: String, parent: String },
    InactiveWithoutCondition { name: String },
    ForbiddenMatched { clause: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingParameter { name } => {
                write!(f, "parameter `{name}` is not assigned")
            }
            Violation::ValueNotInDomain { name, value } => {
                write!(f, "value `{value}` is not in the domain of `{name}`")
            }
            Violation::ShouldBeInactive { child, parent } => {
                write!(f, "`{child}` must be inactive for the current value of `{parent}`")
            }
            Violation::ShouldBeActive { child, parent } => {
                write!(f, "`{child}` must be active for the current value of `{parent}`")
            }
            Violation::InactiveWithoutCondition { name } => {
                write!(f, "`{name}` is inactive but has no activation condition")
            }
            Violation::ForbiddenMatched { clause } => {
                write!(f, "forbidden clause #{clause} is fully matched")
            }
        }
    }
}

/// Outcome of validating a structurally well-formed configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(Vec<Violation>),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Member counts of a space.
///
/// `domain_product` multiplies the raw domain sizes (the convention used when
/// quoting space sizes like 10,648); `exact` additionally collapses
/// deactivated children and subtracts forbidden members, and is only computed
/// when the product is at most [`EXACT_ENUMERATION_BOUND`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cardinality {
    pub domain_product: u128,
    pub exact: Option<u64>,
}

impl Cardinality {
    /// True when `domain_product` is only an upper bound on the member count.
    pub fn product_is_upper_bound(&self) -> bool {
        self.exact.is_none()
    }
}

/// Numeric encoding layouts for surrogate models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingScheme {
    /// One component per parameter: ordinal rank or categorical integer code,
    /// -1 for inactive. Suited to tree ensembles.
    Tree,
    /// Ordinals normalized to [0,1], categoricals one-hot; parameters under an
    /// activation condition carry a trailing activity component, and inactive
    /// parameters encode as an all-zero block. Suited to kernel models.
    Gp,
}

#[derive(Deserialize, Serialize)]
struct SpaceFile {
    seed: u64,
    parameters: Vec<Parameter>,
    #[serde(default)]
    conditions: Vec<ActivationCondition>,
    #[serde(default)]
    forbidden: Vec<ForbiddenClause>,
}

/// Immutable search space definition.
#[derive(Debug, Clone)]
pub struct ParamSpace {
    parameters: Vec<Parameter>,
    conditions: Vec<ActivationCondition>,
    forbidden: Vec<ForbiddenClause>,
    seed: u64,
    by_name: HashMap<String, usize>,
    /// Index into `conditions` for each parameter that is a condition child.
    condition_of: Vec<Option<usize>>,
    /// Parameter indices ordered so that condition parents precede children.
    topo: Vec<usize>,
}

impl ParamSpace {
    pub fn new(
        seed: u64,
        parameters: Vec<Parameter>,
        conditions: Vec<ActivationCondition>,
        forbidden: Vec<ForbiddenClause>,
    ) -> Result<Self> {
        if parameters.is_empty() {
            return Err(SpaceError::InvalidSpace("no parameters declared".into()));
        }
        let mut by_name = HashMap::new();
        for (i, p) in parameters.iter().enumerate() {
            if by_name.insert(p.name.clone(), i).is_some() {
                return Err(SpaceError::InvalidSpace(format!(
                    "duplicate parameter name `{}`",
                    p.name
                )));
            }
            if p.values.is_empty() {
                return Err(SpaceError::InvalidSpace(format!(
                    "parameter `{}` has an empty value list",
                    p.name
                )));
            }
            let mut seen = HashSet::new();
            for v in &p.values {
                if v.is_empty() {
                    return Err(SpaceError::InvalidSpace(format!(
                        "parameter `{}` has an empty-string value (use a blank like \" \" instead)",
                        p.name
                    )));
                }
                if !seen.insert(v) {
                    return Err(SpaceError::InvalidSpace(format!(
                        "parameter `{}` has duplicate value `{v}`",
                        p.name
                    )));
                }
            }
            if !p.values.contains(&p.default) {
                return Err(SpaceError::InvalidSpace(format!(
                    "default `{}` of parameter `{}` is not in its value list",
                    p.default, p.name
                )));
            }
        }

        let mut condition_of = vec![None; parameters.len()];
        for (ci, c) in conditions.iter().enumerate() {
            let child = *by_name.get(&c.child).ok_or_else(|| {
                SpaceError::InvalidSpace(format!("condition child `{}` is not a parameter", c.child))
            })?;
            let parent = *by_name.get(&c.parent).ok_or_else(|| {
                SpaceError::InvalidSpace(format!(
                    "condition parent `{}` is not a parameter",
                    c.parent
                ))
            })?;
            if child == parent {
                return Err(SpaceError::InvalidSpace(format!(
                    "condition on `{}` names itself as parent",
                    c.child
                )));
            }
            if condition_of[child].is_some() {
                return Err(SpaceError::InvalidSpace(format!(
                    "parameter `{}` is the child of more than one condition",
                    c.child
                )));
            }
            if c.triggering_values.is_empty() {
                return Err(SpaceError::InvalidSpace(format!(
                    "condition on `{}` has an empty triggering set",
                    c.child
                )));
            }
            for v in &c.triggering_values {
                if !parameters[parent].values.contains(v) {
                    return Err(SpaceError::InvalidSpace(format!(
                        "condition on `{}` triggers on `{v}`, which is not a value of `{}`",
                        c.child, c.parent
                    )));
                }
            }
            condition_of[child] = Some(ci);
        }

        // Parents before children; a cycle in the condition graph leaves
        // some parameter unplaceable.
        let mut topo = Vec::with_capacity(parameters.len());
        let mut placed = vec![false; parameters.len()];
        loop {
            let before = topo.len();
            for i in 0..parameters.len() {
                if placed[i] {
                    continue;
                }
                let ready = match condition_of[i] {
                    None => true,
                    Some(ci) => placed[by_name[&conditions[ci].parent]],
                };
                if ready {
                    placed[i] = true;
                    topo.push(i);
                }
            }
            if topo.len() == parameters.len() {
                break;
            }
            if topo.len() == before {
                return Err(SpaceError::InvalidSpace(
                    "activation conditions form a cycle".into(),
                ));
            }
        }

        for (fi, clause) in forbidden.iter().enumerate() {
            if clause.assignments.is_empty() {
                return Err(SpaceError::InvalidSpace(format!(
                    "forbidden clause #{fi} is empty"
                )));
            }
            for (name, value) in &clause.assignments {
                let idx = *by_name.get(name).ok_or_else(|| {
                    SpaceError::InvalidSpace(format!(
                        "forbidden clause #{fi} names unknown parameter `{name}`"
                    ))
                })?;
                if !parameters[idx].values.contains(value) {
                    return Err(SpaceError::InvalidSpace(format!(
                        "forbidden clause #{fi} uses `{value}`, which is not a value of `{name}`"
                    )));
                }
            }
        }

        Ok(Self {
            parameters,
            conditions,
            forbidden,
            seed,
            by_name,
            condition_of,
            topo,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SpaceFile = serde_json::from_str(text)?;
        Self::new(file.seed, file.parameters, file.conditions, file.forbidden)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = SpaceFile {
            seed: self.seed,
            parameters: self.parameters.clone(),
            conditions: self.conditions.clone(),
            forbidden: self.forbidden.clone(),
        };
        serde_json::to_string_pretty(&file).expect("space serialization cannot fail")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn conditions(&self) -> &[ActivationCondition] {
        &self.conditions
    }

    pub fn forbidden(&self) -> &[ForbiddenClause] {
        &self.forbidden
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.by_name.get(name).map(|&i| &self.parameters[i])
    }

    /// True when the parameter is the child of some activation condition.
    pub fn is_conditional(&self, name: &str) -> bool {
        self.by_name
            .get(name)
            .map(|&i| self.condition_of[i].is_some())
            .unwrap_or(false)
    }

    /// Configuration holding every parameter's default, with condition
    /// children deactivated where the defaults do not trigger them.
    pub fn default_configuration(&self) -> Configuration {
        let values: Vec<usize> = self
            .parameters
            .iter()
            .map(|p| p.values.iter().position(|v| v == &p.default).unwrap())
            .collect();
        self.realize(&values)
    }

    /// Build a configuration from raw per-parameter value indices, applying
    /// the deactivation rules.
    fn realize(&self, value_idx: &[usize]) -> Configuration {
        let mut active = vec![true; self.parameters.len()];
        for &i in &self.topo {
            if let Some(ci) = self.condition_of[i] {
                let cond = &self.conditions[ci];
                let pi = self.by_name[&cond.parent];
                let parent_value = &self.parameters[pi].values[value_idx[pi]];
                active[i] = active[pi] && cond.triggering_values.contains(parent_value);
            }
        }
        let mut cfg = Configuration::new();
        for (i, p) in self.parameters.iter().enumerate() {
            if active[i] {
                cfg.set_active(&p.name, p.values[value_idx[i]].clone());
            } else {
                cfg.set_inactive(&p.name);
            }
        }
        cfg
    }

    /// Whether `clause` is fully matched by the active assignments of `cfg`.
    fn clause_matches(&self, clause: &ForbiddenClause, cfg: &Configuration) -> bool {
        clause
            .assignments
            .iter()
            .all(|(name, value)| cfg.active_value(name) == Some(value.as_str()))
    }

    /// Check a configuration against domains, activation conditions, and
    /// forbidden clauses.
    ///
    /// Unknown parameter names in `cfg` are a structural error; everything
    /// else is reported as a list of violations.
    pub fn validate(&self, cfg: &Configuration) -> Result<Validity> {
        for name in cfg.iter().map(|(n, _)| n) {
            if !self.by_name.contains_key(name) {
                return Err(SpaceError::UnknownParameter(name.clone()));
            }
        }

        let mut violations = Vec::new();
        for p in &self.parameters {
            match cfg.get(&p.name) {
                None => violations.push(Violation::MissingParameter { name: p.name.clone() }),
                Some(ParamValue::Active(v)) => {
                    if !p.values.contains(v) {
                        violations.push(Violation::ValueNotInDomain {
                            name: p.name.clone(),
                            value: v.clone(),
                        });
                    }
                }
                Some(ParamValue::Inactive) => {}
            }
        }

        for (i, p) in self.parameters.iter().enumerate() {
            let Some(value) = cfg.get(&p.name) else { continue };
            match self.condition_of[i] {
                None => {
                    if value.is_inactive() {
                        violations.push(Violation::InactiveWithoutCondition {
                            name: p.name.clone(),
                        });
                    }
                }
                Some(ci) => {
                    let cond = &self.conditions[ci];
                    let should_be_active = match cfg.get(&cond.parent) {
                        Some(ParamValue::Active(pv)) => cond.triggering_values.contains(pv),
                        _ => false,
                    };
                    match (should_be_active, value.is_inactive()) {
                        (true, true) => violations.push(Violation::ShouldBeActive {
                            child: cond.child.clone(),
                            parent: cond.parent.clone(),
                        }),
                        (false, false) => violations.push(Violation::ShouldBeInactive {
                            child: cond.child.clone(),
                            parent: cond.parent.clone(),
                        }),
                        _ => {}
                    }
                }
            }
        }

        for (fi, clause) in self.forbidden.iter().enumerate() {
            if self.clause_matches(clause, cfg) {
                violations.push(Violation::ForbiddenMatched { clause: fi });
            }
        }

        if violations.is_empty() {
            Ok(Validity::Valid)
        } else {
            Ok(Validity::Invalid(violations))
        }
    }

    /// Product of the raw domain sizes, and the exact member count when the
    /// product is small enough to enumerate.
    pub fn cardinality(&self) -> Cardinality {
        let mut domain_product: u128 = 1;
        for p in &self.parameters {
            domain_product = domain_product.saturating_mul(p.values.len() as u128);
        }
        let exact = if domain_product <= EXACT_ENUMERATION_BOUND {
            let mut count = 0u64;
            let mut value_idx = vec![0usize; self.parameters.len()];
            self.count_members(0, &mut value_idx, &mut count);
            Some(count)
        } else {
            None
        };
        Cardinality { domain_product, exact }
    }

    /// Recursive member count over parameters in topological order. Children
    /// deactivated by the already-fixed parents contribute a single state.
    fn count_members(&self, depth: usize, value_idx: &mut Vec<usize>, count: &mut u64) {
        if depth == self.topo.len() {
            let cfg = self.realize(value_idx);
            if !self.forbidden.iter().any(|c| self.clause_matches(c, &cfg)) {
                *count += 1;
            }
            return;
        }
        let i = self.topo[depth];
        if self.branches_inactive(i, value_idx) {
            // Any stored index realizes to inactive; one state.
            value_idx[i] = 0;
            self.count_members(depth + 1, value_idx, count);
        } else {
            for v in 0..self.parameters[i].values.len() {
                value_idx[i] = v;
                self.count_members(depth + 1, value_idx, count);
            }
        }
    }

    /// True when parameter `i` is deactivated by the parent values already
    /// fixed at earlier topological depths.
    fn branches_inactive(&self, i: usize, value_idx: &[usize]) -> bool {
        let mut cur = i;
        loop {
            match self.condition_of[cur] {
                None => return false,
                Some(ci) => {
                    let cond = &self.conditions[ci];
                    let pi = self.by_name[&cond.parent];
                    let pv = &self.parameters[pi].values[value_idx[pi]];
                    if !cond.triggering_values.contains(pv) {
                        return true;
                    }
                    cur = pi;
                }
            }
        }
    }

    /// Enumerate every valid configuration, or `None` when the domain product
    /// exceeds [`EXACT_ENUMERATION_BOUND`].
    pub fn enumerate_valid(&self) -> Option<Vec<Configuration>> {
        let mut domain_product: u128 = 1;
        for p in &self.parameters {
            domain_product = domain_product.saturating_mul(p.values.len() as u128);
        }
        if domain_product > EXACT_ENUMERATION_BOUND {
            return None;
        }
        let mut out = Vec::new();
        let mut value_idx = vec![0usize; self.parameters.len()];
        self.enumerate_members(0, &mut value_idx, &mut out);
        Some(out)
    }

    fn enumerate_members(
        &self,
        depth: usize,
        value_idx: &mut Vec<usize>,
        out: &mut Vec<Configuration>,
    ) {
        if depth == self.topo.len() {
            let cfg = self.realize(value_idx);
            if !self.forbidden.iter().any(|c| self.clause_matches(c, &cfg)) {
                out.push(cfg);
            }
            return;
        }
        let i = self.topo[depth];
        if self.branches_inactive(i, value_idx) {
            value_idx[i] = 0;
            self.enumerate_members(depth + 1, value_idx, out);
        } else {
            for v in 0..self.parameters[i].values.len() {
                value_idx[i] = v;
                self.enumerate_members(depth + 1, value_idx, out);
            }
        }
    }

    /// Width of the encoded vector under `scheme`.
    pub fn encoding_width(&self, scheme: EncodingScheme) -> usize {
        match scheme {
            EncodingScheme::Tree => self.parameters.len(),
            EncodingScheme::Gp => self
                .parameters
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let value_width = match p.kind {
                        ParamKind::Ordinal => 1,
                        ParamKind::Categorical => p.values.len(),
                    };
                    value_width + usize::from(self.condition_of[i].is_some())
                })
                .sum(),
        }
    }

    /// Encode a valid configuration as a numeric vector.
    pub fn encode(&self, cfg: &Configuration, scheme: EncodingScheme) -> Result<Vec<f64>> {
        match self.validate(cfg)? {
            Validity::Valid => {}
            Validity::Invalid(violations) => {
                return Err(SpaceError::InvalidConfiguration(
                    violations
                        .iter()
                        .map(Violation::to_string)
                        .collect::<Vec<_>>()
                        .join("; "),
                ));
            }
        }
        let mut out = Vec::with_capacity(self.encoding_width(scheme));
        for (i, p) in self.parameters.iter().enumerate() {
            let value = cfg.get(&p.name).expect("validated configuration is full");
            match scheme {
                EncodingScheme::Tree => match value {
                    ParamValue::Inactive => out.push(-1.0),
                    ParamValue::Active(v) => {
                        let rank = p.values.iter().position(|x| x == v).unwrap();
                        out.push(rank as f64);
                    }
                },
                EncodingScheme::Gp => {
                    let conditional = self.condition_of[i].is_some();
                    match value {
                        ParamValue::Inactive => {
                            let width = match p.kind {
                                ParamKind::Ordinal => 1,
                                ParamKind::Categorical => p.values.len(),
                            };
                            out.extend(std::iter::repeat(0.0).take(width));
                            out.push(0.0); // inactive implies conditional
                        }
                        ParamValue::Active(v) => {
                            let rank = p.values.iter().position(|x| x == v).unwrap();
                            match p.kind {
                                ParamKind::Ordinal => {
                                    let n = p.values.len();
                                    let scaled = if n > 1 {
                                        rank as f64 / (n - 1) as f64
                                    } else {
                                        0.0
                                    };
                                    out.push(scaled);
                                }
                                ParamKind::Categorical => {
                                    for k in 0..p.values.len() {
                                        out.push(if k == rank { 1.0 } else { 0.0 });
                                    }
                                }
                            }
                            if conditional {
                                out.push(1.0);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Invert [`ParamSpace::encode`].
    pub fn decode(&self, encoded: &[f64], scheme: EncodingScheme) -> Result<Configuration> {
        let expected = self.encoding_width(scheme);
        if encoded.len() != expected {
            return Err(SpaceError::EncodingShape { expected, got: encoded.len() });
        }
        let mut cfg = Configuration::new();
        let mut pos = 0usize;
        for (i, p) in self.parameters.iter().enumerate() {
            match scheme {
                EncodingScheme::Tree => {
                    let v = encoded[pos];
                    pos += 1;
                    if v < -0.5 {
                        cfg.set_inactive(&p.name);
                    } else {
                        let rank = v.round();
                        if rank < 0.0 || rank >= p.values.len() as f64 {
                            return Err(SpaceError::EncodingValue {
                                name: p.name.clone(),
                                value: v,
                            });
                        }
                        cfg.set_active(&p.name, p.values[rank as usize].clone());
                    }
                }
                EncodingScheme::Gp => {
                    let conditional = self.condition_of[i].is_some();
                    let value_width = match p.kind {
                        ParamKind::Ordinal => 1,
                        ParamKind::Categorical => p.values.len(),
                    };
                    let block = &encoded[pos..pos + value_width];
                    let activity = if conditional {
                        encoded[pos + value_width]
                    } else {
                        1.0
                    };
                    pos += value_width + usize::from(conditional);
                    if activity < 0.5 {
                        cfg.set_inactive(&p.name);
                        continue;
                    }
                    match p.kind {
                        ParamKind::Ordinal => {
                            let n = p.values.len();
                            let rank = if n > 1 {
                                (block[0] * (n - 1) as f64).round()
                            } else {
                                0.0
                            };
                            if rank < 0.0 || rank >= n as f64 {
                                return Err(SpaceError::EncodingValue {
                                    name: p.name.clone(),
                                    value: block[0],
                                });
                            }
                            cfg.set_active(&p.name, p.values[rank as usize].clone());
                        }
                        ParamKind::Categorical => {
                            let mut best = 0usize;
                            for (k, &x) in block.iter().enumerate() {
                                if x > block[best] {
                                    best = k;
                                }
                            }
                            cfg.set_active(&p.name, p.values[best].clone());
                        }
                    }
                }
            }
        }
        Ok(cfg)
    }

    /// Configuration values in parameter declaration order
    /// (`None` = inactive), as stored in result tables.
    pub fn values_in_order(&self, cfg: &Configuration) -> Result<Vec<Option<String>>> {
        self.parameters
            .iter()
            .map(|p| match cfg.get(&p.name) {
                Some(ParamValue::Active(v)) => Ok(Some(v.clone())),
                Some(ParamValue::Inactive) => Ok(None),
                None => Err(SpaceError::InvalidConfiguration(format!(
                    "parameter `{}` is not assigned",
                    p.name
                ))),
            })
            .collect()
    }
}

/// Seeded configuration source over one space.
///
/// The space itself is immutable; all mutable sampling state lives here, so a
/// sampler is confined to a single search loop. Results are deterministic
/// given the seed and the sequence of calls.
pub struct Sampler<'a> {
    space: &'a ParamSpace,
    rng: ChaCha8Rng,
    /// Materialized valid members, lazily built for small spaces.
    pool: Option<Vec<Configuration>>,
    use_pool: bool,
}

impl<'a> Sampler<'a> {
    pub fn new(space: &'a ParamSpace) -> Self {
        Self::with_seed(space, space.seed)
    }

    pub fn with_seed(space: &'a ParamSpace, seed: u64) -> Self {
        let mut domain_product: u128 = 1;
        for p in &space.parameters {
            domain_product = domain_product.saturating_mul(p.values.len() as u128);
        }
        Self {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pool: None,
            use_pool: domain_product <= SAMPLER_POOL_BOUND,
        }
    }

    /// Draw one uniformly random raw assignment and collapse deactivated
    /// children. May be forbidden; callers filter.
    fn sample_raw(&mut self) -> Configuration {
        let value_idx: Vec<usize> = self
            .space
            .parameters
            .iter()
            .map(|p| self.rng.random_range(0..p.values.len()))
            .collect();
        self.space.realize(&value_idx)
    }

    fn ensure_pool(&mut self) -> Result<&Vec<Configuration>> {
        if self.pool.is_none() {
            let all = self
                .space
                .enumerate_valid()
                .expect("pool sampling only below the enumeration bound");
            if all.is_empty() {
                return Err(SpaceError::EmptySpace);
            }
            self.pool = Some(all);
        }
        Ok(self.pool.as_ref().unwrap())
    }

    /// Draw one uniformly random valid configuration. Unlike [`sample`],
    /// repeated calls may return duplicates — this feeds search paths that
    /// deliberately tolerate re-draws. Errors only when the space has no
    /// valid member.
    ///
    /// [`sample`]: Sampler::sample
    pub fn draw(&mut self) -> Result<Configuration> {
        if self.use_pool {
            let len = self.ensure_pool()?.len();
            let i = self.rng.random_range(0..len);
            return Ok(self.pool.as_ref().unwrap()[i].clone());
        }
        for _ in 0..10_000 {
            let cfg = self.sample_raw();
            if !self
                .space
                .forbidden
                .iter()
                .any(|c| self.space.clause_matches(c, &cfg))
            {
                return Ok(cfg);
            }
        }
        Err(SpaceError::EmptySpace)
    }

    /// Sample up to `count` distinct valid configurations, none of which are
    /// in `exclude`. Returns fewer than `count` when the remaining space is
    /// smaller; errors only when the space has no valid member at all.
    pub fn sample(
        &mut self,
        count: usize,
        exclude: &HashSet<Configuration>,
    ) -> Result<Vec<Configuration>> {
        if self.use_pool {
            self.ensure_pool()?;
            let pool = self.pool.as_ref().unwrap();
            let mut remaining: Vec<&Configuration> =
                pool.iter().filter(|c| !exclude.contains(*c)).collect();
            remaining.shuffle(&mut self.rng);
            return Ok(remaining.into_iter().take(count).cloned().collect());
        }

        // Large space: rejection sampling. Collisions are rare out here, so a
        // bounded number of attempts fills the batch with near certainty.
        let mut out = Vec::with_capacity(count);
        let mut seen: HashSet<Configuration> = HashSet::new();
        let attempt_budget = 10_000usize.saturating_add(count.saturating_mul(50));
        let mut found_any_valid = false;
        for _ in 0..attempt_budget {
            if out.len() == count {
                break;
            }
            let cfg = self.sample_raw();
            if self
                .space
                .forbidden
                .iter()
                .any(|c| self.space.clause_matches(c, &cfg))
            {
                continue;
            }
            found_any_valid = true;
            if exclude.contains(&cfg) || seen.contains(&cfg) {
                continue;
            }
            seen.insert(cfg.clone());
            out.push(cfg);
        }
        if !found_any_valid && exclude.is_empty() {
            // Nothing valid in a very large attempt budget: treat as empty.
            return Err(SpaceError::EmptySpace);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syr2k_space() -> ParamSpace {
        ParamSpace::from_path(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/syr2k/space.json"
        ))
        .expect("bundled space parses")
    }

    fn mnist_space() -> ParamSpace {
        ParamSpace::from_path(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/mnist/space.json"
        ))
        .expect("bundled space parses")
    }

    const PACK_A: &str = "#pragma clang loop(j2) pack array(A) allocate(malloc)";
    const PACK_B: &str = "#pragma clang loop(i1) pack array(B) allocate(malloc)";

    fn two_param_conditional() -> ParamSpace {
        // P1 is active only when P0 == "on".
        ParamSpace::new(
            7,
            vec![
                Parameter {
                    name: "P0".into(),
                    kind: ParamKind::Categorical,
                    values: vec!["on".into(), "off".into()],
                    default: "off".into(),
                },
                Parameter {
                    name: "P1".into(),
                    kind: ParamKind::Ordinal,
                    values: vec!["1".into(), "2".into(), "3".into()],
                    default: "1".into(),
                },
            ],
            vec![ActivationCondition {
                child: "P1".into(),
                parent: "P0".into(),
                triggering_values: vec!["on".into()],
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn syr2k_cardinality_matches_published_product() {
        let space = syr2k_space();
        let card = space.cardinality();
        assert_eq!(card.domain_product, 10_648);
        // Condition-aware: P0="pack" branch keeps P1's 2 states, the blank
        // branch collapses it, so 3 * 2 * 11^3.
        assert_eq!(card.exact, Some(7_986));
        assert!(!card.product_is_upper_bound());
    }

    #[test]
    fn mnist_cardinality_matches_published_product() {
        let card = mnist_space().cardinality();
        assert_eq!(card.domain_product, 3_500);
        // No conditions or forbidden clauses, so exact equals the product.
        assert_eq!(card.exact, Some(3_500));
    }

    #[test]
    fn exact_count_matches_brute_force_oracle() {
        // Oracle: enumerate the full raw product, collapse deactivated
        // children, deduplicate, and drop forbidden members. This is an
        // independent path from the topological recursion in cardinality().
        let spaces = vec![
            syr2k_space(),
            mnist_space(),
            two_param_conditional(),
            chained_conditions_space(),
            forbidden_space(),
        ];
        for space in spaces {
            let brute = brute_force_members(&space);
            let card = space.cardinality();
            assert_eq!(
                card.exact,
                Some(brute.len() as u64),
                "space with {} parameters",
                space.len()
            );
            let enumerated = space.enumerate_valid().unwrap();
            assert_eq!(enumerated.len(), brute.len());
            let enumerated: HashSet<_> = enumerated.into_iter().collect();
            assert_eq!(enumerated, brute);
        }
    }

    fn brute_force_members(space: &ParamSpace) -> HashSet<Configuration> {
        let sizes: Vec<usize> = space.parameters().iter().map(|p| p.values.len()).collect();
        let mut out = HashSet::new();
        let mut idx = vec![0usize; sizes.len()];
        loop {
            let cfg = space.realize(&idx);
            if space.validate(&cfg).unwrap().is_valid() {
                out.insert(cfg);
            }
            let mut carry = 0;
            loop {
                if carry == sizes.len() {
                    return out;
                }
                idx[carry] += 1;
                if idx[carry] < sizes[carry] {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
        }
    }

    fn chained_conditions_space() -> ParamSpace {
        // P2 depends on P1 which depends on P0: deactivation cascades.
        ParamSpace::new(
            3,
            vec![
                Parameter {
                    name: "P0".into(),
                    kind: ParamKind::Categorical,
                    values: vec!["a".into(), "b".into()],
                    default: "a".into(),
                },
                Parameter {
                    name: "P1".into(),
                    kind: ParamKind::Categorical,
                    values: vec!["x".into(), "y".into()],
                    default: "x".into(),
                },
                Parameter {
                    name: "P2".into(),
                    kind: ParamKind::Ordinal,
                    values: vec!["1".into(), "2".into(), "3".into()],
                    default: "1".into(),
                },
            ],
            vec![
                ActivationCondition {
                    child: "P1".into(),
                    parent: "P0".into(),
                    triggering_values: vec!["a".into()],
                },
                ActivationCondition {
                    child: "P2".into(),
                    parent: "P1".into(),
                    triggering_values: vec!["y".into()],
                },
            ],
            vec![],
        )
        .unwrap()
    }

    fn forbidden_space() -> ParamSpace {
        ParamSpace::new(
            5,
            vec![
                Parameter {
                    name: "A".into(),
                    kind: ParamKind::Categorical,
                    values: vec!["0".into(), "1".into()],
                    default: "0".into(),
                },
                Parameter {
                    name: "B".into(),
                    kind: ParamKind::Categorical,
                    values: vec!["0".into(), "1".into()],
                    default: "0".into(),
                },
            ],
            vec![],
            vec![ForbiddenClause {
                assignments: [("A".to_string(), "1".to_string()), ("B".to_string(), "1".to_string())]
                    .into_iter()
                    .collect(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn validate_flags_out_of_domain_tile_size() {
        let space = syr2k_space();
        let mut cfg = space.default_configuration();
        cfg.set_active("P3", "7");
        match space.validate(&cfg).unwrap() {
            Validity::Invalid(v) => assert_eq!(
                v,
                vec![Violation::ValueNotInDomain { name: "P3".into(), value: "7".into() }]
            ),
            Validity::Valid => panic!("7 is not a legal tile size"),
        }
    }

    #[test]
    fn validate_enforces_activation_both_ways() {
        let space = syr2k_space();

        // Child active while the parent does not trigger it.
        let mut cfg = space.default_configuration();
        assert_eq!(cfg.active_value("P0"), Some(" "));
        cfg.set_active("P1", PACK_B);
        match space.validate(&cfg).unwrap() {
            Validity::Invalid(v) => {
                assert!(v.contains(&Violation::ShouldBeInactive {
                    child: "P1".into(),
                    parent: "P0".into()
                }));
            }
            Validity::Valid => panic!("P1 must be inactive when P0 is blank"),
        }

        // Child inactive while the parent triggers it.
        let mut cfg = space.default_configuration();
        cfg.set_active("P0", PACK_A);
        match space.validate(&cfg).unwrap() {
            Validity::Invalid(v) => {
                assert!(v.contains(&Violation::ShouldBeActive {
                    child: "P1".into(),
                    parent: "P0".into()
                }));
            }
            Validity::Valid => panic!("P1 must be active when P0 packs"),
        }

        // And the repaired configuration is valid.
        let mut cfg = space.default_configuration();
        cfg.set_active("P0", PACK_A);
        cfg.set_active("P1", PACK_B);
        assert!(space.validate(&cfg).unwrap().is_valid());
    }

    #[test]
    fn validate_rejects_unknown_parameter_structurally() {
        let space = syr2k_space();
        let mut cfg = space.default_configuration();
        cfg.set_active("P9", "1");
        assert!(matches!(
            space.validate(&cfg),
            Err(SpaceError::UnknownParameter(name)) if name == "P9"
        ));
    }

    #[test]
    fn sampling_small_spaces_respects_exclusion() {
        let space = forbidden_space();
        let all = space.enumerate_valid().unwrap();
        assert_eq!(all.len(), 3);
        let mut sampler = Sampler::new(&space);

        let exclude: HashSet<Configuration> = all.iter().take(2).cloned().collect();
        let got = sampler.sample(10, &exclude).unwrap();
        assert_eq!(got.len(), 1);
        assert!(!exclude.contains(&got[0]));

        let exclude: HashSet<Configuration> = all.into_iter().collect();
        let got = sampler.sample(10, &exclude).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let space = syr2k_space();
        let none = HashSet::new();
        let a: Vec<_> = Sampler::new(&space).sample(64, &none).unwrap();
        let b: Vec<_> = Sampler::new(&space).sample(64, &none).unwrap();
        assert_eq!(a, b);
        let c: Vec<_> = Sampler::with_seed(&space, 99).sample(64, &none).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampled_batches_hold_distinct_valid_members() {
        let space = syr2k_space();
        let mut sampler = Sampler::new(&space);
        let got = sampler.sample(500, &HashSet::new()).unwrap();
        assert_eq!(got.len(), 500);
        let distinct: HashSet<_> = got.iter().cloned().collect();
        assert_eq!(distinct.len(), got.len());
        for cfg in &got {
            assert!(space.validate(cfg).unwrap().is_valid());
        }
    }

    #[test]
    fn fully_forbidden_space_errors_as_empty() {
        let space = ParamSpace::new(
            0,
            vec![Parameter {
                name: "A".into(),
                kind: ParamKind::Categorical,
                values: vec!["0".into()],
                default: "0".into(),
            }],
            vec![],
            vec![ForbiddenClause {
                assignments: [("A".to_string(), "0".to_string())].into_iter().collect(),
            }],
        )
        .unwrap();
        let mut sampler = Sampler::new(&space);
        assert!(matches!(
            sampler.sample(1, &HashSet::new()),
            Err(SpaceError::EmptySpace)
        ));
    }

    #[test]
    fn tree_encoding_uses_ranks_and_inactive_sentinel() {
        let space = syr2k_space();
        let mut cfg = space.default_configuration();
        cfg.set_active("P3", "16");
        let encoded = space.encode(&cfg, EncodingScheme::Tree).unwrap();
        // Parameters are P0..P5 in declaration order; '16' is rank 2 in the
        // tile-size sequence and the deactivated P1 maps to -1.
        assert_eq!(encoded.len(), 6);
        assert_eq!(encoded[1], -1.0);
        assert_eq!(encoded[3], 2.0);
    }

    #[test]
    fn gp_encoding_one_hots_categoricals_and_normalizes_ordinals() {
        let space = two_param_conditional();
        let mut cfg = Configuration::new();
        cfg.set_active("P0", "on");
        cfg.set_active("P1", "3");
        let encoded = space.encode(&cfg, EncodingScheme::Gp).unwrap();
        // P0: one-hot(2); P1: normalized rank + activity bit.
        assert_eq!(encoded, vec![1.0, 0.0, 1.0, 1.0]);

        let mut cfg = Configuration::new();
        cfg.set_active("P0", "off");
        cfg.set_inactive("P1");
        let encoded = space.encode(&cfg, EncodingScheme::Gp).unwrap();
        assert_eq!(encoded, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_rejects_invalid_configurations() {
        let space = syr2k_space();
        let mut cfg = space.default_configuration();
        cfg.set_active("P3", "12345");
        assert!(matches!(
            space.encode(&cfg, EncodingScheme::Tree),
            Err(SpaceError::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn encoding_round_trips_and_is_injective_over_all_members() {
        // Exhaustive over every valid member of the bundled kernel space.
        let space = syr2k_space();
        let members = space.enumerate_valid().unwrap();
        assert_eq!(members.len(), 7_986);
        for scheme in [EncodingScheme::Tree, EncodingScheme::Gp] {
            let mut seen: HashSet<Vec<u64>> = HashSet::new();
            for cfg in &members {
                let encoded = space.encode(cfg, scheme).unwrap();
                assert_eq!(encoded.len(), space.encoding_width(scheme));
                let bits: Vec<u64> = encoded.iter().map(|x| x.to_bits()).collect();
                assert!(seen.insert(bits), "two members share an encoding");
                let back = space.decode(&encoded, scheme).unwrap();
                assert_eq!(&back, cfg);
            }
        }
    }

    #[test]
    fn decode_rejects_wrong_width_and_out_of_range() {
        let space = two_param_conditional();
        assert!(matches!(
            space.decode(&[0.0], EncodingScheme::Tree),
            Err(SpaceError::EncodingShape { expected: 2, got: 1 })
        ));
        assert!(matches!(
            space.decode(&[0.0, 9.0], EncodingScheme::Tree),
            Err(SpaceError::EncodingValue { .. })
        ));
    }

    #[test]
    fn space_invariants_are_rejected_at_construction() {
        let param = |name: &str| Parameter {
            name: name.into(),
            kind: ParamKind::Categorical,
            values: vec!["0".into(), "1".into()],
            default: "0".into(),
        };
        // Duplicate names.
        assert!(ParamSpace::new(0, vec![param("A"), param("A")], vec![], vec![]).is_err());
        // Default outside the domain.
        let mut bad = param("A");
        bad.default = "9".into();
        assert!(ParamSpace::new(0, vec![bad], vec![], vec![]).is_err());
        // Condition cycle.
        assert!(ParamSpace::new(
            0,
            vec![param("A"), param("B")],
            vec![
                ActivationCondition {
                    child: "A".into(),
                    parent: "B".into(),
                    triggering_values: vec!["0".into()],
                },
                ActivationCondition {
                    child: "B".into(),
                    parent: "A".into(),
                    triggering_values: vec!["0".into()],
                },
            ],
            vec![],
        )
        .is_err());
        // Triggering value outside the parent domain.
        assert!(ParamSpace::new(
            0,
            vec![param("A"), param("B")],
            vec![ActivationCondition {
                child: "B".into(),
                parent: "A".into(),
                triggering_values: vec!["9".into()],
            }],
            vec![],
        )
        .is_err());
    }

    #[test]
    fn default_configuration_deactivates_untriggered_children() {
        let space = syr2k_space();
        let cfg = space.default_configuration();
        assert_eq!(cfg.active_value("P0"), Some(" "));
        assert_eq!(cfg.get("P1"), Some(&ParamValue::Inactive));
        assert_eq!(cfg.active_value("P3"), Some("96"));
        assert_eq!(cfg.active_value("P4"), Some("2048"));
        assert_eq!(cfg.active_value("P5"), Some("256"));
        assert!(space.validate(&cfg).unwrap().is_valid());
    }
}
