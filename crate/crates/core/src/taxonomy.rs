//! Privacy categories, attributes and development scenarios.
//!
//! The taxonomy is loaded from an editable JSON document; the bundled default
//! covers 15 attributes in three categories across six scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled default taxonomy document.
pub const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy document: {0}")]
    Malformed(String),
    #[error("duplicate attribute id `{0}`")]
    DuplicateAttribute(String),
    #[error("duplicate scenario id `{0}`")]
    DuplicateScenario(String),
    #[error("attribute `{attribute}` references unknown scenario `{scenario}`")]
    UnknownScenarioRef { attribute: String, scenario: String },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrivacyCategory {
    Identifiable,
    Private,
    Secret,
}

impl PrivacyCategory {
    pub const ALL: [PrivacyCategory; 3] = [
        PrivacyCategory::Identifiable,
        PrivacyCategory::Private,
        PrivacyCategory::Secret,
    ];
}

impl fmt::Display for PrivacyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeId(pub String);

impl AttributeId {
    pub fn new(s: impl Into<String>) -> Self {
        AttributeId(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AttributeId {
    fn from(s: &str) -> Self {
        AttributeId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioId(pub String);

impl ScenarioId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ScenarioId {
    fn from(s: &str) -> Self {
        ScenarioId(s.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub name: String,
    pub description: String,
}

/// Extra shape check applied after a pattern matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Validator {
    /// Digits (ignoring separators) must pass the Luhn checksum.
    Luhn,
    /// Shannon entropy per character must reach the configured floor.
    Entropy,
    /// Number of ASCII digits must fall in `[min, max]`.
    DigitCount { min: usize, max: usize },
}

/// One declarative match rule of an attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternRule {
    #[serde(with = "regex_serde")]
    pub regex: Regex,
    /// Key-name cues; when nonempty one of them must appear in the
    /// assignment or argument that holds the value.
    #[serde(default)]
    pub cues: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validator: Option<Validator>,
}

impl PatternRule {
    pub fn requires_cue(&self) -> bool {
        !self.cues.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharClass {
    Digits,
    Alnum,
    Any,
}

/// How a value is starred out before it leaves the run store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Keep `keep_prefix` and `keep_suffix` characters of `class`, star the
    /// rest. Characters outside the class are separators and are kept, except
    /// inside the starred run when `collapse_separators` is set.
    Span {
        class: CharClass,
        keep_prefix: usize,
        keep_suffix: usize,
        #[serde(default)]
        collapse_separators: bool,
    },
    /// Keep the first `keep_local` characters of the local part and the domain.
    Email { keep_local: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub id: AttributeId,
    pub category: PrivacyCategory,
    pub scenarios: Vec<ScenarioId>,
    pub description: String,
    pub patterns: Vec<PatternRule>,
    pub slot_symbol: String,
    pub seed_exemplars: Vec<String>,
    pub mask_policy: MaskPolicy,
}

impl AttributeSpec {
    /// All cue words across patterns, deduplicated in first-seen order.
    pub fn cue_words(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for p in &self.patterns {
            for c in &p.cues {
                if seen.insert(c.as_str()) {
                    out.push(c.as_str());
                }
            }
        }
        out
    }

    /// Words usable to recognise this attribute in code: its cues plus the
    /// split attribute id (e.g. `PhoneNumber` gives `phone_number`).
    pub fn reference_cues(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cue_words().iter().map(|s| s.to_string()).collect();
        let own = segments(self.id.as_str()).join("_");
        if !out.contains(&own) {
            out.push(own);
        }
        out
    }

    pub fn has_scenario(&self, s: &ScenarioId) -> bool {
        self.scenarios.iter().any(|x| x == s)
    }

    /// Human-readable attribute name ("PhoneNumber" -> "phone number").
    pub fn display_name(&self) -> String {
        segments(self.id.as_str()).join(" ")
    }
}

#[derive(Debug, Deserialize)]
struct TaxonomyDocument {
    scenarios: Vec<Scenario>,
    attributes: Vec<AttributeSpec>,
}

/// Immutable, shareable taxonomy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    scenarios: Vec<Scenario>,
    attributes: Vec<AttributeSpec>,
    by_id: BTreeMap<AttributeId, usize>,
}

impl Taxonomy {
    /// The bundled default document.
    pub fn bundled() -> Taxonomy {
        load_taxonomy(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn attribute(&self, id: &AttributeId) -> Option<&AttributeSpec> {
        self.by_id.get(id).map(|&i| &self.attributes[i])
    }

    pub fn require_attribute(&self, id: &str) -> Result<&AttributeSpec, TaxonomyError> {
        self.attribute(&AttributeId::new(id))
            .ok_or_else(|| TaxonomyError::UnknownAttribute(id.to_string()))
    }

    pub fn categories(&self) -> BTreeSet<PrivacyCategory> {
        self.attributes.iter().map(|a| a.category).collect()
    }

    /// Resolve a user-supplied scenario name to its id. Accepts the id itself,
    /// the display name, and simple variants such as "Enterprise Apps".
    pub fn resolve_scenario(&self, name: &str) -> Result<&Scenario, TaxonomyError> {
        let wanted = normalize_name(name);
        let singular = wanted.strip_suffix('s').map(str::to_string);
        self.scenarios
            .iter()
            .find(|s| {
                let id = normalize_name(s.id.as_str());
                let disp = normalize_name(&s.name);
                [&id, &disp].iter().any(|k| {
                    **k == wanted || singular.as_deref() == Some(k.as_str())
                })
            })
            .ok_or_else(|| TaxonomyError::UnknownScenario(name.to_string()))
    }

    /// The attributes that list scenario `s`, ordered by attribute id.
    pub fn attributes_for_scenario(&self, s: &str) -> Result<Vec<&AttributeSpec>, TaxonomyError> {
        let scenario = self.resolve_scenario(s)?;
        let mut out: Vec<&AttributeSpec> = self
            .attributes
            .iter()
            .filter(|a| a.has_scenario(&scenario.id))
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

/// Parse and validate a taxonomy document.
pub fn load_taxonomy(source: &str) -> Result<Taxonomy, TaxonomyError> {
    let doc: TaxonomyDocument =
        serde_json::from_str(source).map_err(|e| TaxonomyError::Malformed(e.to_string()))?;

    let mut scenario_ids = BTreeSet::new();
    for s in &doc.scenarios {
        if !scenario_ids.insert(s.id.clone()) {
            return Err(TaxonomyError::DuplicateScenario(s.id.0.clone()));
        }
    }

    let mut by_id = BTreeMap::new();
    let mut slots = BTreeSet::new();
    let mut referenced = BTreeSet::new();
    for (i, a) in doc.attributes.iter().enumerate() {
        if by_id.insert(a.id.clone(), i).is_some() {
            return Err(TaxonomyError::DuplicateAttribute(a.id.0.clone()));
        }
        if a.patterns.is_empty() {
            return Err(TaxonomyError::Malformed(format!("attribute `{}` has no patterns", a.id)));
        }
        if a.scenarios.is_empty() {
            return Err(TaxonomyError::Malformed(format!("attribute `{}` has no scenarios", a.id)));
        }
        for s in &a.scenarios {
            if !scenario_ids.contains(s) {
                return Err(TaxonomyError::UnknownScenarioRef {
                    attribute: a.id.0.clone(),
                    scenario: s.0.clone(),
                });
            }
            referenced.insert(s.clone());
        }
        if !is_slot_symbol(&a.slot_symbol) {
            return Err(TaxonomyError::Malformed(format!(
                "attribute `{}` has invalid slot symbol `{}`",
                a.id, a.slot_symbol
            )));
        }
        if !slots.insert(a.slot_symbol.clone()) {
            return Err(TaxonomyError::Malformed(format!(
                "slot symbol `{}` is used twice",
                a.slot_symbol
            )));
        }
        for p in &a.patterns {
            if p.min_len > p.max_len {
                return Err(TaxonomyError::Malformed(format!(
                    "attribute `{}` has min_len > max_len",
                    a.id
                )));
            }
        }
    }
    if let Some(orphan) = scenario_ids.difference(&referenced).next() {
        return Err(TaxonomyError::Malformed(format!(
            "scenario `{orphan}` is not used by any attribute"
        )));
    }

    Ok(Taxonomy {
        scenarios: doc.scenarios,
        attributes: doc.attributes,
        by_id,
    })
}

/// `⟨NAME-IN-CAPS⟩` with ASCII capitals, digits and underscores.
pub fn is_slot_symbol(s: &str) -> bool {
    s.strip_prefix('⟨')
        .and_then(|r| r.strip_suffix('⟩'))
        .map(|inner| {
            !inner.is_empty()
                && inner
                    .chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
        })
        .unwrap_or(false)
}

fn normalize_name(s: &str) -> String {
    segments(s).join("_")
}

/// Split an identifier or phrase into lowercase word segments, breaking on
/// non-alphanumerics, camelCase humps, acronym ends and letter/digit changes.
pub fn segments(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for i in 0..chars.len() {
        let c = chars[i];
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if let Some(&prev) = i.checked_sub(1).and_then(|j| chars.get(j)) {
            let next = chars.get(i + 1).copied();
            let boundary = prev.is_alphanumeric()
                && ((prev.is_lowercase() && c.is_uppercase())
                    || (prev.is_uppercase()
                        && c.is_uppercase()
                        && next.map(|n| n.is_lowercase()).unwrap_or(false))
                    || (prev.is_alphabetic() && c.is_ascii_digit())
                    || (prev.is_ascii_digit() && c.is_alphabetic()));
            if boundary && !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// True when the cue's segments occur contiguously in `haystack`. The last
/// cue segment also matches a plural (`email` matches `emails`).
pub fn cue_matches(cue: &str, haystack: &[String]) -> bool {
    let cue_segs = segments(cue);
    if cue_segs.is_empty() || cue_segs.len() > haystack.len() {
        return false;
    }
    let last = cue_segs.len() - 1;
    haystack.windows(cue_segs.len()).any(|w| {
        w.iter().zip(&cue_segs).enumerate().all(|(i, (h, c))| {
            h == c || (i == last && (h.strip_suffix('s') == Some(c) || h.strip_suffix("es") == Some(c)))
        })
    })
}

mod regex_serde {
    use regex::Regex;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(re: &Regex, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(re.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Regex, D::Error> {
        let s = String::deserialize(d)?;
        Regex::new(&s).map_err(serde::de::Error::custom)
    }
}
