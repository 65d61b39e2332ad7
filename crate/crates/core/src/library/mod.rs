//! Per-attribute feature library of templates and fragments, hint sampling
//! and post-run updates from confirmed leaks.

pub mod dbscan;
pub mod division;
pub mod scorer;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{derive_seed, short_id};
use crate::extract::normalize_value;
use crate::taxonomy::{AttributeId, Taxonomy};
use dbscan::{cosine_similarity, dbscan, estimate_eps, DEFAULT_MIN_PTS};
use division::{divide, Part, DEFAULT_QUARTILE};
use scorer::{Scorer, ScorerError};

pub const SEED_LIBRARY: &str = include_str!("../../data/seed_library.json");
pub const DEFAULT_HINTS_PER_KIND: usize = 2;
pub const DEFAULT_PROTOTYPE_THRESHOLD: f64 = 0.6;
/// Slot used for fragment runs that do not hold the confirmed value.
pub const OTHER_SLOT: &str = "⟨VALUE⟩";

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("malformed feature library: {0}")]
    Malformed(String),
    #[error("attribute `{0}` needs at least one seed template and one seed fragment")]
    EmptySeeds(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("library file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Template,
    Fragment,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Template => "template",
            EntryKind::Fragment => "fragment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    Seed,
    Mined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: String,
    pub attribute: AttributeId,
    pub kind: EntryKind,
    pub text: String,
    pub source: EntrySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

fn entry_id(attr: &AttributeId, kind: EntryKind, text: &str) -> String {
    short_id(&["entry", attr.as_str(), kind.as_str(), &normalize_value(text)])
}

impl LibraryEntry {
    pub fn new(attribute: AttributeId, kind: EntryKind, text: &str, source: EntrySource) -> Self {
        LibraryEntry { id: entry_id(&attribute, kind, text), attribute, kind, text: text.to_string(), source, run_id: None, cluster: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeHints {
    pub attribute: AttributeId,
    pub templates: Vec<String>,
    pub fragments: Vec<String>,
}

/// Hints attached to one test prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintBundle {
    pub function_id: String,
    pub library_version: Option<u64>,
    pub hints: Vec<AttributeHints>,
}

impl HintBundle {
    pub fn empty(function_id: &str) -> Self {
        HintBundle { function_id: function_id.to_string(), library_version: None, hints: vec![] }
    }

    pub fn is_empty(&self) -> bool {
        self.hints.iter().all(|h| h.templates.is_empty() && h.fragments.is_empty())
    }
}

#[derive(Debug, Deserialize)]
struct SeedDocument {
    #[serde(default)]
    version: u64,
    attributes: BTreeMap<String, SeedAttribute>,
}

#[derive(Debug, Deserialize)]
struct SeedAttribute {
    templates: Vec<String>,
    fragments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLibrary {
    pub version: u64,
    pub entries: Vec<LibraryEntry>,
}

impl FeatureLibrary {
    /// The bundled seed library.
    pub fn seed(taxonomy: &Taxonomy) -> Result<Self, LibraryError> {
        Self::from_seed_document(taxonomy, SEED_LIBRARY)
    }

    /// Parse a seed document (`{"attributes": {id: {templates, fragments}}}`).
    pub fn from_seed_document(taxonomy: &Taxonomy, text: &str) -> Result<Self, LibraryError> {
        let doc: SeedDocument = serde_json::from_str(text).map_err(|e| LibraryError::Malformed(e.to_string()))?;
        let mut entries = Vec::new();
        for (attr, seeds) in &doc.attributes {
            let id = AttributeId::new(attr.as_str());
            for t in &seeds.templates {
                entries.push(LibraryEntry::new(id.clone(), EntryKind::Template, t, EntrySource::Seed));
            }
            for f in &seeds.fragments {
                entries.push(LibraryEntry::new(id.clone(), EntryKind::Fragment, f, EntrySource::Seed));
            }
        }
        let lib = FeatureLibrary { version: doc.version, entries };
        lib.validate(taxonomy)?;
        Ok(lib)
    }

    /// Every taxonomy attribute has seed templates and fragments, templates
    /// carry the attribute's slot, and entries refer to known attributes.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), LibraryError> {
        for e in &self.entries {
            let spec = taxonomy
                .attribute(&e.attribute)
                .ok_or_else(|| LibraryError::Malformed(format!("unknown attribute `{}`", e.attribute)))?;
            if e.kind == EntryKind::Template && !e.text.contains(&spec.slot_symbol) {
                return Err(LibraryError::Malformed(format!("template `{}` lacks slot {}", e.text, spec.slot_symbol)));
            }
        }
        for a in taxonomy.attributes() {
            let has = |k| self.entries.iter().any(|e| e.attribute == a.id && e.kind == k && e.source == EntrySource::Seed);
            if !has(EntryKind::Template) || !has(EntryKind::Fragment) {
                return Err(LibraryError::EmptySeeds(a.id.0.clone()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, LibraryError> {
        serde_json::from_str(text).map_err(|e| LibraryError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path, taxonomy: &Taxonomy) -> Result<Self, LibraryError> {
        let lib = Self::from_json(&std::fs::read_to_string(path)?)?;
        lib.validate(taxonomy)?;
        Ok(lib)
    }

    /// Write via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), LibraryError> {
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self).map_err(|e| LibraryError::Malformed(e.to_string()))?;
        std::fs::write(&tmp, text + "\n")?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn entries_for(&self, attr: &AttributeId, kind: EntryKind) -> Vec<&LibraryEntry> {
        let mut v: Vec<&LibraryEntry> = self.entries.iter().filter(|e| &e.attribute == attr && e.kind == kind).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Seed exemplars plus library fragments, for judge prompts.
    pub fn exemplar_pool(&self, taxonomy: &Taxonomy, attr: &AttributeId) -> Vec<String> {
        let mut pool: BTreeSet<String> = taxonomy.attribute(attr).map(|a| a.seed_exemplars.iter().cloned().collect()).unwrap_or_default();
        pool.extend(self.entries_for(attr, EntryKind::Fragment).into_iter().map(|e| e.text.clone()));
        pool.into_iter().collect()
    }

    /// Seeded sample of up to `per_kind` templates and fragments per
    /// attribute, without replacement.
    pub fn sample_hints(&self, function_id: &str, attrs: &[AttributeId], per_kind: usize, seed: u64) -> HintBundle {
        let attrs: BTreeSet<&AttributeId> = attrs.iter().collect();
        let hints = attrs
            .into_iter()
            .map(|a| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{function_id}/{a}")));
                let mut pick = |k: EntryKind| -> Vec<String> {
                    self.entries_for(a, k).choose_multiple(&mut rng, per_kind).map(|e| e.text.clone()).collect()
                };
                let templates = pick(EntryKind::Template);
                let fragments = pick(EntryKind::Fragment);
                AttributeHints { attribute: a.clone(), templates, fragments }
            })
            .filter(|h| !h.templates.is_empty() || !h.fragments.is_empty())
            .collect();
        HintBundle { function_id: function_id.to_string(), library_version: Some(self.version), hints }
    }
}

/// A reviewed leak feeding a library update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmedInstance {
    pub candidate_id: String,
    pub attribute: AttributeId,
    pub value: String,
    pub context_line: String,
}

#[derive(Debug, Clone)]
pub struct UpdateParams {
    pub run_id: String,
    pub quartile: f64,
    pub min_pts: usize,
    /// Fixed `eps`; estimated from the data when unset.
    pub eps: Option<f64>,
    pub prototype_threshold: f64,
}

impl UpdateParams {
    pub fn new(run_id: &str) -> Self {
        UpdateParams { run_id: run_id.to_string(), quartile: DEFAULT_QUARTILE, min_pts: DEFAULT_MIN_PTS, eps: None, prototype_threshold: DEFAULT_PROTOTYPE_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub attribute: AttributeId,
    pub kind: Option<EntryKind>,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryDelta {
    pub from_version: u64,
    pub to_version: u64,
    pub added: Vec<LibraryEntry>,
    pub discarded: Vec<Discarded>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub instance_id: String,
    pub token: String,
    pub nll: f64,
    pub part: Part,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub entry_id: String,
    pub attribute: AttributeId,
    pub kind: EntryKind,
    pub cluster: Option<usize>,
    pub is_noise: bool,
    pub prototype_similarity: f64,
    pub admitted: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FigureRows {
    pub scores: Vec<ScoreRow>,
    pub clusters: Vec<ClusterRow>,
}

fn mean(vectors: &[Vec<f32>]) -> Vec<f32> {
    let Some(first) = vectors.first() else { return vec![] };
    let mut m = vec![0f32; first.len()];
    for v in vectors {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|x| *x /= vectors.len() as f32);
    m
}

fn char_span(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    let b = haystack.find(needle)?;
    let s = haystack[..b].chars().count();
    Some((s, s + needle.chars().count()))
}

/// Divide confirmed instances into templates and fragments, cluster them
/// with the library's existing mined entries, and admit new entries that
/// fall in a cluster or sit close to the seed prototype of their kind. The
/// input library is left untouched.
pub fn update_library(
    lib: &FeatureLibrary,
    taxonomy: &Taxonomy,
    scorer: &dyn Scorer,
    instances: &[ConfirmedInstance],
    params: &UpdateParams,
) -> Result<(FeatureLibrary, LibraryDelta, FigureRows), LibraryError> {
    let mut figures = FigureRows::default();
    let mut discarded = Vec::new();
    let mut fresh: BTreeMap<(AttributeId, EntryKind), BTreeMap<String, LibraryEntry>> = BTreeMap::new();

    for inst in instances {
        let spec = taxonomy
            .attribute(&inst.attribute)
            .ok_or_else(|| LibraryError::Malformed(format!("unknown attribute `{}`", inst.attribute)))?;
        let line = inst.context_line.trim();
        let Some(value_span) = char_span(line, &inst.value) else {
            discarded.push(Discarded { attribute: inst.attribute.clone(), kind: None, text: inst.candidate_id.clone(), reason: "value not in context line".into() });
            continue;
        };
        let scores = scorer.score_sequence(line)?;
        let div = divide(line, &scores, params.quartile, |s, e| {
            if s < value_span.1 && value_span.0 < e { spec.slot_symbol.clone() } else { OTHER_SLOT.to_string() }
        })?;
        for t in &div.tokens {
            figures.scores.push(ScoreRow { instance_id: inst.candidate_id.clone(), token: t.text.clone(), nll: t.nll, part: t.part });
        }
        if !div.template.contains(&spec.slot_symbol) {
            discarded.push(Discarded { attribute: inst.attribute.clone(), kind: Some(EntryKind::Template), text: div.template.clone(), reason: "value not isolated".into() });
            continue;
        }
        let mut add = |kind, text: &str| {
            let mut e = LibraryEntry::new(inst.attribute.clone(), kind, text, EntrySource::Mined);
            e.run_id = Some(params.run_id.clone());
            fresh.entry((inst.attribute.clone(), kind)).or_default().entry(e.id.clone()).or_insert(e);
        };
        add(EntryKind::Template, &div.template);
        for s in div.slots.iter().filter(|s| s.symbol == spec.slot_symbol) {
            add(EntryKind::Fragment, &div.fragments[s.fragment]);
        }
    }

    let existing: BTreeSet<String> = lib.entries.iter().map(|e| e.id.clone()).collect();
    let mut next = lib.clone();
    let mut added = Vec::new();
    for ((attr, kind), new_entries) in fresh {
        let seeds: Vec<&LibraryEntry> = lib.entries_for(&attr, kind).into_iter().filter(|e| e.source == EntrySource::Seed).collect();
        let proto = mean(&seeds.iter().map(|e| scorer.embed(&e.text).map(|x| x.vector)).collect::<Result<Vec<_>, _>>()?);
        // pool = existing mined entries plus new ones, ordered by id
        let mut pool: BTreeMap<String, LibraryEntry> = lib
            .entries_for(&attr, kind)
            .into_iter()
            .filter(|e| e.source == EntrySource::Mined)
            .map(|e| (e.id.clone(), e.clone()))
            .collect();
        for (id, e) in new_entries {
            pool.entry(id).or_insert(e);
        }
        let ids: Vec<String> = pool.keys().cloned().collect();
        let vectors = ids.iter().map(|id| scorer.embed(&pool[id].text).map(|x| x.vector)).collect::<Result<Vec<_>, _>>()?;
        let eps = params.eps.unwrap_or_else(|| estimate_eps(&vectors, params.min_pts));
        let labels = dbscan(&vectors, eps, params.min_pts);
        for (i, id) in ids.iter().enumerate() {
            let sim = cosine_similarity(&vectors[i], &proto);
            let admitted = labels[i].is_some() || sim >= params.prototype_threshold;
            figures.clusters.push(ClusterRow {
                entry_id: id.clone(),
                attribute: attr.clone(),
                kind,
                cluster: labels[i],
                is_noise: labels[i].is_none(),
                prototype_similarity: sim,
                admitted,
            });
            if let Some(e) = next.entries.iter_mut().find(|e| &e.id == id) {
                e.cluster = labels[i];
                continue;
            }
            let mut e = pool[id].clone();
            e.cluster = labels[i];
            if existing.contains(id) {
                continue;
            }
            if admitted {
                next.entries.push(e.clone());
                added.push(e);
            } else {
                discarded.push(Discarded { attribute: attr.clone(), kind: Some(kind), text: e.text, reason: format!("noise, prototype similarity {sim:.3}") });
            }
        }
    }
    next.version = lib.version + 1;
    let delta = LibraryDelta { from_version: lib.version, to_version: next.version, added, discarded };
    Ok((next, delta, figures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use scorer::StubScorer;

    fn lib() -> (Taxonomy, FeatureLibrary) {
        let t = Taxonomy::bundled();
        let l = FeatureLibrary::seed(&t).unwrap();
        (t, l)
    }

    #[test]
    fn seed_covers_every_attribute() {
        let (t, l) = lib();
        for a in t.attributes() {
            assert!(!l.entries_for(&a.id, EntryKind::Template).is_empty());
            assert!(!l.entries_for(&a.id, EntryKind::Fragment).is_empty());
        }
        let email = AttributeId::new("Email");
        assert!(l.entries_for(&email, EntryKind::Template).iter().any(|e| e.text == "user.email = ⟨EMAIL⟩"));
        assert!(l.entries_for(&AttributeId::new("PhoneNumber"), EntryKind::Template).iter().any(|e| e.text == "contact: ⟨PHONE⟩"));
    }

    #[test]
    fn seed_validation_errors() {
        let t = Taxonomy::bundled();
        let doc = r#"{"attributes": {"Email": {"templates": ["user.email = ⟨EMAIL⟩"], "fragments": ["a@b.cn"]}}}"#;
        assert!(matches!(FeatureLibrary::from_seed_document(&t, doc), Err(LibraryError::EmptySeeds(_))));
        let bad = SEED_LIBRARY.replace("user.email = ⟨EMAIL⟩", "user.email = x");
        assert!(matches!(FeatureLibrary::from_seed_document(&t, &bad), Err(LibraryError::Malformed(_))));
    }

    #[test]
    fn hints_are_seeded_and_bounded() {
        let (_, l) = lib();
        let attrs = [AttributeId::new("Email"), AttributeId::new("PhoneNumber")];
        let a = l.sample_hints("f1", &attrs, 2, 9);
        assert_eq!(a, l.sample_hints("f1", &attrs, 2, 9));
        assert_eq!(a.hints.len(), 2);
        assert!(a.hints.iter().all(|h| h.templates.len() == 2 && h.fragments.len() == 2));
        let mut distinct = a.hints[0].templates.clone();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
        assert!(l.sample_hints("f1", &attrs, 0, 9).is_empty());
    }

    #[test]
    fn update_adds_mined_entries_and_bumps_version() {
        let (t, l) = lib();
        let inst = ConfirmedInstance {
            candidate_id: "c1".into(),
            attribute: AttributeId::new("Email"),
            value: "li.ming.1987@qq.com".into(),
            context_line: "user.email = 'li.ming.1987@qq.com'".into(),
        };
        let mut p = UpdateParams::new("run1");
        p.prototype_threshold = -1.0;
        let (next, delta, fig) = update_library(&l, &t, &StubScorer, &[inst.clone()], &p).unwrap();
        assert_eq!((delta.from_version, delta.to_version, next.version), (0, 1, 1));
        let texts: Vec<&str> = delta.added.iter().map(|e| e.text.as_str()).collect();
        assert!(texts.contains(&"li.ming.1987@qq.com"));
        assert!(!texts.contains(&"user.email = ⟨EMAIL⟩"), "seed template is not re-added");
        assert_eq!(fig.scores.len(), 5);
        assert_eq!(l.version, 0);
        // same input again adds nothing new
        let (again, delta2, _) = update_library(&next, &t, &StubScorer, &[inst], &p).unwrap();
        assert!(delta2.added.is_empty());
        assert_eq!(again.entries.len(), next.entries.len());
    }

    #[test]
    fn value_outside_line_is_discarded() {
        let (t, l) = lib();
        let inst = ConfirmedInstance { candidate_id: "c".into(), attribute: AttributeId::new("Email"), value: "x@y.cn".into(), context_line: "a = 1".into() };
        let (_, delta, _) = update_library(&l, &t, &StubScorer, &[inst], &UpdateParams::new("r")).unwrap();
        assert_eq!(delta.discarded.len(), 1);
    }
}
