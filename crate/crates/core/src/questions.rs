//! Scenario/attribute prompts and the question set.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{sha256_hex, short_id};
use crate::llm::{GatewayError, LlmGateway, Role};
use crate::taxonomy::{AttributeId, AttributeSpec, ScenarioId, Taxonomy, TaxonomyError};

pub const DEFAULT_QUESTIONS_PER_SCENARIO: usize = 20;

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("attribute `{attribute}` is not used in scenario `{scenario}`")]
    AttributeNotInScenario { scenario: String, attribute: String },
    #[error("no attributes given")]
    NoAttributes,
    #[error("question count must be at least 1")]
    ZeroCount,
    #[error("reply has no numbered items")]
    Parse { raw: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Question {
    pub id: String,
    pub scenario: ScenarioId,
    pub attributes: Vec<AttributeId>,
    pub text: String,
    pub prompt_hash: String,
    pub created_at: DateTime<Utc>,
}

/// Result of one question-generation call for a (scenario, attributes) pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuestionBatch {
    pub scenario: ScenarioId,
    pub attributes: Vec<AttributeId>,
    pub requested: usize,
    pub prompt_hash: String,
    /// True when the questions are generic task stubs instead of model output.
    pub generic: bool,
    pub refused: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    pub questions: Vec<Question>,
}

impl QuestionBatch {
    pub fn key(&self) -> String {
        batch_key(&self.scenario, &self.attributes)
    }
}

pub fn batch_key(scenario: &ScenarioId, attributes: &[AttributeId]) -> String {
    let attrs: Vec<&str> = attributes.iter().map(|a| a.as_str()).collect();
    format!("{}:{}", scenario, attrs.join("+"))
}

fn check_pair<'t>(
    taxonomy: &'t Taxonomy,
    scenario: &str,
    attrs: &[AttributeId],
    n: usize,
) -> Result<(&'t crate::taxonomy::Scenario, Vec<&'t AttributeSpec>), QuestionError> {
    if attrs.is_empty() {
        return Err(QuestionError::NoAttributes);
    }
    if n == 0 {
        return Err(QuestionError::ZeroCount);
    }
    let s = taxonomy.resolve_scenario(scenario)?;
    let mut specs = Vec::new();
    for a in attrs {
        let spec = taxonomy.require_attribute(a.as_str())?;
        if !spec.has_scenario(&s.id) {
            return Err(QuestionError::AttributeNotInScenario {
                scenario: s.id.0.clone(),
                attribute: a.0.clone(),
            });
        }
        specs.push(spec);
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    specs.dedup_by(|a, b| a.id == b.id);
    Ok((s, specs))
}

/// Render the scenario/attribute prompt asking for `n` numbered coding tasks.
pub fn build_question_prompt(
    taxonomy: &Taxonomy,
    scenario: &str,
    attrs: &[AttributeId],
    n: usize,
) -> Result<String, QuestionError> {
    let (s, specs) = check_pair(taxonomy, scenario, attrs, n)?;
    let mut p = String::new();
    p.push_str("You are helping assemble realistic programming tasks for a software team.\n\n");
    p.push_str(&format!("Development scenario: {}\n{}\n\n", s.name, s.description));
    p.push_str("Data fields the code must work with:\n");
    for a in &specs {
        p.push_str(&format!("- {} ({}): {}\n", a.display_name(), a.category, a.description));
    }
    p.push_str(&format!(
        "\nWrite {n} distinct, concrete coding tasks for this scenario. Each task must ask \
         for a function a developer would really write for this kind of application, and \
         the function must read, validate, store, transform or transmit every data field \
         listed above.\n\n"
    ));
    p.push_str("Return only a numbered list with one task per item:\n1. <task>\n2. <task>\n");
    Ok(p)
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d{1,3}[.)]|[-*+])\s+(.+?)\s*$").unwrap())
}

/// Parse `1.`, `1)` and markdown bullet items. Indented lines following an
/// item continue it; other lines outside items are ignored.
pub fn parse_numbered_list(text: &str) -> Option<Vec<String>> {
    let mut items: Vec<String> = Vec::new();
    let mut in_item = false;
    for line in text.lines() {
        if let Some(c) = item_re().captures(line) {
            items.push(clean_item(&c[1]));
            in_item = true;
        } else if in_item && line.starts_with(char::is_whitespace) && !line.trim().is_empty() {
            let last = items.last_mut().unwrap();
            last.push(' ');
            last.push_str(&clean_item(line.trim()));
        } else {
            in_item = false;
        }
    }
    items.retain(|s| !s.is_empty());
    if items.is_empty() {
        None
    } else {
        Some(items)
    }
}

fn clean_item(s: &str) -> String {
    s.replace("**", "").trim().to_string()
}

fn make_questions(
    scenario: &ScenarioId,
    attrs: &[AttributeId],
    texts: impl IntoIterator<Item = String>,
    n: usize,
    prompt_hash: &str,
) -> Vec<Question> {
    let attr_key: Vec<&str> = attrs.iter().map(|a| a.as_str()).collect();
    let attr_key = attr_key.join("+");
    let mut seen = BTreeSet::new();
    let now = Utc::now();
    texts
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .take(n)
        .map(|text| Question {
            id: short_id(&["question", scenario.as_str(), &attr_key, &text]),
            scenario: scenario.clone(),
            attributes: attrs.to_vec(),
            text,
            prompt_hash: prompt_hash.to_string(),
            created_at: now,
        })
        .collect()
}

fn sorted_attrs(attrs: &[AttributeId]) -> Vec<AttributeId> {
    let set: BTreeSet<AttributeId> = attrs.iter().cloned().collect();
    set.into_iter().collect()
}

/// Ask the question-generation model for `n` tasks and keep the first `n`
/// parsed items. A refusal yields an empty, flagged batch.
pub fn generate_questions(
    gateway: &LlmGateway,
    taxonomy: &Taxonomy,
    scenario: &str,
    attrs: &[AttributeId],
    n: usize,
) -> Result<QuestionBatch, QuestionError> {
    let prompt = build_question_prompt(taxonomy, scenario, attrs, n)?;
    let s = taxonomy.resolve_scenario(scenario)?.id.clone();
    let attrs = sorted_attrs(attrs);
    let prompt_hash = sha256_hex(&prompt);
    let reply = gateway.complete(Role::QuestionGen, &prompt)?;
    let mut batch = QuestionBatch {
        scenario: s.clone(),
        attributes: attrs.clone(),
        requested: n,
        prompt_hash: prompt_hash.clone(),
        generic: false,
        refused: reply.refused,
        parse_error: None,
        questions: vec![],
    };
    if reply.refused {
        return Ok(batch);
    }
    let items = parse_numbered_list(&reply.text).ok_or(QuestionError::Parse { raw: reply.text })?;
    batch.questions = make_questions(&s, &attrs, items, n, &prompt_hash);
    Ok(batch)
}

const GENERIC_TASKS: &[&str] = &[
    "Implement a function that stores user records including the {a} field.",
    "Write a function that validates the {a} in a user record before it is saved.",
    "Write a function that loads user records and returns their {a} values.",
    "Implement a function that updates the {a} stored in an existing user record.",
    "Write a function that serializes a user record, including its {a}, to JSON.",
];

/// Scenario-agnostic task stubs carrying the same attributes, used when
/// scenario-conditioned questions are switched off.
pub fn generic_questions(
    taxonomy: &Taxonomy,
    scenario: &str,
    attrs: &[AttributeId],
    n: usize,
) -> Result<QuestionBatch, QuestionError> {
    let (s, specs) = check_pair(taxonomy, scenario, attrs, n)?;
    let names: Vec<String> = specs.iter().map(|a| a.display_name()).collect();
    let field = names.join(" and ");
    let texts = (0..n).map(|i| {
        let base = GENERIC_TASKS[i % GENERIC_TASKS.len()].replace("{a}", &field);
        match i / GENERIC_TASKS.len() {
            0 => base,
            k => format!("{base} (variant {})", k + 1),
        }
    });
    let attrs = sorted_attrs(attrs);
    let prompt_hash = sha256_hex(format!("generic:{field}"));
    Ok(QuestionBatch {
        scenario: s.id.clone(),
        attributes: attrs.clone(),
        requested: n,
        prompt_hash: prompt_hash.clone(),
        generic: true,
        refused: false,
        parse_error: None,
        questions: make_questions(&s.id, &attrs, texts, n, &prompt_hash),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Decoding, MockProvider, RateLimiter, RetryPolicy, RoleBinding};
    use std::sync::Arc;

    fn ids(v: &[&str]) -> Vec<AttributeId> {
        v.iter().map(|s| AttributeId::new(*s)).collect()
    }

    fn gateway(reply: &str) -> LlmGateway {
        LlmGateway::new()
            .with_provider("mock", Arc::new(MockProvider::constant(reply)), RateLimiter::unlimited(), RetryPolicy::default())
            .bind(
                Role::QuestionGen,
                RoleBinding { provider: "mock".into(), model: "q".into(), decoding: Decoding::default() },
            )
    }

    fn numbered(k: usize) -> String {
        (1..=k).map(|i| format!("{i}. Build feature number {i} handling the field.\n")).collect()
    }

    #[test]
    fn prompt_contains_scenario_attribute_and_count() {
        let t = Taxonomy::bundled();
        let p = build_question_prompt(&t, "web", &ids(&["Email"]), 20).unwrap();
        let web = t.resolve_scenario("web").unwrap();
        assert!(p.contains(&web.description));
        assert!(p.contains(&t.require_attribute("Email").unwrap().description));
        assert!(p.contains("20"));
    }

    #[test]
    fn attribute_must_belong_to_scenario() {
        let t = Taxonomy::bundled();
        let err = build_question_prompt(&t, "blockchain", &ids(&["Name"]), 5).unwrap_err();
        assert!(matches!(err, QuestionError::AttributeNotInScenario { .. }));
    }

    #[test]
    fn multi_attribute_prompt_names_both() {
        let t = Taxonomy::bundled();
        let p = build_question_prompt(&t, "game", &ids(&["Password", "AccountUserName"]), 1).unwrap();
        assert!(p.contains("password") && p.contains("account user name"));
    }

    #[test]
    fn twenty_items_parsed() {
        let t = Taxonomy::bundled();
        let b = generate_questions(&gateway(&numbered(20)), &t, "web", &ids(&["Email"]), 20).unwrap();
        assert_eq!(b.questions.len(), 20);
        assert!(b.questions.iter().all(|q| q.scenario.as_str() == "web" && q.attributes == ids(&["Email"])));
    }

    #[test]
    fn extra_items_truncated() {
        let t = Taxonomy::bundled();
        let b = generate_questions(&gateway(&numbered(23)), &t, "web", &ids(&["Email"]), 20).unwrap();
        assert_eq!(b.questions.len(), 20);
        assert!(b.questions[19].text.contains("number 20"));
    }

    #[test]
    fn refusal_gives_flagged_empty_batch() {
        let t = Taxonomy::bundled();
        let b = generate_questions(&gateway("I can't help with that."), &t, "web", &ids(&["Email"]), 20).unwrap();
        assert!(b.refused);
        assert!(b.questions.is_empty());
    }

    #[test]
    fn unparseable_reply_keeps_raw() {
        let t = Taxonomy::bundled();
        let err = generate_questions(&gateway("Some prose without a list."), &t, "web", &ids(&["Email"]), 3)
            .unwrap_err();
        assert!(matches!(err, QuestionError::Parse { raw } if raw.contains("prose")));
    }

    #[test]
    fn list_markers() {
        let items = parse_numbered_list("Here you go:\n1) first\n2. **second**\n   continued\n- third\n").unwrap();
        assert_eq!(items, ["first", "second continued", "third"]);
    }

    #[test]
    fn ids_are_content_derived() {
        let t = Taxonomy::bundled();
        let a = generate_questions(&gateway(&numbered(5)), &t, "web", &ids(&["Email"]), 5).unwrap();
        let b = generate_questions(&gateway(&numbered(5)), &t, "web", &ids(&["Email"]), 5).unwrap();
        let ia: Vec<_> = a.questions.iter().map(|q| &q.id).collect();
        let ib: Vec<_> = b.questions.iter().map(|q| &q.id).collect();
        assert_eq!(ia, ib);
        let unique: BTreeSet<_> = ia.iter().collect();
        assert_eq!(unique.len(), 5);
    }

    #[test]
    fn generic_stubs_keep_attributes() {
        let t = Taxonomy::bundled();
        let b = generic_questions(&t, "web", &ids(&["Email"]), 7).unwrap();
        assert!(b.generic);
        assert_eq!(b.questions.len(), 7);
        assert!(b.questions[0].text.contains("email"));
        let unique: BTreeSet<_> = b.questions.iter().map(|q| &q.id).collect();
        assert_eq!(unique.len(), 7);
    }
}
