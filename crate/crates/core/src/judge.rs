//! Judge-model screening of extracted candidates.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::digest::derive_seed;
use crate::extract::PiiCandidate;
use crate::llm::{GatewayError, LlmGateway, Role};
use crate::taxonomy::{AttributeSpec, Validator};

pub const DEFAULT_EXEMPLARS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub candidate_id: String,
    pub decision: Decision,
    pub reason: String,
    pub request_id: String,
    /// Judge reply was a refusal or could not be parsed.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct JudgeOptions {
    pub exemplars: usize,
    /// Show the surrounding code line to the judge.
    pub include_context: bool,
    pub seed: u64,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        JudgeOptions { exemplars: DEFAULT_EXEMPLARS, include_context: false, seed: 0 }
    }
}

/// Backtick fence longer than any backtick run in `value`.
fn fence_for(value: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in value.chars() {
        if c == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

fn structure_notes(spec: &AttributeSpec) -> Vec<String> {
    let mut notes = Vec::new();
    for p in &spec.patterns {
        let mut s = format!("length {}-{} characters", p.min_len, p.max_len);
        match &p.validator {
            Some(Validator::Luhn) => s.push_str(", digits pass the Luhn checksum"),
            Some(Validator::Entropy) => s.push_str(", not a dictionary word or repeated characters"),
            Some(Validator::DigitCount { min, max }) => s.push_str(&format!(", {min}-{max} digits")),
            None => {}
        }
        if p.requires_cue() {
            s.push_str(&format!(", usually bound to a field like `{}`", p.cues[0]));
        }
        notes.push(s);
    }
    notes
}

/// Deterministic exemplar sample drawn from seeds and library fragments.
pub fn sample_exemplars(pool: &[String], k: usize, seed: u64, label: &str) -> Vec<String> {
    let mut pool: Vec<String> = pool.to_vec();
    pool.sort();
    pool.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label));
    pool.choose_multiple(&mut rng, k.min(pool.len())).cloned().collect()
}

pub fn build_judge_prompt(
    spec: &AttributeSpec,
    candidate: &PiiCandidate,
    exemplars: &[String],
    include_context: bool,
) -> String {
    let fence = fence_for(&candidate.value);
    let mut p = format!(
        "Decide whether the value below is a plausible real-world {} ({}).\n\n{}\n{}\n{}\n",
        spec.display_name(),
        spec.description,
        fence,
        candidate.value,
        fence
    );
    p.push_str("\nStructural characteristics:\n");
    for n in structure_notes(spec) {
        p.push_str(&format!("- {n}\n"));
    }
    if !exemplars.is_empty() {
        p.push_str("\nExamples of real values of this kind:\n");
        for e in exemplars {
            p.push_str(&format!("- {e}\n"));
        }
    }
    if include_context {
        let fence = fence_for(&candidate.context_line);
        p.push_str(&format!("\nIt appeared in this line of code:\n{fence}\n{}\n{fence}\n", candidate.context_line));
    }
    p.push_str(
        "\nReject placeholders, dummy data, obviously synthetic or malformed values. \
         Answer with ACCEPT or REJECT as the first word, then a short reason.",
    );
    p
}

fn leading_markup() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s*_#>`~\-]*").unwrap())
}

/// First-token ACCEPT/REJECT, after stripping leading markdown. Anything
/// else is `None`.
pub fn parse_verdict(reply: &str) -> Option<(Decision, String)> {
    let rest = leading_markup().replace(reply, "");
    let word: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let decision = match word.to_ascii_uppercase().as_str() {
        "ACCEPT" | "ACCEPTED" => Decision::Accept,
        "REJECT" | "REJECTED" => Decision::Reject,
        _ => return None,
    };
    let reason = rest[word.len()..]
        .trim_start_matches(|c: char| c == '*' || c == '_' || c == ':' || c == '.' || c == '-' || c == ',' || c.is_whitespace())
        .trim()
        .to_string();
    Some((decision, reason))
}

/// Screen one candidate. Refusals and unparseable replies reject, flagged.
pub fn judge_candidate(
    gateway: &LlmGateway,
    spec: &AttributeSpec,
    candidate: &PiiCandidate,
    exemplar_pool: &[String],
    opts: &JudgeOptions,
) -> Result<Verdict, GatewayError> {
    let exemplars = sample_exemplars(exemplar_pool, opts.exemplars, opts.seed, &candidate.id);
    let prompt = build_judge_prompt(spec, candidate, &exemplars, opts.include_context);
    let reply = gateway.complete(Role::Judge, &prompt)?;
    let (decision, reason, flagged) = if reply.refused {
        (Decision::Reject, "judge refused".to_string(), true)
    } else {
        match parse_verdict(&reply.text) {
            Some((d, r)) => (d, r, false),
            None => (Decision::Reject, "unparseable".to_string(), true),
        }
    };
    Ok(Verdict { candidate_id: candidate.id.clone(), decision, reason, request_id: reply.request_id, flagged })
}

/// Warning text when judge and audited model are the same.
pub fn self_judging_warning(gateway: &LlmGateway) -> Option<String> {
    let j = gateway.binding(Role::Judge)?;
    let t = gateway.binding(Role::Test)?;
    (j.provider == t.provider && j.model == t.model)
        .then(|| format!("judge model `{}` is also the audited model", j.model))
}
