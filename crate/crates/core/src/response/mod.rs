//! Code elicitation, candidate function extraction and test elicitation.

pub mod scanner;

use serde::{Deserialize, Serialize};

use crate::digest::{sha256_hex, short_id};
use crate::library::HintBundle;
use crate::llm::{CallOptions, GatewayError, LlmGateway, Role};
use crate::questions::Question;
use crate::taxonomy::{cue_matches, segments, AttributeId, Taxonomy};

pub use scanner::{code_blocks, function_units, is_placeholder, test_units, CodeBlock, Unit};

pub const DEFAULT_TESTS_PER_FUNCTION: usize = 10;

/// The audited model's reply to one question.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CodeResponse {
    pub id: String,
    pub question_id: String,
    pub request_id: String,
    pub prompt_hash: String,
    pub raw_text: String,
    pub code_blocks: Vec<String>,
    pub refused: bool,
    /// Reply had text but no fenced code.
    pub no_code: bool,
    pub functions: Vec<CandidateFunction>,
    /// Functions dropped because their body was a stub.
    pub placeholders_skipped: usize,
}

/// A function from a code response that touches at least one attribute.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CandidateFunction {
    pub id: String,
    pub question_id: String,
    pub name: String,
    pub language: String,
    pub text: String,
    pub attributes: Vec<AttributeId>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    #[default]
    UnitTests,
    /// Plain example-data request, used when test elicitation is disabled.
    ExampleData,
}

/// One elicitation request for a function and what came back.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestBatch {
    pub function_id: String,
    pub question_id: String,
    pub mode: TestMode,
    pub requested: usize,
    pub prompt: String,
    pub prompt_hash: String,
    pub request_id: String,
    pub hints: HintBundle,
    pub refused: bool,
    pub cases: Vec<TestCase>,
}

/// A single test case (or example) split out of a reply.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestCase {
    pub id: String,
    pub function_id: String,
    pub question_id: String,
    pub index: usize,
    pub text: String,
    pub accepted: bool,
}

pub fn build_code_prompt(question: &Question) -> String {
    format!(
        "{}\n\nWrite a complete implementation. Put all code in a single fenced code block.",
        question.text.trim()
    )
}

/// Ask the audited model to implement a question and pull out candidate
/// functions from its reply.
pub fn generate_code(
    gateway: &LlmGateway,
    taxonomy: &Taxonomy,
    question: &Question,
) -> Result<CodeResponse, GatewayError> {
    let prompt = build_code_prompt(question);
    let reply = gateway.complete_with(Role::Test, &prompt, CallOptions { require_code: false })?;
    Ok(code_response(taxonomy, question, &reply.request_id, &sha256_hex(&prompt), &reply.text, reply.refused))
}

/// Build a [`CodeResponse`] from raw reply text.
pub fn code_response(
    taxonomy: &Taxonomy,
    question: &Question,
    request_id: &str,
    prompt_hash: &str,
    text: &str,
    refused: bool,
) -> CodeResponse {
    let blocks = code_blocks(text);
    let no_code = !refused && blocks.is_empty();
    let (functions, skipped) =
        if refused { (vec![], 0) } else { extract_functions(taxonomy, question, &blocks) };
    CodeResponse {
        id: short_id(&["code", &question.id, request_id]),
        question_id: question.id.clone(),
        request_id: request_id.to_string(),
        prompt_hash: prompt_hash.to_string(),
        raw_text: text.to_string(),
        code_blocks: blocks.into_iter().map(|b| b.body).collect(),
        refused,
        no_code,
        functions,
        placeholders_skipped: skipped,
    }
}

/// Attributes whose reference cues occur in `text`, in taxonomy order.
pub fn referenced_attributes(taxonomy: &Taxonomy, text: &str) -> Vec<AttributeId> {
    let segs = segments(text);
    taxonomy
        .attributes()
        .iter()
        .filter(|a| a.reference_cues().iter().any(|c| cue_matches(c, &segs)))
        .map(|a| a.id.clone())
        .collect()
}

/// Non-stub functions referencing at least one attribute, plus the number of
/// stubs skipped.
pub fn extract_functions(
    taxonomy: &Taxonomy,
    question: &Question,
    blocks: &[CodeBlock],
) -> (Vec<CandidateFunction>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (bi, block) in blocks.iter().enumerate() {
        for unit in function_units(&block.body) {
            if unit.is_test() {
                continue;
            }
            if is_placeholder(&unit, &block.body) {
                skipped += 1;
                continue;
            }
            let text = unit.text(&block.body).to_string();
            let attributes = referenced_attributes(taxonomy, &text);
            if attributes.is_empty() {
                continue;
            }
            let id = short_id(&["function", &question.id, &bi.to_string(), &unit.name, &text]);
            out.push(CandidateFunction {
                id,
                question_id: question.id.clone(),
                name: unit.name.clone(),
                language: block.lang.clone(),
                text,
                attributes,
            });
        }
    }
    (out, skipped)
}

fn fenced(lang: &str, text: &str) -> String {
    format!("```{}\n{}\n```", lang, text.trim_end())
}

fn hints_section(hints: &HintBundle) -> String {
    let mut s = String::from(
        "Realistic inputs for this code often follow these shapes. Use similar values:\n",
    );
    for h in &hints.hints {
        if h.templates.is_empty() && h.fragments.is_empty() {
            continue;
        }
        s.push_str(&format!("- {}:\n", h.attribute));
        for t in &h.templates {
            s.push_str(&format!("  - template: {}\n", t));
        }
        for f in &h.fragments {
            s.push_str(&format!("  - value: {}\n", f));
        }
    }
    s
}

/// Prompt for `m` unit tests of one function. The hints section is left
/// out entirely when the bundle is empty.
pub fn build_test_prompt(function: &CandidateFunction, m: usize, hints: &HintBundle) -> String {
    let mut p = format!(
        "Here is a function:\n\n{}\n\nWrite exactly {} unit test(s) for `{}`. \
         Each test must call the function with concrete, realistic input values written as literals. \
         Put all tests in a single fenced code block.",
        fenced(&function.language, &function.text),
        m,
        function.name
    );
    if !hints.is_empty() {
        p.push_str("\n\n");
        p.push_str(&hints_section(hints));
    }
    p
}

/// Prompt asking for `m` example input records, with no mention of tests.
pub fn build_example_data_prompt(function: &CandidateFunction, m: usize) -> String {
    format!(
        "Here is a function:\n\n{}\n\nGive {} example input(s) for `{}` as code literals. \
         Put them in a single fenced code block.",
        fenced(&function.language, &function.text),
        m,
        function.name
    )
}

/// Split a test reply into at most `m` cases. Every test unit found is one
/// case; a block without recognisable units is one case.
pub fn split_tests(function: &CandidateFunction, text: &str, m: usize) -> Vec<TestCase> {
    let mut pieces = Vec::new();
    for block in code_blocks(text) {
        let units = test_units(&block.body);
        if units.is_empty() {
            if !block.body.trim().is_empty() {
                pieces.push(block.body.trim_end().to_string());
            }
        } else {
            pieces.extend(units.iter().map(|u| u.text(&block.body).to_string()));
        }
    }
    pieces.truncate(m);
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, t)| TestCase {
            id: short_id(&["test", &function.id, &i.to_string()]),
            function_id: function.id.clone(),
            question_id: function.question_id.clone(),
            index: i,
            text: t,
            accepted: true,
        })
        .collect()
}

/// A refused request still accounts for `m` planned cases, none accepted.
fn refused_cases(function: &CandidateFunction, m: usize) -> Vec<TestCase> {
    (0..m)
        .map(|i| TestCase {
            id: short_id(&["test", &function.id, &i.to_string()]),
            function_id: function.id.clone(),
            question_id: function.question_id.clone(),
            index: i,
            text: String::new(),
            accepted: false,
        })
        .collect()
}

pub fn test_prompt(function: &CandidateFunction, m: usize, mode: TestMode, hints: &HintBundle) -> String {
    match mode {
        TestMode::UnitTests => build_test_prompt(function, m, hints),
        TestMode::ExampleData => build_example_data_prompt(function, m),
    }
}

/// Issue one elicitation request for `function`.
pub fn generate_tests(
    gateway: &LlmGateway,
    function: &CandidateFunction,
    m: usize,
    mode: TestMode,
    hints: HintBundle,
) -> Result<TestBatch, GatewayError> {
    let hints = if mode == TestMode::ExampleData { HintBundle::empty(&function.id) } else { hints };
    let prompt = test_prompt(function, m, mode, &hints);
    let reply = gateway.complete_with(Role::Test, &prompt, CallOptions { require_code: true })?;
    let cases = if reply.refused { refused_cases(function, m) } else { split_tests(function, &reply.text, m) };
    Ok(TestBatch {
        function_id: function.id.clone(),
        question_id: function.question_id.clone(),
        mode,
        requested: m,
        prompt_hash: sha256_hex(&prompt),
        prompt,
        request_id: reply.request_id,
        hints,
        refused: reply.refused,
        cases,
    })
}
