//! Deterministic PII candidate extraction from literal values in test code.

pub mod lexer;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::digest::short_id;
use crate::response::{code_blocks, TestCase};
use crate::taxonomy::{cue_matches, segments, AttributeId, PatternRule, PrivacyCategory, Taxonomy, Validator};
use lexer::{tokenize, TokKind, Token};

pub const DEFAULT_PLACEHOLDERS: &str = include_str!("../../data/placeholders.txt");
pub const DEFAULT_ENTROPY_FLOOR: f64 = 2.5;

/// Where a candidate came from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct Origin {
    pub test_id: String,
    pub function_id: String,
    pub question_id: String,
}

impl Origin {
    pub fn of(test: &TestCase) -> Origin {
        Origin {
            test_id: test.id.clone(),
            function_id: test.function_id.clone(),
            question_id: test.question_id.clone(),
        }
    }
}

/// A literal value matching an attribute pattern.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PiiCandidate {
    pub id: String,
    pub attribute: AttributeId,
    pub category: PrivacyCategory,
    pub value: String,
    /// Digest of the attribute and normalized value.
    pub dedup_key: String,
    #[serde(flatten)]
    pub origin: Origin,
    /// Innermost record literal or call holding the value.
    pub record_group: String,
    /// Key, field or single-argument callee the value is bound to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_context: Option<String>,
    /// Trimmed source line containing the value.
    pub context_line: String,
    pub span: (usize, usize),
}

/// A later occurrence of an already-recorded value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Duplicate {
    pub candidate: PiiCandidate,
    pub duplicate_of: String,
}

/// Case-folded, whitespace-collapsed form used for deduplication.
pub fn normalize_value(v: &str) -> String {
    v.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn dedup_key(attribute: &AttributeId, value: &str) -> String {
    short_id(&["dedup", attribute.as_str(), &normalize_value(value)])
}

/// Known stand-in values that are never reported.
#[derive(Debug, Clone, Default)]
pub struct Blacklist {
    exact: HashSet<String>,
    domains: Vec<String>,
}

impl Blacklist {
    /// One value per line; `#` starts a comment line, `@domain` matches any
    /// email address at that domain.
    pub fn parse(text: &str) -> Blacklist {
        let mut b = Blacklist::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(d) = line.strip_prefix('@') {
                b.domains.push(d.to_lowercase());
            } else {
                b.exact.insert(normalize_value(line));
            }
        }
        b
    }

    pub fn bundled() -> Blacklist {
        Blacklist::parse(DEFAULT_PLACEHOLDERS)
    }

    pub fn contains(&self, value: &str) -> bool {
        let n = normalize_value(value);
        if self.exact.contains(&n) || n.contains('⟨') {
            return true;
        }
        let mut chars = n.chars();
        if let Some(first) = chars.next() {
            if n.chars().count() >= 3 && chars.all(|c| c == first) {
                return true;
            }
        }
        if let Some((_, domain)) = n.rsplit_once('@') {
            return self.domains.iter().any(|d| domain == d || domain.ends_with(&format!(".{d}")));
        }
        false
    }
}

/// Shannon entropy in bits per character.
pub fn entropy(s: &str) -> f64 {
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut n = 0usize;
    for c in s.chars() {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    counts
        .values()
        .map(|&k| {
            let p = k as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

pub fn luhn_valid(s: &str) -> bool {
    let digits: Vec<u32> = s.chars().filter_map(|c| c.to_digit(10)).collect();
    if digits.len() < 2 {
        return false;
    }
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 1 {
                let x = d * 2;
                if x > 9 { x - 9 } else { x }
            } else {
                d
            }
        })
        .sum();
    sum.is_multiple_of(10)
}

/// A literal with its structural context.
#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub text: String,
    pub span: (usize, usize),
    pub group: usize,
    pub key: Option<String>,
}

struct Frame {
    open: char,
    group: usize,
    key: Option<String>,
    key_from_colon: bool,
}

fn is_punct(t: Option<&Token>, s: &str) -> bool {
    t.is_some_and(|t| t.kind == TokKind::Punct && t.text == s)
}

/// Significant-token index helpers skip newlines.
fn next_sig(toks: &[Token], i: usize) -> Option<usize> {
    (i + 1..toks.len()).find(|&j| toks[j].kind != TokKind::Newline)
}

fn prev_sig(toks: &[Token], i: usize) -> Option<usize> {
    (0..i).rev().find(|&j| toks[j].kind != TokKind::Newline)
}

/// Dotted identifier path ending at token `end` (`user.profile.email`).
fn path_ending_at(toks: &[Token], end: usize) -> Option<String> {
    let t = &toks[end];
    if t.kind == TokKind::Punct && t.text == "]" && end >= 2 && toks[end - 1].kind == TokKind::Str && is_punct(toks.get(end - 2), "[") {
        return Some(toks[end - 1].text.clone());
    }
    if t.kind == TokKind::Str {
        return Some(t.text.clone());
    }
    if t.kind != TokKind::Ident {
        return None;
    }
    let mut parts = vec![t.text.as_str()];
    let mut j = end;
    while j >= 2 && matches!(toks[j - 1].text.as_str(), "." | "->" | "::") && toks[j - 2].kind == TokKind::Ident {
        parts.push(toks[j - 2].text.as_str());
        j -= 2;
    }
    parts.reverse();
    Some(parts.join("."))
}

/// Assignment-like operator at `i`: returns how many tokens it spans.
fn assignment_op(toks: &[Token], i: usize) -> Option<usize> {
    let t = &toks[i];
    if t.kind != TokKind::Punct {
        return None;
    }
    let next = toks.get(i + 1).filter(|n| n.start == t.end);
    let prev = i.checked_sub(1).map(|p| &toks[p]).filter(|p| p.end == t.start);
    match t.text.as_str() {
        "=" => {
            if next.is_some_and(|n| n.text == ">") {
                return Some(2);
            }
            if next.is_some_and(|n| n.text == "=") {
                return None;
            }
            if prev.is_some_and(|p| matches!(p.text.as_str(), "=" | "!" | "<" | ">" | "+" | "-" | "*" | "/" | "%" | "&" | "|" | "^")) {
                return None;
            }
            Some(1)
        }
        ":" => {
            if next.is_some_and(|n| n.text == ":" || n.text == "=") || prev.is_some_and(|p| p.text == ":") {
                return if next.is_some_and(|n| n.text == "=") { Some(2) } else { None };
            }
            Some(1)
        }
        _ => None,
    }
}

/// Count top-level arguments between an opening paren at `open` and its
/// matching close. Returns `None` when unbalanced.
fn arg_count(toks: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0i32;
    let mut commas = 0;
    let mut any = false;
    for t in &toks[open..] {
        if t.kind == TokKind::Punct {
            match t.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(if any { commas + 1 } else { 0 });
                    }
                }
                "," if depth == 1 => commas += 1,
                _ => {}
            }
        }
        if depth >= 1 && t.kind != TokKind::Newline && !(depth == 1 && t.kind == TokKind::Punct && t.text == "(") {
            any = true;
        }
    }
    None
}

/// Walk the token stream collecting string and numeric literals with their
/// key context and record group. Group 0 is the top level.
pub fn literals(src: &str) -> Vec<Literal> {
    let toks = tokenize(src);
    let mut frames = vec![Frame { open: ' ', group: 0, key: None, key_from_colon: false }];
    let mut next_group = 1;
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        match t.kind {
            TokKind::Newline => {
                let f = frames.last_mut().unwrap();
                let after_op = prev_sig(&toks, i).is_some_and(|p| assignment_op(&toks, p).is_some() || (p > 0 && assignment_op(&toks, p - 1) == Some(2)));
                if (f.open == ' ' || f.open == '{') && !after_op {
                    f.key = None;
                    f.key_from_colon = false;
                }
            }
            TokKind::Punct => {
                if let Some(width) = assignment_op(&toks, i) {
                    let is_colon = t.text == ":" && width == 1;
                    let f_idx = frames.len() - 1;
                    let keep = t.text == "=" && frames[f_idx].key_from_colon;
                    if !keep {
                        let key = prev_sig(&toks, i).and_then(|p| path_ending_at(&toks, p));
                        if key.is_some() {
                            frames[f_idx].key = key;
                            frames[f_idx].key_from_colon = is_colon;
                        }
                    }
                    i += width;
                    continue;
                }
                match t.text.as_str() {
                    "{" | "(" | "[" => {
                        let parent = frames.last().unwrap();
                        let open = t.text.chars().next().unwrap();
                        let (group, key) = match open {
                            '[' => (parent.group, parent.key.clone()),
                            '(' => {
                                let callee = prev_sig(&toks, i)
                                    .filter(|&p| toks[p].kind == TokKind::Ident && toks[p].end == t.start)
                                    .and_then(|p| path_ending_at(&toks, p));
                                let g = next_group;
                                next_group += 1;
                                match callee {
                                    Some(c) if arg_count(&toks, i) == Some(1) => (g, Some(c)),
                                    _ => (g, None),
                                }
                            }
                            _ => {
                                let g = next_group;
                                next_group += 1;
                                (g, None)
                            }
                        };
                        frames.push(Frame { open, group, key, key_from_colon: false });
                    }
                    "}" | ")" | "]" => {
                        if frames.len() > 1 {
                            frames.pop();
                        }
                    }
                    "," | ";" => {
                        let f = frames.last_mut().unwrap();
                        if f.open != '[' && !(f.open == '(' && f.key.is_some() && t.text == ";") {
                            f.key = None;
                            f.key_from_colon = false;
                        }
                    }
                    _ => {}
                }
            }
            TokKind::Str | TokKind::Num => {
                let n = next_sig(&toks, i);
                let is_key = t.kind == TokKind::Str
                    && n.is_some_and(|n| assignment_op(&toks, n).is_some() && (toks[n].text == ":" || toks.get(n + 1).is_some_and(|x| x.text == ">")));
                if !is_key {
                    let f = frames.last().unwrap();
                    let (text, span) = if t.kind == TokKind::Num && src[t.start..t.end] != t.text {
                        (src[t.start..t.end].to_string(), (t.start, t.end))
                    } else {
                        (t.text.clone(), t.inner)
                    };
                    out.push(Literal { text, span, group: f.group, key: f.key.clone() });
                }
            }
            TokKind::Ident => {}
        }
        i += 1;
    }
    out
}

fn line_of(src: &str, offset: usize) -> &str {
    let s = src[..offset].rfind('\n').map(|p| p + 1).unwrap_or(0);
    let e = src[offset..].find('\n').map(|p| offset + p).unwrap_or(src.len());
    src[s..e].trim()
}

/// Applies attribute patterns to literals.
#[derive(Debug, Clone)]
pub struct Extractor<'t> {
    taxonomy: &'t Taxonomy,
    blacklist: Blacklist,
    entropy_floor: f64,
}

impl<'t> Extractor<'t> {
    pub fn new(taxonomy: &'t Taxonomy) -> Self {
        Extractor { taxonomy, blacklist: Blacklist::bundled(), entropy_floor: DEFAULT_ENTROPY_FLOOR }
    }

    pub fn with_blacklist(mut self, b: Blacklist) -> Self {
        self.blacklist = b;
        self
    }

    pub fn with_entropy_floor(mut self, floor: f64) -> Self {
        self.entropy_floor = floor;
        self
    }

    fn validates(&self, v: &Option<Validator>, value: &str) -> bool {
        match v {
            None => true,
            Some(Validator::Luhn) => luhn_valid(value),
            Some(Validator::Entropy) => entropy(value) >= self.entropy_floor,
            Some(Validator::DigitCount { min, max }) => {
                let d = value.chars().filter(|c| c.is_ascii_digit()).count();
                d >= *min && d <= *max
            }
        }
    }

    fn rule_applies(rule: &PatternRule, key_segs: Option<&[String]>) -> bool {
        if !rule.requires_cue() {
            return true;
        }
        match key_segs {
            Some(segs) => rule.cues.iter().any(|c| cue_matches(c, segs)),
            None => false,
        }
    }

    /// Candidates for `attrs` in a test case. Text inside code fences is
    /// scanned when present, otherwise the whole text.
    pub fn extract(&self, attrs: &[AttributeId], test: &TestCase) -> Vec<PiiCandidate> {
        self.scan(attrs, &test.text, &Origin::of(test))
    }

    pub fn scan(&self, attrs: &[AttributeId], text: &str, origin: &Origin) -> Vec<PiiCandidate> {
        let blocks = code_blocks(text);
        let regions: Vec<(usize, &str)> = if blocks.is_empty() {
            vec![(0, text)]
        } else {
            blocks.iter().map(|b| (b.start, &text[b.start..b.end])).collect()
        };
        let attrs: BTreeSet<&AttributeId> = attrs.iter().collect();
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for (ri, (base, src)) in regions.iter().enumerate() {
            for lit in literals(src) {
                let key_segs = lit.key.as_deref().map(segments);
                for spec in self.taxonomy.attributes().iter().filter(|a| attrs.contains(&a.id)) {
                    for rule in &spec.patterns {
                        if !Self::rule_applies(rule, key_segs.as_deref()) {
                            continue;
                        }
                        for m in rule.regex.find_iter(&lit.text) {
                            let value = m.as_str().trim();
                            let n = value.chars().count();
                            if n < rule.min_len || n > rule.max_len {
                                continue;
                            }
                            if !self.validates(&rule.validator, value) || self.blacklist.contains(value) {
                                continue;
                            }
                            let lead = m.as_str().len() - m.as_str().trim_start().len();
                            let start = if lit.span.1 - lit.span.0 == lit.text.len() { base + lit.span.0 + m.start() + lead } else { base + lit.span.0 };
                            let span = (start, start + value.len().min(lit.span.1 - lit.span.0));
                            if !seen.insert((spec.id.clone(), span)) {
                                continue;
                            }
                            out.push(PiiCandidate {
                                id: short_id(&["candidate", &origin.test_id, spec.id.as_str(), &span.0.to_string()]),
                                attribute: spec.id.clone(),
                                category: spec.category,
                                value: value.to_string(),
                                dedup_key: dedup_key(&spec.id, value),
                                origin: origin.clone(),
                                record_group: format!("{}/{}/{}", origin.test_id, ri, lit.group),
                                key_context: lit.key.clone(),
                                context_line: line_of(src, lit.span.0).to_string(),
                                span,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Run-wide deduplication by (attribute, normalized value).
#[derive(Debug, Clone, Default)]
pub struct Deduper {
    seen: HashMap<String, String>,
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pre-seed with already-recorded candidates (resume).
    pub fn remember(&mut self, c: &PiiCandidate) {
        self.seen.entry(c.dedup_key.clone()).or_insert_with(|| c.id.clone());
    }

    /// `Ok` for a first occurrence, otherwise the duplicate record.
    pub fn admit(&mut self, c: PiiCandidate) -> Result<PiiCandidate, Duplicate> {
        match self.seen.get(&c.dedup_key) {
            Some(first) => Err(Duplicate { duplicate_of: first.clone(), candidate: c }),
            None => {
                self.seen.insert(c.dedup_key.clone(), c.id.clone());
                Ok(c)
            }
        }
    }
}
