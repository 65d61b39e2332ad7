//! Independent oracles and random instance generators shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leakaudit::extract::{Origin, PiiCandidate};
use leakaudit::judge::Decision;
use leakaudit::library::scorer::{ScoredToken, TokenScores};
use leakaudit::metrics::RunData;
use leakaudit::response::{TestBatch, TestCase, TestMode};
use leakaudit::verification::{CandidateRecord, CandidateStatus, Event, ReviewDecision, ReviewEntry, ReviewPolicy, SearchWindow};
use leakaudit::{AttributeId, HintBundle, PrivacyCategory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- lifecycle

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    JudgeAccept,
    JudgeReject,
    Search,
    Review,
}

pub const EVENT_KINDS: [EventKind; 4] = [EventKind::JudgeAccept, EventKind::JudgeReject, EventKind::Search, EventKind::Review];

pub fn kind_of(e: &Event) -> EventKind {
    match e {
        Event::Judge(Decision::Accept) => EventKind::JudgeAccept,
        Event::Judge(Decision::Reject) => EventKind::JudgeReject,
        Event::Search(_) => EventKind::Search,
        Event::Review(_) => EventKind::Review,
    }
}

/// The complete table of permitted (state, event) pairs.
pub fn allowed(from: CandidateStatus, kind: EventKind) -> bool {
    use CandidateStatus::*;
    matches!(
        (from, kind),
        (Extracted, EventKind::JudgeAccept) | (Extracted, EventKind::JudgeReject) | (JudgePassed, EventKind::Search) | (SearchInRange, EventKind::Review)
    )
}

/// Status targets each permitted pair may lead to.
pub fn targets(from: CandidateStatus, kind: EventKind) -> &'static [CandidateStatus] {
    use CandidateStatus::*;
    match (from, kind) {
        (Extracted, EventKind::JudgeAccept) => &[JudgePassed],
        (Extracted, EventKind::JudgeReject) => &[JudgeRejected],
        (JudgePassed, EventKind::Search) => &[SearchZero, SearchInRange, SearchOverflow],
        (SearchInRange, EventKind::Review) => &[SearchInRange, Confirmed, Rejected, Potential],
        _ => &[],
    }
}

/// Expected status after a legal review: any reject wins, two confirms
/// confirm, two decisions without either leave the candidate potential.
pub fn review_outcome(decisions: &[ReviewDecision]) -> CandidateStatus {
    let confirms = decisions.iter().filter(|d| **d == ReviewDecision::Confirm).count();
    if decisions.contains(&ReviewDecision::Reject) {
        CandidateStatus::Rejected
    } else if confirms >= 2 {
        CandidateStatus::Confirmed
    } else if decisions.len() >= 2 {
        CandidateStatus::Potential
    } else {
        CandidateStatus::SearchInRange
    }
}

pub fn search_outcome(k: u64) -> CandidateStatus {
    match k {
        0 => CandidateStatus::SearchZero,
        1..=100 => CandidateStatus::SearchInRange,
        _ => CandidateStatus::SearchOverflow,
    }
}

pub fn candidate(id: &str, attr: &str, category: PrivacyCategory, value: &str, test_id: &str, group: &str) -> PiiCandidate {
    PiiCandidate {
        id: id.into(),
        attribute: AttributeId::new(attr),
        category,
        value: value.into(),
        dedup_key: format!("{attr}:{value}"),
        origin: Origin { test_id: test_id.into(), function_id: "f".into(), question_id: "q".into() },
        record_group: group.into(),
        key_context: None,
        context_line: String::new(),
        span: (0, 0),
    }
}

fn random_event(r: &mut ChaCha8Rng) -> Event {
    const REVIEWERS: [&str; 4] = ["alice", "bob", "carol", ""];
    const HITS: [u64; 8] = [0, 1, 2, 50, 99, 100, 101, 5000];
    match r.gen_range(0..4) {
        0 => Event::Judge(Decision::Accept),
        1 => Event::Judge(Decision::Reject),
        2 => Event::Search(HITS[r.gen_range(0..HITS.len())]),
        _ => {
            let decision = [ReviewDecision::Confirm, ReviewDecision::Reject, ReviewDecision::Unsure][r.gen_range(0..3)];
            let reviewer = REVIEWERS[r.gen_range(0..REVIEWERS.len())];
            Event::Review(ReviewEntry {
                candidate_id: "c".into(),
                reviewer: reviewer.into(),
                decision,
                note: String::new(),
                at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
            })
        }
    }
}

/// Run `sequences` random event sequences through a record and compare
/// every step with the table and the quorum model. Returns the number of
/// applied transitions.
pub fn lifecycle_suite(sequences: usize, seed: u64) -> Result<usize, String> {
    let window = SearchWindow::default();
    let policy = ReviewPolicy { quorum: 2, assigned_reviewers: 2 };
    let mut r = rng(seed);
    let mut applied = 0;
    for s in 0..sequences {
        // Bias toward the happy path so deep states are reached often.
        let mut rec = CandidateRecord::new(candidate("c", "Email", PrivacyCategory::Identifiable, "a@b.cd", "t", "g"));
        let len = r.gen_range(1..12);
        for _ in 0..len {
            let ev = match (rec.status, r.gen_bool(0.7)) {
                (CandidateStatus::Extracted, true) => Event::Judge(Decision::Accept),
                (CandidateStatus::JudgePassed, true) => Event::Search(r.gen_range(1..=100)),
                _ => random_event(&mut r),
            };
            let before = rec.clone();
            let kind = kind_of(&ev);
            let result = rec.apply(ev.clone(), &window, &policy);
            match result {
                Ok(()) => {
                    applied += 1;
                    if !allowed(before.status, kind) {
                        return Err(format!("sequence {s}: {:?} accepted {kind:?}", before.status));
                    }
                    if !targets(before.status, kind).contains(&rec.status) {
                        return Err(format!("sequence {s}: {:?} --{kind:?}--> {:?} not in table", before.status, rec.status));
                    }
                    let expected = match &ev {
                        Event::Judge(Decision::Accept) => CandidateStatus::JudgePassed,
                        Event::Judge(Decision::Reject) => CandidateStatus::JudgeRejected,
                        Event::Search(k) => search_outcome(*k),
                        Event::Review(e) => {
                            let mut d: Vec<ReviewDecision> = before.reviews.iter().map(|x| x.decision).collect();
                            d.push(e.decision);
                            review_outcome(&d)
                        }
                    };
                    if rec.status != expected {
                        return Err(format!("sequence {s}: expected {expected:?}, got {:?}", rec.status));
                    }
                    if rec.version != before.version + 1 {
                        return Err(format!("sequence {s}: version not bumped"));
                    }
                }
                Err(_) => {
                    if rec != before {
                        return Err(format!("sequence {s}: rejected event changed the record"));
                    }
                    let duplicate_or_empty = match &ev {
                        Event::Review(e) => e.reviewer.trim().is_empty() || before.reviews.iter().any(|x| x.reviewer == e.reviewer),
                        _ => false,
                    };
                    if allowed(before.status, kind) && !duplicate_or_empty {
                        return Err(format!("sequence {s}: legal {kind:?} in {:?} refused", before.status));
                    }
                }
            }
        }
    }
    Ok(applied)
}

// ----------------------------------------------------------------- division

/// A random line of space-separated words and quoted literals with
/// distinct scores.
pub fn random_scored_line(r: &mut ChaCha8Rng) -> (String, TokenScores) {
    const WORDS: [&str; 10] = ["user", "=", "email", "(", ")", "x1", "set", ":", "cfg", "é"];
    let n = r.gen_range(1..30);
    let mut text = String::new();
    let mut tokens = Vec::new();
    for i in 0..n {
        if i > 0 {
            text.push(' ');
        }
        let quoted = r.gen_bool(0.3);
        let word: String = if quoted {
            (0..r.gen_range(1..8)).map(|_| (b'a' + r.gen_range(0..26u8)) as char).collect()
        } else {
            WORDS[r.gen_range(0..WORDS.len())].to_string()
        };
        if quoted {
            text.push('"');
        }
        let start = text.chars().count();
        text.push_str(&word);
        let end = text.chars().count();
        if quoted {
            text.push('"');
        }
        tokens.push(ScoredToken { text: word, start, end });
    }
    // Distinct scores: a shuffled permutation scaled into (0, 10).
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, r.gen_range(0..=i));
    }
    let nll = ranks.iter().map(|&k| 0.5 + k as f64 * 9.0 / n as f64).collect();
    (text, TokenScores { scorer_id: "random".into(), tokens, nll })
}

// ------------------------------------------------------------------- dbscan

pub fn random_points(r: &mut ChaCha8Rng, max_n: usize, dim: usize) -> Vec<Vec<f32>> {
    let n = r.gen_range(1..=max_n);
    let centers: Vec<Vec<f32>> = (0..r.gen_range(1..5)).map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|_| {
            if r.gen_bool(0.15) {
                (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()
            } else {
                let c = &centers[r.gen_range(0..centers.len())];
                c.iter().map(|x| x + r.gen_range(-0.15..0.15)).collect()
            }
        })
        .collect()
}

fn cos_dist(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// DBSCAN by definition: clusters are connected components of core points
/// under the eps-neighbour relation, numbered by their lowest core index;
/// a border point takes the lowest-numbered cluster among its core
/// neighbours; everything else is noise.
pub fn brute_force_dbscan(points: &[Vec<f32>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| cos_dist(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if !core[i] || comp[i].is_some() {
            continue;
        }
        let mut stack = vec![i];
        comp[i] = Some(next);
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if core[b] && comp[b].is_none() && near(a, b) {
                    comp[b] = Some(next);
                    stack.push(b);
                }
            }
        }
        next += 1;
    }
    (0..n).map(|i| if core[i] { comp[i] } else { (0..n).filter(|&j| core[j] && near(i, j)).filter_map(|j| comp[j]).min() }).collect()
}

// ------------------------------------------------------------------ leakage

/// A random run: tests (some not accepted) and candidate records with
/// random categories, groups and final statuses.
pub fn random_run(r: &mut ChaCha8Rng) -> RunData {
    let n_tests = r.gen_range(0..40);
    let mut tests = Vec::new();
    let mut ids = Vec::new();
    for b in 0..r.gen_range(1..6) {
        let cases: Vec<TestCase> = (0..n_tests / 5 + 1)
            .map(|i| {
                let id = format!("t{b}-{i}");
                ids.push(id.clone());
                TestCase { id, function_id: format!("f{b}"), question_id: format!("q{b}"), index: i, text: String::new(), accepted: r.gen_bool(0.85) }
            })
            .collect();
        tests.push(TestBatch {
            function_id: format!("f{b}"),
            question_id: format!("q{b}"),
            mode: TestMode::UnitTests,
            requested: cases.len(),
            prompt: String::new(),
            prompt_hash: String::new(),
            request_id: String::new(),
            hints: HintBundle::empty(&format!("f{b}")),
            refused: false,
            cases,
        });
    }
    let statuses = CandidateStatus::ALL;
    let mut records = Vec::new();
    for k in 0..r.gen_range(0..60) {
        let cat = PrivacyCategory::ALL[r.gen_range(0..3)];
        let test = &ids[r.gen_range(0..ids.len())];
        let group = format!("{test}/0/{}", r.gen_range(0..3));
        let mut rec = CandidateRecord::new(candidate(&format!("c{k}"), "Email", cat, &format!("v{k}"), test, &group));
        rec.status = if r.gen_bool(0.6) { CandidateStatus::Confirmed } else { statuses[r.gen_range(0..statuses.len())] };
        records.push(rec);
    }
    RunData { questions: vec![], code: vec![], tests, records, tests_per_function: 10 }
}

/// Per category: tests leaking at each level, as (LP counts, IL counts).
pub type LevelCounts = BTreeMap<PrivacyCategory, (Vec<u64>, Vec<u64>)>;

/// Leakage counts by direct enumeration: for each category and each
/// accepted test, the number of confirmed records and the largest number in
/// one record group. Returns (accepted tests, counts).
pub fn naive_leakage(data: &RunData, max_level: usize) -> (usize, LevelCounts) {
    let accepted: HashSet<&str> = data.tests.iter().flat_map(|b| &b.cases).filter(|c| c.accepted).map(|c| c.id.as_str()).collect();
    let mut out = BTreeMap::new();
    for cat in PrivacyCategory::ALL {
        let mut lp = vec![0u64; max_level];
        let mut il = vec![0u64; max_level];
        for t in &accepted {
            let mine: Vec<&CandidateRecord> = data
                .records
                .iter()
                .filter(|r| r.status == CandidateStatus::Confirmed && r.candidate.category == cat && r.candidate.origin.test_id == *t)
                .collect();
            let mut by_group: HashMap<&str, u64> = HashMap::new();
            for r in &mine {
                *by_group.entry(&r.candidate.record_group).or_default() += 1;
            }
            let best = by_group.values().copied().max().unwrap_or(0);
            for l in 1..=max_level {
                if mine.len() as u64 >= l as u64 {
                    lp[l - 1] += 1;
                }
                if best >= l as u64 {
                    il[l - 1] += 1;
                }
            }
        }
        out.insert(cat, (lp, il));
    }
    (accepted.len(), out)
}
