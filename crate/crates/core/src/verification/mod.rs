//! Candidate lifecycle: judge screening, search window and review quorum.

pub mod mask;
pub mod query;
pub mod review;
pub mod search;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::PiiCandidate;
use crate::judge::{Decision, Verdict};
use search::SearchOutcome;

pub use mask::mask_value;
pub use query::discriminative_query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Extracted,
    JudgeRejected,
    JudgePassed,
    SearchZero,
    SearchOverflow,
    SearchInRange,
    Confirmed,
    Potential,
    Rejected,
}

impl CandidateStatus {
    pub const ALL: [CandidateStatus; 9] = [
        CandidateStatus::Extracted,
        CandidateStatus::JudgeRejected,
        CandidateStatus::JudgePassed,
        CandidateStatus::SearchZero,
        CandidateStatus::SearchOverflow,
        CandidateStatus::SearchInRange,
        CandidateStatus::Confirmed,
        CandidateStatus::Potential,
        CandidateStatus::Rejected,
    ];

    pub fn is_terminal(self) -> bool {
        !matches!(self, CandidateStatus::Extracted | CandidateStatus::JudgePassed | CandidateStatus::SearchInRange)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CandidateStatus::Extracted => "extracted",
            CandidateStatus::JudgeRejected => "judge_rejected",
            CandidateStatus::JudgePassed => "judge_passed",
            CandidateStatus::SearchZero => "search_zero",
            CandidateStatus::SearchOverflow => "search_overflow",
            CandidateStatus::SearchInRange => "search_in_range",
            CandidateStatus::Confirmed => "confirmed",
            CandidateStatus::Potential => "potential",
            CandidateStatus::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<CandidateStatus> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl fmt::Display for CandidateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive hit-count window that sends a candidate to review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub min: u64,
    pub max: u64,
}

impl Default for SearchWindow {
    fn default() -> Self {
        SearchWindow { min: 1, max: 100 }
    }
}

impl SearchWindow {
    pub fn classify(&self, hits: u64) -> CandidateStatus {
        if hits < self.min {
            CandidateStatus::SearchZero
        } else if hits > self.max {
            CandidateStatus::SearchOverflow
        } else {
            CandidateStatus::SearchInRange
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Confirm,
    Reject,
    /// Plausibly real but not verifiable.
    Unsure,
}

impl ReviewDecision {
    pub fn parse(s: &str) -> Option<ReviewDecision> {
        match s {
            "confirm" => Some(ReviewDecision::Confirm),
            "reject" => Some(ReviewDecision::Reject),
            "unsure" => Some(ReviewDecision::Unsure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub candidate_id: String,
    pub reviewer: String,
    pub decision: ReviewDecision,
    #[serde(default)]
    pub note: String,
    pub at: DateTime<Utc>,
}

/// Quorum rules: any reject wins; `quorum` confirms confirm; once all
/// `assigned_reviewers` have decided without a quorum the candidate is
/// potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewPolicy {
    pub quorum: usize,
    pub assigned_reviewers: usize,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        ReviewPolicy { quorum: 2, assigned_reviewers: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Judge(Decision),
    Search(u64),
    Review(ReviewEntry),
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Judge(Decision::Accept) => "judge_accept",
            Event::Judge(Decision::Reject) => "judge_reject",
            Event::Search(_) => "search",
            Event::Review(_) => "review",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("event `{event}` is not allowed in state `{from}`")]
    Illegal { from: CandidateStatus, event: &'static str },
    #[error("reviewer `{0}` already decided on this candidate")]
    DuplicateReviewer(String),
    #[error("reviewer name is empty")]
    EmptyReviewer,
}

/// Pure transition function over statuses and recorded reviews.
pub fn next_status(
    from: CandidateStatus,
    reviews: &[ReviewEntry],
    event: &Event,
    window: &SearchWindow,
    policy: &ReviewPolicy,
) -> Result<CandidateStatus, TransitionError> {
    use CandidateStatus::*;
    let illegal = || TransitionError::Illegal { from, event: event.name() };
    match (from, event) {
        (Extracted, Event::Judge(Decision::Accept)) => Ok(JudgePassed),
        (Extracted, Event::Judge(Decision::Reject)) => Ok(JudgeRejected),
        (JudgePassed, Event::Search(k)) => Ok(window.classify(*k)),
        (SearchInRange, Event::Review(r)) => {
            if r.reviewer.trim().is_empty() {
                return Err(TransitionError::EmptyReviewer);
            }
            if reviews.iter().any(|x| x.reviewer == r.reviewer) {
                return Err(TransitionError::DuplicateReviewer(r.reviewer.clone()));
            }
            let all: Vec<ReviewDecision> = reviews.iter().map(|x| x.decision).chain([r.decision]).collect();
            if all.contains(&ReviewDecision::Reject) {
                return Ok(Rejected);
            }
            let confirms = all.iter().filter(|d| **d == ReviewDecision::Confirm).count();
            if confirms >= policy.quorum {
                Ok(Confirmed)
            } else if all.len() >= policy.assigned_reviewers.max(policy.quorum) {
                Ok(Potential)
            } else {
                Ok(SearchInRange)
            }
        }
        _ => Err(illegal()),
    }
}

/// A candidate with its lifecycle state and attached evidence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CandidateRecord {
    pub candidate: PiiCandidate,
    pub status: CandidateStatus,
    /// Incremented on every applied event.
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchOutcome>,
    #[serde(default)]
    pub reviews: Vec<ReviewEntry>,
}

impl CandidateRecord {
    pub fn new(candidate: PiiCandidate) -> Self {
        CandidateRecord { candidate, status: CandidateStatus::Extracted, version: 0, verdict: None, search: None, reviews: vec![] }
    }

    pub fn id(&self) -> &str {
        &self.candidate.id
    }

    pub fn apply(&mut self, event: Event, window: &SearchWindow, policy: &ReviewPolicy) -> Result<(), TransitionError> {
        self.status = next_status(self.status, &self.reviews, &event, window, policy)?;
        if let Event::Review(r) = event {
            self.reviews.push(r);
        }
        self.version += 1;
        Ok(())
    }

    pub fn apply_verdict(&mut self, v: Verdict, window: &SearchWindow, policy: &ReviewPolicy) -> Result<(), TransitionError> {
        self.apply(Event::Judge(v.decision), window, policy)?;
        self.verdict = Some(v);
        Ok(())
    }

    pub fn apply_search(&mut self, s: SearchOutcome, window: &SearchWindow, policy: &ReviewPolicy) -> Result<(), TransitionError> {
        self.apply(Event::Search(s.total), window, policy)?;
        self.search = Some(s);
        Ok(())
    }
}

/// Rebuild candidate records by replaying recorded verdicts, searches and
/// review decisions in order.
pub fn fold_records(
    candidates: Vec<PiiCandidate>,
    verdicts: &[Verdict],
    searches: &[SearchOutcome],
    reviews: &[ReviewEntry],
    window: &SearchWindow,
    policy: &ReviewPolicy,
) -> Result<Vec<CandidateRecord>, TransitionError> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut records: Vec<CandidateRecord> = Vec::with_capacity(candidates.len());
    for c in candidates {
        index.insert(c.id.clone(), records.len());
        records.push(CandidateRecord::new(c));
    }
    for v in verdicts {
        if let Some(&i) = index.get(&v.candidate_id) {
            records[i].apply_verdict(v.clone(), window, policy)?;
        }
    }
    for s in searches {
        if let Some(&i) = index.get(&s.candidate_id) {
            records[i].apply_search(s.clone(), window, policy)?;
        }
    }
    for r in reviews {
        if let Some(&i) = index.get(&r.candidate_id) {
            records[i].apply(Event::Review(r.clone()), window, policy)?;
        }
    }
    Ok(records)
}
