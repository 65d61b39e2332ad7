//! In-memory review board over candidate records, with optimistic
//! concurrency on decisions. Only masked values leave the board.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::search::Evidence;
use super::{mask_value, CandidateRecord, CandidateStatus, Event, ReviewDecision, ReviewEntry, ReviewPolicy, SearchWindow, TransitionError};
use crate::taxonomy::{AttributeId, MaskPolicy, PrivacyCategory, Taxonomy};

#[derive(Debug, Error, PartialEq)]
pub enum ReviewError {
    #[error("candidate `{0}` not found")]
    NotFound(String),
    #[error("a version precondition is required")]
    VersionRequired,
    #[error("stale version {given}, current is {current}")]
    VersionMismatch { given: u64, current: u64 },
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CandidateView {
    pub id: String,
    pub attribute: AttributeId,
    pub category: PrivacyCategory,
    pub masked_value: String,
    pub status: CandidateStatus,
    pub version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_context: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_total: Option<u64>,
    pub evidence: Vec<Evidence>,
    pub reviews: Vec<ReviewEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ListFilter {
    pub status: Option<CandidateStatus>,
    pub attribute: Option<AttributeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionInput {
    pub decision: ReviewDecision,
    #[serde(default)]
    pub note: String,
    pub reviewer: String,
}

pub struct ReviewBoard {
    masks: HashMap<AttributeId, MaskPolicy>,
    records: Vec<CandidateRecord>,
    index: HashMap<String, usize>,
    window: SearchWindow,
    policy: ReviewPolicy,
}

fn fallback_mask() -> MaskPolicy {
    MaskPolicy::Span { class: crate::taxonomy::CharClass::Any, keep_prefix: 2, keep_suffix: 2, collapse_separators: false }
}

impl ReviewBoard {
    pub fn new(taxonomy: &Taxonomy, records: Vec<CandidateRecord>, window: SearchWindow, policy: ReviewPolicy) -> Self {
        let masks = taxonomy.attributes().iter().map(|a| (a.id.clone(), a.mask_policy.clone())).collect();
        let index = records.iter().enumerate().map(|(i, r)| (r.id().to_string(), i)).collect();
        ReviewBoard { masks, records, index, window, policy }
    }

    pub fn records(&self) -> &[CandidateRecord] {
        &self.records
    }

    fn view(&self, r: &CandidateRecord) -> CandidateView {
        let policy = self.masks.get(&r.candidate.attribute).cloned().unwrap_or_else(fallback_mask);
        let masked = mask_value(&r.candidate.value, &policy);
        let evidence = r
            .search
            .as_ref()
            .map(|s| {
                s.evidence
                    .iter()
                    .map(|e| Evidence { snippet: e.snippet.replace(&r.candidate.value, &masked), ..e.clone() })
                    .collect()
            })
            .unwrap_or_default();
        CandidateView {
            id: r.id().to_string(),
            attribute: r.candidate.attribute.clone(),
            category: r.candidate.category,
            masked_value: masked,
            status: r.status,
            version: r.version,
            key_context: r.candidate.key_context.clone(),
            search_total: r.search.as_ref().map(|s| s.total),
            evidence,
            reviews: r.reviews.clone(),
        }
    }

    /// One page (1-based) of matching candidates in record order.
    pub fn list(&self, filter: &ListFilter, page: usize, per_page: usize) -> Page<CandidateView> {
        let page = page.max(1);
        let per_page = per_page.clamp(1, 500);
        let matching: Vec<&CandidateRecord> = self
            .records
            .iter()
            .filter(|r| filter.status.is_none_or(|s| r.status == s))
            .filter(|r| filter.attribute.as_ref().is_none_or(|a| &r.candidate.attribute == a))
            .collect();
        let items = matching.iter().skip((page - 1) * per_page).take(per_page).map(|r| self.view(r)).collect();
        Page { items, page, per_page, total: matching.len() }
    }

    pub fn get(&self, id: &str) -> Option<CandidateView> {
        self.index.get(id).map(|&i| self.view(&self.records[i]))
    }

    /// Validate a reviewer decision against the record's current version
    /// and state without applying it. Returns the entry to persist.
    pub fn prepare(&self, id: &str, if_match: Option<u64>, input: DecisionInput, at: DateTime<Utc>) -> Result<ReviewEntry, ReviewError> {
        let &i = self.index.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))?;
        let given = if_match.ok_or(ReviewError::VersionRequired)?;
        let current = self.records[i].version;
        if given != current {
            return Err(ReviewError::VersionMismatch { given, current });
        }
        let entry = ReviewEntry {
            candidate_id: id.to_string(),
            reviewer: input.reviewer.trim().to_string(),
            decision: input.decision,
            note: input.note,
            at,
        };
        self.records[i].clone().apply(Event::Review(entry.clone()), &self.window, &self.policy)?;
        Ok(entry)
    }

    /// Apply an entry returned by [`ReviewBoard::prepare`].
    pub fn commit(&mut self, entry: ReviewEntry) -> Result<CandidateView, ReviewError> {
        let id = entry.candidate_id.clone();
        let &i = self.index.get(&id).ok_or(ReviewError::NotFound(id))?;
        let (window, policy) = (self.window, self.policy);
        self.records[i].apply(Event::Review(entry), &window, &policy)?;
        Ok(self.view(&self.records[i]))
    }

    /// `prepare` followed by `commit`.
    pub fn decide(
        &mut self,
        id: &str,
        if_match: Option<u64>,
        input: DecisionInput,
        at: DateTime<Utc>,
    ) -> Result<(CandidateView, ReviewEntry), ReviewError> {
        let entry = self.prepare(id, if_match, input, at)?;
        Ok((self.commit(entry.clone())?, entry))
    }

    /// Count of records per status.
    pub fn status_counts(&self) -> HashMap<CandidateStatus, usize> {
        let mut m = HashMap::new();
        for r in &self.records {
            *m.entry(r.status).or_default() += 1;
        }
        m
    }
}
