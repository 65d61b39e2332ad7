//! Test-driven privacy leakage auditing for code-generating language models.
//!
//! The pipeline elicits code from an audited model, asks it for unit tests of
//! the functions it wrote, scans the literal test inputs for attribute-shaped
//! personal data, and pushes every candidate through a judge model, a GitHub
//! code-search window and a human review quorum. Confirmed leaks feed back into
//! a per-attribute feature library of templates and fragments that augments
//! later test prompts.
//!
//! Module map:
//!
//! * [`taxonomy`]: privacy categories, attributes and scenarios.
//! * [`llm`]: provider abstraction, refusal detection, rate limiting.
//! * [`questions`]: scenario/attribute question construction.
//! * [`response`]: code generation, function extraction, test elicitation.
//! * [`extract`]: deterministic PII candidate scanner.
//! * [`judge`]: judge-model screening.
//! * [`verification`]: search window, lifecycle state machine, review, masking.
//! * [`library`]: feature library, token division, clustering.
//! * [`metrics`] and [`report`]: funnel, LP/IL, comparison and rendering.
//! * [`config`], [`store`] and [`pipeline`]: run orchestration.

pub mod config;
pub mod digest;
pub mod error;
pub mod extract;
pub mod judge;
pub mod library;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod questions;
pub mod report;
pub mod response;
pub mod store;
pub mod taxonomy;
pub mod verification;

pub use error::{Error, ErrorClass, Result};
pub use extract::PiiCandidate;
pub use library::{FeatureLibrary, HintBundle};
pub use llm::{LlmGateway, LlmReply, Role};
pub use questions::Question;
pub use response::{CandidateFunction, CodeResponse, TestCase};
pub use taxonomy::{AttributeId, AttributeSpec, PrivacyCategory, ScenarioId, Taxonomy};
pub use verification::{CandidateRecord, CandidateStatus};
