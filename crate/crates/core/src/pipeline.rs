//! End-to-end run orchestration with per-item resume.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use rayon::prelude::*;

use crate::config::{ConfigError, ProviderConfig, RunConfig, ScorerMode, SearchMode};
use crate::digest::{json_digest, sha256_hex};
use crate::error::Result;
use crate::extract::{Blacklist, Deduper, Duplicate, Extractor, PiiCandidate};
use crate::judge::{judge_candidate, self_judging_warning, Decision, JudgeOptions, Verdict};
use crate::library::scorer::{HttpScorer, Scorer, StubScorer};
use crate::library::{update_library, ConfirmedInstance, FeatureLibrary, FigureRows, HintBundle, LibraryDelta, UpdateParams};
use crate::llm::provider::{HttpProvider, MockProvider, ReplayProvider};
use crate::llm::{Exchange, LlmGateway, RateLimiter, RefusalDetector};
use crate::metrics::{compare_runs, RunData};
use crate::questions::{build_question_prompt, generate_questions, generic_questions, QuestionBatch, QuestionError};
use crate::report::{build_report, confirmed_json, funnel_csv, render_json, render_markdown, Report, ReportMeta};
use crate::response::{generate_code, generate_tests, CandidateFunction, CodeResponse, TestBatch, TestMode};
use crate::store::{RunStore, Stream};
use crate::taxonomy::{load_taxonomy, AttributeId, ScenarioId, Taxonomy};
use crate::verification::search::{CachedSearch, CodeSearch, FixtureSearch, GithubSearch, SearchError, SearchHits, SearchOutcome};
use crate::verification::review::ReviewBoard;
use crate::verification::{discriminative_query, fold_records, CandidateRecord, CandidateStatus, ReviewEntry};

pub const STAGES: [&str; 6] = ["questions", "code", "tests", "extract", "judge", "search"];

fn read_config_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source }.into())
}

pub fn load_run_taxonomy(cfg: &RunConfig) -> Result<Taxonomy> {
    match &cfg.taxonomy {
        Some(p) => Ok(load_taxonomy(&read_config_file(p)?)?),
        None => Ok(Taxonomy::bundled()),
    }
}

pub fn load_library(cfg: &RunConfig, taxonomy: &Taxonomy) -> Result<FeatureLibrary> {
    match &cfg.library.path {
        Some(p) if p.exists() => Ok(FeatureLibrary::load(p, taxonomy)?),
        _ => Ok(FeatureLibrary::seed(taxonomy)?),
    }
}

/// Gateway with every configured provider and role binding.
pub fn build_gateway(cfg: &RunConfig, runs_dir: &Path) -> Result<LlmGateway> {
    let mut g = LlmGateway::new();
    for (name, p) in &cfg.providers {
        let (provider, limiter): (Arc<dyn crate::llm::LlmProvider>, RateLimiter) = match p {
            ProviderConfig::Http { base_url, requests_per_minute, timeout_secs } => (
                Arc::new(HttpProvider::from_env(name, base_url, Duration::from_secs(*timeout_secs))),
                RateLimiter::per_minute(*requests_per_minute),
            ),
            ProviderConfig::Mock { fixture } => {
                let text = read_config_file(fixture)?;
                let m = MockProvider::from_json(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", fixture.display())))?;
                (Arc::new(m), RateLimiter::unlimited())
            }
            ProviderConfig::Replay { run_dir } => {
                let (parent, id) = split_run_dir(run_dir, runs_dir);
                let store = RunStore::open_read(&parent, &id)?;
                let ex: Vec<Exchange> = store.read(Stream::Exchanges)?;
                (Arc::new(ReplayProvider::new(ex)), RateLimiter::unlimited())
            }
        };
        g = g.with_provider(name, provider, limiter, cfg.retry);
    }
    for (role, b) in &cfg.roles {
        g = g.bind(*role, b.clone());
    }
    if let Some(p) = &cfg.refusal_phrases {
        let r = RefusalDetector::from_list(&read_config_file(p)?).map_err(|e| ConfigError::Parse(e.to_string()))?;
        g = g.with_refusal(r);
    }
    Ok(g)
}

fn split_run_dir(run_dir: &Path, runs_dir: &Path) -> (PathBuf, String) {
    match (run_dir.parent(), run_dir.file_name()) {
        (Some(p), Some(n)) if !p.as_os_str().is_empty() => (p.to_path_buf(), n.to_string_lossy().into_owned()),
        _ => (runs_dir.to_path_buf(), run_dir.to_string_lossy().into_owned()),
    }
}

pub fn build_search(cfg: &RunConfig) -> Result<Box<dyn CodeSearch>> {
    match cfg.search.mode {
        SearchMode::Fixture => {
            let p = cfg.search.fixture.as_ref().ok_or_else(|| ConfigError::Invalid("fixture search needs `search.fixture`".into()))?;
            Ok(Box::new(FixtureSearch::from_json(&read_config_file(p)?).map_err(|e| ConfigError::Parse(e.to_string()))?))
        }
        SearchMode::Live => {
            let token = std::env::var(crate::verification::search::GITHUB_TOKEN_VAR).ok();
            if token.is_none() {
                return Err(SearchError::Auth(format!("{} is not set", crate::verification::search::GITHUB_TOKEN_VAR)).into());
            }
            let base = cfg.search.base_url.as_deref().unwrap_or(crate::verification::search::GITHUB_API);
            Ok(Box::new(GithubSearch::new(base, token)))
        }
    }
}

pub fn build_scorer(cfg: &RunConfig) -> Box<dyn Scorer> {
    match (cfg.scorer.mode, &cfg.scorer.endpoint) {
        (ScorerMode::Http, Some(url)) => Box::new(HttpScorer::new(url, Duration::from_secs(120))),
        _ => Box::new(StubScorer),
    }
}

fn build_extractor<'t>(cfg: &RunConfig, taxonomy: &'t Taxonomy) -> Result<Extractor<'t>> {
    let mut ex = Extractor::new(taxonomy).with_entropy_floor(cfg.extraction.entropy_floor);
    if let Some(p) = &cfg.extraction.placeholders {
        ex = ex.with_blacklist(Blacklist::parse(&read_config_file(p)?));
    }
    Ok(ex)
}

/// Outcome of `run_audit`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub report: Report,
    pub warnings: Vec<String>,
}

struct Audit<'a> {
    cfg: &'a RunConfig,
    taxonomy: Taxonomy,
    library: FeatureLibrary,
    gateway: LlmGateway,
    search: CachedSearch<Box<dyn CodeSearch>>,
    store: Arc<RunStore>,
    pool: rayon::ThreadPool,
}

impl Audit<'_> {
    /// Map `f` over `items` in parallel chunks, handing each chunk's
    /// successes to `sink` in input order before surfacing the first error.
    fn chunked<I: Sync, O: Send>(
        &self,
        items: &[I],
        f: impl Fn(&I) -> Result<O> + Sync,
        mut sink: impl FnMut(Vec<O>) -> Result<()>,
    ) -> Result<()> {
        for chunk in items.chunks(self.cfg.width * 4) {
            let results: Vec<Result<O>> = self.pool.install(|| chunk.par_iter().map(&f).collect());
            let mut ok = Vec::new();
            let mut first_err = None;
            for r in results {
                match r {
                    Ok(o) => ok.push(o),
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            sink(ok)?;
            if let Some(e) = first_err {
                return Err(e);
            }
        }
        Ok(())
    }

    /// Question work units: one per scenario and attribute, or one per
    /// scenario covering all its attributes with `multi_attribute`.
    fn units(&self) -> Result<Vec<(ScenarioId, Vec<AttributeId>)>> {
        let scenarios: Vec<ScenarioId> = if self.cfg.scenarios.is_empty() {
            self.taxonomy.scenarios().iter().map(|s| s.id.clone()).collect()
        } else {
            self.cfg.scenarios.iter().map(|s| self.taxonomy.resolve_scenario(s).map(|x| x.id.clone())).collect::<Result<_, _>>()?
        };
        let filter: BTreeSet<String> =
            self.cfg.attributes.iter().map(|a| self.taxonomy.require_attribute(a).map(|s| s.id.0.clone())).collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        for s in scenarios {
            let attrs: Vec<AttributeId> = self
                .taxonomy
                .attributes_for_scenario(s.as_str())?
                .into_iter()
                .filter(|a| filter.is_empty() || filter.contains(a.id.as_str()))
                .map(|a| a.id.clone())
                .collect();
            if self.cfg.multi_attribute {
                if !attrs.is_empty() {
                    out.push((s.clone(), attrs));
                }
            } else {
                out.extend(attrs.into_iter().map(|a| (s.clone(), vec![a])));
            }
        }
        Ok(out)
    }

    fn question_stage(&self) -> Result<Vec<QuestionBatch>> {
        let mut batches: Vec<QuestionBatch> = self.store.read(Stream::Questions)?;
        let done: BTreeSet<String> = batches.iter().map(|b| b.key()).collect();
        let todo: Vec<(ScenarioId, Vec<AttributeId>)> =
            self.units()?.into_iter().filter(|(s, a)| !done.contains(&crate::questions::batch_key(s, a))).collect();
        let n = self.cfg.questions_per_pair;
        self.chunked(
            &todo,
            |(s, attrs)| {
                if !self.cfg.ablation.cgq {
                    return Ok(generic_questions(&self.taxonomy, s.as_str(), &attrs, n)?);
                }
                match generate_questions(&self.gateway, &self.taxonomy, s.as_str(), &attrs, n) {
                    Err(QuestionError::Parse { raw }) => {
                        let prompt = build_question_prompt(&self.taxonomy, s.as_str(), &attrs, n)?;
                        log::warn!("question reply for {s}/{} has no numbered items", attrs.iter().map(|a| a.as_str()).collect::<Vec<_>>().join("+"));
                        Ok(QuestionBatch {
                            scenario: s.clone(),
                            attributes: attrs.to_vec(),
                            requested: n,
                            prompt_hash: sha256_hex(&prompt),
                            generic: false,
                            refused: false,
                            parse_error: Some(raw),
                            questions: vec![],
                        })
                    }
                    other => Ok(other?),
                }
            },
            |out| {
                self.store.append_all(Stream::Questions, "questions", &out)?;
                batches.extend(out);
                Ok(())
            },
        )?;
        self.store.mark_stage("questions", batches.len())?;
        Ok(batches)
    }

    fn code_stage(&self, batches: &[QuestionBatch]) -> Result<Vec<CodeResponse>> {
        let mut code: Vec<CodeResponse> = self.store.read(Stream::Code)?;
        let done: BTreeSet<String> = code.iter().map(|c| c.question_id.clone()).collect();
        let todo: Vec<_> = batches.iter().flat_map(|b| b.questions.iter()).filter(|q| !done.contains(&q.id)).collect();
        self.chunked(
            &todo,
            |q| Ok(generate_code(&self.gateway, &self.taxonomy, q)?),
            |out| {
                self.store.append_all(Stream::Code, "code", &out)?;
                code.extend(out);
                Ok(())
            },
        )?;
        self.store.mark_stage("code", code.len())?;
        Ok(code)
    }

    fn test_stage(&self, code: &[CodeResponse], q_attrs: &HashMap<String, Vec<AttributeId>>) -> Result<Vec<TestBatch>> {
        let mut tests: Vec<TestBatch> = self.store.read(Stream::Tests)?;
        let done: BTreeSet<String> = tests.iter().map(|t| t.function_id.clone()).collect();
        let todo: Vec<&CandidateFunction> = code.iter().flat_map(|c| c.functions.iter()).filter(|f| !done.contains(&f.id)).collect();
        let mode = if self.cfg.ablation.tg { TestMode::UnitTests } else { TestMode::ExampleData };
        self.chunked(
            &todo,
            |f| {
                let hints = if self.cfg.ablation.fl && mode == TestMode::UnitTests {
                    let attrs = union_attrs(&f.attributes, q_attrs.get(&f.question_id));
                    self.library.sample_hints(&f.id, &attrs, self.cfg.library.hints_per_kind, self.cfg.seed)
                } else {
                    HintBundle::empty(&f.id)
                };
                Ok(generate_tests(&self.gateway, f, self.cfg.tests_per_function, mode, hints)?)
            },
            |out| {
                self.store.append_all(Stream::Tests, "tests", &out)?;
                tests.extend(out);
                Ok(())
            },
        )?;
        self.store.mark_stage("tests", tests.len())?;
        Ok(tests)
    }

    fn extract_stage(
        &self,
        code: &[CodeResponse],
        tests: &[TestBatch],
        q_attrs: &HashMap<String, Vec<AttributeId>>,
    ) -> Result<Vec<PiiCandidate>> {
        let mut candidates: Vec<PiiCandidate> = self.store.read(Stream::Candidates)?;
        let dups: Vec<Duplicate> = self.store.read(Stream::Duplicates)?;
        let mut processed: BTreeSet<String> = candidates.iter().map(|c| c.origin.test_id.clone()).collect();
        processed.extend(dups.iter().map(|d| d.candidate.origin.test_id.clone()));
        let mut dedup = Deduper::new();
        candidates.iter().for_each(|c| dedup.remember(c));
        let f_attrs: HashMap<&str, &[AttributeId]> = code.iter().flat_map(|c| c.functions.iter()).map(|f| (f.id.as_str(), f.attributes.as_slice())).collect();
        let extractor = build_extractor(self.cfg, &self.taxonomy)?;
        for batch in tests {
            let attrs = union_attrs(f_attrs.get(batch.function_id.as_str()).copied().unwrap_or_default(), q_attrs.get(&batch.question_id));
            let mut fresh = Vec::new();
            let mut repeated = Vec::new();
            for case in batch.cases.iter().filter(|c| c.accepted && !processed.contains(&c.id)) {
                for c in extractor.extract(&attrs, case) {
                    match dedup.admit(c) {
                        Ok(c) => fresh.push(c),
                        Err(d) => repeated.push(d),
                    }
                }
            }
            self.store.append_all(Stream::Candidates, "extract", &fresh)?;
            self.store.append_all(Stream::Duplicates, "extract", &repeated)?;
            candidates.extend(fresh);
        }
        self.store.mark_stage("extract", candidates.len())?;
        Ok(candidates)
    }

    fn judge_stage(&self, candidates: &[PiiCandidate]) -> Result<Vec<Verdict>> {
        let mut verdicts: Vec<Verdict> = self.store.read(Stream::Verdicts)?;
        let done: BTreeSet<String> = verdicts.iter().map(|v| v.candidate_id.clone()).collect();
        let todo: Vec<&PiiCandidate> = candidates.iter().filter(|c| !done.contains(&c.id)).collect();
        let pools: HashMap<AttributeId, Vec<String>> =
            self.taxonomy.attributes().iter().map(|a| (a.id.clone(), self.library.exemplar_pool(&self.taxonomy, &a.id))).collect();
        let opts = JudgeOptions { exemplars: self.cfg.judge.exemplars, include_context: self.cfg.judge.include_context, seed: self.cfg.seed };
        self.chunked(
            &todo,
            |c| {
                let spec = self.taxonomy.require_attribute(c.attribute.as_str())?;
                Ok(judge_candidate(&self.gateway, spec, c, &pools[&c.attribute], &opts)?)
            },
            |out| {
                self.store.append_all(Stream::Verdicts, "judge", &out)?;
                verdicts.extend(out);
                Ok(())
            },
        )?;
        self.store.mark_stage("judge", verdicts.len())?;
        Ok(verdicts)
    }

    fn search_stage(&self, candidates: &[PiiCandidate], verdicts: &[Verdict]) -> Result<Vec<SearchOutcome>> {
        let mut searches: Vec<SearchOutcome> = self.store.read(Stream::Searches)?;
        for s in &searches {
            self.search.preload(&s.query, SearchHits { total: s.total, evidence: s.evidence.clone() });
        }
        let done: BTreeSet<String> = searches.iter().map(|s| s.candidate_id.clone()).collect();
        let accepted: BTreeSet<&str> = verdicts.iter().filter(|v| v.decision == Decision::Accept).map(|v| v.candidate_id.as_str()).collect();
        let todo: Vec<&PiiCandidate> = candidates.iter().filter(|c| accepted.contains(c.id.as_str()) && !done.contains(&c.id)).collect();
        self.chunked(
            &todo,
            |c| {
                let query = discriminative_query(&c.value, self.cfg.search.phrase_limit);
                let hits = self.search.search(&query)?;
                Ok(SearchOutcome { candidate_id: c.id.clone(), query, total: hits.total, evidence: hits.evidence })
            },
            |out| {
                self.store.append_all(Stream::Searches, "search", &out)?;
                searches.extend(out);
                Ok(())
            },
        )?;
        self.store.mark_stage("search", searches.len())?;
        Ok(searches)
    }
}

fn union_attrs(a: &[AttributeId], b: Option<&Vec<AttributeId>>) -> Vec<AttributeId> {
    let mut s: BTreeSet<AttributeId> = a.iter().cloned().collect();
    if let Some(b) = b {
        s.extend(b.iter().cloned());
    }
    s.into_iter().collect()
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Run (or resume) an audit up to the review stage and write its reports.
pub fn run_audit(cfg: &RunConfig, runs_dir: &Path, resume: Option<&str>) -> Result<RunOutcome> {
    cfg.validate()?;
    let taxonomy = load_run_taxonomy(cfg)?;
    let library = load_library(cfg, &taxonomy)?;
    let value = config_value(cfg);
    let store = match resume {
        Some(id) => {
            let s = RunStore::open(runs_dir, id)?;
            if s.manifest()?.config_hash != json_digest(&value) {
                return Err(ConfigError::Invalid(format!("configuration differs from the one run `{id}` was started with")).into());
            }
            s
        }
        None => {
            let id = cfg.run_id.clone().unwrap_or_else(|| format!("run-{}-{}", Utc::now().format("%Y%m%d-%H%M%S"), &json_digest(&value)[..6]));
            RunStore::create(runs_dir, &id, value)?
        }
    };
    let store = Arc::new(store);
    let gateway = build_gateway(cfg, runs_dir)?.with_sink(store.clone());
    let search = CachedSearch::new(build_search(cfg)?);
    let mut warnings = Vec::new();
    if let Some(w) = self_judging_warning(&gateway) {
        log::warn!("{w}");
        warnings.push(w);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.width).build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let audit = Audit { cfg, taxonomy, library, gateway, search, store: store.clone(), pool };

    let batches = audit.question_stage()?;
    let q_attrs: HashMap<String, Vec<AttributeId>> =
        batches.iter().flat_map(|b| b.questions.iter()).map(|q| (q.id.clone(), q.attributes.clone())).collect();
    let code = audit.code_stage(&batches)?;
    let tests = audit.test_stage(&code, &q_attrs)?;
    let candidates = audit.extract_stage(&code, &tests, &q_attrs)?;
    let verdicts = audit.judge_stage(&candidates)?;
    audit.search_stage(&candidates, &verdicts)?;

    let mut m = store.manifest()?;
    m.complete = true;
    store.write_manifest(&m)?;
    let report = build_run_report(&store, cfg, &audit.taxonomy, warnings.clone())?;
    write_reports(&store, &report)?;
    Ok(RunOutcome { run_id: store.run_id().to_string(), dir: store.dir().to_path_buf(), report, warnings })
}

/// Configuration a run was started with.
pub fn run_config(store: &RunStore) -> Result<RunConfig> {
    let m = store.manifest()?;
    serde_json::from_value(m.config).map_err(|e| ConfigError::Parse(format!("run manifest: {e}")).into())
}

/// Candidate records with all recorded events applied.
pub fn load_records(store: &RunStore, cfg: &RunConfig) -> Result<Vec<CandidateRecord>> {
    let candidates: Vec<PiiCandidate> = store.read(Stream::Candidates)?;
    let verdicts: Vec<Verdict> = store.read(Stream::Verdicts)?;
    let searches: Vec<SearchOutcome> = store.read(Stream::Searches)?;
    let decisions: Vec<ReviewEntry> = store.read(Stream::Decisions)?;
    Ok(fold_records(candidates, &verdicts, &searches, &decisions, &cfg.search.window, &cfg.review)?)
}

pub fn load_run_data(store: &RunStore, cfg: &RunConfig) -> Result<RunData> {
    let batches: Vec<QuestionBatch> = store.read(Stream::Questions)?;
    Ok(RunData {
        questions: batches.into_iter().flat_map(|b| b.questions).collect(),
        code: store.read(Stream::Code)?,
        tests: store.read(Stream::Tests)?,
        records: load_records(store, cfg)?,
        tests_per_function: cfg.tests_per_function,
    })
}

fn report_meta(cfg: &RunConfig, warnings: Vec<String>) -> ReportMeta {
    let models = cfg.roles.iter().map(|(r, b)| (r.to_string(), format!("{}/{}", b.provider, b.model))).collect();
    let ablation = BTreeMap::from([
        ("scenario questions".to_string(), cfg.ablation.cgq),
        ("library hints".to_string(), cfg.ablation.fl),
        ("test elicitation".to_string(), cfg.ablation.tg),
    ]);
    ReportMeta { models, ablation, notes: warnings }
}

pub fn build_run_report(store: &RunStore, cfg: &RunConfig, taxonomy: &Taxonomy, warnings: Vec<String>) -> Result<Report> {
    let data = load_run_data(store, cfg)?;
    Ok(build_report(taxonomy, store.run_id(), &data, report_meta(cfg, warnings), Utc::now()))
}

/// Report for a stored run, optionally compared against a reference run.
pub fn report_for_run(runs_dir: &Path, run_id: &str, reference: Option<&str>) -> Result<Report> {
    let store = RunStore::open_read(runs_dir, run_id)?;
    let cfg = run_config(&store)?;
    let taxonomy = load_run_taxonomy(&cfg)?;
    let mut report = build_run_report(&store, &cfg, &taxonomy, vec![])?;
    if let Some(r) = reference {
        let rs = RunStore::open_read(runs_dir, r)?;
        let rc = run_config(&rs)?;
        report.comparison = Some(compare_runs(&load_records(&store, &cfg)?, &load_records(&rs, &rc)?));
    }
    Ok(report)
}

/// Write `report.json`, `report.md`, `funnel.csv` and `confirmed.json`.
pub fn write_reports(store: &RunStore, report: &Report) -> Result<()> {
    store.write_file("report.json", &render_json(report)?)?;
    store.write_file("report.md", &render_markdown(report))?;
    store.write_file("funnel.csv", &funnel_csv(report)?)?;
    store.write_file("confirmed.json", &confirmed_json(report)?)?;
    Ok(())
}

fn update_params(cfg: &RunConfig, run_id: &str) -> UpdateParams {
    let l = &cfg.library;
    UpdateParams { quartile: l.quartile, min_pts: l.min_pts, eps: l.eps, prototype_threshold: l.prototype_threshold, ..UpdateParams::new(run_id) }
}

fn confirmed_instances(records: &[CandidateRecord]) -> Vec<ConfirmedInstance> {
    records
        .iter()
        .filter(|r| r.status == CandidateStatus::Confirmed)
        .map(|r| ConfirmedInstance {
            candidate_id: r.candidate.id.clone(),
            attribute: r.candidate.attribute.clone(),
            value: r.candidate.value.clone(),
            context_line: r.candidate.context_line.clone(),
        })
        .collect()
}

fn figures_csv(fig: &FigureRows) -> Result<(String, String)> {
    let err = |e: csv::Error| crate::report::ReportError::Serialize(e.to_string());
    let mut s = csv::Writer::from_writer(Vec::new());
    s.write_record(["instance_id", "token", "nll", "part"]).map_err(err)?;
    for r in &fig.scores {
        let part = match r.part {
            crate::library::division::Part::Template => "template",
            crate::library::division::Part::Fragment => "fragment",
        };
        s.write_record([r.instance_id.as_str(), r.token.as_str(), &format!("{:.6}", r.nll), part]).map_err(err)?;
    }
    let mut c = csv::Writer::from_writer(Vec::new());
    c.write_record(["entry_id", "attribute", "kind", "cluster", "is_noise", "prototype_similarity", "admitted"]).map_err(err)?;
    for r in &fig.clusters {
        c.write_record([
            r.entry_id.clone(),
            r.attribute.0.clone(),
            r.kind.as_str().to_string(),
            r.cluster.map(|x| x.to_string()).unwrap_or_default(),
            r.is_noise.to_string(),
            format!("{:.6}", r.prototype_similarity),
            r.admitted.to_string(),
        ])
        .map_err(err)?;
    }
    let to_s = |w: csv::Writer<Vec<u8>>| -> Result<String> {
        let b = w.into_inner().map_err(|e| crate::report::ReportError::Serialize(e.to_string()))?;
        Ok(String::from_utf8_lossy(&b).into_owned())
    };
    Ok((to_s(s)?, to_s(c)?))
}

/// Library update result and where things were written.
#[derive(Debug, Clone)]
pub struct LibraryUpdate {
    pub delta: LibraryDelta,
    pub library_path: PathBuf,
    pub figures_dir: PathBuf,
}

/// Fold a run's confirmed leaks into the library. The previous version is
/// kept next to the output as `<stem>.v<N>.json`.
pub fn library_update(runs_dir: &Path, run_id: &str, library: Option<&Path>, out: Option<&Path>) -> Result<LibraryUpdate> {
    let store = RunStore::open_read(runs_dir, run_id)?;
    let mut cfg = run_config(&store)?;
    if let Some(p) = library {
        cfg.library.path = Some(p.to_path_buf());
    }
    let taxonomy = load_run_taxonomy(&cfg)?;
    let lib = load_library(&cfg, &taxonomy)?;
    let records = load_records(&store, &cfg)?;
    let scorer = build_scorer(&cfg);
    let (next, delta, fig) = update_library(&lib, &taxonomy, scorer.as_ref(), &confirmed_instances(&records), &update_params(&cfg, run_id))?;
    let path = out.map(Path::to_path_buf).or(cfg.library.path.clone()).unwrap_or_else(|| store.dir().join("library.json"));
    if path.exists() {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "library".into());
        let backup = path.with_file_name(format!("{stem}.v{}.json", lib.version));
        std::fs::copy(&path, &backup).map_err(crate::library::LibraryError::Io)?;
    }
    next.save(&path)?;
    let figures_dir = write_figures(runs_dir, run_id, &fig, Some(&delta))?;
    Ok(LibraryUpdate { delta, library_path: path, figures_dir })
}

fn write_figures(runs_dir: &Path, run_id: &str, fig: &FigureRows, delta: Option<&LibraryDelta>) -> Result<PathBuf> {
    let store = RunStore::open_read(runs_dir, run_id)?;
    let (scores, clusters) = figures_csv(fig)?;
    let dir = store.dir().join("figures");
    std::fs::create_dir_all(&dir).map_err(crate::library::LibraryError::Io)?;
    let write = |name: &str, text: &str| std::fs::write(dir.join(name), text).map_err(crate::library::LibraryError::Io);
    write("scores.csv", &scores)?;
    write("clusters.csv", &clusters)?;
    if let Some(d) = delta {
        write("library_delta.json", &(serde_json::to_string_pretty(d).unwrap_or_default() + "\n"))?;
    }
    Ok(dir)
}

/// Token scores and cluster assignments for a run's confirmed leaks as CSV,
/// without changing any library.
pub fn export_figures(runs_dir: &Path, run_id: &str) -> Result<PathBuf> {
    let store = RunStore::open_read(runs_dir, run_id)?;
    let cfg = run_config(&store)?;
    let taxonomy = load_run_taxonomy(&cfg)?;
    let lib = load_library(&cfg, &taxonomy)?;
    let records = load_records(&store, &cfg)?;
    let scorer = build_scorer(&cfg);
    let (_, _, fig) = update_library(&lib, &taxonomy, scorer.as_ref(), &confirmed_instances(&records), &update_params(&cfg, run_id))?;
    write_figures(runs_dir, run_id, &fig, None)
}

/// Rebuild and rewrite a stored run's reports, e.g. after review.
pub fn refresh_reports(store: &RunStore) -> Result<Report> {
    let cfg = run_config(store)?;
    let taxonomy = load_run_taxonomy(&cfg)?;
    let report = build_run_report(store, &cfg, &taxonomy, vec![])?;
    write_reports(store, &report)?;
    Ok(report)
}

/// Review board over a run's current records.
pub fn review_board(store: &RunStore) -> Result<ReviewBoard> {
    let cfg = run_config(store)?;
    let taxonomy = load_run_taxonomy(&cfg)?;
    Ok(ReviewBoard::new(&taxonomy, load_records(store, &cfg)?, cfg.search.window, cfg.review))
}
