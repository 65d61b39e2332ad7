//! Acceptance checks. One PASS/FAIL line per criterion; exits nonzero if any
//! fails. Run with `cargo test -p leakaudit-cli --test acceptance`.

#[path = "../../core/tests/support/mod.rs"]
mod support;
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use leakaudit::judge::Decision;
use leakaudit::library::dbscan::dbscan;
use leakaudit::library::division::{divide, Part, DEFAULT_QUARTILE};
use leakaudit::library::scorer::{Scorer, StubScorer};
use leakaudit::metrics::{compare_sets, format_rate, leakage, permille, MAX_LEVEL};
use leakaudit::taxonomy::MaskPolicy;
use leakaudit::verification::{mask_value, next_status, CandidateStatus, Event, ReviewDecision, ReviewEntry, ReviewPolicy, SearchWindow};
use leakaudit::{AttributeId, Taxonomy};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn permille_rounding() -> Result<String, String> {
    let cases = [(352.0, 7.0, "19.9"), (400.0, 15.0, "37.5"), (214.0, 4.0, "18.7"), (4294.0, 123.0, "28.6"), (6000.0, 105.7, "17.6"), (6000.0, 79.5, "13.3")];
    for (n, k, want) in cases {
        let got = format_rate(permille(k, n));
        ensure(got == want, || format!("({n},{k}) gave {got}, want {want}"))?;
    }
    Ok(format!("{} cases exact to 1 decimal", cases.len()))
}

fn search_threshold() -> Result<String, String> {
    use CandidateStatus::*;
    let w = SearchWindow::default();
    let got: Vec<CandidateStatus> = [0, 1, 50, 100, 101].into_iter().map(|k| w.classify(k)).collect();
    let want = [SearchZero, SearchInRange, SearchInRange, SearchInRange, SearchOverflow];
    ensure(got == want, || format!("{got:?}"))?;
    Ok("k = 0, 1, 50, 100, 101".into())
}

fn lifecycle() -> Result<String, String> {
    use support::EventKind;
    let applied = support::lifecycle_suite(10_000, 0x5eed)?;
    let (w, p) = (SearchWindow::default(), ReviewPolicy { quorum: 2, assigned_reviewers: 2 });
    let mut pairs = 0;
    for from in CandidateStatus::ALL {
        for kind in support::EVENT_KINDS {
            let ev = match kind {
                EventKind::JudgeAccept => Event::Judge(Decision::Accept),
                EventKind::JudgeReject => Event::Judge(Decision::Reject),
                EventKind::Search => Event::Search(7),
                EventKind::Review => Event::Review(ReviewEntry {
                    candidate_id: "c".into(),
                    reviewer: "alice".into(),
                    decision: ReviewDecision::Reject,
                    note: String::new(),
                    at: chrono::Utc::now(),
                }),
            };
            let res = next_status(from, &[], &ev, &w, &p);
            ensure(res.is_ok() == support::allowed(from, kind), || format!("{from:?} on {kind:?}: {res:?}"))?;
            if let Ok(to) = res {
                ensure(support::targets(from, kind).contains(&to), || format!("{from:?} on {kind:?} went to {to:?}"))?;
            }
            pairs += 1;
        }
    }
    Ok(format!("10000 sequences, {applied} transitions, 0 illegal; {pairs} table pairs"))
}

fn division() -> Result<String, String> {
    let mut r = support::rng(41);
    for case in 0..500 {
        let (text, scores) = support::random_scored_line(&mut r);
        let d = divide(&text, &scores, DEFAULT_QUARTILE, |_, _| "⟨X⟩".to_string()).map_err(|e| e.to_string())?;
        ensure(d.tokens.iter().all(|t| (t.part == Part::Template) == (t.nll <= d.threshold)), || format!("case {case}: partition"))?;
        ensure(d.reconstruct() == text, || format!("case {case}: reconstruction"))?;
        let n = scores.tokens.len();
        ensure(d.template_count() == n.div_ceil(4), || format!("case {case}: {} template tokens of {n}", d.template_count()))?;
    }
    let line = "user.email = 'li.ming@qq.com'";
    let scores = StubScorer.score_sequence(line).map_err(|e| e.to_string())?;
    let d = divide(line, &scores, DEFAULT_QUARTILE, |_, _| "⟨EMAIL⟩".to_string()).map_err(|e| e.to_string())?;
    ensure(d.template == "user.email = ⟨EMAIL⟩", || format!("template {:?}", d.template))?;
    ensure(d.fragments == ["li.ming@qq.com"], || format!("fragments {:?}", d.fragments))?;
    Ok("500 random lines; email line exact".into())
}

fn dbscan_oracle() -> Result<String, String> {
    let mut r = support::rng(2024);
    for case in 0..50 {
        let pts = support::random_points(&mut r, 200, 8);
        let eps = r.gen_range(0.01..0.4);
        let min_pts = r.gen_range(1..8);
        ensure(dbscan(&pts, eps, min_pts) == support::brute_force_dbscan(&pts, eps, min_pts), || format!("case {case}"))?;
    }
    Ok("50 instances of at most 200 points".into())
}

fn leakage_recount() -> Result<String, String> {
    let mut r = support::rng(99);
    for run in 0..100 {
        let data = support::random_run(&mut r);
        let (n, naive) = support::naive_leakage(&data, MAX_LEVEL);
        for lr in leakage(&data, MAX_LEVEL) {
            let (lp, il) = &naive[&lr.category];
            for l in 0..MAX_LEVEL {
                ensure(lr.lp[l] == permille(lp[l] as f64, n as f64) && lr.il[l] == permille(il[l] as f64, n as f64), || format!("run {run} level {}", l + 1))?;
                ensure(lr.il[l] <= lr.lp[l], || format!("run {run}: IL>{} above LP", l + 1))?;
                if l > 0 {
                    ensure(lr.lp[l - 1] >= lr.lp[l], || format!("run {run}: LP not monotone"))?;
                }
            }
        }
    }
    Ok("100 random runs".into())
}

fn set_metrics() -> Result<String, String> {
    let ab: BTreeSet<&str> = ["a", "b"].into();
    let bc: BTreeSet<&str> = ["b", "c"].into();
    let c = compare_sets(&ab, &bc);
    ensure((c.pp, c.pr, c.pf1) == (50.0, 50.0, 50.0), || format!("{c:?}"))?;
    let c = compare_sets(&ab, &ab);
    ensure((c.pp, c.pr, c.pf1) == (100.0, 100.0, 100.0), || format!("{c:?}"))?;
    Ok("{a,b} vs {b,c} and identical sets".into())
}

fn golden() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = common::run_golden(tmp.path(), &[]);
    let file = common::golden_dir().join("decisions.jsonl");
    let (code, out) = common::audit(tmp.path(), &["review", "import", "--run", "golden", "--file", file.to_str().unwrap()]);
    ensure(code == 0, || out)?;
    for (got, want) in [("funnel.csv", "expected_funnel.csv"), ("confirmed.json", "expected_confirmed.json")] {
        let a = std::fs::read_to_string(dir.join(got)).map_err(|e| e.to_string())?;
        let b = std::fs::read_to_string(common::golden_dir().join(want)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{got} differs from {want}"))?;
    }
    Ok("2 scenarios x 2 attributes x 5 questions x 3 tests".into())
}

fn masking() -> Result<String, String> {
    let tax = Taxonomy::bundled();
    let policy = |a: &str| -> MaskPolicy { tax.attribute(&AttributeId::new(a)).unwrap().mask_policy.clone() };
    let e = mask_value("george.thompson@outlook.com", &policy("Email"));
    ensure(e == "george.t*******@outlook.com", || e.clone())?;
    let p = mask_value("+86 138 4411 5022", &policy("PhoneNumber"));
    ensure(p == "+86 138 *****022", || p.clone())?;

    let pii = common::fixture_pii();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = common::run_golden(tmp.path(), &[]);
    let file = common::golden_dir().join("decisions.jsonl");
    common::audit(tmp.path(), &["review", "import", "--run", "golden", "--file", file.to_str().unwrap()]);
    for f in ["report.md", "report.json", "funnel.csv", "confirmed.json"] {
        let text = std::fs::read_to_string(dir.join(f)).map_err(|e| e.to_string())?;
        if let Some(v) = pii.iter().find(|v| text.contains(v.as_str())) {
            return Err(format!("{f} contains {v}"));
        }
    }
    Ok(format!("examples exact; {} fixture values absent from 4 reports", pii.len()))
}

fn ablation() -> Result<String, String> {
    let keys = |d: &std::path::Path| {
        let mut k = BTreeSet::new();
        for v in common::stream(d, "tests.jsonl") {
            common::key_paths(&v, "", &mut k);
        }
        k.into_iter().filter(|p| !p.starts_with("hints.hints[]")).collect::<BTreeSet<_>>()
    };
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bd = common::run_golden(base.path(), &[]);

    let fl = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fd = common::run_golden(fl.path(), &["--no-fl"]);
    let batches = common::stream(&fd, "tests.jsonl");
    ensure(!batches.is_empty() && batches.iter().all(|b| b["hints"]["hints"].as_array().is_some_and(|h| h.is_empty())), || "--no-fl left hints".into())?;

    let tg = tempfile::tempdir().map_err(|e| e.to_string())?;
    let td = common::run_golden(tg.path(), &["--no-tg"]);
    let unit = common::stream(&td, "exchanges.jsonl")
        .iter()
        .filter(|e| e["role"] == "test" && e["prompt"].as_str().is_some_and(|p| p.contains("unit test")))
        .count();
    ensure(unit == 0, || format!("--no-tg sent {unit} unit-test prompts"))?;
    ensure(keys(&bd) == keys(&fd) && keys(&bd) == keys(&td), || "test batch schema changed".into())?;
    Ok(format!("{} batches without hints; 0 unit-test prompts", batches.len()))
}

fn main() {
    let checks: [(&str, Check, Duration); 10] = [
        ("permille rounding", permille_rounding, Duration::from_secs(1)),
        ("search threshold", search_threshold, Duration::from_secs(1)),
        ("candidate lifecycle", lifecycle, Duration::from_secs(10)),
        ("token division", division, Duration::from_secs(10)),
        ("dbscan vs brute force", dbscan_oracle, Duration::from_secs(30)),
        ("LP/IL recount", leakage_recount, Duration::from_secs(30)),
        ("PP/PR/PF1", set_metrics, Duration::from_secs(1)),
        ("golden end-to-end", golden, Duration::from_secs(60)),
        ("masking", masking, Duration::from_secs(60)),
        ("ablation switches", ablation, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (name, check, limit) in checks {
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let res = res.and_then(|d| if took <= limit { Ok(d) } else { Err(format!("{d}; too slow")) });
        let (tag, detail) = match res {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("{tag} {name:<22} {:>8.3}s / {:>3}s  {detail}", took.as_secs_f64(), limit.as_secs());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
