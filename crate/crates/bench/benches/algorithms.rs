use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leakaudit::extract::Extractor;
use leakaudit::library::dbscan::{dbscan, estimate_eps, DEFAULT_MIN_PTS};
use leakaudit::library::division::{divide, DEFAULT_QUARTILE};
use leakaudit::library::scorer::{Scorer, StubScorer};
use leakaudit::response::TestCase;
use leakaudit::{AttributeId, Taxonomy};

fn points(n: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    (0..n).map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

fn bench_dbscan(c: &mut Criterion) {
    let mut g = c.benchmark_group("dbscan");
    for n in [50, 200, 800] {
        let pts = points(n, 32);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| b.iter(|| dbscan(black_box(pts), 0.3, DEFAULT_MIN_PTS)));
    }
    g.finish();
    let pts = points(200, 32);
    c.bench_function("estimate_eps/200", |b| b.iter(|| estimate_eps(black_box(&pts), DEFAULT_MIN_PTS)));
}

fn bench_extraction(c: &mut Criterion) {
    let taxonomy = Taxonomy::bundled();
    let extractor = Extractor::new(&taxonomy);
    let attrs: Vec<AttributeId> = taxonomy.attributes().iter().map(|a| a.id.clone()).collect();
    let text = "```python\ndef test_register():\n    user = {\"email\": \"li.ming@qq.com\", \"phone\": \"+86 138 4411 5022\"}\n    assert register(user, card=\"4111 1111 1111 1111\")\n    assert lookup(name=\"George Thompson\", dob=\"1987-04-12\")\n```";
    let test = TestCase { id: "t".into(), function_id: "f".into(), question_id: "q".into(), index: 0, text: text.into(), accepted: true };
    c.bench_function("extract/all_attributes", |b| b.iter(|| extractor.extract(black_box(&attrs), black_box(&test))));
}

fn bench_division(c: &mut Criterion) {
    let line = "user.email = 'li.ming@qq.com'  # primary contact for the account owner";
    let scores = StubScorer.score_sequence(line).unwrap();
    c.bench_function("divide/line", |b| b.iter(|| divide(black_box(line), &scores, DEFAULT_QUARTILE, |_, _| "⟨EMAIL⟩".to_string()).unwrap()));
    c.bench_function("stub_score/line", |b| b.iter(|| StubScorer.score_sequence(black_box(line)).unwrap()));
}

criterion_group!(benches, bench_dbscan, bench_extraction, bench_division);
criterion_main!(benches);
