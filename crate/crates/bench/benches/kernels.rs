use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wstal_core::mil::{rskp_propagate, temporal_affinity};
use wstal_core::postprocess::{temporal_nms, NmsConfig};
use wstal_core::proposals::{generate_proposals, ProposalConfig};
use wstal_core::segment::{rasterize, Segment};

fn random_segments(n: usize, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let start = rng.random_range(0.0..290.0);
            Segment::scored(
                rng.random_range(1..=5),
                start,
                start + rng.random_range(0.5..10.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect()
}

fn bench_proposals(c: &mut Criterion) {
    let cfg = ProposalConfig::default();
    c.bench_function("generate_proposals_default", |b| {
        b.iter(|| generate_proposals(std::hint::black_box(&cfg)).unwrap())
    });
}

fn bench_nms(c: &mut Criterion) {
    let segs = random_segments(1000, 7);
    let cfg = NmsConfig::default();
    c.bench_function("temporal_nms_1000", |b| {
        b.iter(|| temporal_nms(std::hint::black_box(&segs), &cfg).unwrap())
    });
}

fn bench_rasterize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = 0.0;
    let mut segs = Vec::new();
    while t < 280.0 {
        t += rng.random_range(0.5..3.0);
        let end = t + rng.random_range(0.5..5.0);
        segs.push(Segment::new(rng.random_range(1..=5), t, end.min(300.0)));
        t = end;
    }
    c.bench_function("rasterize_50hz_300s", |b| {
        b.iter(|| rasterize(std::hint::black_box(&segs), 50.0, 300.0).unwrap())
    });
}

fn bench_rskp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let boxes: Vec<[usize; 2]> = (0..200)
        .map(|_| {
            let s = rng.random_range(0..2000usize);
            [s, s + rng.random_range(10..200usize)]
        })
        .collect();
    let affinity = temporal_affinity(&boxes);
    let scores = Array2::from_shape_fn((200, 5), |_| rng.random_range(0.0..1.0));
    c.bench_function("rskp_propagate_200x5_t20", |b| {
        b.iter(|| {
            rskp_propagate(
                std::hint::black_box(scores.view()),
                affinity.view(),
                0.5,
                20,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_proposals, bench_nms, bench_rasterize, bench_rskp);
criterion_main!(benches);
