use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tatumdrum::baseline::{peak_pick, PeakPickConfig};
use tatumdrum::features::{extract_mel, MelOptions, SAMPLE_RATE};
use tatumdrum::langmodel::{LanguageModel, LmConfig, MaskedLmConfig};
use tatumdrum::metrics::ter;
use tatumdrum::posenc::sync_pe;
use tatumdrum::score::{DrumScore, OnsetProbabilities, TatumGrid};
use tatumdrum::transcriber::{TranscriberConfig, TranscriberModel};

fn random_score(n: usize, rng: &mut ChaCha8Rng) -> DrumScore {
    DrumScore::from_columns(
        &(0..n)
            .map(|_| std::array::from_fn(|_| rng.random_bool(0.3)))
            .collect::<Vec<_>>(),
    )
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, b) = (random_score(256, &mut rng), random_score(256, &mut rng));
    c.bench_function("ter_256x256", |bch| bch.iter(|| ter(&a, &b)));
    c.bench_function("sync_pe_96x256", |bch| {
        bch.iter(|| sync_pe(96, 256).unwrap())
    });
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..3000).map(|_| rng.random()).collect())
        .collect();
    let phi = OnsetProbabilities::from_rows(&rows).unwrap();
    c.bench_function("peak_pick_3x3000", |bch| {
        bch.iter(|| peak_pick(&phi, &PeakPickConfig::default()))
    });
}

fn features(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let audio: Vec<f32> = (0..SAMPLE_RATE as usize * 10)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    c.bench_function("mel_10s", |bch| {
        bch.iter(|| extract_mel(&audio, SAMPLE_RATE, MelOptions::default()).unwrap())
    });
}

fn models(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let audio: Vec<f32> = (0..SAMPLE_RATE as usize * 5)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    let feature = extract_mel(&audio, SAMPLE_RATE, MelOptions::default()).unwrap();
    let grid = TatumGrid::uniform(0.1, 0.125, 38).unwrap();
    let model = TranscriberModel::<f32>::new(
        TranscriberConfig::selfatt(1, tatumdrum::posenc::EncodingKind::Sync),
        0,
    )
    .unwrap();
    let mut group = c.benchmark_group("inference");
    group.sample_size(10);
    group.bench_function("selfatt_5s", |bch| {
        bch.iter(|| model.predict(&feature, &grid).unwrap())
    });
    let lm =
        LanguageModel::<f32>::from_config(LmConfig::Mlm(MaskedLmConfig::default()), 0).unwrap();
    let score = random_score(128, &mut rng);
    group.bench_function("mlm_pseudo_nll_128", |bch| bch.iter(|| lm.score(&score)));
    group.finish();
}

criterion_group!(benches, metrics, features, models);
criterion_main!(benches);
