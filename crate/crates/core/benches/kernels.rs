use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mope_core::clustering::{cluster_passwords, kmeans, silhouette, KMeansConfig, SelectConfig};
use mope_core::corpus::{Alphabet, PairRecord};
use mope_core::expert::NGramConfig;
use mope_core::features::{extract_features, Standardizer, StdFeatureVector};
use mope_core::offline::{generate, train_offline, GenerationConfig, OfflineMope, SamplePool};
use mope_core::online::{beam_search_batch, train_online, OnlineConfig, OnlineMope};
use mope_core::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn corpus(n: usize) -> Vec<String> {
    let words = [
        "love", "dragon", "monkey", "sunny", "star", "hello", "tiger",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => (0..rng.gen_range(4..12))
                .map(|_| char::from(b'0' + rng.gen_range(0..10)))
                .collect(),
            1 => words[rng.gen_range(0..words.len())].repeat(rng.gen_range(1..3)),
            _ => format!(
                "{}!{}",
                words[rng.gen_range(0..words.len())],
                rng.gen_range(0..1000)
            ),
        })
        .collect()
}

fn rows(n: usize) -> Vec<StdFeatureVector> {
    let raw: Vec<_> = corpus(n)
        .iter()
        .map(|p| extract_features(p).unwrap())
        .collect();
    Standardizer::fit(&raw).unwrap().standardize_all(&raw)
}

fn model() -> OfflineMope {
    let c = corpus(5000);
    let refs: Vec<&str> = c.iter().map(String::as_str).collect();
    let mut sel = SelectConfig::new(3, 3, 0.0, 1);
    sel.step = 1;
    let (cm, _) = cluster_passwords(&refs, &sel).unwrap();
    train_offline(
        &refs,
        cm,
        &Alphabet::printable_ascii(),
        &NGramConfig::default(),
        10.0,
        16,
        Execution::Parallel,
    )
    .unwrap()
}

fn online_model() -> OnlineMope {
    let c = corpus(2000);
    let pairs: Vec<PairRecord> = c
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.truncate(15);
            PairRecord::new(p.clone(), format!("{p}1"))
        })
        .collect();
    let srcs: Vec<&str> = pairs.iter().map(|p| p.src.as_str()).collect();
    let mut sel = SelectConfig::new(3, 3, 0.0, 1);
    sel.step = 1;
    let (cm, _) = cluster_passwords(&srcs, &sel).unwrap();
    let cfg = OnlineConfig {
        max_ed: 2,
        beam_width: 30,
        top_k: 10,
        ..OnlineConfig::default()
    };
    train_online(&pairs, cm, &Alphabet::printable_ascii(), &cfg).unwrap()
}

fn bench_clustering(c: &mut Criterion) {
    let data = rows(4000);
    let mut g = c.benchmark_group("kmeans_k5_n4000");
    for (name, exec) in MODES {
        let mut cfg = KMeansConfig::new(5, 3);
        cfg.exec = exec;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kmeans(&data, &cfg).unwrap())
        });
    }
    g.finish();

    let fit = kmeans(&data, &KMeansConfig::new(5, 3)).unwrap();
    let mut g = c.benchmark_group("silhouette_n2000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| silhouette(&data, &fit.labels, Some(2000), 1, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_offline(c: &mut Criterion) {
    let m = model();
    let mut g = c.benchmark_group("sample_pool_n20000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| SamplePool::build(&m, 20_000, 7, exec).unwrap())
        });
    }
    g.finish();

    let pool = SamplePool::build(&m, 20_000, 7, Execution::Parallel).unwrap();
    let test = corpus(2000);
    let mut g = c.benchmark_group("guess_numbers_2000");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.estimate_all(&m, &test, exec).unwrap())
        });
    }
    g.finish();

    let cfg = GenerationConfig::new(1e-5, 1, 16);
    let mut g = c.benchmark_group("generate_tau1e-5");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate(&m, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_online(c: &mut Criterion) {
    let m = online_model();
    let sources = corpus(64);
    let mut g = c.benchmark_group("beam_batch_64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| beam_search_batch(&m, &sources, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(kernels, bench_clustering, bench_offline, bench_online);
criterion_main!(kernels);
