//! Sequential vs rayon execution of the data-parallel loops.
//!
//! Run with `cargo bench -p stylebc`. Without the `parallel` feature both
//! variants take the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stylebc::evaluation::{generate, StyleSource};
use stylebc::experts::{generate_dataset, generate_dataset_with, DatasetRecipe};
use stylebc::maze::{EnvConfig, MazeEnv, MazeSpec};
use stylebc::neural::{ArchConfig, Codebook, MlpPolicy};
use stylebc::similarity::dissimilarity_matrix_with;
use stylebc::{Exec, RngStream};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_dissimilarity(c: &mut Criterion) {
    let maze = MazeSpec::builtin("medium_maze").unwrap();
    let ds = generate_dataset(&maze, &DatasetRecipe::builtin("only_forward").unwrap()).unwrap();
    let mut g = c.benchmark_group("dissimilarity_matrix");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| dissimilarity_matrix_with(&ds, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_rollouts(c: &mut Criterion) {
    let maze = MazeSpec::builtin("medium_maze").unwrap();
    let arch = ArchConfig::for_maze(&maze);
    let rng = RngStream::new(0, "bench");
    let policy = MlpPolicy::init(arch.clone(), &mut rng.derive("policy")).unwrap();
    let codebook = Codebook::init(100, arch.style_dim, &mut rng.derive("codebook"));
    let env = MazeEnv::new(maze, EnvConfig::deterministic()).unwrap();
    let source = StyleSource::uniform(100);
    let mut g = c.benchmark_group("generate_100_rollouts");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate(&policy, &codebook, &env, &source, 100, true, 0, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_experts(c: &mut Criterion) {
    let maze = MazeSpec::builtin("medium_maze").unwrap();
    let recipe = DatasetRecipe::builtin("only_forward").unwrap();
    let mut g = c.benchmark_group("generate_dataset");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_dataset_with(&maze, &recipe, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_dissimilarity, bench_rollouts, bench_experts);
criterion_main!(benches);
