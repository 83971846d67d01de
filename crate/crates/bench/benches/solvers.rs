use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jko_bench::{bump_1d, bump_2d};
use jko_core::energy::{InternalDensityKind, PotentialField};
use jko_core::jko::{jko_step, jko_step_crowd};
use jko_core::transport::TransportOptions;
use jko_core::{solve_ot, DiscreteMeasure, EnergySpec, JkoConfig, LatticeSpec};

fn ot(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_ot");
    for n in [16, 32, 64] {
        let mu = bump_1d(n, 0.8);
        let nu = DiscreteMeasure::uniform(mu.lattice().clone());
        g.bench_with_input(BenchmarkId::new("1d", n), &n, |b, _| {
            b.iter(|| solve_ot(black_box(&mu), black_box(&nu), &TransportOptions::default()).unwrap())
        });
    }
    for n in [4, 6, 8] {
        let mu = bump_2d(n, 0.8);
        let nu = DiscreteMeasure::uniform(mu.lattice().clone());
        g.bench_with_input(BenchmarkId::new("2d", n * n), &n, |b, _| {
            b.iter(|| solve_ot(black_box(&mu), black_box(&nu), &TransportOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("jko_step");
    g.sample_size(10);
    let well = PotentialField::QuadraticWell { center: vec![0.3], stiffness: 2.0 };
    for n in [16, 32] {
        let rho = bump_1d(n, 0.8);
        for (name, kind) in [("entropy", InternalDensityKind::Entropy), ("m2", InternalDensityKind::power_law(2.0).unwrap())] {
            let spec = EnergySpec::builder(rho.lattice().clone()).internal(kind).potential_field(&well).build().unwrap();
            let cfg = JkoConfig::for_spec(&spec, 0.1, 1);
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| jko_step(black_box(&rho), &spec, 0.1, &cfg).unwrap())
            });
        }
    }
    g.finish();
}

fn crowd(c: &mut Criterion) {
    let mut g = c.benchmark_group("crowd_step");
    g.sample_size(10);
    for n in [16, 32] {
        let l = Arc::new(LatticeSpec::unit_origin(2.0 / n as f64, &[n]).unwrap());
        let field = PotentialField::Linear { slope: vec![1.0], offset: 0.0 };
        let spec = EnergySpec::builder(l.clone()).potential_field(&field).crowd(true).build().unwrap();
        let rho = DiscreteMeasure::uniform(l);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| jko_step_crowd(black_box(&rho), &spec, 0.05).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, ot, step, crowd);
criterion_main!(benches);
