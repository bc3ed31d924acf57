use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use jcas_bench::Fixture;
use jcas_core::joint::Receiver;
use jcas_core::mpa::{decode_frame, MpaConfig};
use jcas_core::{composite_channel, factor_graph, gamp_solve, mpa_decode, GampConfig, PriorParams, RMat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mpa(c: &mut Criterion) {
    let fx = Fixture::new(6, 4, 64);
    let (rx, irs, _) = fx.packet(1);
    let h: Vec<_> = fx
        .scenario
        .links
        .iter()
        .map(|l| composite_channel(l, &irs, &fx.scene).unwrap())
        .collect();
    let graph = factor_graph(&fx.codebook);
    let cfg = MpaConfig::default();
    c.bench_function("mpa_decode slot (6 users, 16 antennas)", |b| {
        b.iter(|| mpa_decode(rx.slot(0), &h, &fx.codebook, &graph, fx.sigma2, &cfg).unwrap())
    });
    c.bench_function("decode_frame 64 slots", |b| {
        b.iter(|| decode_frame(&rx, &h, &fx.codebook, fx.sigma2, &cfg).unwrap())
    });
}

fn gamp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, n) = (256, 512);
    let scale = 1.0 / (m as f64).sqrt();
    let phi = RMat::from_fn(m, n, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt());
    let mut x = vec![0.0; n];
    for j in rand::seq::index::sample(&mut rng, n, 8) {
        x[j] = rng.random_range(0.2..1.0);
    }
    let y: Vec<f64> = (0..m).map(|i| phi.row(i).iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
    let q = PriorParams::with_defaults(Some(8.0 / n as f64), 1e-6).unwrap();
    let cfg = GampConfig::default();
    c.bench_function("gamp_solve 256x512", |b| b.iter(|| gamp_solve(&phi, &y, &q, &cfg).unwrap()));
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("joint");
    g.sample_size(10);
    for users in [6usize, 12] {
        let fx = Fixture::new(users, if users == 6 { 4 } else { 7 }, 64);
        g.bench_function(format!("forward_step {users} users"), |b| {
            b.iter_batched(
                || {
                    let mut r = Receiver::new(&fx.scenario, &fx.codebook, &fx.joint).unwrap();
                    r.set_initial(fx.scene.clone());
                    let (rx, irs, _) = fx.packet(1);
                    (r, rx, irs)
                },
                |(mut r, rx, irs)| r.forward_step(1, rx, irs).unwrap(),
                BatchSize::PerIteration,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, mpa, gamp, forward);
criterion_main!(benches);
