//! Randomized checks of the invariants each module promises.

use std::f64::consts::PI;

use jcas_core::channel::{los_links, scatter_channel, LinkSet};
use jcas_core::gamp::{g_in, PriorParams};
use jcas_core::metrics::{cs_bound, mse, BoundParams};
use jcas_core::scene::{format_scene, occupied_count, parse_scene};
use jcas_core::{
    composite_channel, factor_graph, known_channel, measurement_matrix, random_scene, Codebook, Geometry,
    IrsPattern, OreGrid, RoomSpec, ScattererField, C64,
};
use proptest::prelude::*;

/// 2 m room with 0.5 m voxels (64 voxels), 3 users, 2 antennas, 4 IRS elements.
fn small_links() -> (RoomSpec, Vec<LinkSet>) {
    let room = RoomSpec::new([2.0; 3], [0.5; 3]).unwrap();
    let geom = Geometry::new(
        vec![[0.5, 0.5, 0.0], [1.5, 0.5, 0.0], [0.5, 1.5, 0.0]],
        vec![[1.0, 0.0, 1.5], [1.2, 0.0, 1.5]],
        vec![[0.0, 1.0, 1.5], [0.0, 1.0, 1.7], [0.0, 1.2, 1.5], [0.0, 1.2, 1.7]],
        &room,
    )
    .unwrap();
    let links = los_links(&geom, &room, &OreGrid::band(2).unwrap()).unwrap();
    (room, links)
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..=1.0f64], n)
}

fn pattern(n: usize) -> impl Strategy<Value = IrsPattern> {
    (prop::collection::vec(0.0..=1.0f64, n), prop::collection::vec(0.0..2.0 * PI, n))
        .prop_map(|(rho, phi)| IrsPattern::new(&rho, &phi, 0).unwrap())
}

fn rel_close(a: C64, b: C64, scale: f64) -> bool {
    (a - b).norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE)
}

fn max_abs(m: &jcas_core::CMat) -> f64 {
    m.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scatter_channel_is_linear(x1 in field(64), x2 in field(64), a in 0.0..=1.0f64, irs in pattern(4)) {
        let (_, links) = small_links();
        let half = |v: &[f64]| v.iter().map(|x| 0.5 * x).collect::<Vec<_>>();
        let (h1, h2) = (half(&x1), half(&x2));
        let mix: Vec<f64> = h1.iter().zip(&h2).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        for l in &links {
            let s1 = scatter_channel(l, &irs, &ScattererField::new(h1.clone()).unwrap()).unwrap();
            let s2 = scatter_channel(l, &irs, &ScattererField::new(h2.clone()).unwrap()).unwrap();
            let sm = scatter_channel(l, &irs, &ScattererField::new(mix.clone()).unwrap()).unwrap();
            let scale = max_abs(&s1).max(max_abs(&s2));
            for i in 0..sm.as_slice().len() {
                let want = s1.as_slice()[i] * a + s2.as_slice()[i] * (1.0 - a);
                prop_assert!(rel_close(sm.as_slice()[i], want, scale));
            }
        }
    }

    #[test]
    fn measurement_matrix_matches_composite_channel(x in field(64), irs in pattern(4)) {
        let (_, links) = small_links();
        let xf = ScattererField::new(x.clone()).unwrap();
        for l in &links {
            let h = composite_channel(l, &irs, &xf).unwrap();
            let known = known_channel(l, &irs).unwrap();
            let scale = max_abs(&h);
            for u in 0..l.user_count() {
                let a = measurement_matrix(l, &irs, u).unwrap();
                let ax = a.mul_real(&x).unwrap();
                for (ant, z) in ax.iter().enumerate() {
                    prop_assert!(rel_close(known[(u, ant)] + z, h[(u, ant)], scale));
                }
            }
        }
    }

    #[test]
    fn scatter_channel_matches_direct_path_sum(x in field(64), irs in pattern(4)) {
        let (_, links) = small_links();
        let theta = irs.coefficients();
        let l = &links[1];
        let s = scatter_channel(l, &irs, &ScattererField::new(x.clone()).unwrap()).unwrap();
        let scale = max_abs(&s).max(1e-300);
        for u in 0..l.user_count() {
            for ant in 0..l.antenna_count() {
                let mut direct = C64::new(0.0, 0.0);
                for (j, &xj) in x.iter().enumerate() {
                    for (i, &t) in theta.iter().enumerate() {
                        direct += l.s3[(u, j)] * xj * l.s2[(j, i)] * t * l.s1[(i, ant)];
                    }
                }
                prop_assert!(rel_close(s[(u, ant)], direct, scale));
            }
        }
    }

    #[test]
    fn irs_entries_bounded(irs in pattern(16), seed in any::<u64>()) {
        prop_assert!(irs.coefficients().iter().all(|t| t.norm() <= 1.0 + 1e-15));
        let b = IrsPattern::random_binary(16, 0, seed);
        prop_assert!(b.coefficients().iter().all(|t| t.im == 0.0 && t.re.abs() == 1.0));
    }

    #[test]
    fn random_scene_invariants(sparsity in 0.001..=1.0f64, seed in any::<u64>()) {
        let room = RoomSpec::standard();
        let f = random_scene(&room, sparsity, seed).unwrap();
        prop_assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(f.nonzero_count(), occupied_count(sparsity, 512));
        prop_assert_eq!(occupied_count(sparsity, 512), ((sparsity * 512.0) - 1e-9).ceil().max(0.0) as usize);
        let text = format_scene(&room, &f).unwrap();
        let (room2, f2) = parse_scene(&text, Some(&room)).unwrap();
        prop_assert_eq!(room2, room);
        prop_assert_eq!(f2.values(), f.values());
    }

    #[test]
    fn g_in_stays_in_unit_interval(
        v in -5.0..5.0f64,
        sv in 1e-6..10.0f64,
        lambda in 0.001..0.5f64,
        theta in 0.0..=1.0f64,
        sx in 1e-3..10.0f64,
    ) {
        let q = PriorParams::new(lambda, theta, sx, 1e-3).unwrap();
        let (x, d) = g_in(v, sv, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn generated_codebooks_have_symmetric_graphs(ores in 2usize..8, dv_frac in 0.0..1.0f64, users_frac in 0.0..1.0f64) {
        let d_v = 1 + ((ores - 1) as f64 * dv_frac) as usize;
        // Regular books need d_v·N_u divisible by R.
        let step = ores / gcd(ores, d_v);
        let max_users = binomial(ores, d_v).min(24) / step * step;
        let users = step * (1 + ((max_users / step - 1) as f64 * users_frac) as usize);
        let cb = Codebook::generate(users, ores, d_v, 4).unwrap();
        let g = factor_graph(&cb);
        for (r, us) in g.ore_users.iter().enumerate() {
            for &u in us {
                prop_assert!(g.user_ores[u].contains(&r));
            }
        }
        for (u, rs) in g.user_ores.iter().enumerate() {
            prop_assert_eq!(rs.len(), d_v);
            for &r in rs {
                prop_assert!(g.ore_users[r].contains(&u));
            }
        }
        let edges: usize = g.ore_users.iter().map(Vec::len).sum();
        prop_assert_eq!(edges, d_v * users);
        // Codewords vanish off the user's support.
        for u in 0..users {
            for m in 0..4 {
                for r in 0..ores {
                    if !g.user_ores[u].contains(&r) {
                        prop_assert_eq!(cb.entry(u, m, r), C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn mse_is_symmetric_and_definite(a in prop::collection::vec(0.0..=1.0f64, 1..64), shift in prop::collection::vec(-1.0..1.0f64, 64)) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let ab = mse(&a, &b).unwrap();
        prop_assert_eq!(ab, mse(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn cs_bound_monotone(
        users in 1usize..20, antennas in 1usize..32, window in 1usize..20,
        p in 0.1..1.99f64, radius in 0.01..10.0f64,
    ) {
        let bp = BoundParams { c: 1.0, radius, p, users, antennas, window, voxels: 512 };
        let base = cs_bound(&bp).unwrap();
        for more in [
            BoundParams { users: users + 1, ..bp },
            BoundParams { antennas: antennas + 1, ..bp },
            BoundParams { window: window + 1, ..bp },
        ] {
            let smaller = cs_bound(&more).unwrap();
            prop_assert!(smaller < base);
        }
        let wider = cs_bound(&BoundParams { radius: radius * 1.5, ..bp }).unwrap();
        prop_assert!(wider > base);
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
