//! Randomized invariants of the attack metrics, similarities, encoders and graphs.

use proptest::prelude::*;
use sera_lab::attack::{auroc, rates, score_pairs, ScoreSet, SimilarityKind};
use sera_lab::encoders::{encode, init_weights, ArchKind, InitScheme, NagConfig};
use sera_lab::generators::{gen_er, gen_features, gen_sbm, ErSpec, SbmSpec};
use sera_lab::graph::{Graph, NodeSubset};
use sera_lab::linalg::operator_norm;
use sera_lab::matrix::{norm, DenseMatrix};

fn score_set() -> impl Strategy<Value = ScoreSet> {
    (2usize..50, 1u32..12).prop_flat_map(|(len, levels)| {
        (prop::collection::vec(0..levels, len), prop::collection::vec(any::<bool>(), len)).prop_map(
            move |(raw, mut truth)| {
                truth[0] = true;
                truth[1] = false;
                let scores = raw.iter().map(|&s| s as f64 / levels as f64 - 0.5).collect();
                ScoreSet::from_scores(scores, truth).unwrap()
            },
        )
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| DenseMatrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn auroc_invariant_under_increasing_transforms(s in score_set()) {
        let base = auroc(&s).unwrap();
        for f in [|x: f64| (3.0 * x).exp(), |x: f64| x.atan() * 7.0 - 2.0, |x: f64| x * x * x + x] {
            let t = ScoreSet::from_scores(s.scores().iter().map(|&x| f(x)).collect(), s.truth().to_vec()).unwrap();
            prop_assert_eq!(auroc(&t).unwrap(), base);
        }
    }

    #[test]
    fn rates_are_monotone_and_err_is_exact(s in score_set()) {
        let mut taus: Vec<f64> = s.scores().to_vec();
        taus.extend([f64::NEG_INFINITY, f64::INFINITY, -0.25, 0.1]);
        taus.sort_by(|a, b| a.total_cmp(b));
        let ms: Vec<_> = taus.iter().map(|&t| rates(&s, t)).collect();
        for w in ms.windows(2) {
            prop_assert!(w[1].fpr <= w[0].fpr);
            prop_assert!(w[1].fnr >= w[0].fnr);
        }
        for m in &ms {
            prop_assert_eq!(m.err, m.fpr + m.fnr);
        }
    }

    #[test]
    fn cos_scale_and_corr_shift_invariance(
        h in matrix(8, 5),
        scales in prop::collection::vec(0.01f64..100.0, 8),
        shifts in prop::collection::vec(-50.0f64..50.0, 8),
    ) {
        let g = Graph::from_edges(8, [(0, 1), (1, 2), (3, 4), (5, 7)]).unwrap();
        let scaled = DenseMatrix::from_fn(8, 5, |i, j| h.get(i, j) * scales[i]);
        let a = score_pairs(&h, &g, SimilarityKind::Cos).unwrap();
        let b = score_pairs(&scaled, &g, SimilarityKind::Cos).unwrap();
        for (x, y) in a.scores().iter().zip(b.scores()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let moved = DenseMatrix::from_fn(8, 5, |i, j| h.get(i, j) * scales[i] + shifts[i]);
        let a = score_pairs(&h, &g, SimilarityKind::Corr).unwrap();
        let b = score_pairs(&moved, &g, SimilarityKind::Corr).unwrap();
        for (x, y) in a.scores().iter().zip(b.scores()) {
            prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
        }
    }

    #[test]
    fn max_sage_is_permutation_equivariant(seed in 0u64..1000, perm_seed in 0u64..1000) {
        let n = 12;
        let g = gen_er(ErSpec { n, p: 0.3 }, seed).unwrap();
        let x = gen_features(n, 4, seed + 1).unwrap();
        let w = init_weights(ArchKind::MaxSage, 4, 3, 2, InitScheme::He, seed + 2).unwrap();
        // Fisher–Yates driven by a simple LCG keeps the strategy small.
        let mut pi: Vec<usize> = (0..n).collect();
        let mut state = perm_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            pi.swap(i, (state >> 33) as usize % (i + 1));
        }
        let gp = Graph::from_edges(n, g.edges().map(|(u, v)| (pi[u], pi[v]))).unwrap();
        let xp = DenseMatrix::from_fn(n, 4, |i, j| x.get(pi.iter().position(|&p| p == i).unwrap(), j));
        let cfg = NagConfig::standard();
        let h = encode(&g, &x, &w, &cfg, 0).unwrap().h;
        let hp = encode(&gp, &xp, &w, &cfg, 0).unwrap().h;
        for v in 0..n {
            prop_assert_eq!(h.row(v), hp.row(pi[v]));
        }
    }

    #[test]
    fn noiseless_nag_aggregates_are_bounded(seed in 0u64..1000, p in 0.05f64..0.6) {
        let n = 15;
        let g = gen_er(ErSpec { n, p }, seed).unwrap();
        let x = gen_features(n, 6, seed + 1).unwrap();
        let cfg = NagConfig::nag(0.0);
        let mean = init_weights(ArchKind::MeanSage, 6, 5, 1, InitScheme::He, seed + 2).unwrap();
        let bound = operator_norm(&mean.layers[0]).unwrap();
        let h = encode(&g, &x, &mean, &cfg, 0).unwrap().h;
        for row in h.row_iter() {
            prop_assert!(norm(row) <= bound * (1.0 + 1e-9));
        }
        // Symmetric normalization weights sum to at most max_v Σ_u 1/√(d̂_u d̂_v).
        let gcn = init_weights(ArchKind::Gcn, 6, 5, 1, InitScheme::He, seed + 2).unwrap();
        let op = operator_norm(&gcn.layers[0]).unwrap();
        let h = encode(&g, &x, &gcn, &cfg, 0).unwrap().h;
        let dh = |v: usize| g.degree(v) as f64 + 1.0;
        for (v, row) in h.row_iter().enumerate() {
            let mass: f64 = 1.0 / dh(v) + g.neighbors(v).iter().map(|&u| 1.0 / (dh(u) * dh(v)).sqrt()).sum::<f64>();
            prop_assert!(norm(row) <= op * mass * (1.0 + 1e-9));
        }
    }

    #[test]
    fn degree_sum_and_induced_subgraphs(seed in 0u64..1000, n in 2usize..60) {
        let g = gen_er(ErSpec { n, p: 0.2 }, seed).unwrap();
        let (s, _) = gen_sbm(SbmSpec { n: n - n % 2, k: 2, p: 0.4, q: 0.1 }, seed).unwrap();
        for g in [&g, &s] {
            prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.edge_count());
            let (all, _) = g.induced_subgraph(&NodeSubset::all(g.node_count())).unwrap();
            prop_assert_eq!(all.edge_count(), g.edge_count());
            let half = NodeSubset::new((0..g.node_count()).step_by(2).collect(), g.node_count()).unwrap();
            let (sub, map) = g.induced_subgraph(&half).unwrap();
            for (old, new) in map.iter().enumerate() {
                if let Some(new) = new {
                    prop_assert!(sub.degree(*new) <= g.degree(old));
                }
            }
        }
    }
}

/// Star centre: 1/4 + 3/√8 ≈ 1.31 > 1, so with aligned messages the GCN
/// aggregate exceeds ‖W‖ even though every message has norm ≤ ‖W‖.
#[test]
fn gcn_aggregate_can_exceed_operator_norm() {
    let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
    let x = DenseMatrix::from_fn(4, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
    let w = init_weights(ArchKind::Gcn, 2, 2, 1, InitScheme::Identity, 0).unwrap();
    let h = encode(&g, &x, &w, &NagConfig::nag(0.0), 0).unwrap().h;
    let want = 0.25 + 3.0 / 8f64.sqrt();
    assert!((norm(h.row(0)) - want).abs() < 1e-12);
    assert!(want > 1.0);
}

#[test]
fn encoding_is_deterministic_and_seed_sensitive() {
    let g = gen_er(ErSpec { n: 20, p: 0.2 }, 1).unwrap();
    let x = gen_features(20, 5, 2).unwrap();
    for arch in [ArchKind::Gcn, ArchKind::MeanSage, ArchKind::MaxSage, ArchKind::Gin, ArchKind::Gat] {
        let w = init_weights(arch, 5, 4, 2, InitScheme::He, 3).unwrap();
        let cfg = NagConfig::nag(0.5);
        let a = encode(&g, &x, &w, &cfg, 10).unwrap().h;
        assert_eq!(a, encode(&g, &x, &w, &cfg, 10).unwrap().h);
        assert_ne!(a, encode(&g, &x, &w, &cfg, 11).unwrap().h);
    }
}
