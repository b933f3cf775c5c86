mod common;

use common::{random_matrix, rng};
use conf_rerank::graph::{build_relation_graphs, knn_edges};
use conf_rerank::ranking::{collect_candidates, initial_ranking, minmax_similarity, RankingList};
use conf_rerank::Matrix;
use proptest::prelude::*;

fn unit_dist(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter().zip(v).map(|(a, b)| (a / nu - b / nv).powi(2)).sum::<f64>().sqrt()
}

/// Repeated selection of the smallest `(distance, index)` pair.
fn selection_order(d: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..d.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (left[i], left[best]);
            if d[a] < d[b] || (d[a] == d[b] && a < b) {
                best = i;
            }
        }
        out.push(left.remove(best));
    }
    out
}

#[test]
fn initial_ranking_matches_exhaustive_sort() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let gallery = random_matrix(&mut r, 50, 16);
        let query = random_matrix(&mut r, 1, 16);
        let list = initial_ranking(query.row(0), &gallery).unwrap();
        let d: Vec<f64> = gallery.iter_rows().map(|g| unit_dist(query.row(0), g)).collect();
        assert_eq!(list.indices, selection_order(&d));
        for (&i, &di) in list.indices.iter().zip(&list.distances) {
            assert!((di - d[i]).abs() < 1e-12);
            assert!((0.0..=2.0).contains(&di));
        }
    }
}

#[test]
fn ranking_is_scale_invariant_and_ties_break_by_index() {
    let gallery = Matrix::from_rows(&[[2.0, 0.0], [0.0, 1.0], [5.0, 0.0], [0.0, -3.0]]).unwrap();
    let list = initial_ranking(&[7.0, 0.0], &gallery).unwrap();
    assert_eq!(list.indices, vec![0, 2, 1, 3]);
    assert_eq!(list.distances[0], 0.0);
}

fn brute_knn(m: &Matrix, n: usize) -> Vec<Vec<usize>> {
    (0..m.rows())
        .map(|k| {
            let d: Vec<f64> = (0..m.rows())
                .map(|j| if j == k { f64::INFINITY } else { unit_dist(m.row(j), m.row(k)) })
                .collect();
            selection_order(&d).into_iter().take(n.min(m.rows() - 1)).collect()
        })
        .collect()
}

#[test]
fn knn_matches_brute_force() {
    let line = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
    assert_eq!(knn_edges(&line, 1).unwrap(), vec![vec![1], vec![0], vec![1]]);
    for seed in 0..5 {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, 20, 6);
        for n in [1, 3, 7, 19, 30] {
            assert_eq!(knn_edges(&m, n).unwrap(), brute_knn(&m, n));
        }
    }
}

#[test]
fn graphs_have_uniform_in_degree_and_crossed_wiring() {
    let mut r = rng(3);
    let app = random_matrix(&mut r, 20, 10);
    let gait = random_matrix(&mut r, 20, 5);
    let g = build_relation_graphs(&app, &gait, 3).unwrap();
    for (graph, sources, feats) in [(&g.app, &gait, &app), (&g.gait, &app, &gait)] {
        assert_eq!(graph.num_edges(), 20 * 4);
        let knn = brute_knn(sources, 3);
        for k in 0..20 {
            assert_eq!(graph.incoming[k][0], k);
            assert_eq!(&graph.incoming[k][1..], &knn[k][..]);
            for &j in &graph.incoming[k] {
                let (fj, fk) = (feats.row(j), feats.row(k));
                let (nj, nk) = (
                    fj.iter().map(|x| x * x).sum::<f64>().sqrt(),
                    fk.iter().map(|x| x * x).sum::<f64>().sqrt(),
                );
                let expected: Vec<f64> = fj.iter().zip(fk).map(|(a, b)| a / nj * b / nk).collect();
                let got = graph.edge_feature(j, k).unwrap();
                for (x, y) in got.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-14);
                }
            }
        }
    }
}

#[test]
fn perturbing_gait_keeps_appearance_edge_features() {
    let mut r = rng(4);
    let app = random_matrix(&mut r, 15, 8);
    let gait = random_matrix(&mut r, 15, 8);
    let moved = random_matrix(&mut r, 15, 8);
    let a = build_relation_graphs(&app, &gait, 4).unwrap();
    let b = build_relation_graphs(&app, &moved, 4).unwrap();
    assert_ne!(a.app.incoming, b.app.incoming);
    for k in 0..15 {
        for &j in &b.app.incoming[k] {
            if let Some(old) = a.app.edge_feature(j, k) {
                assert_eq!(old, b.app.edge_feature(j, k).unwrap());
            }
        }
    }
    // the gait graph's wiring comes from appearance and survives
    assert_eq!(a.gait.incoming, b.gait.incoming);
}

#[test]
fn default_candidate_budget() {
    let mut r = rng(5);
    let q = random_matrix(&mut r, 1, 8);
    let app = random_matrix(&mut r, 300, 8);
    let gait = random_matrix(&mut r, 300, 8);
    let ra = initial_ranking(q.row(0), &app).unwrap();
    let rb = initial_ranking(q.row(0), &gait).unwrap();
    let c = collect_candidates(&ra, &rb, 100, 0.75, |_| false).unwrap();
    assert_eq!(c.len(), 100);
    assert_eq!(&c.indices[..75], &ra.indices[..75]);
    let expected_tail: Vec<usize> = rb.indices.iter().copied().filter(|g| !ra.indices[..75].contains(g)).take(25).collect();
    assert_eq!(&c.indices[75..], &expected_tail[..]);
}

fn permutation_strategy(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0..2.0f64, n),
            prop::collection::vec(0.0..2.0f64, n),
        )
    })
}

proptest! {
    #[test]
    fn minmax_bounds_and_extremes(d in prop::collection::vec(0.0..2.0f64, 1..60)) {
        let s = minmax_similarity(&d);
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = d.iter().copied().fold(f64::MIN, f64::max);
        let min = d.iter().copied().fold(f64::MAX, f64::min);
        for (&di, &si) in d.iter().zip(&s) {
            if max == min {
                prop_assert_eq!(si, 0.5);
            } else if di == min {
                prop_assert_eq!(si, 1.0);
            } else if di == max {
                prop_assert_eq!(si, 0.0);
            }
        }
    }

    #[test]
    fn minmax_affine_invariance(
        d in prop::collection::vec(0.0..2.0f64, 2..40),
        a in 0.01..100.0f64,
        c in -10.0..10.0f64,
    ) {
        let s = minmax_similarity(&d);
        let t = minmax_similarity(&d.iter().map(|x| a * x + c).collect::<Vec<_>>());
        for (x, y) in s.iter().zip(&t) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn candidates_are_unique_and_sized(
        (da, db) in permutation_strategy(80),
        k in 1usize..120,
        gamma in 0.0..=1.0f64,
    ) {
        let ra = RankingList::from_distances(&da);
        let rb = RankingList::from_distances(&db);
        let c = collect_candidates(&ra, &rb, k, gamma, |g| g % 3 == 0).unwrap();
        let n = da.len();
        prop_assert_eq!(c.len(), k.min(n));
        let mut seen = c.indices.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), c.len());
        let head = ((gamma * k.min(n) as f64).floor() as usize).min(k.min(n));
        prop_assert_eq!(&c.indices[..head], &ra.indices[..head]);
        for (i, &g) in c.indices.iter().enumerate() {
            prop_assert_eq!(c.labels[i], g % 3 == 0);
            prop_assert_eq!(c.dist_app[i], da[g]);
            prop_assert_eq!(c.dist_gait[i], db[g]);
        }
    }
}
