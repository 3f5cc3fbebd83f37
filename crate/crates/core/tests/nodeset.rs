use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbfdd::nodeset::{Domain, NodeKind, NodeSet, NodeSetError};

fn brute_min_distance(nodes: &NodeSet<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..nodes.len() {
        for j in 0..i {
            let d: f64 = nodes
                .point(i)
                .iter()
                .zip(nodes.point(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

fn brute_knn(nodes: &NodeSet<f64>, q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..nodes.len())
        .map(|i| {
            (
                nodes
                    .point(i)
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum(),
                i,
            )
        })
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn proximity_and_containment_in_every_dimension() {
    for (dim, h) in [(1, 0.01), (2, 0.03), (2, 0.0125), (3, 0.08)] {
        for mixed in [false, true] {
            let domain = Domain::<f64>::new(dim, mixed).unwrap();
            let nodes = NodeSet::generate(domain, h, 11).unwrap();
            assert!(nodes.len() <= 5000 || dim == 2, "{}", nodes.len());
            assert!(
                brute_min_distance(&nodes) >= h * (1.0 - 1e-12),
                "d={dim} h={h}"
            );
            for i in 0..nodes.len() {
                assert!(domain.contains(nodes.point(i)));
                match nodes.kind(i) {
                    NodeKind::Interior => {
                        assert!(domain.contains_strictly(nodes.point(i)));
                        assert!(nodes.normal(i).is_none());
                    }
                    NodeKind::Boundary => {
                        let n = nodes.normal(i).unwrap();
                        let norm: f64 = n.iter().map(|v| v * v).sum();
                        assert!((norm - 1.0).abs() < 1e-14);
                    }
                }
            }
        }
    }
}

#[test]
fn count_scales_with_inverse_square_spacing() {
    let domain = Domain::<f64>::unit(2).unwrap();
    for seed in 0..4 {
        let coarse = NodeSet::generate(domain, 0.04, seed).unwrap().len() as f64;
        let fine = NodeSet::generate(domain, 0.02, seed).unwrap().len() as f64;
        let ratio = fine / coarse;
        assert!((3.0..=5.0).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn generation_is_deterministic() {
    let domain = Domain::<f64>::unit(2).unwrap();
    let a = NodeSet::generate(domain, 0.03, 42).unwrap();
    let b = NodeSet::generate(domain, 0.03, 42).unwrap();
    assert_eq!(a, b);
    let c = NodeSet::generate(domain, 0.03, 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn knn_matches_brute_force() {
    let domain = Domain::<f64>::unit(2).unwrap();
    let nodes = NodeSet::generate(domain, 0.055, 5).unwrap();
    assert!(nodes.len() >= 200);
    let tree = nodes.spatial_index();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let q = [
            rng.random::<f64>() * 1.2 - 0.1,
            rng.random::<f64>() * 1.2 - 0.1,
        ];
        assert_eq!(tree.nearest(&q, 13).unwrap(), brute_knn(&nodes, &q, 13));
    }
    for i in 0..nodes.len() {
        assert_eq!(tree.nearest(nodes.point(i), 1).unwrap(), vec![i]);
    }
    let all = tree.nearest(&[0.3, 0.3], nodes.len()).unwrap();
    assert_eq!(all, brute_knn(&nodes, &[0.3, 0.3], nodes.len()));
    assert!(matches!(
        nodes.nearest_neighbors(&[0.3, 0.3], nodes.len() + 1),
        Err(NodeSetError::InsufficientNodes { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kd_tree_equals_scan(points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..120),
                           q in (-0.5f64..1.5, -0.5f64..1.5, -0.5f64..1.5),
                           k in 1usize..20) {
        let coords: Vec<f64> = points.iter().flat_map(|p| [p.0, p.1, p.2]).collect();
        let k = k.min(points.len());
        let tree = rbfdd::nodeset::KdTree::build(3, &coords);
        let q = [q.0, q.1, q.2];
        let mut all: Vec<(f64, usize)> = points.iter().enumerate()
            .map(|(i, p)| (((p.0 - q[0]).powi(2) + (p.1 - q[1]).powi(2)) + (p.2 - q[2]).powi(2), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = tree.nearest_with_dist2(&q, k).unwrap();
        // distances must agree; indices too except where rounding could reorder ties
        for (g, e) in got.iter().zip(&all) {
            prop_assert!((g.1 - e.0).abs() <= 1e-15);
        }
    }
}
