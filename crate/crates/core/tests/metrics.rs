use partgen::mesh::{normalize_to_unit_cube, Point3, TriangleMesh};
use partgen::metrics::{chamfer, emd, evaluate_pair, f1_score, hausdorff, hungarian, KdTree, MetricConfig};
use partgen::pipeline::{synth_shape, ShapeFamily};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..max)
}

proptest! {
    #[test]
    fn chamfer_and_hausdorff_are_symmetric(a in cloud(60), b in cloud(60)) {
        prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        prop_assert!(chamfer(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn f1_swaps_precision_and_recall(a in cloud(60), b in cloud(60), tau in 0.01f64..1.0) {
        let ab = f1_score(&a, &b, tau).unwrap();
        let ba = f1_score(&b, &a, tau).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert!((0.0..=1.0).contains(&ab.f1));
    }

    #[test]
    fn identical_sets_score_perfectly(a in cloud(60)) {
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(f1_score(&a, &a, 0.01).unwrap().f1, 1.0);
    }

    #[test]
    fn hausdorff_bounds_chamfer_terms(a in cloud(40), b in cloud(40)) {
        let hd = hausdorff(&a, &b).unwrap();
        prop_assert!(chamfer(&a, &b).unwrap() <= hd * hd + 1e-12);
    }

    #[test]
    fn kdtree_nearest_matches_scan(pts in cloud(120), q in prop::array::uniform3(-1.5f64..1.5)) {
        let tree = KdTree::new(&pts);
        let (d, _) = tree.nearest(&q).unwrap();
        let best = pts.iter().map(|p| (p[0]-q[0]).powi(2) + (p[1]-q[1]).powi(2) + (p[2]-q[2]).powi(2)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d, best);
    }

    #[test]
    fn emd_is_a_permutation_cost(a in cloud(12)) {
        let n = a.len();
        let shifted: Vec<Point3<f64>> = a.iter().rev().copied().collect();
        prop_assert!(emd(&a, &shifted, 256).unwrap().cost.abs() < 1e-12);
        let cost: Vec<f64> = (0..n * n).map(|i| ((i * 7919) % 101) as f64).collect();
        let perm = hungarian(&cost, n);
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn emd_rejects_unequal_sizes() {
    assert!(emd(&[[0.0; 3]], &[[0.0; 3], [1.0; 3]], 256).is_err());
    assert!(chamfer::<f64>(&[], &[[0.0; 3]]).is_err());
}

fn shape(fam: ShapeFamily, seed: u64) -> TriangleMesh<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normalize_to_unit_cube(&synth_shape(fam, &mut rng).unwrap().0).unwrap()
}

#[test]
fn translated_copy_has_hausdorff_near_shift() {
    let m = shape(ShapeFamily::Table, 1);
    let moved = m.translated([0.05, 0.0, 0.0]);
    let cfg = MetricConfig {
        normalize: false,
        emd_points: 64,
        ..MetricConfig::default()
    };
    let r = evaluate_pair(&moved, &m, &cfg, 3).unwrap();
    assert!((r.hd - 0.05).abs() < 0.02, "{}", r.hd);
}

// Two independent 8192-point samples of one surface cannot match at
// tau = 0.02; the floors (0.85 per shape, 0.95 on average) were calibrated
// on these shapes.
#[test]
fn self_comparison_is_near_perfect() {
    let cfg = MetricConfig {
        emd_points: 128,
        ..MetricConfig::default()
    };
    let mut f1s = Vec::new();
    for (i, fam) in ShapeFamily::ALL.into_iter().enumerate() {
        let m = shape(fam, 10 + i as u64);
        for seed in [0, 77] {
            let r = evaluate_pair(&m, &m, &cfg, seed).unwrap();
            assert!(r.cd_x1000 < 1.0, "{fam}: {}", r.cd_x1000);
            assert!(r.f1 > 0.85, "{fam}: {}", r.f1);
            f1s.push(r.f1);
        }
    }
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    assert!(mean > 0.95, "{mean}");
}

#[test]
fn empty_generation_gives_flagged_sentinel() {
    let m = shape(ShapeFamily::Dumbbell, 2);
    let r = evaluate_pair(&TriangleMesh::empty(), &m, &MetricConfig::default(), 0).unwrap();
    assert!(r.empty_generated);
    assert_eq!(r.f1, 0.0);
    assert!(r.cd_x1000.is_finite() && r.cd_x1000 >= f64::MAX / 2.0);
}
