mod common;

use common::*;
use oa_complete::geom::{self, chamfer_l2, compute_norm_params, denormalize, fps, knn, normalize};
use oa_complete::{GeomError, PointCloud};
use proptest::prelude::*;

#[test]
fn fps_matches_brute_force_on_random_clouds() {
    let mut r = rng(11);
    for trial in 0..30 {
        let n = 20 + trial * 7;
        let pts = random_points(&mut r, n, -1.0, 1.0);
        let k = (n / 4).max(1);
        let cloud = PointCloud::new(pts.clone()).unwrap();
        assert_eq!(fps(&cloud, k).unwrap(), fps_oracle(&pts, k), "trial {trial}");
    }
}

#[test]
fn fps_200_points_k32() {
    let pts = random_points(&mut rng(2), 200, 0.0, 1.0);
    let cloud = PointCloud::new(pts.clone()).unwrap();
    assert_eq!(fps(&cloud, 32).unwrap(), fps_oracle(&pts, 32));
}

#[test]
fn fps_on_a_lattice_uses_tie_rules() {
    // a 4x4x2 lattice has many equal distances
    let mut pts = Vec::new();
    for z in 0..2 {
        for y in 0..4 {
            for x in 0..4 {
                pts.push([x as f32, y as f32, z as f32]);
            }
        }
    }
    let cloud = PointCloud::new(pts.clone()).unwrap();
    assert_eq!(fps(&cloud, 12).unwrap(), fps_oracle(&pts, 12));
}

#[test]
fn fps_square_corners_hand_trace() {
    let pts = vec![[1., 1., 0.], [0., 1., 0.], [0., 0., 0.], [1., 0., 0.]];
    let cloud = PointCloud::new(pts).unwrap();
    assert_eq!(fps(&cloud, 2).unwrap(), vec![2, 0]);
}

#[test]
fn knn_matches_full_sort() {
    let mut r = rng(3);
    let pts = random_points(&mut r, 500, -1.0, 1.0);
    let cloud = PointCloud::new(pts.clone()).unwrap();
    for q in random_points(&mut r, 20, -1.2, 1.2) {
        assert_eq!(knn(&cloud, &q, 16).unwrap(), knn_oracle(&pts, &q, 16));
    }
}

#[test]
fn knn_query_in_cloud_and_on_a_line() {
    let mut r = rng(4);
    let cloud = random_cloud(&mut r, 50);
    assert_eq!(knn(&cloud, &cloud.points()[17], 1).unwrap(), vec![17]);
    let line = PointCloud::new((0..4).map(|i| [i as f32, 0., 0.]).collect()).unwrap();
    assert_eq!(knn(&line, &[0.6, 0., 0.], 2).unwrap(), vec![1, 0]);
    assert!(matches!(knn(&line, &[0.; 3], 5), Err(GeomError::BadCount { .. })));
    assert!(matches!(knn(&line, &[0.; 3], 0), Err(GeomError::BadCount { .. })));
}

#[test]
fn chamfer_128_point_clouds_match_double_loop() {
    let mut r = rng(5);
    for _ in 0..10 {
        let a = random_cloud(&mut r, 128);
        let b = random_cloud(&mut r, 128);
        let got = chamfer_l2(&a, &b).unwrap();
        assert!(rel_close(got, chamfer_oracle(a.points(), b.points()), 1e-6));
    }
}

#[test]
fn chamfer_simple_values() {
    let x = PointCloud::new(vec![[0., 0., 0.]]).unwrap();
    let y = PointCloud::new(vec![[1., 0., 0.]]).unwrap();
    assert_eq!(chamfer_l2(&x, &y).unwrap(), 2.0);
    assert_eq!(chamfer_l2(&x, &x).unwrap(), 0.0);
    assert!(matches!(chamfer_l2(&x, &PointCloud::empty()), Err(GeomError::EmptyCloud)));
}

#[test]
fn norm_params_match_direct_recomputation() {
    let pts = random_points(&mut rng(6), 64, 0.0, 1.0);
    let np = compute_norm_params(&PointCloud::new(pts.clone()).unwrap()).unwrap();
    let mean: Vec<f64> = (0..3).map(|k| pts.iter().map(|p| p[k] as f64).sum::<f64>() / 64.0).collect();
    let scale = pts
        .iter()
        .map(|p| (0..3).map(|k| (p[k] as f64 - mean[k]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    for k in 0..3 {
        assert!((np.offset[k] - mean[k]).abs() < 1e-6);
    }
    assert!((np.scale - scale).abs() < 1e-6);
}

#[test]
fn normalize_two_points_and_zero_cloud() {
    let c = PointCloud::new(vec![[1., 0., 0.], [3., 0., 0.]]).unwrap();
    let np = compute_norm_params(&c).unwrap();
    assert_eq!(normalize(&c, &np).points(), &[[-1., 0., 0.], [1., 0., 0.]]);
    let zero = PointCloud::new(vec![[0.; 3]]).unwrap();
    let t = geom::NormParams {
        offset: [0.5, -2.0, 3.0],
        scale: 4.0,
    };
    assert_eq!(denormalize(&zero, &t).points(), &[[0.5, -2.0, 3.0]]);
}

fn cloud_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<[f32; 3]>> {
    prop::collection::vec(prop::array::uniform3(-5.0f32..5.0), min..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric(a in cloud_strategy(1, 40), b in cloud_strategy(1, 40)) {
        let a = PointCloud::new(a).unwrap();
        let b = PointCloud::new(b).unwrap();
        prop_assert_eq!(chamfer_l2(&a, &b).unwrap(), chamfer_l2(&b, &a).unwrap());
    }

    #[test]
    fn chamfer_scales_quadratically(a in cloud_strategy(1, 30), b in cloud_strategy(1, 30)) {
        let base = chamfer_l2(&PointCloud::new(a.clone()).unwrap(), &PointCloud::new(b.clone()).unwrap()).unwrap();
        for s in [0.5f32, 2.0, 10.0] {
            let scale = |v: &Vec<[f32; 3]>| PointCloud::new(v.iter().map(|p| p.map(|c| c * s)).collect()).unwrap();
            let got = chamfer_l2(&scale(&a), &scale(&b)).unwrap();
            let want = (s as f64).powi(2) * base;
            prop_assert!((got - want).abs() <= 1e-6 * want.max(1e-12), "s={} got={} want={}", s, got, want);
        }
    }

    #[test]
    fn fps_picks_the_same_coordinates_after_permutation(pts in cloud_strategy(2, 60), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let k = pts.len() / 2 + 1;
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.shuffle(&mut rng(seed));
        let a = PointCloud::new(pts.clone()).unwrap();
        let b = a.select(&perm);
        let pa = a.select(&fps(&a, k).unwrap());
        let pb = b.select(&fps(&b, k).unwrap());
        prop_assert_eq!(pa.points(), pb.points());
    }

    #[test]
    fn fps_and_knn_agree_with_oracles(pts in cloud_strategy(1, 50), q in prop::array::uniform3(-5.0f32..5.0)) {
        let c = PointCloud::new(pts.clone()).unwrap();
        let k = pts.len().div_ceil(3);
        prop_assert_eq!(fps(&c, k).unwrap(), fps_oracle(&pts, k));
        prop_assert_eq!(knn(&c, &q, k).unwrap(), knn_oracle(&pts, &q, k));
    }

    #[test]
    fn normalization_contract(pts in cloud_strategy(2, 80)) {
        let c = PointCloud::new(pts).unwrap();
        let Ok(np) = compute_norm_params(&c) else { return Ok(()); };
        let n = normalize(&c, &np);
        let cen = n.centroid();
        prop_assert!(cen.iter().all(|v| v.abs() < 1e-6), "{:?}", cen);
        prop_assert!((n.max_norm() - 1.0).abs() < 1e-6);
        let back = denormalize(&n, &np);
        for (p, q) in back.points().iter().zip(c.points()) {
            prop_assert!((0..3).all(|k| (p[k] - q[k]).abs() <= 1e-5));
        }
    }

    #[test]
    fn shared_parameters_scale_distances_exactly(pp in cloud_strategy(2, 30), gt in cloud_strategy(2, 30)) {
        let pp = PointCloud::new(pp).unwrap();
        let Ok(np) = compute_norm_params(&pp) else { return Ok(()); };
        let gt = PointCloud::new(gt).unwrap();
        let all = pp.concat(&gt);
        let n = normalize(&all, &np);
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                let before = sq(&all.points()[i], &all.points()[j]).sqrt() / np.scale;
                let after = sq(&n.points()[i], &n.points()[j]).sqrt();
                prop_assert!((before - after).abs() <= 1e-5 * before.max(1.0));
            }
        }
    }
}
