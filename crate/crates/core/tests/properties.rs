use groundmesh::depth::{backproject, median_scale_align, lower_median, BinaryMask, CameraIntrinsics, DepthImage};
use groundmesh::fpfh::{compute_fpfh, mutual_match};
use groundmesh::metrics::{chamfer, fscore};
use groundmesh::normals::estimate_normals;
use groundmesh::registration::{fit_rigid, icp_refine_traced, ransac_register, IcpConfig, RansacConfig};
use groundmesh::sdf::{dense_decode, hierarchical_decode, make_sphere, make_torus, marching_cubes, HierarchicalConfig, SdfOracle};
use groundmesh::spatial::NeighborIndex;
use groundmesh::{Aabb, Mat3, PointCloud, RigidScaleTransform, Transformable, Vec3};
use nalgebra::{Rotation3, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Mat3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-zero quaternion", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| {
            *UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
                .to_rotation_matrix()
                .matrix()
        })
}

fn rigid() -> impl Strategy<Value = RigidScaleTransform> {
    (rotation(), vec3(2.0)).prop_map(|(r, t)| RigidScaleTransform::new(1.0, r, t).unwrap())
}

fn similarity() -> impl Strategy<Value = RigidScaleTransform> {
    (0.1f64..10.0, rotation(), vec3(2.0)).prop_map(|(s, r, t)| RigidScaleTransform::new(s, r, t).unwrap())
}

/// Points on a gently curved sheet, so that normals are well defined.
fn sheet(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let (x, y) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            Vec3::new(x, y, 0.8 * x * x - 1.3 * y * y + 0.4 * x * y)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn rotation_angle(a: &Mat3, b: &Mat3) -> f64 {
    (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d2, i)| (i, d2.sqrt())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_and_radius_match_brute_force(
        seed in any::<u64>(),
        n in 1usize..400,
        k in 1usize..20,
        r in 0.01f64..0.8,
        grid in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Grid-snapped coordinates produce many exact distance ties.
        let coord = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if grid { (v * 4.0).round() / 4.0 } else { v }
        };
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng))).collect();
        let index = NeighborIndex::from_points(&pts).unwrap();
        let k = k.min(n);
        for _ in 0..10 {
            let q = Vec3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng));
            let got = index.knn(&q, k).unwrap();
            let want = brute_knn(&pts, &q, k);
            prop_assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), want.iter().map(|x| x.0).collect::<Vec<_>>());
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.1 - w.1).abs() <= 1e-12);
            }
            let radius = index.radius_search(&q, r).unwrap();
            let want_r: Vec<usize> = brute_knn(&pts, &q, n).into_iter().filter(|&(_, d)| d <= r).map(|(i, _)| i).collect();
            prop_assert_eq!(radius.iter().map(|x| x.0).collect::<Vec<_>>(), want_r);
            let nearest = index.nearest(&q);
            prop_assert_eq!(nearest.0, want[0].0);
            match index.nearest_within(&q, r) {
                Some((i, _)) => prop_assert_eq!(i, want[0].0),
                None => prop_assert!(want[0].1 > r),
            }
        }
    }

    #[test]
    fn normals_are_unit_and_face_the_viewpoint(seed in any::<u64>(), view in vec3(1.0), tilt in rigid()) {
        let cloud = sheet(seed, 300).transformed(&tilt);
        let viewpoint = view * 3.0;
        let est = estimate_normals(&cloud, 12, &viewpoint).unwrap();
        let normals = est.cloud.normals().unwrap();
        for (i, (p, n)) in cloud.points().iter().zip(normals).enumerate() {
            prop_assert!((n.norm() - 1.0).abs() < 1e-6);
            if !est.low_confidence[i] {
                prop_assert!(n.dot(&(viewpoint - p)) >= 0.0);
            }
        }
    }

    #[test]
    fn transforms_scale_distances(t in similarity(), p in vec3(5.0), q in vec3(5.0)) {
        let got = (t.apply_point(&p) - t.apply_point(&q)).norm();
        let want = t.scale() * (p - q).norm();
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1e-12));
        let r = t.rotation();
        prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        let back = t.inverse().apply_point(&t.apply_point(&p));
        prop_assert!((back - p).norm() < 1e-9 * (1.0 + p.norm()));
    }

    #[test]
    fn depth_alignment_is_scale_equivariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(2..24), rng.random_range(2..24));
        let mut raster = |zero: f64| -> Vec<f64> {
            (0..w * h).map(|_| if rng.random::<f64>() < zero { 0.0 } else { rng.random_range(0.2..5.0) }).collect()
        };
        let sensor = DepthImage::new(w, h, raster(0.2)).unwrap();
        let pred_vals = raster(0.1);
        let mask_vals: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < 0.7).collect();
        let mask = BinaryMask::new(w, h, mask_vals.clone()).unwrap();
        let pred = DepthImage::new(w, h, pred_vals.clone()).unwrap();
        let Ok(a) = median_scale_align(&sensor, &pred, &mask) else { return Ok(()); };

        let scaled = DepthImage::new(w, h, pred_vals.iter().map(|v| c * v).collect()).unwrap();
        let b = median_scale_align(&sensor, &scaled, &mask).unwrap();
        prop_assert!((b.scale - a.scale / c).abs() <= 1e-12 * a.scale / c);
        for (x, y) in a.metric.values().iter().zip(b.metric.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }

        let joint = |img: &DepthImage| -> Vec<f64> {
            (0..w * h)
                .filter(|&i| mask_vals[i] && sensor.values()[i] > 0.0 && pred_vals[i] > 0.0)
                .map(|i| img.values()[i])
                .collect()
        };
        let m_metric = lower_median(&mut joint(&a.metric)).unwrap();
        let m_sensor = lower_median(&mut joint(&sensor)).unwrap();
        prop_assert!((m_metric - m_sensor).abs() <= 1e-12 * m_sensor);
    }

    #[test]
    fn backprojection_reprojects_to_pixels(
        fx in 100.0f64..900.0, fy in 100.0f64..900.0,
        cx in 0.0f64..64.0, cy in 0.0f64..48.0,
        seed in any::<u64>(),
    ) {
        let (w, h) = (64, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::new(fx, fy, cx, cy, w, h).unwrap();
        let vals: Vec<f64> = (0..w * h).map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.1..10.0) }).collect();
        let depth = DepthImage::new(w, h, vals.clone()).unwrap();
        let cloud = backproject(&depth, &intr, &BinaryMask::filled(w, h, true)).unwrap();
        let pixels: Vec<usize> = (0..w * h).filter(|&i| vals[i] > 0.0).collect();
        prop_assert_eq!(cloud.len(), pixels.len());
        for (p, &i) in cloud.points().iter().zip(&pixels) {
            let (u, v) = intr.project(p);
            prop_assert!((u - (i % w) as f64).abs() < 1e-9);
            prop_assert!((v - (i / w) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn fpfh_is_rigidly_invariant(seed in any::<u64>(), t in rigid()) {
        let base = sheet(seed, 250);
        let cloud = estimate_normals(&base, 10, &Vec3::new(0.0, 0.0, 1.0)).unwrap().cloud;
        let moved = cloud.transformed(&t);
        let a = compute_fpfh(&cloud, 0.05).unwrap();
        let b = compute_fpfh(&moved, 0.05).unwrap();
        let mut jitter = 0usize;
        for (da, db) in a.descriptors.iter().zip(&b.descriptors) {
            let worst = da.bins().iter().zip(db.bins()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if worst > 1e-6 {
                jitter += 1;
            }
        }
        // Values that sit on a bin edge may flip under rounding; these are rare.
        prop_assert!(jitter * 100 <= a.len(), "{} of {} descriptors moved", jitter, a.len());
    }

    #[test]
    fn mutual_matching_is_symmetric_and_injective(seed_a in any::<u64>(), seed_b in any::<u64>()) {
        let vp = Vec3::new(0.0, 0.0, 1.0);
        let a = estimate_normals(&sheet(seed_a, 150), 10, &vp).unwrap().cloud;
        let b = estimate_normals(&sheet(seed_b, 120), 10, &vp).unwrap().cloud;
        let fa = compute_fpfh(&a, 0.06).unwrap();
        let fb = compute_fpfh(&b, 0.06).unwrap();
        let ab = mutual_match(&fa, &fb);
        let ba = mutual_match(&fb, &fa);
        let mut fwd = ab.pairs.clone();
        let mut rev: Vec<(usize, usize)> = ba.pairs.iter().map(|&(i, j)| (j, i)).collect();
        fwd.sort_unstable();
        rev.sort_unstable();
        prop_assert_eq!(&fwd, &rev);
        let mut src: Vec<usize> = fwd.iter().map(|p| p.0).collect();
        let mut dst: Vec<usize> = fwd.iter().map(|p| p.1).collect();
        src.dedup();
        dst.sort_unstable();
        dst.dedup();
        prop_assert_eq!(src.len(), fwd.len());
        prop_assert_eq!(dst.len(), fwd.len());
    }

    #[test]
    fn procrustes_beats_random_rotations(seed in any::<u64>(), n in 3usize..30, t in rigid(), noise in 0.0f64..0.05) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let ys: Vec<Vec3> = xs.iter().map(|x| t.apply_point(x) + Vec3::new(rng.random_range(-noise..noise), rng.random_range(-noise..noise), rng.random_range(-noise..noise))).collect();
        let Ok(fit) = fit_rigid(&xs, &ys) else { return Ok(()); };
        prop_assert!((fit.rotation.determinant() - 1.0).abs() < 1e-9);
        let objective = |r: &Mat3| -> f64 {
            let cx: Vec3 = xs.iter().sum::<Vec3>() / n as f64;
            let cy: Vec3 = ys.iter().sum::<Vec3>() / n as f64;
            let tr = cy - r * cx;
            xs.iter().zip(&ys).map(|(x, y)| (r * x + tr - y).norm_squared()).sum()
        };
        let best = objective(&fit.rotation);
        for _ in 0..500 {
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0),
            ));
            prop_assert!(best <= objective(q.to_rotation_matrix().matrix()) + 1e-9);
        }
    }

    #[test]
    fn procrustes_is_rotation_equivariant(seed in any::<u64>(), t in rigid(), q in rotation()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec3> = (0..12).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let ys: Vec<Vec3> = xs.iter().map(|x| t.apply_point(x) + Vec3::new(rng.random_range(-0.01..0.01), 0.0, 0.0)).collect();
        let a = fit_rigid(&xs, &ys).unwrap();
        let qx: Vec<Vec3> = xs.iter().map(|x| q * x).collect();
        let qy: Vec<Vec3> = ys.iter().map(|y| q * y).collect();
        let b = fit_rigid(&qx, &qy).unwrap();
        prop_assert!((b.rotation - q * a.rotation * q.transpose()).norm() < 1e-9);
        prop_assert!((b.translation - q * a.translation).norm() < 1e-9);
    }

    #[test]
    fn mirrored_inputs_still_give_proper_rotations(seed in any::<u64>(), n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let ys: Vec<Vec3> = xs.iter().map(|x| Vec3::new(-x.x, x.y, x.z)).collect();
        if let Ok(fit) = fit_rigid(&xs, &ys) {
            prop_assert!((fit.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn icp_never_increases_rmse_on_fixed_pairs(seed in any::<u64>(), angle in -0.2f64..0.2, shift in vec3(0.01)) {
        let target = sheet(seed, 400);
        let init = RigidScaleTransform::new(1.0, *Rotation3::from_euler_angles(angle, -angle / 2.0, angle / 3.0).matrix(), shift).unwrap();
        let trace = icp_refine_traced(&target, &target, &init, &IcpConfig::new(0.05)).unwrap();
        for s in &trace.steps {
            prop_assert!(s.rmse_after <= s.rmse_before);
        }
        if trace.result.converged {
            prop_assert!(trace.steps.last().unwrap().rmse_after <= trace.steps[0].rmse_before);
        }
    }

    #[test]
    fn ransac_is_deterministic(seed in any::<u64>(), t in rigid()) {
        let src = sheet(seed, 120);
        let dst = src.transformed(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        // Two thirds true correspondences, the rest random.
        let pairs: Vec<(usize, usize)> = (0..120)
            .map(|i| if i % 3 == 0 { (i, rng.random_range(0..120)) } else { (i, i) })
            .collect();
        let corr = groundmesh::fpfh::CorrespondenceSet { feature_distances: vec![0.0; pairs.len()], pairs };
        let cfg = RansacConfig { seed, ..RansacConfig::new(1e-3) };
        let a = ransac_register(&corr, &src, &dst, &cfg).unwrap();
        let b = ransac_register(&corr, &src, &dst, &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(rotation_angle(a.transform.rotation(), t.rotation()) < 1e-6);
    }

    #[test]
    fn chamfer_and_fscore_properties(seed in any::<u64>(), t in rigid(), tau in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = |n: usize| {
            PointCloud::new((0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).unwrap()
        };
        let (a, b) = (cloud(80), cloud(60));
        prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        let (ta, tb) = (a.transformed(&t), b.transformed(&t));
        prop_assert!((chamfer(&a, &b).unwrap() - chamfer(&ta, &tb).unwrap()).abs() < 1e-9);
        let f = fscore(&a, &b, tau).unwrap();
        let tf = fscore(&ta, &tb, tau).unwrap();
        prop_assert!((f.fscore - tf.fscore).abs() < 1e-9);
        let smaller = fscore(&a, &b, tau * 0.7).unwrap();
        prop_assert!(smaller.fscore <= f.fscore);
        prop_assert!(smaller.precision <= f.precision && smaller.recall <= f.recall);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn hierarchical_values_agree_with_dense(
        r in 0.2f64..0.45,
        center in vec3(0.1),
        torus in any::<bool>(),
        coarse in prop::sample::select(vec![4usize, 8]),
    ) {
        let oracle = if torus {
            make_torus(center, r, r / 3.0).unwrap()
        } else {
            make_sphere(center, r).unwrap()
        };
        let bounds = Aabb::cube(0.7);
        let res = 64;
        let (dense, _) = dense_decode(&oracle, res, &bounds).unwrap();
        let before = oracle.query_count();
        let cfg = HierarchicalConfig { coarse_resolution: Some(coarse), ..HierarchicalConfig::default() };
        let (hier, stats) = hierarchical_decode(&oracle, res, &bounds, &cfg).unwrap();
        prop_assert_eq!(stats.queries_issued, oracle.query_count() - before);
        for (p, v) in hier.evaluated_points() {
            prop_assert_eq!(v, dense.value(p));
        }
    }

    #[test]
    fn marching_cubes_vertices_sit_on_sign_changing_edges(r in 0.2f64..0.45, center in vec3(0.1)) {
        let oracle = make_sphere(center, r).unwrap();
        let bounds = Aabb::cube(0.6);
        let res = 24;
        let (grid, _) = dense_decode(&oracle, res, &bounds).unwrap();
        let mesh = marching_cubes(&grid, 0.0);
        prop_assert!(!mesh.is_empty());
        let h = grid.voxel_size();
        for v in mesh.vertices() {
            let rel = (v - bounds.min).component_div(&h);
            let on_lattice: Vec<bool> = (0..3).map(|a| (rel[a] - rel[a].round()).abs() < 1e-9).collect();
            let free: Vec<usize> = (0..3).filter(|&a| !on_lattice[a]).collect();
            prop_assert!(free.len() <= 1, "vertex {:?} is not on a lattice edge", v);
            let Some(&axis) = free.first() else { continue };
            let mut lo = [0usize; 3];
            for a in 0..3 {
                lo[a] = if a == axis { rel[a].floor() as usize } else { rel[a].round() as usize };
            }
            let mut hi = lo;
            hi[axis] += 1;
            let (f0, f1) = (grid.value(lo), grid.value(hi));
            prop_assert!(f0.signum() != f1.signum() || f0 == 0.0 || f1 == 0.0);
            let frac = rel[axis] - lo[axis] as f64;
            prop_assert!((f0 + frac * (f1 - f0)).abs() < 1e-9);
        }
    }
}
