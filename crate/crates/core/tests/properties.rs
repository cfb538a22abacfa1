use std::path::Path;

use hodgereg::graph::ViewingGraph;
use hodgereg::hodge::{solve_exact, LieOneForm};
use hodgereg::io::{format_pose_graph, format_tum, parse_pose_graph, parse_tum};
use hodgereg::pipeline::Trajectory;
use hodgereg::se3::{exp_rot, log_rot, pose_exp, pose_log, Chart, Pose, Rotation3, Twist};
use hodgereg::surface::{embed, triangulate, EmbeddingOrder};
use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

const LIMIT: f64 = std::f64::consts::PI - 0.1;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    [-r..r, -r..r, -r..r].prop_map(|[a, b, c]| Vector3::new(a, b, c))
}

fn rotation_vector() -> impl Strategy<Value = Vector3<f64>> {
    (vec3(1.0), 0.0..LIMIT).prop_filter_map("zero axis", |(v, angle)| {
        (v.norm() > 1e-3).then(|| v.normalize() * angle)
    })
}

fn chart() -> impl Strategy<Value = Chart> {
    prop_oneof![Just(Chart::Se3Log), Just(Chart::So3PlusT)]
}

fn twist() -> impl Strategy<Value = Twist> {
    (rotation_vector(), vec3(3.0), chart()).prop_map(|(phi, t, c)| Twist::new(phi, t, c))
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation_vector(), vec3(3.0)).prop_map(|(phi, t)| Pose::new(exp_rot(&phi), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exp_log_round_trip(x in twist()) {
        let back = pose_log(&pose_exp(&x), x.chart).unwrap();
        prop_assert!((back - x).norm_inf() < 1e-9);
    }

    #[test]
    fn log_exp_round_trip(p in pose(), c in chart()) {
        let q = pose_exp(&pose_log(&p, c).unwrap());
        prop_assert!((q.to_matrix4() - p.to_matrix4()).amax() < 1e-12);
    }

    #[test]
    fn se3_log_is_antisymmetric(p in pose()) {
        let a = pose_log(&p, Chart::Se3Log).unwrap();
        let b = pose_log(&p.inverse(), Chart::Se3Log).unwrap();
        prop_assert!((a + b).norm_inf() < 1e-12);
    }

    #[test]
    fn rotations_stay_orthonormal(phi in rotation_vector()) {
        let r = exp_rot(&phi);
        let m = r.matrix();
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).amax() < 1e-13);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-13);
        prop_assert!((log_rot(&r).unwrap() - phi).amax() < 1e-9);
    }

    #[test]
    fn quaternion_order_is_xyzw(q in [-1.0..1.0f64, -1.0..1.0, -1.0..1.0, -1.0..1.0]) {
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-2);
        let [x, y, z, w] = q.map(|v| v / norm);
        let r = Rotation3::from_quaternion(x, y, z, w).unwrap();
        let reference = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        prop_assert!((r.matrix() - reference.to_rotation_matrix().matrix()).amax() < 1e-12);
        let [a, b, c, d] = r.to_quaternion();
        let back = Rotation3::from_quaternion(a, b, c, d).unwrap();
        prop_assert!((back.matrix() - r.matrix()).amax() < 1e-12);
    }

    #[test]
    fn pose_graph_text_round_trip(poses in prop::collection::vec(pose(), 3..8)) {
        let n = poses.len();
        let t = Trajectory { poses, iteration: 0 };
        let mut g = ViewingGraph::new(n);
        for i in 0..n {
            g.add_edge(i, (i + 1) % n, t.relative(i, (i + 1) % n)).unwrap();
        }
        let back = parse_pose_graph(&format_pose_graph(&g, Some(&t)), Path::new("p.g2o")).unwrap();
        for (a, b) in g.edges().iter().zip(back.graph.edges()) {
            prop_assert_eq!((a.i, a.j), (b.i, b.j));
            prop_assert!((a.measurement.to_matrix4() - b.measurement.to_matrix4()).amax() < 1e-12);
        }
        let tum = parse_tum(&format_tum(&t), Path::new("p.tum")).unwrap();
        for (a, b) in t.poses.iter().zip(back.poses.unwrap().poses.iter().chain(&tum.poses)) {
            prop_assert!((a.to_matrix4() - b.to_matrix4()).amax() < 1e-12);
        }
    }

    #[test]
    fn split_reconstructs_and_is_exact(
        n in 4usize..12,
        chords in prop::collection::vec((0usize..12, 0usize..12), 0..20),
        seed in any::<u64>(),
    ) {
        let mut g = ViewingGraph::new(n);
        for k in 1..n {
            g.add_edge(k - 1, k, Pose::identity()).unwrap();
        }
        for (a, b) in chords {
            let (a, b) = (a % n, b % n);
            if a != b && !g.contains_edge(a, b) {
                g.add_edge(a, b, Pose::identity()).unwrap();
            }
        }
        let s = triangulate(&embed(&g, EmbeddingOrder::SeededRandom(seed)).unwrap()).unwrap();
        let mut omega = LieOneForm::new(Chart::Se3Log);
        for (k, (i, j)) in s.vertex_pairs().into_iter().enumerate() {
            let v = Vector6::from_fn(|r, _| (((seed as usize) ^ (k * 31 + r * 7)) % 17) as f64 / 8.0 - 1.0);
            omega.set(i, j, Twist::from_vector(&v, Chart::Se3Log));
        }
        let split = solve_exact(&s, &omega).unwrap();
        let sum = split.exact.combine(1.0, &split.residual, 1.0);
        prop_assert!(sum.combine(1.0, &omega, -1.0).max_abs() < 1e-12);
        prop_assert!(hodgereg::hodge::exactness_check(&s, &split.exact).unwrap() < 1e-12);
        prop_assert_eq!(split.potential.get(0).norm_inf(), 0.0);
    }
}
