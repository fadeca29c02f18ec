use atlas_core::collision::normal_ball_prob;
use atlas_core::discrete::{plan_budgeted, Vertex};
use atlas_core::geometry::planar_pose;
use atlas_core::motion::arc_state;
use atlas_core::{CompressedFeature, ControlInput, RobotState, SparseGraph, SubmapStore};
use nalgebra::Point3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

fn graph_strategy() -> impl Strategy<Value = (SparseGraph, f64)> {
    (2usize..9).prop_flat_map(|n| {
        let utilities = prop::collection::vec(0.0..10.0f64, n);
        let edges = prop::collection::vec(prop::option::weighted(0.5, 0.1..5.0f64), n * (n - 1) / 2);
        (utilities, edges, 0.0..15.0f64).prop_map(move |(u, e, budget)| {
            let vertices = u
                .iter()
                .enumerate()
                .map(|(i, &utility)| Vertex {
                    position: Point3::new(i as f64, 0.0, 0.0),
                    utility,
                    partition: i as u64,
                })
                .collect();
            let mut g = SparseGraph::new(vertices);
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if let Some(w) = e[k] {
                        g.add_edge(i, j, w);
                    }
                    k += 1;
                }
            }
            (g, budget)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ball_probability_is_a_monotone_probability(a in 0.0..8.0f64, da in 0.0..2.0f64, b in 0.01..5.0f64, db in 0.0..2.0f64) {
        let p = normal_ball_prob(a, b);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(normal_ball_prob(a + da, b) <= p + 1e-12);
        prop_assert!(normal_ball_prob(a, b + db) >= p - 1e-12);
    }

    #[test]
    fn project_inverts_lift(c in prop::collection::vec(-3.0..3.0f64, 6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let codec = common::random_codec(&mut rng, 40, 6);
        let c = CompressedFeature::new(c).unwrap();
        let back = codec.project(&codec.lift(&c).unwrap()).unwrap();
        for (x, y) in back.as_slice().iter().zip(c.as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn budgeted_walks_are_valid((g, budget) in graph_strategy(), start in 0usize..9) {
        let start = start % g.len();
        let p = plan_budgeted(&g, start, budget).unwrap();
        prop_assert_eq!(p.vertices[0], start);
        let cost = g.walk_cost(&p.vertices);
        prop_assert!(cost.is_some(), "walk uses a missing edge: {:?}", p.vertices);
        prop_assert!(cost.unwrap() <= budget);
        prop_assert!((cost.unwrap() - p.total_cost).abs() < 1e-9);
        prop_assert!((g.walk_utility(&p.vertices) - p.total_utility).abs() < 1e-9);
        prop_assert!(p.total_utility >= g.vertices[start].utility);
        let more = plan_budgeted(&g, start, budget + 1.0).unwrap();
        prop_assert!(more.total_utility >= p.total_utility - 1e-9);
    }

    #[test]
    fn store_bytes_round_trip(
        anchors in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -3.0..3.0f64), 1..5),
        coords in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, 0.0..2.0f64, 0.01..0.5f64), 0..40),
    ) {
        let mut store = SubmapStore::new(1.0, 10.0);
        for (i, &(x, y, t)) in anchors.iter().enumerate() {
            let id = store.ensure_submap(&planar_pose(x, y, 0.0, t));
            let points: Vec<_> = coords
                .iter()
                .skip(i)
                .step_by(anchors.len())
                .map(|&(px, py, pz, s)| common::point(Point3::new(x + px, y + py, pz), s, vec![px, py, pz]))
                .collect();
            store.insert_points(id, &points).unwrap();
        }
        store.refresh_loaded(&Point3::origin()).unwrap();
        let bytes = store.to_bytes().unwrap();
        let back = SubmapStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.len(), store.len());
        prop_assert_eq!(back.global_count(), store.global_count());
    }

    #[test]
    fn arcs_compose(
        x in -5.0..5.0f64, y in -5.0..5.0f64, th in -3.1..3.1f64,
        v in -1.0..1.0f64, omega in -1.0..1.0f64,
        t1 in 0.0..2.0f64, t2 in 0.0..2.0f64,
    ) {
        let x0 = RobotState::new(x, y, th);
        let u = ControlInput { v, omega };
        let two = arc_state(&arc_state(&x0, &u, t1), &u, t2);
        let one = arc_state(&x0, &u, t1 + t2);
        prop_assert!((two.x - one.x).abs() < 1e-9);
        prop_assert!((two.y - one.y).abs() < 1e-9);
        prop_assert!(common::angle_diff(two.theta, one.theta) < 1e-9);
    }
}
