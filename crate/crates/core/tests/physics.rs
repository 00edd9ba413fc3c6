use latentwave::data::gen_phantoms;
use latentwave::physics::acoustic::first_break;
use latentwave::physics::radon::{make_geometry, GeometryKind, ImageGrid, LinearProjector, RayProjector};
use latentwave::physics::{acoustic_simulate, AcousticConfig, Survey, VelocityMap};
use latentwave::sirt::{sirt, SirtConfig};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn homogeneous_gather_is_mirror_symmetric() {
    let m = VelocityMap::homogeneous(40, 61, 10.0, 2500.0).unwrap();
    let cfg = AcousticConfig::new(1e-3, 400, 2);
    let survey = Survey { sources: vec![(0, 30)], receivers: (0..61).map(|x| (0, x)).collect() };
    let g = acoustic_simulate(&m, &survey, &cfg).unwrap();
    let peak = g.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in 1..=30 {
        let (l, r) = (g.trace(0, 30 - k), g.trace(0, 30 + k));
        for (a, b) in l.iter().zip(&r) {
            assert!((a - b).abs() <= 1e-12 * peak, "offset {k}");
        }
    }
}

#[test]
fn first_breaks_move_out_at_the_medium_velocity() {
    let c = 2000.0;
    let m = VelocityMap::homogeneous(50, 70, 10.0, c).unwrap();
    let dt = 1e-3;
    let cfg = AcousticConfig::new(dt, 700, 1);
    let survey = Survey { sources: vec![(0, 5)], receivers: vec![(0, 25), (0, 45), (0, 65)] };
    let g = acoustic_simulate(&m, &survey, &cfg).unwrap();
    let picks: Vec<f64> = (0..3).map(|r| first_break(&g.trace(0, r), 0.05).unwrap() as f64 * dt).collect();
    // 200 m of extra offset per receiver
    for w in picks.windows(2) {
        let slowness = (w[1] - w[0]) / 200.0;
        assert!((slowness * c - 1.0).abs() < 0.05, "{picks:?}");
    }
}

#[test]
fn every_recorded_sample_is_finite_near_the_cfl_limit() {
    let m = VelocityMap::homogeneous(30, 30, 10.0, 4000.0).unwrap();
    let dt = 0.99 * AcousticConfig::max_stable_dt(&m);
    let g = acoustic_simulate(&m, &Survey::surface(2, 30).unwrap(), &AcousticConfig::new(dt, 2000, 4)).unwrap();
    assert!(g.data.iter().all(|v| v.is_finite() && v.abs() < 1.0));
}

#[test]
fn uniform_image_gives_axis_aligned_path_lengths() {
    let n = 32;
    let grid = ImageGrid::new(n, 1.0).unwrap();
    let geom = make_geometry(GeometryKind::Parallel { views: 2, detectors: 2 * n }, grid).unwrap();
    let op = RayProjector::new(&geom);
    let s = op.forward(&vec![1.0; n * n]).unwrap();
    // views 0 and 90 degrees: rays inside the square cross it fully
    for (k, r) in geom.rays.iter().enumerate() {
        let off = if k < 2 * n { r.source.0 } else { r.source.1 };
        let expect = if off.abs() < grid.half_width() { n as f64 } else { 0.0 };
        assert!((s[k] - expect).abs() < 1e-9, "ray {k}: {} vs {expect}", s[k]);
    }
}

#[test]
fn sirt_recovers_a_phantom_from_fan_data() {
    let grid = ImageGrid::new(32, 1.0).unwrap();
    let phantom = gen_phantoms(1, 3, &grid).unwrap().remove(0);
    let geom = make_geometry(GeometryKind::Fan { views: 90, detectors: 64, radius: 3.0 }, grid).unwrap();
    let op = RayProjector::new(&geom);
    let sino = op.forward(&phantom).unwrap();
    let res = sirt(&op, &sino, &SirtConfig { iterations: 300, ..SirtConfig::default() }).unwrap();
    assert!(res.residuals.windows(2).all(|w| w[1] <= w[0]));
    let err: f64 = res.image.iter().zip(&phantom).map(|(a, b)| (a - b).abs()).sum::<f64>() / phantom.len() as f64;
    assert!(err < 0.05, "mean abs error {err}");
}

fn geometry() -> impl Strategy<Value = GeometryKind> {
    prop_oneof![
        (1usize..12, 1usize..20).prop_map(|(views, detectors)| GeometryKind::Parallel { views, detectors }),
        (1usize..12, 1usize..20, 1.5f64..4.0).prop_map(|(views, detectors, radius)| GeometryKind::Fan { views, detectors, radius }),
        (1usize..5, 1usize..12).prop_map(|(per_array, detectors)| GeometryKind::TriArray { arrays: 3, per_array, detectors }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_is_adjoint(kind in geometry(), n in 2usize..20, seed in any::<u64>()) {
        let grid = ImageGrid::new(n, 0.5).unwrap();
        let geom = make_geometry(kind, grid).unwrap();
        let op = RayProjector::new(&geom);
        let x: Vec<f64> = (0..n * n).map(|i| ((i as u64 ^ seed) % 97) as f64 / 97.0 - 0.5).collect();
        let y: Vec<f64> = (0..op.n_rays()).map(|i| ((i as u64).wrapping_mul(31) ^ seed.rotate_left(7)) as f64 % 13.0 - 6.0).collect();
        let lhs = dot(&op.forward(&x).unwrap(), &y);
        let rhs = dot(&x, &op.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn projections_of_nonnegative_images_are_nonnegative(kind in geometry(), n in 2usize..16) {
        let grid = ImageGrid::new(n, 1.0).unwrap();
        let geom = make_geometry(kind, grid).unwrap();
        let op = RayProjector::new(&geom);
        let sums = op.row_sums();
        let s = op.forward(&vec![1.0; n * n]).unwrap();
        for (a, b) in s.iter().zip(&sums) {
            prop_assert!(*a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b));
        }
    }
}
