use ambipose_core::geometry::{
    chordal_distance, chordal_l2_mean, geodesic_angle, pose_distance, rotation_from_6d, Pose, PoseDistanceWeights,
    Rotation, Rotation6D,
};
use ambipose_core::model::{kl_to_standard_normal, GaussianLatent};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-3).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn arb_rotation() -> impl Strategy<Value = Rotation> {
    (
        [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
        -std::f64::consts::PI..std::f64::consts::PI,
    )
        .prop_filter_map("axis too short", |(axis, angle)| {
            unit(axis).map(|a| Rotation::from_axis_angle(a, angle))
        })
}

fn arb_6d() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-2.0..2.0f64).prop_filter("blocks must be independent", |r| {
        let (u, v) = ([r[0], r[1], r[2]], [r[3], r[4], r[5]]);
        let c = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        nu > 1e-2 && nv > 1e-2 && c.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-2 * nu * nv
    })
}

fn max_diff(a: &Rotation, b: &Rotation) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    // Uniform on SO(3) from a normalized Gaussian quaternion.
    let q: [f64; 4] = core::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    Rotation::from_quaternion(q.map(|x| x / n))
}

proptest! {
    #[test]
    fn six_d_recovery_is_a_rotation(r in arb_6d()) {
        let rot = rotation_from_6d(&Rotation6D(r)).unwrap();
        prop_assert!(rot.orthonormality_error() <= 1e-6);
        prop_assert!((rot.determinant() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn six_d_recovery_ignores_block_scale(r in arb_6d(), s1 in 0.01..100.0f64, s2 in 0.01..100.0f64) {
        let scaled = [r[0] * s1, r[1] * s1, r[2] * s1, r[3] * s2, r[4] * s2, r[5] * s2];
        let a = rotation_from_6d(&Rotation6D(r)).unwrap();
        let b = rotation_from_6d(&Rotation6D(scaled)).unwrap();
        prop_assert!(max_diff(&a, &b) <= 1e-9);
    }

    #[test]
    fn chordal_matches_geodesic(a in arb_rotation(), b in arb_rotation()) {
        let theta = geodesic_angle(&a, &b);
        prop_assert!((chordal_distance(&a, &b) - 2.0 * 2f64.sqrt() * (theta / 2.0).sin()).abs() <= 1e-9);
    }

    #[test]
    fn pose_distance_is_a_semimetric(
        ra in arb_rotation(), rb in arb_rotation(),
        ta in prop::array::uniform3(-2.0..2.0f64), tb in prop::array::uniform3(-2.0..2.0f64),
        lt in 0.1..10.0f64, lr in 0.1..10.0f64,
    ) {
        let w = PoseDistanceWeights::new(lt, lr).unwrap();
        let (a, b) = (Pose::new(ta, ra), Pose::new(tb, rb));
        let d = pose_distance(&a, &b, &w);
        prop_assert!(d >= 0.0);
        prop_assert!((d - pose_distance(&b, &a, &w)).abs() <= 1e-12);
        prop_assert_eq!(pose_distance(&a, &a, &w), 0.0);
        if ta != tb || max_diff(&ra, &rb) > 1e-6 {
            prop_assert!(d > 0.0);
        }
    }

    #[test]
    fn mean_of_one_rotation_is_itself(r in arb_rotation()) {
        prop_assert!(max_diff(&chordal_l2_mean(&[r]).unwrap(), &r) <= 1e-9);
    }

    #[test]
    fn quaternion_roundtrip(r in arb_rotation()) {
        let q = r.to_quaternion();
        prop_assert!(q[0] >= 0.0);
        prop_assert!(max_diff(&Rotation::from_quaternion(q), &r) <= 1e-12);
    }
}

#[test]
fn chordal_identity_on_ten_thousand_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let expected = 2.0 * 2f64.sqrt() * (geodesic_angle(&a, &b) / 2.0).sin();
        assert!((chordal_distance(&a, &b) - expected).abs() <= 1e-9);
    }
}

/// Yaw minimizing the summed squared Frobenius distance, by grid search.
fn brute_force_yaw_mean(rotations: &[Rotation]) -> f64 {
    let cost = |yaw: f64| {
        let r = Rotation::about_z(yaw);
        rotations.iter().map(|q| chordal_distance(&r, q).powi(2)).sum::<f64>()
    };
    let search = |lo: f64, hi: f64, steps: usize| {
        (0..=steps)
            .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .unwrap()
    };
    let coarse = search(-std::f64::consts::PI, std::f64::consts::PI, 36_000);
    let step = 2.0 * std::f64::consts::PI / 36_000.0;
    search(coarse - step, coarse + step, 20_000)
}

#[test]
fn yaw_triple_mean_matches_grid_search() {
    let rs: Vec<Rotation> = [10.0f64, 20.0, 30.0]
        .iter()
        .map(|d| Rotation::about_z(d.to_radians()))
        .collect();
    let mean = chordal_l2_mean(&rs).unwrap();
    let oracle = Rotation::about_z(brute_force_yaw_mean(&rs));
    assert!(max_diff(&mean, &oracle) <= 1e-6, "{mean:?} vs {oracle:?}");
    assert!(max_diff(&mean, &Rotation::about_z(20f64.to_radians())) <= 1e-6);
}

/// Monte-Carlo estimate of KL(q || N(0, I)) with antithetic draws.
fn kl_monte_carlo(mean: &[f64], log_var: &[f64], draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let log_ratio = |z: &[f64]| -> f64 {
        mean.iter()
            .zip(log_var)
            .zip(z)
            .map(|((m, lv), z)| {
                let var = lv.exp();
                let log_q = -0.5 * ((z - m).powi(2) / var + lv);
                let log_p = -0.5 * z * z;
                log_q - log_p
            })
            .sum()
    };
    let mut total = 0.0;
    for _ in 0..draws / 2 {
        let eps: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        for sign in [1.0, -1.0] {
            let z: Vec<f64> = mean
                .iter()
                .zip(log_var)
                .zip(&eps)
                .map(|((m, lv), e)| m + sign * (0.5 * lv).exp() * e)
                .collect();
            total += log_ratio(&z);
        }
    }
    total / (2 * (draws / 2)) as f64
}

#[test]
fn kl_closed_form_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mean: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let log_var: Vec<f64> = (0..2).map(|_| rng.random_range(-0.5..0.5)).collect();
        let closed = kl_to_standard_normal(&GaussianLatent::new(mean.clone(), log_var.clone()));
        let mc = kl_monte_carlo(&mean, &log_var, 100_000, &mut rng);
        assert!(closed >= 0.0);
        assert!(
            (closed - mc).abs() <= 0.01,
            "closed {closed} mc {mc} at {mean:?} {log_var:?}"
        );
    }
}

#[test]
fn kl_vanishes_only_at_the_prior() {
    assert_eq!(
        kl_to_standard_normal(&GaussianLatent::new(vec![0.0; 4], vec![0.0; 4])),
        0.0
    );
    assert!(kl_to_standard_normal(&GaussianLatent::new(vec![0.0, 1e-3], vec![0.0; 2])) > 0.0);
    assert!(kl_to_standard_normal(&GaussianLatent::new(vec![0.0; 2], vec![0.0, 1e-3])) > 0.0);
}
