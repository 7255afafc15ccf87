use osgan::data::{sample_ring, sample_ring_labelled, RingGeometry};
use osgan::metrics::{frechet_gaussian_2d, kid_polynomial, mode_coverage, parse_points, points_to_csv, KernelConfig};
use osgan::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points() -> impl Strategy<Value = Tensor> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40).prop_map(|v| {
        Tensor::new(vec![v.len(), 2], v.into_iter().flat_map(|(a, b)| [a, b]).collect()).unwrap()
    })
}

fn permuted(t: &Tensor, seed: u64) -> Tensor {
    let mut idx: Vec<usize> = (0..t.batch()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| t.instance(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn frechet_is_nonnegative_and_symmetric(a in points(), b in points()) {
        let ab = frechet_gaussian_2d(&a, &b).unwrap();
        let ba = frechet_gaussian_2d(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(close(ab, ba), "{} vs {}", ab, ba);
        prop_assert!(frechet_gaussian_2d(&a, &a).unwrap().abs() < 1e-9);
    }

    #[test]
    fn frechet_of_a_translate_is_the_squared_shift(a in points(), dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let shifted = Tensor::new(
            a.shape().to_vec(),
            a.data().chunks_exact(2).flat_map(|p| [p[0] + dx, p[1] + dy]).collect(),
        ).unwrap();
        let f = frechet_gaussian_2d(&a, &shifted).unwrap();
        prop_assert!((f - (dx * dx + dy * dy)).abs() < 1e-7, "{}", f);
    }

    #[test]
    fn kid_is_symmetric_and_permutation_invariant(a in points(), b in points(), seed in any::<u64>()) {
        let k = KernelConfig::cubic(2);
        let ab = kid_polynomial(&a, &b, &k).unwrap();
        prop_assert!(close(ab, kid_polynomial(&b, &a, &k).unwrap()));
        prop_assert!(close(ab, kid_polynomial(&permuted(&a, seed), &permuted(&b, seed ^ 7), &k).unwrap()));
        prop_assert_eq!(kid_polynomial(&a, &a, &k).unwrap(), 0.0);
    }

    #[test]
    fn point_files_round_trip(a in points()) {
        let back = parse_points(&points_to_csv(&a)).unwrap();
        prop_assert_eq!(back, a);
    }
}

#[test]
fn kid_singletons_match_hand_value() {
    // cubic kernel with scale 1/2, offset 1 on x = (1, 0), y = (0, 1):
    // k(x,x) = k(y,y) = 1.5^3, k(x,y) = 1
    let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let y = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
    let v = kid_polynomial(&x, &y, &KernelConfig::cubic(2)).unwrap();
    assert!((v - (2.0 * 3.375 - 2.0)).abs() < 1e-12);
}

#[test]
fn ring_modes_are_balanced() {
    let n = 100_000;
    let (_, labels) = sample_ring_labelled(n, 8, 2.0, 0.02, 2024).unwrap();
    let mut counts = [0usize; 8];
    labels.iter().for_each(|&l| counts[l] += 1);
    let expected = n as f64 / 8.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 7 degrees of freedom
    assert!(chi2 < 24.322, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn ring_points_stay_near_their_centers() {
    let geometry = RingGeometry::default();
    let n = 100_000;
    let pts = sample_ring(n, geometry.modes, geometry.radius, geometry.sigma, 5).unwrap();
    let centers = geometry.centers();
    let six = 6.0 * geometry.sigma;
    let near = pts
        .data()
        .chunks_exact(2)
        .filter(|p| centers.iter().any(|c| (p[0] - c[0]).hypot(p[1] - c[1]) <= six))
        .count();
    assert!(near as f64 >= 0.999 * n as f64, "{near}");
}

#[test]
fn ring_sampling_is_deterministic_per_seed() {
    let a = sample_ring(500, 8, 2.0, 0.02, 1).unwrap();
    let b = sample_ring(500, 8, 2.0, 0.02, 1).unwrap();
    let c = sample_ring(500, 8, 2.0, 0.02, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn uniform_box_is_rarely_high_quality() {
    // 8 discs of radius 0.06 inside a 20 x 20 box cover 8 * pi * 0.06^2 / 400 ~ 2.3e-4 of it
    let geometry = RingGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fake = Tensor::new(vec![20_000, 2], (0..40_000).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap();
    let c = mode_coverage(&fake, &geometry.centers(), geometry.threshold()).unwrap();
    let area = 8.0 * std::f64::consts::PI * geometry.threshold().powi(2) / 400.0;
    assert!(c.hq_fraction < 0.05);
    assert!((c.hq_fraction - area).abs() < 5e-4, "{} vs {area}", c.hq_fraction);
}

#[test]
fn collapsed_fakes_cover_one_mode() {
    let geometry = RingGeometry::default();
    let c0 = geometry.centers()[0];
    let fake = Tensor::from_rows(&vec![vec![c0[0], c0[1]]; 50]).unwrap();
    let c = mode_coverage(&fake, &geometry.centers(), geometry.threshold()).unwrap();
    assert_eq!((c.covered_modes, c.hq_fraction), (1, 1.0));
}
