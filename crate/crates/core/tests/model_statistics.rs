//! Monte-Carlo checks of the device model and majority voting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use puf_auth::puf_model::{
    generate_device, normalized_hd, uniformity, wafer_pattern, DeviceParams, NoiseProfile, PufDevice,
};
use puf_auth::stabilizer::stabilized_read;

fn device(master: u64, id: &str, params: &DeviceParams<'_>) -> PufDevice {
    generate_device(master, id, params).unwrap()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

fn binom_pmf(n: usize, k: usize, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Probability that an `votes`-read majority of a cell differs from its
/// stable value, with ties resolved to 0.
fn mv_error(p: f64, votes: usize, stable_one: bool) -> f64 {
    (0..=votes)
        .filter(|&flips| {
            let ones = if stable_one { votes - flips } else { flips };
            (2 * ones > votes) != stable_one
        })
        .map(|f| binom_pmf(votes, f, p))
        .sum()
}

#[test]
fn default_profile_raw_ber_is_in_band() {
    let params = DeviceParams::unbiased(2048, NoiseProfile::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ber = mean((0..20).flat_map(|d| {
        let dev = device(11, &format!("d{d}"), &params);
        (0..10)
            .map(|_| normalized_hd(&dev.stable_value, &dev.sample_response(&mut rng)).unwrap())
            .collect::<Vec<_>>()
    }));
    assert!((0.005..=0.08).contains(&ber), "{ber}");
}

#[test]
fn coin_flip_cells_give_half_distance() {
    let dev = device(3, "coin", &DeviceParams::unbiased(256, NoiseProfile::uniform(0.5)));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hd = mean((0..1000).map(|_| {
        normalized_hd(&dev.sample_response(&mut rng), &dev.sample_response(&mut rng)).unwrap()
    }));
    assert!((hd - 0.5).abs() < 0.02, "{hd}");
}

#[test]
fn unbiased_fleet_weight_is_half() {
    let params = DeviceParams::unbiased(2048, NoiseProfile::default());
    let w = mean((0..100).map(|d| uniformity(&device(5, &format!("d{d}"), &params).stable_value).unwrap()));
    assert!((w - 0.5).abs() < 0.03, "{w}");
}

fn pairwise_mismatch(q: f64, rho: f64) -> f64 {
    let wafer = wafer_pattern(77, 2048);
    let params = DeviceParams {
        bias_q: q,
        rho_chip: rho,
        wafer_pattern: (rho > 0.0).then_some(&wafer),
        ..DeviceParams::unbiased(2048, NoiseProfile::NOISELESS)
    };
    let devs: Vec<PufDevice> = (0..16).map(|d| device(9, &format!("d{d}"), &params)).collect();
    // 120 distinct pairs
    mean((0..16).flat_map(|i| {
        let devs = &devs;
        (i + 1..16).map(move |j| normalized_hd(&devs[i].stable_value, &devs[j].stable_value).unwrap())
    }))
}

#[test]
fn independent_devices_disagree_at_2q_1_minus_q() {
    for q in [0.5, 0.6, 0.75] {
        let m = pairwise_mismatch(q, 0.0);
        assert!((m - 2.0 * q * (1.0 - q)).abs() < 0.02, "q={q}: {m}");
    }
}

#[test]
fn correlated_devices_disagree_proportionally_less() {
    for (q, rho) in [(0.5, 0.2), (0.5, 0.3), (0.6, 0.1)] {
        let m = pairwise_mismatch(q, rho);
        let want = (1.0 - rho) * 2.0 * q * (1.0 - q);
        assert!((m - want).abs() < 0.02, "q={q} rho={rho}: {m} vs {want}");
    }
}

#[test]
fn majority_residual_matches_binomial_tail() {
    // p = 0.1, N = 5: P[Bin(5, 0.1) >= 3]
    let dev = device(4, "mv", &DeviceParams::unbiased(2048, NoiseProfile::uniform(0.1)));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 60;
    let errs: usize = (0..trials)
        .map(|_| stabilized_read(&dev, 5, &mut rng).unwrap().hamming_distance(&dev.stable_value).unwrap())
        .sum();
    let got = errs as f64 / (trials * 2048) as f64;
    let want: f64 = (3..=5).map(|k| binom_pmf(5, k, 0.1)).sum();
    assert!((got - want).abs() < 0.005, "{got} vs {want}");
}

#[test]
fn more_votes_help_with_diminishing_returns() {
    let dev = device(8, "trend", &DeviceParams::unbiased(2048, NoiseProfile::default()));
    // expected enrollment/authentication disagreement per cell: 2e(1 - e)
    let expected = |votes: usize| {
        mean(dev.flip_prob.iter().enumerate().map(|(i, &p)| {
            let e = mv_error(p, votes, dev.stable_value.get(i));
            2.0 * e * (1.0 - e)
        }))
    };
    let e: Vec<f64> = [1, 3, 5, 10, 20].into_iter().map(expected).collect();
    assert!(e.windows(2).all(|w| w[1] <= w[0]), "{e:?}");
    assert!(e[0] - e[2] > e[3] - e[4], "{e:?}");

    // paired Monte-Carlo agrees with the expectation at N = 1 and N = 20
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (votes, want) in [(1usize, e[0]), (20, e[4])] {
        let got = mean((0..40).map(|_| {
            let a = stabilized_read(&dev, votes, &mut rng).unwrap();
            let b = stabilized_read(&dev, votes, &mut rng).unwrap();
            normalized_hd(&a, &b).unwrap()
        }));
        assert!((got - want).abs() < 0.25 * want + 1e-4, "N={votes}: {got} vs {want}");
    }
}

#[test]
fn same_seed_same_device_different_id_different_device() {
    let params = DeviceParams::unbiased(512, NoiseProfile::default());
    assert_eq!(device(1, "a", &params), device(1, "a", &params));
    assert_ne!(device(1, "a", &params).stable_value, device(1, "b", &params).stable_value);
    assert_ne!(device(1, "a", &params).stable_value, device(2, "a", &params).stable_value);
}
