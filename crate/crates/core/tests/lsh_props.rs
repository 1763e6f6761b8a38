mod common;

use mcx_core::lsh::{
    binomial_coverage, required_m_binomial, required_m_hoeffding, sample_rbh, BucketClamp, EncoderSpec,
    LshEncoder, LshFamily, PStableHash, Rehasher,
};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn rehash_is_uniform() {
    let mut rng = common::rng(31);
    for (seed, domain) in [(1u64, 64u32), (77, 257), (9, 8192)] {
        let r = Rehasher::new(seed, domain).unwrap();
        let draws = 200 * domain as usize;
        let mut hist = vec![0f64; domain as usize];
        for i in 0..draws {
            // structured inputs: consecutive cells along one axis plus noise on another
            let sig = [i as i64, rng.random_range(-3..3)];
            hist[r.rehash(&sig) as usize] += 1.0;
        }
        let e = draws as f64 / domain as f64;
        let chi2: f64 = hist.iter().map(|o| (o - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new((domain - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 1e-3, "domain {domain}: chi2 {chi2}, p {p}");
    }
}

/// Collision probability of a 2-stable hash at distance r with width w.
fn pstable_collision(r: f64, w: f64) -> f64 {
    let c = w / r;
    let phi = Normal::new(0.0, 1.0).unwrap();
    1.0 - 2.0 * phi.cdf(-c) - 2.0 / ((2.0 * std::f64::consts::PI).sqrt() * c) * (1.0 - (-c * c / 2.0).exp())
}

#[test]
fn pstable_collisions_follow_distance() {
    let mut rng = common::rng(8);
    let w = 4.0;
    let trials = 40_000;
    let p = [0.3, -1.2, 2.0, 0.7];
    let mut last = 1.0;
    for r in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let dir: Vec<f64> = vec![0.5; 4];
        let q: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a + d * r).collect();
        let mut hits = 0;
        for _ in 0..trials {
            let h = PStableHash::<f64>::sample(4, w, &mut rng).unwrap();
            hits += usize::from(h.hash(&p).unwrap() == h.hash(&q).unwrap());
        }
        let rate = hits as f64 / trials as f64;
        let expect = pstable_collision(r, w);
        let se = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!((rate - expect).abs() <= 4.0 * se, "r {r}: {rate} vs {expect}");
        assert!(rate < last, "collision rate must fall with distance");
        last = rate;
    }
}

#[test]
fn rbh_collisions_follow_laplacian_kernel() {
    let mut rng = common::rng(12);
    let sigma = 1.5;
    let trials = 30_000;
    for (p, q) in [
        ([0.0, 0.0, 0.0], [0.2, -0.1, 0.3]),
        ([1.0, 2.0, 3.0], [2.0, 1.0, 3.5]),
        ([0.0, 0.0, 0.0], [3.0, 0.0, 0.0]),
    ] {
        let mut hits = 0;
        for _ in 0..trials {
            let h = sample_rbh::<f64, _>(sigma, 3, &mut rng).unwrap();
            hits += usize::from(h.hash(&p).unwrap() == h.hash(&q).unwrap());
        }
        let l1: f64 = p.iter().zip(&q).map(|(a, b): (&f64, &f64)| (a - b).abs()).sum();
        let expect = (-l1 / sigma).exp();
        let rate = hits as f64 / trials as f64;
        let se = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!((rate - expect).abs() <= 4.0 * se, "{rate} vs {expect}");
    }
}

#[test]
fn single_and_double_precision_agree() {
    let spec = EncoderSpec {
        family: LshFamily::PStable {
            width: 4.0,
            clamp: BucketClamp::default(),
            rehash_domain: None,
        },
        num_functions: 200,
        dim: 8,
        seed: 3,
    };
    let e32 = LshEncoder::<f32>::from_spec(spec).unwrap();
    let e64 = LshEncoder::<f64>::from_spec(spec).unwrap();
    let mut rng = common::rng(4);
    let mut same = 0;
    let mut total = 0;
    for _ in 0..50 {
        let p: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let p32: Vec<f32> = p.iter().map(|&x| x as f32).collect();
        let a = e32.tokens(&p32).unwrap();
        let b = e64.tokens(&p).unwrap();
        same += a.iter().zip(&b).filter(|(x, y)| x == y).count();
        total += a.len();
    }
    assert!(same as f64 / total as f64 > 0.99);
}

#[test]
fn bernoulli_model_respects_bound() {
    // small version of the Hoeffding check: c ~ Binomial(m, s)
    let (eps, delta) = (0.1, 0.1);
    let m = required_m_hoeffding(eps, delta).unwrap();
    let mut rng = common::rng(21);
    for s in [0.2, 0.5, 0.8] {
        let bad = (0..2000)
            .filter(|_| {
                let c = (0..m).filter(|_| rng.random_bool(s)).count();
                (c as f64 / m as f64 - s).abs() > eps
            })
            .count();
        assert!(bad as f64 / 2000.0 <= delta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn binomial_sizing_symmetric(i in 1u32..20, eps in 0.05f64..0.3, delta in 0.02f64..0.3) {
        let s = i as f64 * 0.05;
        let a = required_m_binomial(s, eps, delta).unwrap();
        let b = required_m_binomial(1.0 - s, eps, delta).unwrap();
        prop_assert!(a.abs_diff(b) <= 1, "{} vs {}", a, b);
    }

    #[test]
    fn binomial_sizing_holds_beyond(s in 0.05f64..0.95, eps in 0.05f64..0.3, delta in 0.02f64..0.3) {
        let m = required_m_binomial(s, eps, delta).unwrap();
        for extra in 0..20 {
            prop_assert!(binomial_coverage(m + extra, s, eps) >= 1.0 - delta);
        }
        prop_assert!(m == 1 || binomial_coverage(m - 1, s, eps) < 1.0 - delta);
        prop_assert!(m <= required_m_hoeffding(eps, delta).unwrap());
    }
}
