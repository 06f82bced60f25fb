use std::collections::HashMap;

use blockgs::rng;
use blockgs::sketch::*;
use proptest::prelude::*;

#[test]
fn uniform_marginals_are_p_over_n() {
    let (n, p, draws) = (10, 3, 30_000);
    let s = SketchSampler::uniform(n, p).unwrap();
    let mut r = rng::stream(1, rng::SKETCH);
    let mut hits = vec![0usize; n];
    for _ in 0..draws {
        for &i in s.sample(&mut r).as_slice() {
            hits[i] += 1;
        }
    }
    // Each count is Binomial(draws, 0.3); 5 sigma is about 400.
    let expect = draws as f64 * p as f64 / n as f64;
    for (i, h) in hits.iter().enumerate() {
        assert!((*h as f64 - expect).abs() < 400.0, "coordinate {i}: {h} vs {expect}");
    }
}

#[test]
fn uniform_subsets_pass_chi_square() {
    let (n, p, draws) = (6, 2, 30_000);
    let s = SketchSampler::uniform(n, p).unwrap();
    let mut r = rng::stream(2, rng::SKETCH);
    let mut counts: HashMap<IndexSet, usize> = HashMap::new();
    for _ in 0..draws {
        *counts.entry(s.sample(&mut r)).or_default() += 1;
    }
    assert_eq!(counts.len(), 15);
    let e = draws as f64 / 15.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 14 degrees of freedom; the 0.999 quantile is 36.1.
    assert!(chi2 < 36.1, "chi2 = {chi2}");
}

#[test]
fn weighted_frequencies_pass_chi_square() {
    let blocks = vec![IndexSet::range(0, 2), IndexSet::range(2, 2), IndexSet::range(4, 2)];
    let probs = vec![0.5, 0.3, 0.2];
    let s = SketchSampler::weighted(6, blocks.clone(), probs.clone()).unwrap();
    let mut r = rng::stream(3, rng::SKETCH);
    let draws = 20_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let j = s.sample(&mut r);
        counts[blocks.iter().position(|b| *b == j).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &q)| (c as f64 - q * draws as f64).powi(2) / (q * draws as f64))
        .sum();
    // 2 degrees of freedom; the 0.999 quantile is 13.8.
    assert!(chi2 < 13.8, "chi2 = {chi2}");
}

#[test]
fn enumeration_matches_binomial() {
    for (n, p) in [(8, 3), (16, 4), (10, 1), (5, 5)] {
        let s = SketchSampler::uniform(n, p).unwrap();
        let support = s.enumerate_support().unwrap();
        assert_eq!(support.len() as f64, binomial(n, p));
        let total: f64 = support.iter().map(|(_, q)| q).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(support.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

#[test]
fn budget_is_enforced() {
    let s = SketchSampler::uniform(16, 4).unwrap();
    assert!(matches!(s.enumerate_support_within(1000), Err(blockgs::Error::SupportTooLarge { .. })));
    assert_eq!(s.enumerate_support_within(1820).unwrap().len(), 1820);
}

#[test]
fn explicit_partition_checks() {
    let ok = vec![IndexSet::new(vec![0, 3], 4).unwrap(), IndexSet::new(vec![1, 2], 4).unwrap()];
    assert!(SketchSampler::partition(4, ok).is_ok());
    let overlap = vec![IndexSet::new(vec![0, 1], 4).unwrap(), IndexSet::new(vec![1, 2], 4).unwrap()];
    assert!(SketchSampler::partition(4, overlap).is_err());
    let gap = vec![IndexSet::new(vec![0, 1], 4).unwrap()];
    assert!(SketchSampler::partition(4, gap).is_err());
}

proptest! {
    #[test]
    fn samples_are_valid_index_sets(n in 1usize..40, p_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let p = 1 + ((n - 1) as f64 * p_frac) as usize;
        let s = SketchSampler::uniform(n, p).unwrap();
        let mut r = rng::stream(seed, rng::SKETCH);
        for _ in 0..20 {
            let j = s.sample(&mut r);
            prop_assert_eq!(j.len(), p);
            prop_assert!(j.as_slice().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(j.as_slice().iter().all(|&i| i < n));
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed(n in 2usize..30, seed in any::<u64>()) {
        let s = SketchSampler::uniform(n, n / 2).unwrap();
        let a: Vec<IndexSet> = { let mut r = rng::stream(seed, rng::SKETCH); (0..10).map(|_| s.sample(&mut r)).collect() };
        let b: Vec<IndexSet> = { let mut r = rng::stream(seed, rng::SKETCH); (0..10).map(|_| s.sample(&mut r)).collect() };
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fixed_partition_samples_are_blocks(k in 1usize..8, p in 1usize..6, seed in any::<u64>()) {
        let s = SketchSampler::fixed_partition(k * p, p).unwrap();
        let blocks = s.partition_blocks().unwrap().to_vec();
        let mut r = rng::stream(seed, rng::SKETCH);
        for _ in 0..10 {
            let j = s.sample(&mut r);
            prop_assert!(blocks.contains(&j));
        }
    }
}
