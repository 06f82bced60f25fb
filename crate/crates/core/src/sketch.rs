//! Column-selector sketches. A sketch `S` is identified with the sorted index
//! set `J` of the columns it selects, so `Sᵀv = v_J` and `S w` scatters `w`
//! back onto `J`.

use itertools::Itertools;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{ensure, Error, Result};

/// Default cap on the number of support elements `enumerate_support` lists.
pub const ENUMERATION_BUDGET: usize = 200_000;

/// Strictly increasing column indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        ensure(!indices.is_empty(), || "index set must be non-empty".into())?;
        ensure(indices.windows(2).all(|w| w[0] < w[1]), || {
            format!("index set {indices:?} is not strictly increasing")
        })?;
        ensure(indices.iter().all(|&i| i < n), || {
            format!("index set {indices:?} has an entry >= n = {n}")
        })?;
        Ok(Self(indices))
    }

    /// `{start, …, start + len − 1}`.
    pub fn range(start: usize, len: usize) -> Self {
        Self((start..start + len).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerMode {
    FixedPartition(Vec<IndexSet>),
    UniformRandom { n: usize, p: usize },
    Weighted { blocks: Vec<IndexSet>, probs: Vec<f64> },
}

/// A distribution over index sets of `[0, n)`. Seeds are not part of the
/// sampler; each run passes its own stream to [`SketchSampler::sample`].
#[derive(Debug, Clone)]
pub struct SketchSampler {
    n: usize,
    mode: SamplerMode,
    weights: Option<WeightedIndex<f64>>,
}

impl PartialEq for SketchSampler {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.mode == other.mode
    }
}

impl SketchSampler {
    /// Contiguous blocks `{0..p}, {p..2p}, …`, each drawn with probability `p/n`.
    pub fn fixed_partition(n: usize, p: usize) -> Result<Self> {
        ensure(p >= 1 && p <= n, || format!("block size p = {p} must satisfy 1 <= p <= n = {n}"))?;
        ensure(n % p == 0, || format!("p = {p} does not divide n = {n}"))?;
        let blocks = (0..n / p).map(|k| IndexSet::range(k * p, p)).collect();
        Ok(Self { n, mode: SamplerMode::FixedPartition(blocks), weights: None })
    }

    /// A partition given explicitly. Blocks must be disjoint, cover `[0, n)`
    /// and share one size.
    pub fn partition(n: usize, blocks: Vec<IndexSet>) -> Result<Self> {
        check_partition(n, &blocks)?;
        Ok(Self { n, mode: SamplerMode::FixedPartition(blocks), weights: None })
    }

    pub fn uniform(n: usize, p: usize) -> Result<Self> {
        ensure(p >= 1 && p <= n, || format!("block size p = {p} must satisfy 1 <= p <= n = {n}"))?;
        Ok(Self { n, mode: SamplerMode::UniformRandom { n, p }, weights: None })
    }

    pub fn weighted(n: usize, blocks: Vec<IndexSet>, probs: Vec<f64>) -> Result<Self> {
        ensure(!blocks.is_empty(), || "weighted sampler needs at least one block".into())?;
        ensure(blocks.len() == probs.len(), || {
            format!("{} blocks but {} probabilities", blocks.len(), probs.len())
        })?;
        ensure(blocks.iter().flat_map(|b| b.as_slice()).all(|&i| i < n), || {
            format!("weighted block has an index >= n = {n}")
        })?;
        ensure(probs.iter().all(|&q| q > 0.0 && q.is_finite()), || {
            "weighted probabilities must be positive".into()
        })?;
        let total: f64 = probs.iter().sum();
        ensure((total - 1.0).abs() <= 1e-12, || {
            format!("weighted probabilities sum to {total}, expected 1")
        })?;
        let weights = WeightedIndex::new(&probs).map_err(|e| Error::constraint(e.to_string()))?;
        Ok(Self { n, mode: SamplerMode::Weighted { blocks, probs }, weights: Some(weights) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> &SamplerMode {
        &self.mode
    }

    /// Common block size, if every support element has the same size.
    pub fn block_size(&self) -> Option<usize> {
        match &self.mode {
            SamplerMode::UniformRandom { p, .. } => Some(*p),
            SamplerMode::FixedPartition(blocks) => Some(blocks[0].len()),
            SamplerMode::Weighted { blocks, .. } => {
                let p = blocks[0].len();
                blocks.iter().all(|b| b.len() == p).then_some(p)
            }
        }
    }

    /// The partition blocks when this is a fixed-partition sampler.
    pub fn partition_blocks(&self) -> Option<&[IndexSet]> {
        match &self.mode {
            SamplerMode::FixedPartition(blocks) => Some(blocks),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.mode {
            SamplerMode::FixedPartition(_) => "fixed",
            SamplerMode::UniformRandom { .. } => "random",
            SamplerMode::Weighted { .. } => "weighted",
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IndexSet {
        match &self.mode {
            SamplerMode::FixedPartition(blocks) => blocks[rng.random_range(0..blocks.len())].clone(),
            SamplerMode::UniformRandom { n, p } => IndexSet(partial_fisher_yates(*n, *p, rng)),
            SamplerMode::Weighted { blocks, .. } => {
                let w = self.weights.as_ref().expect("weighted sampler carries its index");
                blocks[w.sample(rng)].clone()
            }
        }
    }

    /// Number of support elements (as a float, since `C(n, p)` overflows).
    pub fn support_size(&self) -> f64 {
        match &self.mode {
            SamplerMode::FixedPartition(blocks) => blocks.len() as f64,
            SamplerMode::UniformRandom { n, p } => binomial(*n, *p),
            SamplerMode::Weighted { blocks, .. } => blocks.len() as f64,
        }
    }

    pub fn enumerate_support(&self) -> Result<Vec<(IndexSet, f64)>> {
        self.enumerate_support_within(ENUMERATION_BUDGET)
    }

    /// Every support element with its probability, in lexicographic order for
    /// uniform sampling and storage order otherwise.
    pub fn enumerate_support_within(&self, budget: usize) -> Result<Vec<(IndexSet, f64)>> {
        let size = self.support_size();
        if size > budget as f64 {
            return Err(Error::SupportTooLarge { size, budget });
        }
        Ok(match &self.mode {
            SamplerMode::FixedPartition(blocks) => {
                let q = 1.0 / blocks.len() as f64;
                blocks.iter().map(|b| (b.clone(), q)).collect()
            }
            SamplerMode::UniformRandom { n, p } => {
                let q = 1.0 / size;
                (0..*n).combinations(*p).map(|c| (IndexSet(c), q)).collect()
            }
            SamplerMode::Weighted { blocks, probs } => {
                blocks.iter().cloned().zip(probs.iter().copied()).collect()
            }
        })
    }
}

pub fn check_partition(n: usize, blocks: &[IndexSet]) -> Result<()> {
    ensure(!blocks.is_empty(), || "partition needs at least one block".into())?;
    let p = blocks[0].len();
    ensure(blocks.iter().all(|b| b.len() == p), || "partition blocks must share one size".into())?;
    let mut seen = vec![false; n];
    for i in blocks.iter().flat_map(|b| b.as_slice()) {
        ensure(*i < n, || format!("partition index {i} >= n = {n}"))?;
        ensure(!seen[*i], || format!("partition blocks overlap at index {i}"))?;
        seen[*i] = true;
    }
    ensure(seen.iter().all(|&s| s), || "partition blocks do not cover [0, n)".into())
}

/// Uniform `p`-subset of `[0, n)`: `p` swaps of a partial Fisher-Yates
/// shuffle, then sorted.
fn partial_fisher_yates<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..p {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(p);
    pool.sort_unstable();
    pool
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn fixed_partition_blocks() {
        let s = SketchSampler::fixed_partition(4, 2).unwrap();
        assert_eq!(s.partition_blocks().unwrap(), &[IndexSet::range(0, 2), IndexSet::range(2, 2)]);
        assert!(SketchSampler::fixed_partition(3, 2).unwrap_err().to_string().contains("divide"));
        let support = SketchSampler::fixed_partition(6, 2).unwrap().enumerate_support().unwrap();
        assert_eq!(support.len(), 3);
        assert!(support.iter().all(|(_, q)| (q - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn full_block_is_always_everything() {
        let s = SketchSampler::uniform(5, 5).unwrap();
        let mut r = rng::stream(1, rng::SKETCH);
        for _ in 0..20 {
            assert_eq!(s.sample(&mut r).as_slice(), &[0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn uniform_support_counts() {
        let s = SketchSampler::uniform(4, 2).unwrap();
        let support = s.enumerate_support().unwrap();
        assert_eq!(support.len(), 6);
        assert_eq!(support[0].0.as_slice(), &[0, 1]);
        assert_eq!(support[5].0.as_slice(), &[2, 3]);
        let big = SketchSampler::uniform(40, 10).unwrap().enumerate_support();
        assert!(matches!(big, Err(Error::SupportTooLarge { .. })));
    }

    #[test]
    fn weighted_validation() {
        let blocks = vec![IndexSet::range(0, 1), IndexSet::range(1, 1)];
        assert!(SketchSampler::weighted(2, blocks.clone(), vec![0.5, 0.4]).is_err());
        assert!(SketchSampler::weighted(2, blocks.clone(), vec![1.0, 0.0]).is_err());
        assert!(SketchSampler::weighted(2, blocks, vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn index_set_rejects_bad_input() {
        assert!(IndexSet::new(vec![1, 0], 3).is_err());
        assert!(IndexSet::new(vec![0, 0], 3).is_err());
        assert!(IndexSet::new(vec![3], 3).is_err());
        assert!(IndexSet::new(vec![], 3).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(16, 4), 1820.0);
        assert!((binomial(40, 10) - 847_660_528.0).abs() < 1.0);
    }
}
