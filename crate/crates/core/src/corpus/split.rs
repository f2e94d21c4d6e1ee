use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MonoCorpus, ParallelCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_total: usize,
    pub valid_total: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Apportions `total` over `sizes` proportionally; floors first, then the
/// leftover units go to the largest fractional parts (earlier index on ties).
/// The result always sums to `total` when `sizes` has a nonzero sum.
pub fn largest_remainder(total: usize, sizes: &[usize]) -> Vec<usize> {
    let sum: u128 = sizes.iter().map(|&s| s as u128).sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas = Vec::with_capacity(sizes.len());
    let mut rems = Vec::with_capacity(sizes.len());
    for (i, &s) in sizes.iter().enumerate() {
        let num = total as u128 * s as u128;
        quotas.push((num / sum) as usize);
        rems.push((num % sum, i));
    }
    let assigned: usize = quotas.iter().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(total - assigned) {
        quotas[i] += 1;
    }
    quotas
}

fn corpus_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Holds out test and validation pairs from every corpus, with per-corpus
/// quotas proportional to the corpus share of all pairs.
pub fn split_holdout(corpora: &[ParallelCorpus], spec: &SplitSpec) -> Result<Vec<HoldoutSplit>> {
    let sizes: Vec<usize> = corpora.iter().map(ParallelCorpus::len).collect();
    let total: usize = sizes.iter().sum();
    if spec.test_total + spec.valid_total > 0 && spec.test_total + spec.valid_total >= total {
        return Err(Error::config(format!(
            "hold-out of {} test + {} valid pairs needs more than the {total} available",
            spec.test_total, spec.valid_total
        )));
    }
    let test_q = largest_remainder(spec.test_total, &sizes);
    let valid_q = largest_remainder(spec.valid_total, &sizes);

    let mut out = Vec::with_capacity(corpora.len());
    for (i, c) in corpora.iter().enumerate() {
        if test_q[i] + valid_q[i] > c.len() {
            return Err(Error::config(format!(
                "corpus {} has {} pairs but its hold-out quota is {}",
                c.direction,
                c.len(),
                test_q[i] + valid_q[i]
            )));
        }
        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.shuffle(&mut corpus_rng(spec.seed, i));
        let mut role = vec![0u8; c.len()];
        for &j in &idx[..test_q[i]] {
            role[j] = 1;
        }
        for &j in &idx[test_q[i]..test_q[i] + valid_q[i]] {
            role[j] = 2;
        }
        let mut split = HoldoutSplit {
            train: ParallelCorpus::new(c.direction.clone()),
            valid: ParallelCorpus::new(c.direction.clone()),
            test: ParallelCorpus::new(c.direction.clone()),
        };
        for (pair, r) in c.pairs.iter().zip(role) {
            let dst = match r {
                0 => &mut split.train,
                1 => &mut split.test,
                _ => &mut split.valid,
            };
            dst.pairs.push(pair.clone());
        }
        out.push(split);
    }
    Ok(out)
}

/// Uniform sample of `n` lines without replacement, keeping original order.
pub fn downsample(m: &MonoCorpus, n: usize, seed: u64) -> MonoCorpus {
    if m.len() <= n {
        return m.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, m.len(), n).into_vec();
    picked.sort_unstable();
    MonoCorpus::new(m.lang.clone(), picked.into_iter().map(|i| m.lines[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{lang, Direction};

    fn corpus(a: &str, b: &str, n: usize) -> ParallelCorpus {
        ParallelCorpus::from_pairs(
            Direction::new(lang(a), lang(b)).unwrap(),
            (0..n).map(|i| (format!("{a}{i}"), format!("{b}{i}"))),
        )
    }

    #[test]
    fn quotas_exact_and_largest_remainder() {
        assert_eq!(largest_remainder(10, &[90, 10]), vec![9, 1]);
        assert_eq!(largest_remainder(10, &[60, 25, 15]), vec![6, 3, 1]);
        assert_eq!(largest_remainder(0, &[5, 5]), vec![0, 0]);
        assert_eq!(largest_remainder(3, &[1, 1, 1, 1]).iter().sum::<usize>(), 3);
    }

    #[test]
    fn zero_test_total_keeps_everything_in_train() {
        let cs = vec![corpus("et", "fi", 20), corpus("et", "vro", 5)];
        let spec = SplitSpec { test_total: 0, valid_total: 0, seed: 1 };
        let out = split_holdout(&cs, &spec).unwrap();
        assert_eq!(out[0].train, cs[0]);
        assert!(out[1].test.is_empty() && out[1].valid.is_empty());
    }

    #[test]
    fn split_partitions_each_corpus() {
        let cs = vec![corpus("et", "fi", 90), corpus("et", "vro", 10)];
        let spec = SplitSpec { test_total: 10, valid_total: 5, seed: 7 };
        let out = split_holdout(&cs, &spec).unwrap();
        assert_eq!(out[0].test.len(), 9);
        assert_eq!(out[1].test.len(), 1);
        for (s, c) in out.iter().zip(&cs) {
            assert_eq!(s.train.len() + s.valid.len() + s.test.len(), c.len());
        }
        let again = split_holdout(&cs, &spec).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn unsatisfiable_spec_is_rejected() {
        let cs = vec![corpus("et", "fi", 3)];
        let spec = SplitSpec { test_total: 2, valid_total: 1, seed: 0 };
        assert!(matches!(split_holdout(&cs, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn downsample_cases() {
        let m = MonoCorpus::new(lang("et"), (0..5).map(|i| i.to_string()).collect());
        assert_eq!(downsample(&m, 10, 0), m);
        assert_eq!(downsample(&m, 5, 0), m);
        let d = downsample(&m, 3, 42);
        assert_eq!(d.len(), 3);
        let pos: Vec<usize> = d.lines.iter().map(|l| l.parse().unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d, downsample(&m, 3, 42));
    }
}
