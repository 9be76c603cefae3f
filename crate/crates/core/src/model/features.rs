use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;

use crate::error::{Error, Result};

/// Sparse L2-normalized bag-of-words counts over a hashed index space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_power_of_two() || dim > u32::MAX as usize + 1 {
        return Err(Error::InvalidConfig(format!("feature dimension {dim} is not a power of two")));
    }
    Ok(())
}

/// 64-bit FNV-1a of the token bytes, masked to `dim` buckets.
pub fn hash_token(token: &str, dim: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() & (dim as u64 - 1)) as u32
}

/// Hash tokens into `dim` buckets, sum counts (colliding tokens add), and
/// L2-normalize. An empty token list gives the zero vector.
pub fn featurize<S: AsRef<str>>(tokens: &[S], dim: usize) -> FeatureVector {
    debug_assert!(dim.is_power_of_two());
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for tok in tokens {
        *counts.entry(hash_token(tok.as_ref(), dim)).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let (indices, values) = counts.into_iter().map(|(i, c)| (i, c / norm)).unzip();
    FeatureVector { indices, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn counts_keep_ratio() {
        let fv = featurize(&["a", "a", "b"], 1 << 18);
        assert_eq!(fv.nnz(), 2);
        let wa = fv.values[fv.indices.iter().position(|&i| i == hash_token("a", 1 << 18)).unwrap()];
        let wb = fv.values[fv.indices.iter().position(|&i| i == hash_token("b", 1 << 18)).unwrap()];
        assert!((wa / wb - 2.0).abs() < 1e-12);
        assert!((fv.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tokens_give_zero_vector() {
        let fv = featurize::<&str>(&[], 16);
        assert!(fv.is_empty());
        assert_eq!(fv.norm(), 0.0);
    }

    #[test]
    fn collisions_sum_like_a_dictionary_featurizer() {
        let dim = 16;
        let tokens: Vec<String> = (0..100).map(|i| format!("tok{i}")).collect();
        // Oracle: count distinct tokens in a dictionary, then fold buckets.
        let mut dict: HashMap<&str, f64> = HashMap::new();
        for t in &tokens {
            *dict.entry(t.as_str()).or_default() += 1.0;
        }
        let mut buckets = vec![0.0; dim];
        for (t, c) in &dict {
            buckets[hash_token(t, dim) as usize] += c;
        }
        let norm = buckets.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(buckets.iter().any(|&c| c > 1.0), "expected collisions at dim 16");

        let fv = featurize(&tokens, dim);
        for (i, v) in fv.iter() {
            assert!((v - buckets[i as usize] / norm).abs() < 1e-12);
        }
        assert_eq!(fv.nnz(), buckets.iter().filter(|&&c| c > 0.0).count());
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(check_dim(1000).is_err());
        assert!(check_dim(0).is_err());
        assert!(check_dim(1 << 18).is_ok());
    }

    proptest! {
        #[test]
        fn order_invariant_sorted_unit(mut toks in prop::collection::vec("[a-e]{1,3}", 1..40), seed in any::<u64>()) {
            let a = featurize(&toks, 64);
            let k = toks.len();
            toks.rotate_left((seed as usize) % k);
            toks.reverse();
            let b = featurize(&toks, 64);
            prop_assert_eq!(&a.indices, &b.indices);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-15);
            }
            prop_assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }
}
