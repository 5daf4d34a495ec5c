use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Page;
use crate::error::{Error, Result};

/// `k` training pages drawn from a pool.
#[derive(Debug, Clone, Serialize)]
pub struct FewShotSplit {
    pub k: usize,
    pub seed: u64,
    /// Indices into the pool, in draw order.
    pub indices: Vec<usize>,
    pub train: Vec<Page>,
}

impl FewShotSplit {
    pub fn page_ids(&self) -> Vec<&str> {
        self.train.iter().map(|p| p.id.as_str()).collect()
    }
}

/// Draw `k` pages without replacement; identical `(pool, k, seed)` gives the
/// identical split. Errors if any drawn id also appears in `test`.
pub fn sample_few_shot(pool: &[Page], test: &[Page], k: usize, seed: u64) -> Result<FewShotSplit> {
    if k > pool.len() {
        return Err(Error::PoolTooSmall { k, pool: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
    let train: Vec<Page> = indices.iter().map(|&i| pool[i].clone()).collect();
    let test_ids: HashSet<&str> = test.iter().map(|p| p.id.as_str()).collect();
    if let Some(p) = train.iter().find(|p| test_ids.contains(p.id.as_str())) {
        return Err(Error::Validation(format!(
            "page `{}` is in both the training pool and the test set",
            p.id
        )));
    }
    Ok(FewShotSplit { k, seed, indices, train })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::BoundingBox;

    fn pages(prefix: &str, n: usize) -> Vec<Page> {
        let b = BoundingBox::new(0, 0, 1, 1).unwrap();
        (0..n)
            .map(|i| Page::new(format!("{prefix}{i}"), 1.0, 1.0, vec![("w".into(), b)], vec![]).unwrap())
            .collect()
    }

    #[test]
    fn same_seed_same_split() {
        let pool = pages("tr", 20);
        let test = pages("te", 5);
        let a = sample_few_shot(&pool, &test, 5, 3).unwrap();
        let b = sample_few_shot(&pool, &test, 5, 3).unwrap();
        assert_eq!(a.page_ids(), b.page_ids());
        let c = sample_few_shot(&pool, &test, 5, 4).unwrap();
        assert_ne!(a.indices, c.indices);
    }

    #[test]
    fn pool_too_small() {
        let pool = pages("tr", 3);
        assert!(matches!(
            sample_few_shot(&pool, &[], 5, 0),
            Err(Error::PoolTooSmall { k: 5, pool: 3 })
        ));
        assert_eq!(sample_few_shot(&pool, &[], 0, 0).unwrap().train.len(), 0);
    }

    #[test]
    fn leakage_is_rejected() {
        let pool = pages("p", 4);
        assert!(sample_few_shot(&pool, &pool[..1], 4, 0).is_err());
    }
}
