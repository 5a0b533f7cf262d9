use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::model::ModelConfig;

/// One pipeline stage. `lo..=hi` are 1-based block indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub index: usize,
    pub lo: usize,
    pub hi: usize,
    pub holds_embedding: bool,
    pub holds_lm_head: bool,
}

impl StageSpec {
    /// 0-based block range owned by this stage.
    pub fn blocks(&self) -> Range<usize> {
        self.lo - 1..self.hi
    }

    pub fn num_layers(&self) -> usize {
        self.hi + 1 - self.lo
    }
}

/// Near-equal contiguous split of the blocks over `k` stages; the first
/// `n_layers mod k` stages take one extra block.
pub fn partition_model(config: &ModelConfig, k: usize) -> Result<Vec<StageSpec>> {
    let n = config.n_layers;
    if k == 0 {
        return contract_err("a pipeline needs at least one stage");
    }
    if k > n {
        return contract_err(format!("{k} stages for a {n}-layer model"));
    }
    let (base, extra) = (n / k, n % k);
    let mut lo = 1;
    let specs = (1..=k)
        .map(|i| {
            let size = base + usize::from(i <= extra);
            let spec = StageSpec {
                index: i,
                lo,
                hi: lo + size - 1,
                holds_embedding: i == 1,
                holds_lm_head: i == k,
            };
            lo += size;
            spec
        })
        .collect();
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn cfg(n_layers: usize) -> ModelConfig {
        ModelConfig {
            n_layers,
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 6,
            max_seq_len: 4,
            architecture: Architecture::B,
        }
    }

    fn sizes(specs: &[StageSpec]) -> Vec<usize> {
        specs.iter().map(StageSpec::num_layers).collect()
    }

    #[test]
    fn splits_evenly_and_by_remainder() {
        assert_eq!(sizes(&partition_model(&cfg(12), 6).unwrap()), vec![2; 6]);
        assert_eq!(sizes(&partition_model(&cfg(13), 6).unwrap()), vec![3, 2, 2, 2, 2, 2]);
        let one = partition_model(&cfg(5), 1).unwrap();
        assert_eq!((one[0].lo, one[0].hi), (1, 5));
        assert!(one[0].holds_embedding && one[0].holds_lm_head);
    }

    #[test]
    fn ranges_tile_the_model() {
        for n in 1..20 {
            for k in 1..=n {
                let specs = partition_model(&cfg(n), k).unwrap();
                let flat: Vec<usize> = specs.iter().flat_map(|s| s.lo..=s.hi).collect();
                assert_eq!(flat, (1..=n).collect::<Vec<_>>());
                assert_eq!(specs.iter().filter(|s| s.holds_embedding).count(), 1);
                assert_eq!(specs.iter().filter(|s| s.holds_lm_head).count(), 1);
                let s = sizes(&specs);
                assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn too_many_stages_is_an_error() {
        assert!(partition_model(&cfg(3), 4).is_err());
        assert!(partition_model(&cfg(3), 0).is_err());
    }
}
