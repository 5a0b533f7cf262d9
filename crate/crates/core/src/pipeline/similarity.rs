use crate::error::{contract_err, Result};
use crate::kernels::dot;
use crate::model::TransformerModel;

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean cosine similarity, over probes and token positions, between the
/// two models' activations after each block. Entry `j-1` is block `j`.
pub fn activation_similarity_study(
    model_pre: &TransformerModel,
    model_fine: &TransformerModel,
    probes: &[Vec<usize>],
) -> Result<Vec<f64>> {
    if model_pre.config != model_fine.config {
        return contract_err("similarity study needs two models with one config");
    }
    if probes.is_empty() {
        return contract_err("no probe texts");
    }
    let n = model_pre.config.n_layers;
    let mut sums = vec![0.0; n];
    let mut count = 0usize;
    for p in probes {
        let (_, a) = model_pre.forward_full(p)?;
        let (_, b) = model_fine.forward_full(p)?;
        for (j, (x, y)) in a.iter().zip(&b).enumerate() {
            for r in 0..x.rows() {
                sums[j] += cosine(x.row(r), y.row(r));
            }
        }
        count += p.len();
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 3,
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 12,
            max_seq_len: 16,
            architecture: Architecture::B,
        }
    }

    #[test]
    fn identical_models_are_fully_similar() {
        let m = TransformerModel::init(cfg(), 1).unwrap();
        let sims = activation_similarity_study(&m, &m, &[vec![1, 5, 6, 7], vec![1, 9]]).unwrap();
        assert_eq!(sims.len(), 3);
        assert!(sims.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unrelated_models_are_dissimilar() {
        let a = TransformerModel::init(cfg(), 1).unwrap();
        let b = TransformerModel::init(cfg(), 2).unwrap();
        let probes: Vec<Vec<usize>> = (0..8).map(|i| (0..12).map(|j| 4 + (i * 5 + j * 3) % 8).collect()).collect();
        let sims = activation_similarity_study(&a, &b, &probes).unwrap();
        assert!(sims.iter().all(|s| s.abs() < 0.3), "{sims:?}");
    }

    #[test]
    fn config_mismatch_and_empty_probes_are_errors() {
        let a = TransformerModel::init(cfg(), 1).unwrap();
        let mut c = cfg();
        c.n_layers = 2;
        let b = TransformerModel::init(c, 1).unwrap();
        assert!(activation_similarity_study(&a, &b, &[vec![1, 2]]).is_err());
        assert!(activation_similarity_study(&a, &a, &[]).is_err());
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 2.0], &[-2.0, -4.0]) + 1.0).abs() < 1e-15);
    }
}
