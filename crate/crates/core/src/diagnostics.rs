//! Gradient checks of the retriever and generator architectures at a small
//! width, on one toy pair.

use serde::{Deserialize, Serialize};

use crate::data::{build_vocabulary, PairRecord};
use crate::error::Result;
use crate::generator::{memorization_pairs, select_knowledge, GeneratorModel, KbSelector};
use crate::nn::{example_rng, gradient_check, GradCheckReport, ModelConfig};
use crate::retriever::RetrieverModel;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_GRADCHECK_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureCheck {
    pub architecture: String,
    pub report: GradCheckReport,
}

impl ArchitectureCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn tiny(layers: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 4,
        n_layers_enc: layers,
        n_layers_dec: layers,
        max_input_len: 64,
        max_output_len: 32,
        vocab_size,
    }
}

/// Central-difference checks of the denoising reconstruction loss
/// (one layer each side, mean-pooled memory) and the teacher-forced
/// generator loss (two layers each side).
pub fn gradcheck_architectures(seed: u64, eps: f64) -> Result<Vec<ArchitectureCheck>> {
    let pairs = memorization_pairs(1, seed);
    let pair: &PairRecord = &pairs[0];
    let vocab = build_vocabulary(&[pair.token_stream()], 1, 8192)?;

    let retriever = RetrieverModel::new(vocab.clone(), tiny(1, 0), seed)?;
    let seg = retriever.segments(pair.kb.sentences.first(), &pair.table, &pair.highlights)?;
    let r = gradient_check(
        |p, g| retriever.reconstruction_loss(p, g, &seg, 0.6, &mut example_rng(seed, 0, 0)),
        &retriever.model.params,
        eps,
        seed,
    )?;

    let generator = GeneratorModel::new(vocab, tiny(2, 0), true, seed)?;
    let kb = select_knowledge(pair, KbSelector::Leading, 3)?;
    let ex = generator.example(pair, &kb)?;
    let g = gradient_check(|p, gr| generator.loss(p, gr, &ex), &generator.model.params, eps, seed)?;

    Ok(vec![
        ArchitectureCheck { architecture: "retriever".into(), report: r },
        ArchitectureCheck { architecture: "generator".into(), report: g },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_architectures_pass() {
        let checks = gradcheck_architectures(42, DEFAULT_GRADCHECK_EPS).unwrap();
        assert_eq!(checks.len(), 2);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
            assert!(c.report.n_checked > 100);
        }
    }
}
