//! The compact differentiable stack: a mean-of-embeddings encoder, a masked
//! language modeling head, and an ensemble of voter classification heads.
//! All arithmetic is 64-bit and all gradients are exact analytic
//! derivatives, verified against finite differences in the test suite.

pub mod backward;
pub mod checkpoint;
pub mod forward;
pub mod math;
pub mod optimizer;

pub use backward::{backward, batch_loss, Gradients, TrainBatch};
pub use checkpoint::{load_checkpoint, params_digest, save_checkpoint, CheckpointMeta, Stage};
pub use forward::{encode, hard_loss, mlm_forward_loss, soft_loss, voters_forward};
pub use optimizer::{AdamHyper, AdamState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::math::{argmax, Matrix};
use crate::rng::seeded_rng;

/// Weight/bias initialization range.
const INIT_RANGE: f64 = 0.05;

/// Structural metadata: every shape in the model follows from these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Vocabulary size |V| (including reserved tokens).
    pub vocab: usize,
    /// Embedding width d.
    pub embed: usize,
    /// Class count C.
    pub classes: usize,
    /// Voter count M.
    pub voters: usize,
    /// Hidden width of voter 0.
    pub voter_hidden: usize,
    /// Hidden width increment per voter index.
    pub voter_hidden_step: usize,
}

impl ModelDims {
    /// Hidden width of voter `i`: base + i·step, the "minor dimension
    /// differences" that keep the ensemble members non-identical.
    pub fn hidden_of(&self, voter: usize) -> usize {
        self.voter_hidden + voter * self.voter_hidden_step
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(Error::InvalidConfig("vocab must include the reserved block".into()));
        }
        if self.embed == 0 || self.classes < 2 || self.voters == 0 || self.voter_hidden == 0 {
            return Err(Error::InvalidConfig(format!("degenerate model dims {self:?}")));
        }
        Ok(())
    }
}

/// One ensemble head: a single tanh hidden layer and a linear output over C
/// classes, read through softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct VoterNet {
    /// h×d
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// C×h
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl VoterNet {
    fn init(hidden: usize, dims: &ModelDims, rng: &mut rand_chacha::ChaCha8Rng) -> VoterNet {
        VoterNet {
            w1: Matrix::uniform(hidden, dims.embed, -INIT_RANGE, INIT_RANGE, rng),
            b1: vec![0.0; hidden],
            w2: Matrix::uniform(dims.classes, hidden, -INIT_RANGE, INIT_RANGE, rng),
            b2: vec![0.0; dims.classes],
        }
    }
}

/// The full parameter set: embedding table, MLM projection, and M voters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// |V|×d token embedding table.
    pub embeddings: Matrix,
    /// |V|×d projection of the context vector onto vocabulary logits.
    pub mlm_w: Matrix,
    /// |V| bias.
    pub mlm_b: Vec<f64>,
    pub voters: Vec<VoterNet>,
}

impl ModelParams {
    /// Seeded uniform(-0.05, 0.05) initialization, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<ModelParams> {
        dims.validate()?;
        let mut rng = seeded_rng(seed);
        let embeddings = Matrix::uniform(dims.vocab, dims.embed, -INIT_RANGE, INIT_RANGE, &mut rng);
        let mlm_w = Matrix::uniform(dims.vocab, dims.embed, -INIT_RANGE, INIT_RANGE, &mut rng);
        let mlm_b = vec![0.0; dims.vocab];
        let voters = (0..dims.voters)
            .map(|i| VoterNet::init(dims.hidden_of(i), &dims, &mut rng))
            .collect();
        Ok(ModelParams {
            dims,
            embeddings,
            mlm_w,
            mlm_b,
            voters,
        })
    }

    /// Replaces every voter head with a fresh seeded initialization, leaving
    /// the encoder and MLM head untouched.
    pub fn reinit_voters(&mut self, seed: u64) {
        let mut rng = seeded_rng(seed);
        self.voters = (0..self.dims.voters)
            .map(|i| VoterNet::init(self.dims.hidden_of(i), &self.dims, &mut rng))
            .collect();
    }

    /// Named views of every parameter block, in a fixed order.
    pub fn named_blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("embeddings".into(), self.embeddings.data()),
            ("mlm_w".into(), self.mlm_w.data()),
            ("mlm_b".into(), &self.mlm_b),
        ];
        for (i, v) in self.voters.iter().enumerate() {
            out.push((format!("voter{i}.w1"), v.w1.data()));
            out.push((format!("voter{i}.b1"), &v.b1));
            out.push((format!("voter{i}.w2"), v.w2.data()));
            out.push((format!("voter{i}.b2"), &v.b2));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.embeddings.data_mut(),
            self.mlm_w.data_mut(),
            &mut self.mlm_b,
        ];
        for v in &mut self.voters {
            out.push(v.w1.data_mut());
            out.push(&mut v.b1);
            out.push(v.w2.data_mut());
            out.push(&mut v.b2);
        }
        out
    }
}

/// A probability vector over the C classes: entries strictly inside (0, 1)
/// and summing to 1 within 1e-12.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Distribution> {
        if probs.is_empty() {
            return Err(Error::InvalidData("empty distribution".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidData(
                "distribution entries must lie strictly in (0,1)".into(),
            ));
        }
        Ok(Distribution(probs))
    }

    // Softmax guarantees the invariants for finite logits; non-finite
    // parameters surface through the loss/gradient finiteness checks, which
    // name the offending tensor instead of panicking here.
    pub(crate) fn from_softmax(probs: Vec<f64>) -> Distribution {
        Distribution(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most likely class; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Entry-wise mean of several distributions over the same classes.
    pub fn mean_of(dists: &[Distribution]) -> Distribution {
        assert!(!dists.is_empty());
        let n = dists.len() as f64;
        let c = dists[0].len();
        let mut acc = vec![0.0; c];
        for d in dists {
            assert_eq!(d.len(), c);
            for (a, &p) in acc.iter_mut().zip(d.probs()) {
                *a += p / n;
            }
        }
        Distribution(acc)
    }
}

/// Plain ensemble prediction used for evaluation: argmax of the voter-mean
/// distribution. Unlike pseudo-labeling this never abstains.
pub fn ensemble_argmax(dists: &[Distribution]) -> usize {
    Distribution::mean_of(dists).argmax()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 10,
            embed: 4,
            classes: 2,
            voters: 3,
            voter_hidden: 5,
            voter_hidden_step: 2,
        }
    }

    #[test]
    fn voter_hidden_sizes_step_up() {
        let p = ModelParams::init(dims(), 1).unwrap();
        assert_eq!(p.voters[0].w1.shape(), (5, 4));
        assert_eq!(p.voters[1].w1.shape(), (7, 4));
        assert_eq!(p.voters[2].w1.shape(), (9, 4));
        assert_eq!(p.voters[2].w2.shape(), (2, 9));
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let a = ModelParams::init(dims(), 42).unwrap();
        let b = ModelParams::init(dims(), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.mlm_b.iter().all(|&x| x == 0.0));
        assert!(a.voters.iter().all(|v| v.b1.iter().all(|&x| x == 0.0)));
        let c = ModelParams::init(dims(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reinit_voters_leaves_encoder_alone() {
        let mut p = ModelParams::init(dims(), 1).unwrap();
        let emb_before = p.embeddings.clone();
        let voters_before = p.voters.clone();
        p.reinit_voters(99);
        assert_eq!(p.embeddings, emb_before);
        assert_ne!(p.voters, voters_before);
    }

    #[test]
    fn distribution_rejects_invalid_probs() {
        assert!(Distribution::from_probs(vec![0.5, 0.6]).is_err());
        assert!(Distribution::from_probs(vec![1.0, 0.0]).is_err());
        assert!(Distribution::from_probs(vec![]).is_err());
        assert!(Distribution::from_probs(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn mean_of_distributions() {
        let a = Distribution::from_probs(vec![0.8, 0.2]).unwrap();
        let b = Distribution::from_probs(vec![0.4, 0.6]).unwrap();
        let m = Distribution::mean_of(&[a, b]);
        assert!((m.probs()[0] - 0.6).abs() < 1e-15);
        assert!((m.probs()[1] - 0.4).abs() < 1e-15);
    }
}
