//! Adam with decoupled weight decay.

use crate::model::backward::Gradients;
use crate::model::ModelParams;

/// Optimizer hyperparameters. Weight decay is decoupled from the adaptive
/// update and defaults to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug)]
pub struct AdamState {
    pub hyper: AdamHyper,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> AdamState {
        AdamState {
            hyper,
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ). Deterministic; parameters
    /// with zero gradient and zero weight decay are left bit-identical.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.step += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);

        let mut m_blocks = self.m.blocks_mut();
        let mut v_blocks = self.v.blocks_mut();
        let g_blocks = grads.blocks();
        for (b, p_block) in params.blocks_mut().into_iter().enumerate() {
            let m = &mut m_blocks[b];
            let v = &mut v_blocks[b];
            let g = g_blocks[b];
            for i in 0..p_block.len() {
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let update = m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * p_block[i];
                p_block[i] -= lr * update;
            }
        }
    }
}

impl Gradients {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn params(seed: u64) -> ModelParams {
        ModelParams::init(
            ModelDims {
                vocab: 6,
                embed: 3,
                classes: 2,
                voters: 1,
                voter_hidden: 3,
                voter_hidden_step: 0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut p = params(1);
        let before = p.clone();
        let grads = Gradients::zeros_like(&p);
        let mut state = AdamState::new(&p, AdamHyper::default());
        state.step(&mut p, &grads, 0.1);
        state.step(&mut p, &grads, 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // Scalar check: from zero state, m̂ = g, v̂ = g², so the update is
        // −lr·g/(|g|+ε) ≈ −lr·sign(g).
        let mut p = params(2);
        let before = p.embeddings.data()[0];
        let mut grads = Gradients::zeros_like(&p);
        grads.embeddings.data_mut()[0] = 0.37;
        let mut state = AdamState::new(&p, AdamHyper::default());
        let lr = 0.01;
        state.step(&mut p, &grads, lr);
        let moved = p.embeddings.data()[0] - before;
        let expected = -lr * 0.37 / (0.37 + 1e-8);
        assert!((moved - expected).abs() < 1e-15);
    }

    #[test]
    fn steps_are_bit_deterministic() {
        let run = || {
            let mut p = params(3);
            let mut grads = Gradients::zeros_like(&p);
            for (i, g) in grads.mlm_b.iter_mut().enumerate() {
                *g = (i as f64 - 2.5) * 0.01;
            }
            let mut state = AdamState::new(&p, AdamHyper::default());
            for _ in 0..5 {
                state.step(&mut p, &grads, 0.02);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_gradient() {
        let mut p = params(4);
        let before = p.embeddings.data()[0];
        let grads = Gradients::zeros_like(&p);
        let hyper = AdamHyper {
            weight_decay: 0.5,
            ..AdamHyper::default()
        };
        let mut state = AdamState::new(&p, hyper);
        state.step(&mut p, &grads, 0.1);
        let after = p.embeddings.data()[0];
        assert!((after - before * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }
}
