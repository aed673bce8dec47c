//! Minimal dense f64 linear algebra for the toy model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Matrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A·x where A is rows×cols and x has cols entries.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| dot(self.row(r), x))
            .collect()
    }

    /// y = Aᵀ·v where v has rows entries; result has cols entries.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += vr * a;
            }
        }
        out
    }

    /// Rank-1 accumulate: self[r][c] += scale·u[r]·w[c].
    pub fn add_outer(&mut self, u: &[f64], w: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(w.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let s = scale * ur;
            for (dst, &wc) in self.row_mut(r).iter_mut().zip(w) {
                *dst += s * wc;
            }
        }
    }

    pub fn add_row_scaled(&mut self, r: usize, v: &[f64], scale: f64) {
        for (dst, &x) in self.row_mut(r).iter_mut().zip(v) {
            *dst += scale * x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Index of the largest entry; ties break toward the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Probability floor applied after softmax so emitted distributions stay in
/// the open interval (0, 1) even when logits saturate.
const PROB_FLOOR: f64 = 1e-15;

/// Numerically stable softmax with max-subtraction. Entries are clamped to
/// [PROB_FLOOR, 1 - PROB_FLOOR] and renormalized; the clamp is inactive
/// outside the saturated regime.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut probs: Vec<f64> = exps
        .iter()
        .map(|&e| (e / sum).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
        .collect();
    let renorm: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= renorm;
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn matvec_and_transpose_agree_with_hand_computation() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let p = softmax(&[0.3, -1.2, 2.0]);
        let q = softmax(&[100.3, 98.8, 102.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_saturated_logits_stay_in_open_interval() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p[0] < 1.0 && p[0] > 0.0);
        assert!(p[1] > 0.0 && p[1] < 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_init_is_seed_deterministic() {
        let a = Matrix::uniform(3, 4, -0.05, 0.05, &mut seeded_rng(9));
        let b = Matrix::uniform(3, 4, -0.05, 0.05, &mut seeded_rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }
}
