//! Composite operations built from tape primitives. Everything here gets its
//! gradient for free from the primitive backward rules.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `x·W + b` for `x: [n×in]`, `w: [in×out]`, `b: [out]`.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Leaky rectifier composed from relu: `α·x + (1−α)·relu(x)`.
pub fn leaky_relu(tape: &mut Tape, x: Var, alpha: f64) -> Result<Var> {
    let ax = tape.scale(x, alpha);
    let r = tape.relu(x);
    let rr = tape.scale(r, 1.0 - alpha);
    tape.add(ax, rr)
}

/// Elementwise clamp to `[lo, hi]`: `lo + relu(x − lo) − relu(x − hi)`.
pub fn clamp(tape: &mut Tape, x: Var, lo: f64, hi: f64) -> Result<Var> {
    let a = tape.add_scalar(x, -lo);
    let ra = tape.relu(a);
    let b = tape.add_scalar(x, -hi);
    let rb = tape.relu(b);
    let diff = tape.sub(ra, rb)?;
    Ok(tape.add_scalar(diff, lo))
}

/// Causal dilated 1-D convolution over `x: [batch, t, in_ch]`.
///
/// Weights are stored pre-flattened as a `[in_ch·k × out_ch]` matrix whose
/// rows follow `(channel, tap)` order with tap `k−1` being the current time
/// step. Realized as zero-pad + gather (im2col) + matmul, so the backward
/// pass needs no dedicated convolution rule.
pub fn conv1d_causal(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    in_ch: usize,
    k: usize,
    dilation: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    debug_assert_eq!(shape.len(), 3);
    let (batch, t, d) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(d, in_ch);
    let out_ch = tape.shape(w)[1];

    // ext[0] is the zero cell every out-of-range tap points at.
    let zero = tape.scalar(0.0);
    let flat = tape.reshape(x, vec![batch * t * d])?;
    let ext = tape.concat(&[zero, flat])?;

    let mut idx = Vec::with_capacity(batch * t * in_ch * k);
    for bi in 0..batch {
        for ti in 0..t {
            for c in 0..in_ch {
                for j in 0..k {
                    let back = (k - 1 - j) * dilation;
                    if back > ti {
                        idx.push(0);
                    } else {
                        let ts = ti - back;
                        idx.push(1 + (bi * t + ts) * d + c);
                    }
                }
            }
        }
    }
    let cols = tape.gather(ext, idx)?;
    let cols = tape.reshape(cols, vec![batch * t, in_ch * k])?;
    let y = affine(tape, cols, w, b)?;
    tape.reshape(y, vec![batch, t, out_ch])
}

/// Multiply by a fixed 0/1 mask scaled by `1/(1−rate)` (inverted dropout).
pub fn apply_dropout_mask(tape: &mut Tape, x: Var, mask: &Tensor) -> Result<Var> {
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Mean cross-entropy of row-wise `logits: [n×c]` against integer labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let c = tape.shape(logits)[1];
    let p = tape.softmax(logits)?;
    let lp = tape.log(p);
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &y)| i * c + y).collect();
    let picked = tape.gather(lp, idx)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![-2.0, 0.0, 3.0]), false);
        let y = leaky_relu(&mut tape, x, 0.1).unwrap();
        let v = tape.data(y);
        assert!((v[0] + 0.2).abs() < 1e-15);
        assert!(v[1].abs() < 1e-15);
        assert!((v[2] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn clamp_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![-1.0, 0.5, 2.0]), false);
        let y = clamp(&mut tape, x, 0.0, 1.0).unwrap();
        assert_eq!(tape.data(y), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        // batch 1, t 4, in 1, k 2, dilation 1, w = [w0 (older), w1 (current)]
        let mut tape = Tape::new();
        let x = tape.leaf(
            &Tensor::new(vec![1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let w = tape.leaf(&Tensor::matrix(2, 1, vec![10.0, 1.0]).unwrap(), false);
        let b = tape.leaf(&Tensor::vector(vec![0.5]), false);
        let y = conv1d_causal(&mut tape, x, w, b, 1, 2, 1).unwrap();
        // y[t] = 10·x[t−1] + 1·x[t] + 0.5, x[−1] = 0
        assert_eq!(tape.data(y), &[1.5, 12.5, 23.5, 34.5]);
    }

    #[test]
    fn conv1d_dilated_causal_padding() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            &Tensor::new(vec![1, 5, 1], vec![1.0, 1.0, 1.0, 1.0, 1.0]).unwrap(),
            false,
        );
        let w = tape.leaf(&Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap(), false);
        let b = tape.leaf(&Tensor::vector(vec![0.0]), false);
        let y = conv1d_causal(&mut tape, x, w, b, 1, 2, 2).unwrap();
        // taps at t and t−2
        assert_eq!(tape.data(y), &[1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::matrix(2, 4, vec![0.0; 8]).unwrap(), false);
        let l = cross_entropy(&mut tape, logits, &[1, 3]).unwrap();
        assert!((tape.item(l) - 4.0f64.ln()).abs() < 1e-12);
    }
}
