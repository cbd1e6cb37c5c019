//! Central-difference gradient checker for scalar-valued tape programs.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compare analytic gradients of `f` against central differences.
///
/// Returns the max over all input coordinates of
/// `|analytic − fd| / max(1, |analytic|)`. Reports, never asserts.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "gradient_check eps {} outside [1e-7, 1e-3]",
            eps
        )));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.data(loss).len() != 1 {
        return Err(Error::Contract(
            "gradient_check requires a scalar-valued function".into(),
        ));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).unwrap_or(&[]).to_vec())
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.item(loss))
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let a = analytic[i][j];
            let err = (a - fd).abs() / a.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// The standard battery: one check per primitive op plus every loss pathway,
/// on seeded random batches. Returns `(case name, max relative error)` pairs.
/// Gradient reversal is excluded by design — its backward is intentionally
/// not the derivative of its forward — and is covered by direct sign tests.
pub fn standard_suite(seed: u64) -> Result<Vec<(String, f64)>> {
    use crate::contrastive::{
        anti_divergence_loss, self_consistency_loss, supervised_contrastive_loss, total_loss,
    };
    use crate::lcib::{adversarial_loss, lcib_chain};
    use crate::ops::{affine, clamp, conv1d_causal, cross_entropy, leaky_relu};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    // magnitudes in [0.2, 1.2]: keeps every coordinate away from the relu and
    // clamp kinks at the probe scale
    fn rand_with(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.2..1.2);
                if rng.gen::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }
    fn pos_with(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.3..2.0)).collect()).unwrap()
    }
    macro_rules! rand_t {
        ($($s:expr),*) => { rand_with(rng, vec![$($s),*]) }
    }
    macro_rules! pos_t {
        ($($s:expr),*) => { pos_with(rng, vec![$($s),*]) }
    }

    let eps = 1e-5;
    let mut out = Vec::new();
    let mut run = |name: &str, err: Result<f64>| -> Result<()> {
        out.push((name.to_string(), err?));
        Ok(())
    };

    run(
        "matmul",
        gradient_check(
            |t, v| {
                let m = t.matmul(v[0], v[1])?;
                Ok(t.sum(m))
            },
            &[rand_t![3, 4], rand_t![4, 2]],
            eps,
        ),
    )?;
    run(
        "transpose",
        gradient_check(
            |t, v| {
                let tr = t.transpose(v[0])?;
                let m = t.mul(tr, v[1])?;
                Ok(t.sum(m))
            },
            &[rand_t![3, 5], rand_t![5, 3]],
            eps,
        ),
    )?;
    run(
        "add",
        gradient_check(
            |t, v| {
                let s = t.add(v[0], v[1])?;
                let sq = t.mul(s, s)?;
                Ok(t.mean(sq))
            },
            &[rand_t![4, 3], rand_t![4, 3]],
            eps,
        ),
    )?;
    run(
        "add_row",
        gradient_check(
            |t, v| {
                let s = t.add_row(v[0], v[1])?;
                let sq = t.mul(s, s)?;
                Ok(t.sum(sq))
            },
            &[rand_t![4, 3], rand_t![3]],
            eps,
        ),
    )?;
    run(
        "mul",
        gradient_check(
            |t, v| {
                let m = t.mul(v[0], v[1])?;
                Ok(t.sum(m))
            },
            &[rand_t![6], rand_t![6]],
            eps,
        ),
    )?;
    run(
        "scale_add_scalar",
        gradient_check(
            |t, v| {
                let s = t.scale(v[0], -2.5);
                let a = t.add_scalar(s, 0.7);
                let sq = t.mul(a, a)?;
                Ok(t.mean(sq))
            },
            &[rand_t![5]],
            eps,
        ),
    )?;
    run(
        "relu",
        gradient_check(
            |t, v| {
                let r = t.relu(v[0]);
                let m = t.mul(r, v[1])?;
                Ok(t.sum(m))
            },
            &[rand_t![8], rand_t![8]],
            eps,
        ),
    )?;
    run(
        "leaky_relu",
        gradient_check(
            |t, v| {
                let r = leaky_relu(t, v[0], 0.2)?;
                Ok(t.sum(r))
            },
            &[rand_t![8]],
            eps,
        ),
    )?;
    run(
        "clamp",
        gradient_check(
            |t, v| {
                let c = clamp(t, v[0], -0.9, 0.9)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &[rand_t![8]],
            eps,
        ),
    )?;
    run(
        "exp",
        gradient_check(
            |t, v| {
                let e = t.exp(v[0]);
                Ok(t.mean(e))
            },
            &[rand_t![6]],
            eps,
        ),
    )?;
    run(
        "log",
        gradient_check(
            |t, v| {
                let l = t.log(v[0]);
                Ok(t.sum(l))
            },
            &[pos_t![6]],
            eps,
        ),
    )?;
    run(
        "sigmoid",
        gradient_check(
            |t, v| {
                let s = t.sigmoid(v[0]);
                let sq = t.mul(s, s)?;
                Ok(t.mean(sq))
            },
            &[rand_t![7]],
            eps,
        ),
    )?;
    run(
        "sum_mean",
        gradient_check(
            |t, v| {
                let s = t.sum(v[0]);
                let m = t.mean(v[0]);
                Ok(t.add(s, m)?)
            },
            &[rand_t![5]],
            eps,
        ),
    )?;
    run(
        "mean_time",
        gradient_check(
            |t, v| {
                let m = t.mean_time(v[0])?;
                let sq = t.mul(m, m)?;
                Ok(t.sum(sq))
            },
            &[rand_t![2, 5, 3]],
            eps,
        ),
    )?;
    run(
        "softmax",
        gradient_check(
            |t, v| {
                let p = t.softmax(v[0])?;
                let m = t.mul(p, v[1])?;
                Ok(t.sum(m))
            },
            &[rand_t![3, 4], rand_t![3, 4]],
            eps,
        ),
    )?;
    run(
        "cosine_pairs",
        gradient_check(
            |t, v| {
                let c = t.cosine_pairs(v[0], v[1])?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
            &[rand_t![3, 6], rand_t![4, 6]],
            eps,
        ),
    )?;
    run(
        "gather_concat_reshape",
        gradient_check(
            |t, v| {
                let g = t.gather(v[0], vec![0, 2, 2, 5])?;
                let c = t.concat(&[g, v[1]])?;
                let r = t.reshape(c, vec![2, 3])?;
                let sq = t.mul(r, r)?;
                Ok(t.sum(sq))
            },
            &[rand_t![6], rand_t![2]],
            eps,
        ),
    )?;
    run(
        "conv1d_causal",
        gradient_check(
            |t, v| {
                let y = conv1d_causal(t, v[0], v[1], v[2], 3, 3, 2)?;
                let sq = t.mul(y, y)?;
                Ok(t.mean(sq))
            },
            &[rand_t![2, 8, 3], rand_t![9, 4], rand_t![4]],
            eps,
        ),
    )?;
    run(
        "affine",
        gradient_check(
            |t, v| {
                let y = affine(t, v[0], v[1], v[2])?;
                Ok(t.sum(y))
            },
            &[rand_t![4, 3], rand_t![3, 2], rand_t![2]],
            eps,
        ),
    )?;
    run(
        "cross_entropy",
        gradient_check(
            |t, v| cross_entropy(t, v[0], &[0, 2, 1, 2]),
            &[rand_t![4, 3]],
            eps,
        ),
    )?;
    run(
        "basis_chain",
        gradient_check(
            |t, v| {
                let fh = lcib_chain(t, v[0], v[1])?;
                let sq = t.mul(fh, fh)?;
                Ok(t.sum(sq))
            },
            &[rand_t![4, 6], rand_t![6, 3]],
            eps,
        ),
    )?;
    run(
        "loss_adversarial",
        gradient_check(
            |t, v| {
                let po = t.sigmoid(v[0]);
                let pr = t.sigmoid(v[1]);
                adversarial_loss(t, po, pr)
            },
            &[rand_t![6], rand_t![6]],
            eps,
        ),
    )?;
    run(
        "loss_supervised",
        gradient_check(
            |t, v| supervised_contrastive_loss(t, v[0], &[0, 0, 1, 1, 2, 2], 0.5),
            &[rand_t![6, 8]],
            eps,
        ),
    )?;
    run(
        "loss_self_consistency",
        gradient_check(
            |t, v| {
                Ok(self_consistency_loss(t, v[0], v[1], 0.5)?
                    .expect("k >= 2 always yields a value"))
            },
            &[rand_t![4, 8], rand_t![4, 8]],
            eps,
        ),
    )?;
    run(
        "loss_anti_divergence",
        gradient_check(
            |t, v| {
                Ok(anti_divergence_loss(t, v[0], v[1], 0.5)?
                    .expect("nonempty distrusted set always yields a value"))
            },
            &[rand_t![3, 8], rand_t![6, 8]],
            eps,
        ),
    )?;
    run(
        "loss_total",
        gradient_check(
            |t, v| {
                let l_sup = supervised_contrastive_loss(t, v[0], &[0, 0, 1, 1], 0.5)?;
                let l_self = self_consistency_loss(t, v[1], v[2], 0.5)?;
                let l_anti = anti_divergence_loss(t, v[1], v[0], 0.5)?;
                let po = t.sigmoid(v[3]);
                let pr = t.sigmoid(v[4]);
                let l_adv = adversarial_loss(t, po, pr)?;
                let (total, _) = total_loss(t, l_sup, l_self, l_anti, Some(l_adv), 0.5, 0.5)?;
                Ok(total)
            },
            &[
                rand_t![4, 8],
                rand_t![3, 8],
                rand_t![3, 8],
                rand_t![5],
                rand_t![5],
            ],
            eps,
        ),
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn dot_product_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randv(&mut rng, 6);
        let b = randv(&mut rng, 6);
        let err = gradient_check(
            |tape, vars| {
                let p = tape.mul(vars[0], vars[1])?;
                Ok(tape.sum(p))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn softmax_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = randv(&mut rng, 5);
        let err = gradient_check(
            |tape, vars| {
                let p = tape.softmax(vars[0])?;
                let lp = tape.log(p);
                let g = tape.gather(lp, vec![2])?;
                let s = tape.sum(g);
                Ok(tape.scale(s, -1.0))
            },
            &[v],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn standard_suite_is_tight() {
        for (name, err) in standard_suite(17).unwrap() {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn eps_outside_range_is_contract_error() {
        let t = Tensor::scalar(1.0);
        let r = gradient_check(|tape, vars| Ok(tape.sum(vars[0])), &[t], 1e-2);
        assert!(r.is_err());
    }
}
