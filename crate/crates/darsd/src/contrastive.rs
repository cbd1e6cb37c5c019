//! The three loss pathways of hybrid contrastive optimization and the
//! combined objective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{cosine_raw, Tensor};

/// Input-space augmentation: Gaussian jitter plus per-sample magnitude
/// scaling. The augmented view is re-encoded, so it traverses the extractor.
#[derive(Debug, Clone)]
pub struct AugmentationPolicy {
    pub jitter_sigma: f64,
    pub scale_low: f64,
    pub scale_high: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.1,
            scale_low: 0.8,
            scale_high: 1.2,
        }
    }
}

/// Augment a `[batch, T, D]` (or any leading-batch) tensor. Shape-preserving;
/// expectation equals the input up to the scale range's mean.
pub fn augment(x: &Tensor, policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = x.shape().to_vec();
    let batch = shape[0];
    let per = x.len() / batch.max(1);
    let mut out = Vec::with_capacity(x.len());
    for b in 0..batch {
        let scale = if policy.scale_low == policy.scale_high {
            policy.scale_low
        } else {
            rng.gen_range(policy.scale_low..policy.scale_high)
        };
        for &v in &x.data()[b * per..(b + 1) * per] {
            let noise = if policy.jitter_sigma > 0.0 {
                // Box-Muller; two uniforms per draw keeps the stream simple
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                policy.jitter_sigma
                    * (-2.0 * u1.ln()).sqrt()
                    * (2.0 * std::f64::consts::PI * u2).cos()
            } else {
                0.0
            };
            out.push((v + noise) * scale);
        }
    }
    Tensor::new(shape, out).unwrap()
}

/// Supervised aggregation loss over anchors with same-class positives and
/// different-class negatives; the denominator contains negatives only.
/// Anchors lacking positives or negatives are skipped; a batch where every
/// anchor is skipped is degenerate.
pub fn supervised_contrastive_loss(
    tape: &mut Tape,
    feats: Var,
    labels: &[usize],
    tau: f64,
) -> Result<Var> {
    let n = tape.shape(feats)[0];
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "supervised loss: {} features vs {} labels",
            n,
            labels.len()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::Contract("temperature must be positive".into()));
    }
    let c = tape.cosine_pairs(feats, feats)?;
    let s = tape.scale(c, 1.0 / tau);
    let e = tape.exp(s);
    let mut anchor_losses = Vec::new();
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let neg_terms = tape.gather(e, negatives.iter().map(|&j| i * n + j).collect())?;
        let denom = tape.sum(neg_terms);
        let log_denom = tape.log(denom);
        let pos_sims = tape.gather(s, positives.iter().map(|&j| i * n + j).collect())?;
        let mean_pos = tape.mean(pos_sims);
        let neg_mean_pos = tape.scale(mean_pos, -1.0);
        anchor_losses.push(tape.add(log_denom, neg_mean_pos)?);
    }
    if anchor_losses.is_empty() {
        return Err(Error::DegenerateBatch(
            "supervised contrastive loss: every anchor lacks positives or negatives".into(),
        ));
    }
    let stacked = tape.concat(&anchor_losses)?;
    Ok(tape.mean(stacked))
}

/// Self-supervised consistency over distrusted features: positive is the
/// sample's own augmented view, negatives are the other (non-augmented)
/// distrusted features. Returns `None` when fewer than two samples exist.
pub fn self_consistency_loss(
    tape: &mut Tape,
    dis: Var,
    dis_aug: Var,
    tau: f64,
) -> Result<Option<Var>> {
    let k = tape.shape(dis)[0];
    if tape.shape(dis) != tape.shape(dis_aug) {
        return Err(Error::ShapeMismatch {
            op: "self_consistency_loss",
            lhs: tape.shape(dis).to_vec(),
            rhs: tape.shape(dis_aug).to_vec(),
        });
    }
    if k < 2 {
        return Ok(None);
    }
    let cp = tape.cosine_pairs(dis, dis_aug)?;
    let sp = tape.scale(cp, 1.0 / tau);
    let pos = tape.gather(sp, (0..k).map(|i| i * k + i).collect())?;
    let cn = tape.cosine_pairs(dis, dis)?;
    let sn = tape.scale(cn, 1.0 / tau);
    let en = tape.exp(sn);
    let mut losses = Vec::with_capacity(k);
    for i in 0..k {
        let negs: Vec<usize> = (0..k).filter(|&j| j != i).map(|j| i * k + j).collect();
        let terms = tape.gather(en, negs)?;
        let denom = tape.sum(terms);
        let log_denom = tape.log(denom);
        let pos_i = tape.gather(pos, vec![i])?;
        let pos_s = tape.reshape(pos_i, vec![])?;
        let neg_pos = tape.scale(pos_s, -1.0);
        losses.push(tape.add(log_denom, neg_pos)?);
    }
    let stacked = tape.concat(&losses)?;
    Ok(Some(tape.mean(stacked)))
}

/// Index of the max-cosine source feature for one distrusted feature.
/// Ties break to the lowest index.
pub fn nearest_source_anchor(dis_feat: &[f64], source_feats: &Tensor) -> Result<usize> {
    let n_s = source_feats.shape()[0];
    if n_s == 0 {
        return Err(Error::Contract("nearest_source_anchor: empty source set".into()));
    }
    let mut best = 0usize;
    let mut best_cos = f64::NEG_INFINITY;
    for j in 0..n_s {
        let cs = cosine_raw(dis_feat, source_feats.row(j))?;
        if cs > best_cos {
            best_cos = cs;
            best = j;
        }
    }
    Ok(best)
}

/// Anti-divergence regularization: each distrusted feature is pulled toward
/// its nearest-cosine source anchor; the denominator runs over all source
/// features including the anchor. Empty distrusted set contributes nothing.
pub fn anti_divergence_loss(
    tape: &mut Tape,
    dis: Var,
    src: Var,
    tau: f64,
) -> Result<Option<Var>> {
    let k = tape.shape(dis)[0];
    if k == 0 {
        return Ok(None);
    }
    let n_s = tape.shape(src)[0];
    if n_s == 0 {
        return Err(Error::Contract("anti_divergence_loss: empty source set".into()));
    }
    let c = tape.cosine_pairs(dis, src)?;
    let s = tape.scale(c, 1.0 / tau);
    let e = tape.exp(s);
    // anchors come from the recorded values; the selection is not a gradient path
    let sv = tape.data(s).to_vec();
    let mut losses = Vec::with_capacity(k);
    for i in 0..k {
        let row = &sv[i * n_s..(i + 1) * n_s];
        let mut anchor = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[anchor] {
                anchor = j;
            }
        }
        let terms = tape.gather(e, (0..n_s).map(|j| i * n_s + j).collect())?;
        let denom = tape.sum(terms);
        let log_denom = tape.log(denom);
        let pos_i = tape.gather(s, vec![i * n_s + anchor])?;
        let pos_s = tape.reshape(pos_i, vec![])?;
        let neg_pos = tape.scale(pos_s, -1.0);
        losses.push(tape.add(log_denom, neg_pos)?);
    }
    let stacked = tape.concat(&losses)?;
    Ok(Some(tape.mean(stacked)))
}

/// Recorded values of one step's loss terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub l_sup: f64,
    pub l_self: f64,
    pub l_anti: f64,
    pub l_adv: f64,
    pub l_total: f64,
}

/// `L_total = L_sup + L_self + λ₁·L_anti + λ₂·L_adv` on the tape. Missing
/// optional terms contribute zero. Any non-finite component aborts the step
/// with a diagnostic naming the term.
pub fn total_loss(
    tape: &mut Tape,
    l_sup: Var,
    l_self: Option<Var>,
    l_anti: Option<Var>,
    l_adv: Option<Var>,
    lambda1: f64,
    lambda2: f64,
) -> Result<(Var, LossTerms)> {
    let check = |tape: &Tape, v: Var, term: &'static str| -> Result<f64> {
        let x = tape.item(v);
        if !x.is_finite() {
            return Err(Error::NonFiniteLoss { term, value: x });
        }
        Ok(x)
    };
    let mut terms = LossTerms {
        l_sup: check(tape, l_sup, "l_sup")?,
        ..Default::default()
    };
    let mut total = l_sup;
    if let Some(v) = l_self {
        terms.l_self = check(tape, v, "l_self")?;
        total = tape.add(total, v)?;
    }
    if let Some(v) = l_anti {
        terms.l_anti = check(tape, v, "l_anti")?;
        let w = tape.scale(v, lambda1);
        total = tape.add(total, w)?;
    }
    if let Some(v) = l_adv {
        terms.l_adv = check(tape, v, "l_adv")?;
        let w = tape.scale(v, lambda2);
        total = tape.add(total, w)?;
    }
    terms.l_total = tape.item(total);
    if !terms.l_total.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "l_total",
            value: terms.l_total,
        });
    }
    Ok((total, terms))
}

/// Brute-force double-loop reference implementations evaluated straight from
/// the loss definitions. Independent of the tape path; used by the test and
/// acceptance suites.
pub mod oracle {
    use crate::tensor::cosine_raw;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        cosine_raw(a, b).expect("oracle features must have nonzero norm")
    }

    /// Definition-level supervised contrastive loss. `None` if every anchor is skipped.
    pub fn supervised(feats: &[Vec<f64>], labels: &[usize], tau: f64) -> Option<f64> {
        let n = feats.len();
        let mut acc = 0.0;
        let mut anchors = 0usize;
        for i in 0..n {
            let pos: Vec<usize> = (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let denom: f64 = neg
                .iter()
                .map(|&j| (cos(&feats[i], &feats[j]) / tau).exp())
                .sum();
            let mut inner = 0.0;
            for &p in &pos {
                inner += -((cos(&feats[i], &feats[p]) / tau).exp() / denom).ln();
            }
            acc += inner / pos.len() as f64;
            anchors += 1;
        }
        if anchors == 0 {
            None
        } else {
            Some(acc / anchors as f64)
        }
    }

    /// Definition-level self-consistency loss. `None` for fewer than two samples.
    pub fn self_consistency(dis: &[Vec<f64>], aug: &[Vec<f64>], tau: f64) -> Option<f64> {
        let k = dis.len();
        if k < 2 {
            return None;
        }
        let mut acc = 0.0;
        for i in 0..k {
            let num = (cos(&dis[i], &aug[i]) / tau).exp();
            let denom: f64 = (0..k)
                .filter(|&j| j != i)
                .map(|j| (cos(&dis[i], &dis[j]) / tau).exp())
                .sum();
            acc += -(num / denom).ln();
        }
        Some(acc / k as f64)
    }

    /// Definition-level anti-divergence loss. `None` for an empty distrusted set.
    pub fn anti_divergence(dis: &[Vec<f64>], src: &[Vec<f64>], tau: f64) -> Option<f64> {
        let k = dis.len();
        if k == 0 {
            return None;
        }
        let mut acc = 0.0;
        for f in dis {
            let mut anchor = 0usize;
            for j in 1..src.len() {
                if cos(f, &src[j]) > cos(f, &src[anchor]) {
                    anchor = j;
                }
            }
            let num = (cos(f, &src[anchor]) / tau).exp();
            let denom: f64 = src.iter().map(|s| (cos(f, s) / tau).exp()).sum();
            acc += -(num / denom).ln();
        }
        Some(acc / k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn sup_loss_single_class_is_degenerate() {
        let mut tape = Tape::new();
        let f = tape.leaf(&mat(&[vec![1.0, 0.0], vec![0.9, 0.1]]), false);
        let r = supervised_contrastive_loss(&mut tape, f, &[0, 0], 1.0);
        assert!(matches!(r, Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn sup_loss_orthogonal_pairs_closed_form() {
        // 2 classes × 2 identical unit features, orthogonal across classes,
        // τ = 1: every anchor contributes ln 2 − 1
        let rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let labels = [0, 0, 1, 1];
        let expect = oracle::supervised(&rows, &labels, 1.0).unwrap();
        assert!((expect - (2.0f64.ln() - 1.0)).abs() < 1e-12);
        let mut tape = Tape::new();
        let f = tape.leaf(&mat(&rows), false);
        let l = supervised_contrastive_loss(&mut tape, f, &labels, 1.0).unwrap();
        assert!((tape.item(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn sup_loss_matches_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(4..=8);
            let rows = rand_rows(&mut rng, n, 16);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let Some(expect) = oracle::supervised(&rows, &labels, 0.1) else {
                continue;
            };
            let mut tape = Tape::new();
            let f = tape.leaf(&mat(&rows), false);
            let l = supervised_contrastive_loss(&mut tape, f, &labels, 0.1).unwrap();
            assert!((tape.item(l) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn self_loss_k1_contributes_nothing() {
        let mut tape = Tape::new();
        let d = tape.leaf(&mat(&[vec![1.0, 0.0]]), false);
        let a = tape.leaf(&mat(&[vec![1.0, 0.1]]), false);
        assert!(self_consistency_loss(&mut tape, d, a, 1.0)
            .unwrap()
            .is_none());
    }

    #[test]
    fn self_loss_orthogonal_closed_form() {
        // f⁺ = f, three mutually orthogonal unit rows, τ=1 → ln 2 − 1 per row
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let expect = oracle::self_consistency(&rows, &rows, 1.0).unwrap();
        assert!((expect - (2.0f64.ln() - 1.0)).abs() < 1e-12);
        let mut tape = Tape::new();
        let d = tape.leaf(&mat(&rows), false);
        let a = tape.leaf(&mat(&rows), false);
        let l = self_consistency_loss(&mut tape, d, a, 1.0)
            .unwrap()
            .unwrap();
        assert!((tape.item(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn self_loss_matches_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let k = rng.gen_range(2..=6);
            let dis = rand_rows(&mut rng, k, 8);
            let aug = rand_rows(&mut rng, k, 8);
            let expect = oracle::self_consistency(&dis, &aug, 0.1).unwrap();
            let mut tape = Tape::new();
            let d = tape.leaf(&mat(&dis), false);
            let a = tape.leaf(&mat(&aug), false);
            let l = self_consistency_loss(&mut tape, d, a, 0.1)
                .unwrap()
                .unwrap();
            assert!((tape.item(l) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_anchor_exact_and_single() {
        let src = mat(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.7, 0.7]]);
        assert_eq!(nearest_source_anchor(&[0.0, 2.0], &src).unwrap(), 1);
        let single = mat(&[vec![0.4, -0.3]]);
        assert_eq!(nearest_source_anchor(&[9.0, 9.0], &single).unwrap(), 0);
        let empty = Tensor::matrix(0, 2, vec![]).unwrap();
        assert!(nearest_source_anchor(&[1.0, 0.0], &empty).is_err());
    }

    #[test]
    fn nearest_anchor_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let src_rows = rand_rows(&mut rng, 20, 5);
        let src = mat(&src_rows);
        for _ in 0..10 {
            let f: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = nearest_source_anchor(&f, &src).unwrap();
            let mut best = 0;
            for j in 1..20 {
                if cosine_raw(&f, &src_rows[j]).unwrap()
                    > cosine_raw(&f, &src_rows[best]).unwrap()
                {
                    best = j;
                }
            }
            assert_eq!(got, best);
        }
    }

    #[test]
    fn anti_loss_empty_distrusted_is_none() {
        let mut tape = Tape::new();
        let d = tape.leaf(&Tensor::matrix(0, 2, vec![]).unwrap(), false);
        let s = tape.leaf(&mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]), false);
        assert!(anti_divergence_loss(&mut tape, d, s, 1.0)
            .unwrap()
            .is_none());
    }

    #[test]
    fn anti_loss_two_symmetric_sources_is_ln2() {
        let mut tape = Tape::new();
        let d = tape.leaf(&mat(&[vec![1.0, 1.0]]), false);
        let s = tape.leaf(&mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]), false);
        let l = anti_divergence_loss(&mut tape, d, s, 1.0).unwrap().unwrap();
        assert!((tape.item(l) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn anti_loss_matches_oracle_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let dis = rand_rows(&mut rng, 4, 8);
            let src = rand_rows(&mut rng, 10, 8);
            let expect = oracle::anti_divergence(&dis, &src, 0.1).unwrap();
            let mut tape = Tape::new();
            let d = tape.leaf(&mat(&dis), false);
            let s = tape.leaf(&mat(&src), false);
            let l = anti_divergence_loss(&mut tape, d, s, 0.1).unwrap().unwrap();
            assert!((tape.item(l) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn augment_identity_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(vec![2, 3, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let policy = AugmentationPolicy {
            jitter_sigma: 0.0,
            scale_low: 1.0,
            scale_high: 1.0,
        };
        assert_eq!(augment(&x, &policy, &mut rng), x);
    }

    #[test]
    fn augment_is_seed_reproducible() {
        let x = Tensor::new(vec![2, 4, 1], (0..8).map(|i| i as f64).collect()).unwrap();
        let policy = AugmentationPolicy::default();
        let a = augment(&x, &policy, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&x, &policy, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn augment_jitter_is_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, -0.5, 0.3, 2.0]).unwrap();
        let policy = AugmentationPolicy {
            jitter_sigma: 0.1,
            scale_low: 1.0,
            scale_high: 1.0,
        };
        let mut acc = vec![0.0; 4];
        let reps = 10_000;
        for _ in 0..reps {
            let a = augment(&x, &policy, &mut rng);
            for (s, v) in acc.iter_mut().zip(a.data()) {
                *s += v;
            }
        }
        for (s, v) in acc.iter().zip(x.data()) {
            assert!((s / reps as f64 - v).abs() < 0.01);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = Tape::new();
        let one = tape.leaf(&Tensor::scalar(1.0), false);
        let (v, terms) =
            total_loss(&mut tape, one, Some(one), Some(one), Some(one), 0.5, 0.5).unwrap();
        assert!((tape.item(v) - 3.0).abs() < 1e-15);
        assert!((terms.l_total - 3.0).abs() < 1e-15);
        let (v2, _) = total_loss(&mut tape, one, Some(one), Some(one), Some(one), 0.0, 0.0)
            .unwrap();
        assert!((tape.item(v2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn total_loss_names_non_finite_term() {
        let mut tape = Tape::new();
        let one = tape.leaf(&Tensor::scalar(1.0), false);
        let bad = tape.leaf(&Tensor::scalar(f64::NAN), false);
        let err = total_loss(&mut tape, one, Some(bad), None, None, 0.5, 0.5).unwrap_err();
        assert!(err.to_string().contains("l_self"), "{err}");
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows = rand_rows(&mut rng, 6, 8);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let mut tape = Tape::new();
        let f = tape.leaf(&mat(&rows), false);
        let base = supervised_contrastive_loss(&mut tape, f, &labels, 0.2).unwrap();
        let base_v = tape.item(base);
        let perm = [3usize, 0, 5, 2, 4, 1];
        let prows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let mut tape2 = Tape::new();
        let f2 = tape2.leaf(&mat(&prows), false);
        let l2 = supervised_contrastive_loss(&mut tape2, f2, &plabels, 0.2).unwrap();
        assert!((tape2.item(l2) - base_v).abs() < 1e-12);
    }

    #[test]
    fn losses_are_feature_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let rows = rand_rows(&mut rng, 6, 8);
        let labels = vec![0, 0, 1, 1, 2, 2];
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v * 123.0).collect())
            .collect();
        let mut t1 = Tape::new();
        let f1 = t1.leaf(&mat(&rows), false);
        let l1 = supervised_contrastive_loss(&mut t1, f1, &labels, 0.1).unwrap();
        let mut t2 = Tape::new();
        let f2 = t2.leaf(&mat(&scaled), false);
        let l2 = supervised_contrastive_loss(&mut t2, f2, &labels, 0.1).unwrap();
        assert!((t1.item(l1) - t2.item(l2)).abs() < 1e-10);
    }

    #[test]
    fn losses_finite_across_temperatures() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let rows = rand_rows(&mut rng, 8, 8);
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        for tau in [0.05, 0.1, 0.5, 1.0] {
            let mut tape = Tape::new();
            let f = tape.leaf(&mat(&rows), false);
            let l = supervised_contrastive_loss(&mut tape, f, &labels, tau).unwrap();
            assert!(tape.item(l).is_finite());
        }
    }
}
