//! The two-stage training procedure: adversarial invariant-basis pre-training
//! with pseudo-labeled contrastive optimization (stage 1), then classifier
//! fine-tuning on frozen source features (stage 2). Also the evaluator, the
//! source-only baseline and the ablation runner.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AdversarialMode, EncoderPreset, RunConfig};
use crate::contrastive::{
    anti_divergence_loss, augment, self_consistency_loss, supervised_contrastive_loss, total_loss,
    LossTerms,
};
use crate::data::{generate_synthetic_pair, Dataset};
use crate::error::{Error, Result};
use crate::lcib::{
    adversarial_loss, ortho_defect, project, reconstruct, regularize_coords, reorthonormalize_mat,
    InvariantBasis,
};
use crate::metrics::{accuracy, macro_f1, per_class_f1, EpochMetrics};
use crate::nets::{
    argmax_rows, classify, discriminate, encode, BoundParams, ClassifierConfig,
    DiscriminatorConfig, EncoderConfig,
};
use crate::ops::cross_entropy;
use crate::optim::Adam;
use crate::params::ParamSet;
use crate::ppgce::{partition, ConfidenceSchedule, Prototypes, ScheduleMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const ARCH_KEY: &str = "arch";

/// Tape handles for the three representation views of one batch.
#[derive(Debug, Clone, Copy)]
pub struct FeatureVars {
    /// Extractor output `f`.
    pub f: Var,
    /// Invariant-subspace coordinates `w = Bᵀf`.
    pub inv: Var,
    /// Regularized reconstruction `f̂ = B·softmax(w)`.
    pub recon: Var,
}

/// The full trainable model: extractor, basis, discriminator, classifier, all
/// living in one named parameter set so one checkpoint carries everything.
pub struct Model {
    pub encoder: EncoderConfig,
    pub disc: DiscriminatorConfig,
    pub clf: ClassifierConfig,
    pub use_lcib: bool,
    pub params: ParamSet,
}

impl Model {
    pub fn init(
        cfg: &RunConfig,
        in_channels: usize,
        n_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let encoder = match cfg.encoder_preset {
            EncoderPreset::Desk => EncoderConfig::desk(in_channels, cfg.hidden_dim, cfg.feature_dim),
            EncoderPreset::Full => EncoderConfig::full(in_channels),
        };
        let d = encoder.out_dim;
        if cfg.basis_dim >= d {
            return Err(Error::Config(format!(
                "basis_dim {} must be below feature dimension {d}",
                cfg.basis_dim
            )));
        }
        let disc = DiscriminatorConfig {
            in_dim: d,
            hidden: cfg.hidden_dim,
        };
        let clf = ClassifierConfig {
            in_dim: d,
            hidden: cfg.hidden_dim,
            n_classes,
            dropout: 0.1,
        };
        let mut params = encoder.init(rng);
        params.absorb(disc.init(rng));
        params.absorb(clf.init(rng));
        let basis = InvariantBasis::random(d, cfg.basis_dim, rng)?;
        params.insert("lcib.basis", basis.into_tensor());
        Ok(Self {
            encoder,
            disc,
            clf,
            use_lcib: cfg.use_lcib,
            params,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.out_dim
    }

    pub fn basis_dim(&self) -> usize {
        self.params.get("lcib.basis").map(|t| t.shape()[1]).unwrap_or(0)
    }

    /// Dimension of the invariant coordinates: `m` with the basis active,
    /// `d` otherwise.
    pub fn inv_dim(&self) -> usize {
        if self.use_lcib {
            self.basis_dim()
        } else {
            self.feature_dim()
        }
    }

    /// The three views of one bound batch: raw features `f`, invariant
    /// coordinates `w = Bᵀf` (the geometry for prototypes and contrastive
    /// losses), and the regularized reconstruction `f̂ = B·softmax(w)` (the
    /// adversarial target and the classifier input). With the basis disabled
    /// all three are the same tape node.
    pub fn features(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<FeatureVars> {
        let f = encode(&self.encoder, bound, tape, x, train, rng)?;
        if !self.use_lcib {
            return Ok(FeatureVars {
                f,
                inv: f,
                recon: f,
            });
        }
        let basis = bound.get("lcib.basis");
        let inv = project(tape, f, basis)?;
        let w_hat = regularize_coords(tape, inv)?;
        let recon = reconstruct(tape, w_hat, basis)?;
        Ok(FeatureVars { f, inv, recon })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = ParamSet::new();
        let arch = vec![
            self.encoder.in_channels as f64,
            self.disc.hidden as f64,
            self.encoder.out_dim as f64,
            self.basis_dim() as f64,
            self.clf.n_classes as f64,
            if self.encoder.layers.len() == 2 { 0.0 } else { 1.0 },
            if self.use_lcib { 1.0 } else { 0.0 },
            self.clf.hidden as f64,
            self.clf.dropout,
            self.encoder.layers[0].out_channels as f64,
        ];
        out.insert(ARCH_KEY, Tensor::vector(arch));
        for (name, t) in self.params.iter() {
            out.insert(name, t.clone());
        }
        out.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let loaded = ParamSet::load(path)?;
        let arch = loaded
            .get(ARCH_KEY)
            .ok_or_else(|| Error::Checkpoint("checkpoint missing architecture record".into()))?
            .data()
            .to_vec();
        if arch.len() != 10 {
            return Err(Error::Checkpoint("malformed architecture record".into()));
        }
        let in_channels = arch[0] as usize;
        let encoder = if arch[5] == 0.0 {
            EncoderConfig::desk(in_channels, arch[9] as usize, arch[2] as usize)
        } else {
            EncoderConfig::full(in_channels)
        };
        let disc = DiscriminatorConfig {
            in_dim: arch[2] as usize,
            hidden: arch[1] as usize,
        };
        let clf = ClassifierConfig {
            in_dim: arch[2] as usize,
            hidden: arch[7] as usize,
            n_classes: arch[4] as usize,
            dropout: arch[8],
        };
        let mut params = ParamSet::new();
        for (name, t) in loaded.iter() {
            if name != ARCH_KEY {
                params.insert(name, t.clone());
            }
        }
        Ok(Self {
            encoder,
            disc,
            clf,
            use_lcib: arch[6] != 0.0,
            params,
        })
    }
}

/// Eval-mode representations of a whole dataset, chunked to bound tape size.
pub struct DatasetFeatures {
    /// Reconstructions `f̂`, `[n × d]` — the classifier input.
    pub recon: Tensor,
    /// Invariant coordinates `w`, `[n × m]` — the prototype geometry.
    pub inv: Tensor,
}

pub fn encode_dataset(model: &Model, ds: &Dataset) -> Result<DatasetFeatures> {
    let d = model.feature_dim();
    let m = model.inv_dim();
    let mut recon_rows = Vec::with_capacity(ds.len() * d);
    let mut inv_rows = Vec::with_capacity(ds.len() * m);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode never draws
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(64) {
        let x = ds.batch(chunk);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &model.params, false);
        let xv = tape.leaf(&x, false);
        let fv = model.features(&mut tape, &bound, xv, false, &mut rng)?;
        recon_rows.extend_from_slice(tape.data(fv.recon));
        inv_rows.extend_from_slice(tape.data(fv.inv));
    }
    Ok(DatasetFeatures {
        recon: Tensor::new(vec![ds.len(), d], recon_rows)?,
        inv: Tensor::new(vec![ds.len(), m], inv_rows)?,
    })
}

fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let per = x.len() / x.shape()[0];
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    let mut data = Vec::with_capacity(rows.len() * per);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * per..(r + 1) * per]);
    }
    Tensor::new(shape, data).unwrap()
}

fn gather_rows(tape: &mut Tape, src: Var, rows: &[usize], d: usize) -> Result<Var> {
    let idx: Vec<usize> = rows.iter().flat_map(|&r| r * d..(r + 1) * d).collect();
    let g = tape.gather(src, idx)?;
    tape.reshape(g, vec![rows.len(), d])
}

/// One step's outcome.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub terms: LossTerms,
    pub eta: f64,
    pub confident: usize,
    pub n_target: usize,
}

/// Stage-1 trainer: owns the model, prototypes, curriculum, optimizer state
/// and the RNG stream. One [`Trainer::step`] call is one batch update.
pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub prototypes: Prototypes,
    pub schedule: ConfidenceSchedule,
    pub global_step: usize,
    opt: Adam,
    disc_opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        cfg: &RunConfig,
        in_channels: usize,
        n_classes: usize,
        total_steps: usize,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::init(cfg, in_channels, n_classes, &mut rng)?;
        let prototypes = Prototypes::new(n_classes, model.inv_dim(), cfg.momentum);
        let schedule = match cfg.schedule {
            ScheduleMode::Linear => ConfidenceSchedule::linear(cfg.eta0, cfg.eta_max, total_steps),
            ScheduleMode::Stepwise => {
                ConfidenceSchedule::stepwise(cfg.eta0, cfg.eta_max, cfg.step_size, cfg.step_every)
            }
        };
        let opt = Adam::new(&model.params, cfg.lr, cfg.beta1, cfg.beta2);
        let disc_opt = Adam::new(&model.params, cfg.lr, cfg.beta1, cfg.beta2);
        Ok(Self {
            cfg: cfg.clone(),
            model,
            prototypes,
            schedule,
            global_step: 0,
            opt,
            disc_opt,
            rng,
        })
    }

    /// One combined update from a labeled source batch and an unlabeled
    /// target batch. `t_indices` are dataset-level indices of the target rows
    /// (for the pseudo-label audit stream).
    pub fn step<W: Write + ?Sized>(
        &mut self,
        x_s: &Tensor,
        y_s: &[usize],
        x_t: &Tensor,
        t_indices: &[usize],
        pseudo_sink: Option<&mut W>,
    ) -> Result<StepRecord> {
        let n_s = x_s.shape()[0];
        let n_t = x_t.shape()[0];
        let d = self.model.feature_dim();
        let m = self.model.inv_dim();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.model.params, true);
        let xs = tape.leaf(x_s, false);
        let xt = tape.leaf(x_t, false);
        let fv_s = self
            .model
            .features(&mut tape, &bound, xs, true, &mut self.rng)?;
        let fv_t = self
            .model
            .features(&mut tape, &bound, xt, true, &mut self.rng)?;

        // adversarial information preservation over the pooled batch:
        // originals labeled 1, reconstructions labeled 0, with a gradient
        // reversal between the feature path and the discriminator
        let l_adv = if self.cfg.use_adv && self.model.use_lcib {
            let oc = tape.concat(&[fv_s.f, fv_t.f])?;
            let orig = tape.reshape(oc, vec![n_s + n_t, d])?;
            let rc = tape.concat(&[fv_s.recon, fv_t.recon])?;
            let recon = tape.reshape(rc, vec![n_s + n_t, d])?;
            if self.cfg.adversarial_mode == AdversarialMode::Alternating {
                // discriminator-only update on detached features
                let orig_t = tape.to_tensor(orig);
                let recon_t = tape.to_tensor(recon);
                let mut dt = Tape::new();
                let dbound = BoundParams::bind(&mut dt, &self.model.params, true);
                let o = dt.leaf(&orig_t, false);
                let r = dt.leaf(&recon_t, false);
                let po = discriminate(&self.model.disc, &dbound, &mut dt, o)?;
                let pr = discriminate(&self.model.disc, &dbound, &mut dt, r)?;
                let l = adversarial_loss(&mut dt, po, pr)?;
                let grads = dt.backward(l)?;
                let named: Vec<(&str, &[f64])> = dbound
                    .iter()
                    .filter(|(n, _)| n.starts_with("disc."))
                    .filter_map(|(n, v)| grads.get(v).map(|g| (n, g)))
                    .collect();
                self.disc_opt.step(&mut self.model.params, named.into_iter());
            }
            let ro = tape.grad_reverse(orig, 1.0);
            let rr = tape.grad_reverse(recon, 1.0);
            let po = discriminate(&self.model.disc, &bound, &mut tape, ro)?;
            let pr = discriminate(&self.model.disc, &bound, &mut tape, rr)?;
            Some(adversarial_loss(&mut tape, po, pr)?)
        } else {
            None
        };

        // detached prototype statistics in the invariant coordinates: update
        // from the labeled source batch, then pseudo-label the target batch
        let inv_s_val = tape.to_tensor(fv_s.inv);
        self.prototypes.update(&inv_s_val, y_s)?;
        let eta = self.schedule.ratio(self.global_step);
        let (part, pseudo_labels, scores) = if self.prototypes.all_initialized() {
            let inv_t_val = tape.to_tensor(fv_t.inv);
            let (pl, sc) = self.prototypes.assign(&inv_t_val)?;
            (partition(&pl, &sc, eta, self.cfg.partition_mode), pl, sc)
        } else {
            // some class has never been seen: hold the whole batch back
            (
                crate::ppgce::PartitionedTarget {
                    confident: Vec::new(),
                    distrusted: (0..n_t).collect(),
                },
                Vec::new(),
                Vec::new(),
            )
        };

        if let Some(w) = pseudo_sink {
            if !pseudo_labels.is_empty() {
                let mut admitted = vec![false; n_t];
                for &(i, _, _) in &part.confident {
                    admitted[i] = true;
                }
                for i in 0..n_t {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        self.global_step, t_indices[i], pseudo_labels[i], scores[i], admitted[i]
                    )?;
                }
            }
        }

        // supervised aggregation over source anchors plus confident targets
        let (sup_feats, sup_labels) = if part.confident.is_empty() {
            (fv_s.inv, y_s.to_vec())
        } else {
            let rows: Vec<usize> = part.confident.iter().map(|&(i, _, _)| i).collect();
            let conf = gather_rows(&mut tape, fv_t.inv, &rows, m)?;
            let cat = tape.concat(&[fv_s.inv, conf])?;
            let feats = tape.reshape(cat, vec![n_s + rows.len(), m])?;
            let mut labels = y_s.to_vec();
            labels.extend(part.confident.iter().map(|&(_, c, _)| c));
            (feats, labels)
        };
        let l_sup = supervised_contrastive_loss(&mut tape, sup_feats, &sup_labels, self.cfg.tau)?;

        let dis = if part.distrusted.is_empty() {
            None
        } else {
            Some(gather_rows(&mut tape, fv_t.inv, &part.distrusted, m)?)
        };

        // self-consistency: augment the distrusted inputs and push them back
        // through the extractor and basis
        let l_self = match (self.cfg.use_self, dis) {
            (true, Some(dv)) if part.distrusted.len() >= 2 => {
                let sub = select_rows(x_t, &part.distrusted);
                let aug = augment(&sub, &self.cfg.augmentation(), &mut self.rng);
                let xa = tape.leaf(&aug, false);
                let fv_a = self
                    .model
                    .features(&mut tape, &bound, xa, true, &mut self.rng)?;
                self_consistency_loss(&mut tape, dv, fv_a.inv, self.cfg.tau)?
            }
            _ => None,
        };

        let l_anti = match (self.cfg.use_anti, dis) {
            (true, Some(dv)) => anti_divergence_loss(&mut tape, dv, fv_s.inv, self.cfg.tau)?,
            _ => None,
        };

        let (total, terms) = total_loss(
            &mut tape,
            l_sup,
            l_self,
            l_anti,
            l_adv,
            self.cfg.lambda1,
            self.cfg.lambda2,
        )?;
        let grads = tape.backward(total)?;
        let alternating = self.cfg.adversarial_mode == AdversarialMode::Alternating;
        let named: Vec<(&str, &[f64])> = bound
            .iter()
            .filter(|(n, _)| !(alternating && n.starts_with("disc.")))
            .filter_map(|(n, v)| grads.get(v).map(|g| (n, g)))
            .collect();
        self.opt.step(&mut self.model.params, named.into_iter());

        if self.model.use_lcib {
            let m_b = self.model.basis_dim();
            let b = self.model.params.get_mut("lcib.basis").unwrap();
            reorthonormalize_mat(b, d, m_b)?;
            debug_assert!(
                ortho_defect(self.model.params.get("lcib.basis").unwrap()) < 1e-6,
                "basis drifted off the Stiefel manifold"
            );
        }
        self.global_step += 1;
        Ok(StepRecord {
            terms,
            eta,
            confident: part.confident.len(),
            n_target: n_t,
        })
    }
}

/// Output destinations for one training run.
#[derive(Default)]
pub struct TrainSinks<'a> {
    /// Line-delimited per-epoch metrics records.
    pub metrics: Option<&'a mut dyn Write>,
    /// Pseudo-label audit rows: `step,index,pseudo_label,sigma,confident`.
    pub pseudo_labels: Option<&'a mut dyn Write>,
    /// Checkpoint written after each completed epoch; on a mid-epoch abort
    /// the previous epoch's file survives.
    pub checkpoint: Option<&'a Path>,
}

pub struct TrainOutput {
    pub trainer: Trainer,
    pub metrics: Vec<EpochMetrics>,
}

fn check_compatible(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.meta.t_len != target.meta.t_len
        || source.meta.channels != target.meta.channels
        || source.meta.n_classes != target.meta.n_classes
    {
        return Err(Error::Contract(format!(
            "incompatible domain pair: source (T={}, D={}, n_c={}) vs target (T={}, D={}, n_c={})",
            source.meta.t_len,
            source.meta.channels,
            source.meta.n_classes,
            target.meta.t_len,
            target.meta.channels,
            target.meta.n_classes
        )));
    }
    if source.labels.is_none() {
        return Err(Error::Contract("source dataset must be labeled".into()));
    }
    Ok(())
}

fn prototype_eval(
    trainer: &Trainer,
    ds: &Dataset,
) -> Result<Option<(f64, f64)>> {
    let Some(labels) = ds.labels.as_ref() else {
        return Ok(None);
    };
    if !trainer.prototypes.all_initialized() {
        return Ok(None);
    }
    let feats = encode_dataset(&trainer.model, ds)?;
    let (pred, _) = trainer.prototypes.assign(&feats.inv)?;
    Ok(Some((
        macro_f1(&pred, labels, ds.meta.n_classes)?,
        accuracy(&pred, labels),
    )))
}

/// Stage-1 pre-training. Target labels are never read; per-epoch target
/// metrics come from pseudo-label agreement and are `None` for unlabeled
/// targets.
pub fn train(
    cfg: &RunConfig,
    source: &Dataset,
    target: &Dataset,
    mut sinks: TrainSinks,
) -> Result<TrainOutput> {
    check_compatible(source, target)?;
    let n_s = source.len();
    let n_t = target.len();
    let steps_per_epoch = n_s.min(n_t) / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::Contract(format!(
            "batch size {} exceeds the smaller split ({} samples)",
            cfg.batch_size,
            n_s.min(n_t)
        )));
    }
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut trainer = Trainer::new(cfg, source.meta.channels, source.meta.n_classes, total_steps)?;
    let src_labels = source.labels.as_ref().unwrap();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5157_ab1e));
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut src_idx: Vec<usize> = (0..n_s).collect();
        let mut trg_idx: Vec<usize> = (0..n_t).collect();
        src_idx.shuffle(&mut shuffle_rng);
        trg_idx.shuffle(&mut shuffle_rng);
        let mut sums = LossTerms::default();
        let mut last_frac = 0.0;
        for s in 0..steps_per_epoch {
            let sb = &src_idx[s * cfg.batch_size..(s + 1) * cfg.batch_size];
            let tb = &trg_idx[s * cfg.batch_size..(s + 1) * cfg.batch_size];
            let x_s = source.batch(sb);
            let y_s: Vec<usize> = sb.iter().map(|&i| src_labels[i]).collect();
            let x_t = target.batch(tb);
            let rec = trainer.step(
                &x_s,
                &y_s,
                &x_t,
                tb,
                sinks.pseudo_labels.as_deref_mut(),
            )?;
            sums.l_sup += rec.terms.l_sup;
            sums.l_self += rec.terms.l_self;
            sums.l_anti += rec.terms.l_anti;
            sums.l_adv += rec.terms.l_adv;
            sums.l_total += rec.terms.l_total;
            last_frac = rec.confident as f64 / rec.n_target as f64;
        }
        let k = steps_per_epoch as f64;
        let target_eval = prototype_eval(&trainer, target)?;
        let source_eval = prototype_eval(&trainer, source)?
            .ok_or_else(|| Error::Contract("prototypes uninitialized after an epoch".into()))?;
        let em = EpochMetrics {
            epoch,
            l_sup: sums.l_sup / k,
            l_self: sums.l_self / k,
            l_anti: sums.l_anti / k,
            l_adv: sums.l_adv / k,
            l_total: sums.l_total / k,
            confident_fraction: last_frac,
            target_macro_f1: target_eval.map(|(f1, _)| f1),
            target_accuracy: target_eval.map(|(_, acc)| acc),
            source_macro_f1: source_eval.0,
        };
        if let Some(w) = sinks.metrics.as_deref_mut() {
            serde_json::to_writer(&mut *w, &em)
                .map_err(|e| Error::Contract(format!("metrics serialization: {e}")))?;
            writeln!(w)?;
        }
        metrics.push(em);
        if let Some(path) = sinks.checkpoint {
            trainer.model.save(path)?;
        }
    }
    Ok(TrainOutput { trainer, metrics })
}

/// Stage-2 fine-tuning: cross-entropy on frozen source reconstructions.
/// Touches classifier parameters only.
pub fn finetune(cfg: &RunConfig, model: &mut Model, source: &Dataset) -> Result<()> {
    let labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("fine-tuning needs a labeled source".into()))?
        .clone();
    let feats = encode_dataset(model, source)?.recon;
    let d = model.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xf17e));
    let mut opt = Adam::new(&model.params, cfg.lr, cfg.beta1, cfg.beta2);
    let n = source.len();
    let bs = cfg.batch_size.min(n);
    for _ in 0..cfg.finetune_epochs {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let x = select_rows(&feats, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &model.params, true);
            let fv = tape.leaf(&Tensor::new(vec![chunk.len(), d], x.data().to_vec())?, false);
            let logits = classify(&model.clf, &bound, &mut tape, fv, true, &mut rng)?;
            let loss = cross_entropy(&mut tape, logits, &y)?;
            let grads = tape.backward(loss)?;
            let named: Vec<(&str, &[f64])> = bound
                .iter()
                .filter(|(n, _)| n.starts_with("clf."))
                .filter_map(|(n, v)| grads.get(v).map(|g| (n, g)))
                .collect();
            opt.step(&mut model.params, named.into_iter());
        }
    }
    Ok(())
}

/// Stage 1 followed by stage 2.
pub fn train_full(
    cfg: &RunConfig,
    source: &Dataset,
    target: &Dataset,
    sinks: TrainSinks,
) -> Result<TrainOutput> {
    let mut out = train(cfg, source, target, sinks)?;
    finetune(cfg, &mut out.trainer.model, source)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
}

/// Deterministic eval-mode pass: extractor → basis reconstruction →
/// classifier → argmax, scored against the dataset's labels.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<EvalReport> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("evaluation needs a labeled dataset".into()))?;
    if ds.meta.channels != model.encoder.in_channels || ds.meta.n_classes != model.clf.n_classes {
        return Err(Error::Contract(format!(
            "checkpoint expects D={}, n_c={}; dataset has D={}, n_c={}",
            model.encoder.in_channels, model.clf.n_classes, ds.meta.channels, ds.meta.n_classes
        )));
    }
    let feats = encode_dataset(model, ds)?.recon;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pred = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(256) {
        let x = select_rows(&feats, chunk);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &model.params, false);
        let fv = tape.leaf(&x, false);
        let logits = classify(&model.clf, &bound, &mut tape, fv, false, &mut rng)?;
        pred.extend(argmax_rows(&tape.to_tensor(logits)));
    }
    Ok(EvalReport {
        macro_f1: macro_f1(&pred, labels, ds.meta.n_classes)?,
        accuracy: accuracy(&pred, labels),
        per_class_f1: per_class_f1(&pred, labels, ds.meta.n_classes),
    })
}

/// No-adaptation baseline: encoder + classifier trained jointly with
/// cross-entropy on the source split only.
pub fn train_source_only(cfg: &RunConfig, source: &Dataset) -> Result<Model> {
    let labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("baseline needs a labeled source".into()))?
        .clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bcfg = cfg.clone();
    bcfg.use_lcib = false;
    let mut model = Model::init(&bcfg, source.meta.channels, source.meta.n_classes, &mut rng)?;
    let mut opt = Adam::new(&model.params, cfg.lr, cfg.beta1, cfg.beta2);
    let n = source.len();
    let bs = cfg.batch_size.min(n);
    for _ in 0..cfg.epochs {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let x = source.batch(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &model.params, true);
            let xv = tape.leaf(&x, false);
            let f = encode(&model.encoder, &bound, &mut tape, xv, true, &mut rng)?;
            let logits = classify(&model.clf, &bound, &mut tape, f, true, &mut rng)?;
            let loss = cross_entropy(&mut tape, logits, &y)?;
            let grads = tape.backward(loss)?;
            let named: Vec<(&str, &[f64])> = bound
                .iter()
                .filter(|(n, _)| n.starts_with("fe.") || n.starts_with("clf."))
                .filter_map(|(n, v)| grads.get(v).map(|g| (n, g)))
                .collect();
            opt.step(&mut model.params, named.into_iter());
        }
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: &'static str,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Disabled loss terms stayed identically zero across all epochs.
    pub wiring_ok: bool,
}

/// The five progressive component masks, in activation order.
pub fn ablation_masks() -> [(&'static str, bool, bool, bool, bool); 5] {
    // (name, use_lcib, use_adv, use_self, use_anti); the supervised term is
    // always active
    [
        ("sup_only_no_basis", false, false, false, false),
        ("sup_only", true, false, false, false),
        ("sup_adv", true, true, false, false),
        ("no_anti", true, true, true, false),
        ("full", true, true, true, true),
    ]
}

/// One seeded run per component mask; each row reports target macro-F1 and
/// accuracy after both training stages.
pub fn run_ablation(base: &RunConfig, seed: u64) -> Result<Vec<AblationRow>> {
    let (source, target) = generate_synthetic_pair(&base.shift(seed));
    let mut rows = Vec::new();
    for (name, lcib, adv, selfc, anti) in ablation_masks() {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.use_lcib = lcib;
        cfg.use_adv = adv;
        cfg.use_self = selfc;
        cfg.use_anti = anti;
        let out = train_full(&cfg, &source, &target, TrainSinks::default())?;
        let wiring_ok = out.metrics.iter().all(|m| {
            (adv || m.l_adv == 0.0) && (selfc || m.l_self == 0.0) && (anti || m.l_anti == 0.0)
        });
        let report = evaluate(&out.trainer.model, &target)?;
        rows.push(AblationRow {
            name,
            macro_f1: report.macro_f1,
            accuracy: report.accuracy,
            wiring_ok,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticShiftConfig;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.epochs = 2;
        cfg.finetune_epochs = 3;
        cfg.batch_size = 16;
        cfg.synth_source_n = 64;
        cfg.synth_target_n = 64;
        cfg.feature_dim = 16;
        cfg.hidden_dim = 12;
        cfg.basis_dim = 6;
        cfg
    }

    fn tiny_pair(cfg: &RunConfig, seed: u64) -> (Dataset, Dataset) {
        generate_synthetic_pair(&cfg.shift(seed))
    }

    #[test]
    fn one_epoch_completes_with_finite_losses() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let (s, t) = tiny_pair(&cfg, 1);
        let out = train(&cfg, &s, &t, TrainSinks::default()).unwrap();
        let em = &out.metrics[0];
        for v in [em.l_sup, em.l_self, em.l_anti, em.l_adv, em.l_total] {
            assert!(v.is_finite());
        }
        // quantile mode: the recorded fraction matches ⌈η·n⌉/n of the final step
        let steps = 64 / cfg.batch_size;
        let eta = out.trainer.schedule.ratio(steps - 1);
        let expect = (eta * cfg.batch_size as f64).ceil() / cfg.batch_size as f64;
        assert!((em.confident_fraction - expect).abs() < 1e-12);
    }

    #[test]
    fn metrics_arithmetic_holds() {
        let cfg = tiny_cfg();
        let (s, t) = tiny_pair(&cfg, 2);
        let out = train(&cfg, &s, &t, TrainSinks::default()).unwrap();
        for m in &out.metrics {
            let recomputed =
                m.l_sup + m.l_self + cfg.lambda1 * m.l_anti + cfg.lambda2 * m.l_adv;
            assert!((m.l_total - recomputed).abs() < 1e-9);
        }
    }

    #[test]
    fn disabled_terms_are_identically_zero() {
        let mut cfg = tiny_cfg();
        cfg.use_self = false;
        cfg.use_anti = false;
        let (s, t) = tiny_pair(&cfg, 3);
        let out = train(&cfg, &s, &t, TrainSinks::default()).unwrap();
        for m in &out.metrics {
            assert_eq!(m.l_self, 0.0);
            assert_eq!(m.l_anti, 0.0);
            assert_ne!(m.l_adv, 0.0);
        }
    }

    #[test]
    fn lambda2_zero_blocks_adversarial_gradient_path() {
        // with λ₂ = 0 the encoder must evolve exactly as if the adversarial
        // branch were absent, while the loss is still recorded
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        cfg.lambda2 = 0.0;
        let (s, t) = tiny_pair(&cfg, 4);
        let with_adv = train(&cfg, &s, &t, TrainSinks::default()).unwrap();
        assert!(with_adv.metrics[0].l_adv > 0.0);
        let mut cfg2 = cfg.clone();
        cfg2.use_adv = false;
        let without = train(&cfg2, &s, &t, TrainSinks::default()).unwrap();
        for name in ["fe.conv0.w", "fe.out.w", "lcib.basis"] {
            let a = with_adv.trainer.model.params.get(name).unwrap();
            let b = without.trainer.model.params.get(name).unwrap();
            assert_eq!(a, b, "{name} diverged under a zero-weighted branch");
        }
    }

    #[test]
    fn determinism_same_seed_same_metrics_bytes() {
        let cfg = tiny_cfg();
        let (s, t) = tiny_pair(&cfg, 5);
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        train(
            &cfg,
            &s,
            &t,
            TrainSinks {
                metrics: Some(&mut m1),
                ..Default::default()
            },
        )
        .unwrap();
        train(
            &cfg,
            &s,
            &t,
            TrainSinks {
                metrics: Some(&mut m2),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!m1.is_empty());
        assert_eq!(m1, m2);
    }

    #[test]
    fn finetune_touches_classifier_only() {
        let cfg = tiny_cfg();
        let (s, t) = tiny_pair(&cfg, 6);
        let mut out = train(&cfg, &s, &t, TrainSinks::default()).unwrap();
        let frozen: Vec<(String, Tensor)> = out
            .trainer
            .model
            .params
            .iter()
            .filter(|(n, _)| !n.starts_with("clf."))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let clf_before = out.trainer.model.params.get("clf.w1").unwrap().clone();
        finetune(&cfg, &mut out.trainer.model, &s).unwrap();
        for (name, before) in &frozen {
            assert_eq!(out.trainer.model.params.get(name).unwrap(), before, "{name}");
        }
        assert_ne!(out.trainer.model.params.get("clf.w1").unwrap(), &clf_before);
    }

    #[test]
    fn checkpoint_round_trip_preserves_eval() {
        let cfg = tiny_cfg();
        let (s, t) = tiny_pair(&cfg, 7);
        let out = train_full(&cfg, &s, &t, TrainSinks::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        out.trainer.model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        let r1 = evaluate(&out.trainer.model, &t).unwrap();
        let r2 = evaluate(&loaded, &t).unwrap();
        assert_eq!(r1.macro_f1, r2.macro_f1);
        assert_eq!(r1.per_class_f1, r2.per_class_f1);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let cfg = tiny_cfg();
        let (s, t) = tiny_pair(&cfg, 8);
        let out = train_full(&cfg, &s, &t, TrainSinks::default()).unwrap();
        let r1 = evaluate(&out.trainer.model, &t).unwrap();
        let r2 = evaluate(&out.trainer.model, &t).unwrap();
        assert_eq!(r1.macro_f1, r2.macro_f1);
        assert_eq!(r1.accuracy, r2.accuracy);
    }

    #[test]
    fn random_model_scores_near_chance_on_balanced_data() {
        let mut cfg = tiny_cfg();
        cfg.synth_classes = 6;
        cfg.synth_imbalance = 0.0;
        cfg.synth_source_n = 600;
        let (s, _) = tiny_pair(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = Model::init(&cfg, s.meta.channels, s.meta.n_classes, &mut rng).unwrap();
        let r = evaluate(&model, &s).unwrap();
        assert!((r.accuracy - 1.0 / 6.0).abs() < 0.1, "accuracy {}", r.accuracy);
    }

    #[test]
    fn no_basis_path_is_identity() {
        let mut cfg = tiny_cfg();
        cfg.use_lcib = false;
        let (s, _) = tiny_pair(&cfg, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::init(&cfg, s.meta.channels, s.meta.n_classes, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &model.params, false);
        let x = tape.leaf(&s.batch(&[0, 1, 2]), false);
        let fv = model
            .features(&mut tape, &bound, x, false, &mut rng)
            .unwrap();
        assert_eq!(fv.f, fv.inv);
        assert_eq!(fv.f, fv.recon);
    }

    #[test]
    fn no_shift_source_only_generalizes() {
        // identical artifact parameters for both domains: the no-adaptation
        // baseline's target score lands within 0.05 of its source score
        let mut cfg = tiny_cfg();
        cfg.epochs = 15;
        cfg.synth_source_n = 128;
        cfg.synth_target_n = 128;
        let mut shift = SyntheticShiftConfig::desk(11);
        shift.n_source = 128;
        shift.n_target = 128;
        shift.target = shift.source.clone();
        shift.target_imbalance = 0.0;
        let (s, t) = generate_synthetic_pair(&shift);
        let model = train_source_only(&cfg, &s).unwrap();
        let rs = evaluate(&model, &s).unwrap();
        let rt = evaluate(&model, &t).unwrap();
        assert!(
            (rs.macro_f1 - rt.macro_f1).abs() < 0.05,
            "source {} vs target {}",
            rs.macro_f1,
            rt.macro_f1
        );
    }

    #[test]
    fn alternating_mode_runs_and_stays_finite() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        cfg.adversarial_mode = AdversarialMode::Alternating;
        let (s, t) = tiny_pair(&cfg, 12);
        let out = train(&cfg, &s, &t, TrainSinks::default()).unwrap();
        assert!(out.metrics[0].l_total.is_finite());
    }

    #[test]
    fn incompatible_pair_is_rejected() {
        let cfg = tiny_cfg();
        let (s, _) = tiny_pair(&cfg, 13);
        let mut cfg2 = cfg.clone();
        cfg2.synth_channels = 4;
        let (_, t2) = tiny_pair(&cfg2, 13);
        assert!(train(&cfg, &s, &t2, TrainSinks::default()).is_err());
    }
}
