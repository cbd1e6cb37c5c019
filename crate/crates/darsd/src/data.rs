//! Synthetic domain-shift data and the on-disk dataset format
//! (`meta.txt` + `data.csv`).

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape and labeling facts about one dataset split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub t_len: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub domain: String,
    pub labeled: bool,
}

/// One split: samples `[n, T, D]` plus optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.meta.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n_samples == 0
    }

    /// One sample as a `[1, T, D]` tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        let per = self.meta.t_len * self.meta.channels;
        Tensor::new(
            vec![1, self.meta.t_len, self.meta.channels],
            self.samples.data()[i * per..(i + 1) * per].to_vec(),
        )
        .unwrap()
    }

    /// Gather rows into a `[k, T, D]` batch tensor.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let per = self.meta.t_len * self.meta.channels;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.samples.data()[i * per..(i + 1) * per]);
        }
        Tensor::new(vec![idx.len(), self.meta.t_len, self.meta.channels], data).unwrap()
    }
}

/// Environment artifacts applied by one domain's sensing pipeline.
#[derive(Debug, Clone)]
pub struct DomainArtifacts {
    pub noise_sigma: f64,
    pub channel_bias: Vec<f64>,
    pub amplitude_scale: f64,
    /// Probability of a time step repeating the previous reading.
    pub jitter_rate: f64,
}

/// Generator configuration. Class-pattern parameters are shared across both
/// domains; only the artifact parameters differ, so the invariant/specific split
/// is explicit in the data itself.
#[derive(Debug, Clone)]
pub struct SyntheticShiftConfig {
    pub n_classes: usize,
    pub t_len: usize,
    pub channels: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub source: DomainArtifacts,
    pub target: DomainArtifacts,
    /// 0 keeps the target balanced; larger values skew class frequencies
    /// geometrically, mimicking imbalanced activity data.
    pub target_imbalance: f64,
    pub seed: u64,
}

impl SyntheticShiftConfig {
    /// Desk-scale default pair: 4 classes, 64×3 series, 400 + 400 samples,
    /// with a pronounced bias/scale/noise shift on the target side.
    pub fn desk(seed: u64) -> Self {
        Self {
            n_classes: 4,
            t_len: 64,
            channels: 3,
            n_source: 400,
            n_target: 400,
            source: DomainArtifacts {
                noise_sigma: 0.10,
                channel_bias: vec![0.0, 0.0, 0.0],
                amplitude_scale: 1.0,
                jitter_rate: 0.0,
            },
            target: DomainArtifacts {
                noise_sigma: 0.35,
                channel_bias: vec![1.2, -0.9, 0.7],
                amplitude_scale: 1.8,
                jitter_rate: 0.05,
            },
            target_imbalance: 0.15,
            seed,
        }
    }
}

/// Per-class waveform parameters, shared across domains.
struct ClassPattern {
    freq: f64,
    phase: Vec<f64>,
    amp: Vec<f64>,
    trend: Vec<f64>,
}

fn class_patterns(cfg: &SyntheticShiftConfig, rng: &mut ChaCha8Rng) -> Vec<ClassPattern> {
    (0..cfg.n_classes)
        .map(|c| ClassPattern {
            // distinct integer-ish frequencies keep classes separable
            freq: 1.0 + c as f64 + rng.gen_range(-0.05..0.05),
            phase: (0..cfg.channels)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect(),
            amp: (0..cfg.channels).map(|_| rng.gen_range(0.6..1.4)).collect(),
            trend: (0..cfg.channels).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        })
        .collect()
}

fn synth_sample(
    cfg: &SyntheticShiftConfig,
    pattern: &ClassPattern,
    artifacts: &DomainArtifacts,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f64>,
) {
    let t_len = cfg.t_len;
    let phase_jitter: f64 = rng.gen_range(-0.3..0.3);
    let start = out.len();
    for t in 0..t_len {
        let pos = t as f64 / t_len as f64;
        for ch in 0..cfg.channels {
            let angle =
                std::f64::consts::TAU * pattern.freq * pos + pattern.phase[ch] + phase_jitter;
            let clean = pattern.amp[ch] * angle.sin() + pattern.trend[ch] * pos;
            let noise: f64 = StandardNormal.sample(rng);
            out.push(
                artifacts.amplitude_scale * clean
                    + artifacts.channel_bias[ch]
                    + artifacts.noise_sigma * noise,
            );
        }
    }
    if artifacts.jitter_rate > 0.0 {
        for t in 1..t_len {
            if rng.gen::<f64>() < artifacts.jitter_rate {
                for ch in 0..cfg.channels {
                    let i = start + t * cfg.channels + ch;
                    out[i] = out[i - cfg.channels];
                }
            }
        }
    }
}

/// Generate a `(source, target)` dataset pair sharing class-conditional
/// waveforms. Deterministic per seed; source is class-balanced, target
/// optionally imbalanced. Both splits carry labels — the trainer never reads
/// target labels, evaluation does.
pub fn generate_synthetic_pair(cfg: &SyntheticShiftConfig) -> (Dataset, Dataset) {
    let mut pattern_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patterns = class_patterns(cfg, &mut pattern_rng);

    let balanced = |n: usize, n_c: usize| -> Vec<usize> {
        (0..n).map(|i| i % n_c).collect()
    };
    let imbalanced = |n: usize, n_c: usize, skew: f64, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let weights: Vec<f64> = (0..n_c).map(|c| (1.0 - skew).powi(c as i32)).collect();
        let total: f64 = weights.iter().sum();
        (0..n)
            .map(|_| {
                let mut u = rng.gen::<f64>() * total;
                for (c, w) in weights.iter().enumerate() {
                    if u < *w {
                        return c;
                    }
                    u -= w;
                }
                n_c - 1
            })
            .collect()
    };

    let build = |domain: &str,
                 n: usize,
                 labels: Vec<usize>,
                 artifacts: &DomainArtifacts,
                 rng: &mut ChaCha8Rng| {
        let mut data = Vec::with_capacity(n * cfg.t_len * cfg.channels);
        for &c in &labels {
            synth_sample(cfg, &patterns[c], artifacts, rng, &mut data);
        }
        Dataset {
            meta: DatasetMeta {
                t_len: cfg.t_len,
                channels: cfg.channels,
                n_classes: cfg.n_classes,
                n_samples: n,
                domain: domain.to_string(),
                labeled: true,
            },
            samples: Tensor::new(vec![n, cfg.t_len, cfg.channels], data).unwrap(),
            labels: Some(labels),
        }
    };

    let mut src_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let source = build(
        "source",
        cfg.n_source,
        balanced(cfg.n_source, cfg.n_classes),
        &cfg.source,
        &mut src_rng,
    );
    let mut trg_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let trg_labels = if cfg.target_imbalance > 0.0 {
        imbalanced(cfg.n_target, cfg.n_classes, cfg.target_imbalance, &mut trg_rng)
    } else {
        balanced(cfg.n_target, cfg.n_classes)
    };
    let target = build("target", cfg.n_target, trg_labels, &cfg.target, &mut trg_rng);
    (source, target)
}

/// Write `meta.txt` + `data.csv` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = format!(
        "T = {}\nD = {}\nn_c = {}\nn_samples = {}\ndomain = {}\nlabeled = {}\n",
        ds.meta.t_len,
        ds.meta.channels,
        ds.meta.n_classes,
        ds.meta.n_samples,
        ds.meta.domain,
        ds.meta.labeled
    );
    std::fs::write(dir.join("meta.txt"), meta)?;
    let per = ds.meta.t_len * ds.meta.channels;
    let mut csv = String::new();
    for i in 0..ds.meta.n_samples {
        let mut first = true;
        if let Some(labels) = &ds.labels {
            let _ = write!(csv, "{}", labels[i]);
            first = false;
        }
        for v in &ds.samples.data()[i * per..(i + 1) * per] {
            if !first {
                csv.push(',');
            }
            let _ = write!(csv, "{v}");
            first = false;
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("data.csv"), csv)?;
    Ok(())
}

fn parse_meta(path: &Path) -> Result<DatasetMeta> {
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut t_len = None;
    let mut channels = None;
    let mut n_classes = None;
    let mut n_samples = None;
    let mut domain = None;
    let mut labeled = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| perr(lineno + 1, format!("expected `key = value`, got `{raw}`")))?;
        let (key, val) = (key.trim(), val.trim());
        let as_usize = || {
            val.parse::<usize>()
                .map_err(|_| perr(lineno + 1, format!("`{key}` must be an integer, got `{val}`")))
        };
        match key {
            "T" => t_len = Some(as_usize()?),
            "D" => channels = Some(as_usize()?),
            "n_c" => n_classes = Some(as_usize()?),
            "n_samples" => n_samples = Some(as_usize()?),
            "domain" => domain = Some(val.to_string()),
            "labeled" => {
                labeled = Some(val.parse::<bool>().map_err(|_| {
                    perr(lineno + 1, format!("`labeled` must be true/false, got `{val}`"))
                })?)
            }
            other => return Err(perr(lineno + 1, format!("unknown meta key `{other}`"))),
        }
    }
    let need = |name: &str| perr(0, format!("missing meta key `{name}`"));
    Ok(DatasetMeta {
        t_len: t_len.ok_or_else(|| need("T"))?,
        channels: channels.ok_or_else(|| need("D"))?,
        n_classes: n_classes.ok_or_else(|| need("n_c"))?,
        n_samples: n_samples.ok_or_else(|| need("n_samples"))?,
        domain: domain.ok_or_else(|| need("domain"))?,
        labeled: labeled.ok_or_else(|| need("labeled"))?,
    })
}

/// Read a dataset from a directory holding `meta.txt` and `data.csv`.
/// Row counts, lengths and label ranges are validated against the meta.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta = parse_meta(&dir.join("meta.txt"))?;
    let data_path = dir.join("data.csv");
    let text = std::fs::read_to_string(&data_path)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: data_path.display().to_string(),
        line,
        msg,
    };
    let per = meta.t_len * meta.channels;
    let mut samples = Vec::with_capacity(meta.n_samples * per);
    let mut labels = if meta.labeled { Some(Vec::new()) } else { None };
    let mut rows = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let mut fields = line.split(',');
        if let Some(ls) = labels.as_mut() {
            let tok = fields
                .next()
                .ok_or_else(|| perr(lineno + 1, "empty row".into()))?;
            let label: usize = tok
                .trim()
                .parse()
                .map_err(|_| perr(lineno + 1, format!("bad label `{tok}`")))?;
            if label >= meta.n_classes {
                return Err(perr(
                    lineno + 1,
                    format!("label {label} out of range for {} classes", meta.n_classes),
                ));
            }
            ls.push(label);
        }
        let mut count = 0usize;
        for tok in fields {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| perr(lineno + 1, format!("bad value `{tok}`")))?;
            samples.push(v);
            count += 1;
        }
        if count != per {
            return Err(perr(
                lineno + 1,
                format!("row has {count} values, expected {per} (T·D)"),
            ));
        }
    }
    if rows != meta.n_samples {
        return Err(perr(
            0,
            format!("{} rows in data.csv but meta says {}", rows, meta.n_samples),
        ));
    }
    Ok(Dataset {
        samples: Tensor::new(vec![meta.n_samples, meta.t_len, meta.channels], samples).unwrap(),
        labels,
        meta,
    })
}
