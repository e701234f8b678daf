//! Synthetic interaction data with a planted multimodal signal, plus the
//! JSON-lines dataset format and loaders.
//!
//! The click model mixes two signals: a content term driven by the mean
//! multimodal cosine between target and history, and a behavioral term
//! driven by a latent item space that multimodal vectors cannot see. The
//! first is recoverable only by similarity-aware strategies, the second
//! only by ID-based ones.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DmfError, Result};
use crate::features::MultimodalTable;
use crate::numerics::dot;

pub const DEFAULT_MAX_HISTORY: usize = 100;

/// One labeled impression.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainExample {
    pub user_id: u64,
    pub history: Vec<u64>,
    pub target_id: u64,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub user_count: usize,
    pub item_count: usize,
    pub multimodal_dim: usize,
    /// Dimension of the hidden behavioral latent space.
    pub latent_dim: usize,
    pub history_len_min: usize,
    pub history_len_max: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Content weight on the mean target-history multimodal cosine.
    pub similarity_weight: f64,
    /// Behavioral weight on the latent-space affinity.
    pub affinity_weight: f64,
    pub noise_scale: f64,
    /// Additive logit bias controlling the base click rate.
    pub bias: f64,
    /// Sharpness of preference-driven history sampling.
    pub history_gamma: f64,
    /// Emit (last-interaction positive, random negative) pairs instead of
    /// click-model labels.
    pub pairing: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            user_count: 5000,
            item_count: 400,
            multimodal_dim: 8,
            latent_dim: 8,
            history_len_min: 5,
            history_len_max: 30,
            train_examples: 100_000,
            test_examples: 20_000,
            similarity_weight: 5.0,
            affinity_weight: 4.0,
            noise_scale: 0.3,
            bias: -0.5,
            history_gamma: 4.0,
            pairing: false,
            seed: 42,
        }
    }
}

/// Summary returned by the generator, used by the click-rate invariant.
#[derive(Debug, Clone, Serialize)]
pub struct GenStats {
    pub train_examples: usize,
    pub test_examples: usize,
    pub click_rate: f64,
    pub mean_probability: f64,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
            })
            .collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.iter().map(|&x| (x as f64 / n) as f32).collect();
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cosine_unit(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b)
}

struct World {
    mm: Vec<Vec<f32>>,
    latent: Vec<Vec<f32>>,
}

/// Generates the dataset files: `train.jsonl`, `test.jsonl`, `items.mmf`.
pub fn gen_synthetic(cfg: &SyntheticConfig, out_dir: &Path) -> Result<GenStats> {
    if cfg.history_len_min == 0 || cfg.history_len_max < cfg.history_len_min {
        return Err(DmfError::InvalidConfig("bad history length range".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let world = World {
        mm: (0..cfg.item_count).map(|_| unit_gaussian(&mut rng, cfg.multimodal_dim)).collect(),
        latent: (0..cfg.item_count).map(|_| unit_gaussian(&mut rng, cfg.latent_dim)).collect(),
    };

    let mut table = MultimodalTable::new(cfg.multimodal_dim);
    for (i, v) in world.mm.iter().enumerate() {
        table.insert(i as u64 + 1, v)?;
    }
    table.save(&out_dir.join("items.mmf"))?;

    let total = cfg.train_examples + cfg.test_examples;
    let per_user = total.div_ceil(cfg.user_count);
    let mut examples: Vec<TrainExample> = Vec::with_capacity(total);
    let mut prob_sum = 0.0f64;
    let mut clicks = 0usize;

    'users: for user in 0..cfg.user_count {
        let user_id = user as u64 + 1;
        let pref = unit_gaussian(&mut rng, cfg.multimodal_dim);
        let hist_len = rng.gen_range(cfg.history_len_min..=cfg.history_len_max);

        // rejection sampling: acceptance increases with cosine to preference
        let mut history: Vec<usize> = Vec::with_capacity(hist_len);
        let mut attempts = 0usize;
        while history.len() < hist_len {
            let item = rng.gen_range(0..cfg.item_count);
            let c = cosine_unit(&world.mm[item], &pref);
            attempts += 1;
            if rng.gen::<f64>() < sigmoid(cfg.history_gamma * c) || attempts > hist_len * 200 {
                history.push(item);
            }
        }

        let mean_latent: Vec<f64> = (0..cfg.latent_dim)
            .map(|c| history.iter().map(|&j| world.latent[j][c] as f64).sum::<f64>() / hist_len as f64)
            .collect();
        let latent_norm = mean_latent.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);

        for _ in 0..per_user {
            if examples.len() >= total {
                break 'users;
            }
            if cfg.pairing {
                // positive: the most recent interaction, negative: random
                let pos = *history.last().unwrap();
                let hist_ids: Vec<u64> =
                    history[..hist_len - 1].iter().map(|&j| j as u64 + 1).collect();
                if hist_ids.is_empty() {
                    continue;
                }
                examples.push(TrainExample {
                    user_id,
                    history: hist_ids.clone(),
                    target_id: pos as u64 + 1,
                    label: 1,
                });
                let neg = rng.gen_range(0..cfg.item_count);
                examples.push(TrainExample {
                    user_id,
                    history: hist_ids,
                    target_id: neg as u64 + 1,
                    label: 0,
                });
                clicks += 1;
                prob_sum += 1.0;
                continue;
            }
            let target = rng.gen_range(0..cfg.item_count);
            let c_target = history
                .iter()
                .map(|&j| cosine_unit(&world.mm[target], &world.mm[j]))
                .sum::<f64>()
                / hist_len as f64;
            let affinity = (0..cfg.latent_dim)
                .map(|c| world.latent[target][c] as f64 * mean_latent[c])
                .sum::<f64>()
                / latent_norm;
            let noise: f64 = {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let p = sigmoid(
                cfg.similarity_weight * c_target
                    + cfg.affinity_weight * affinity
                    + cfg.bias
                    + cfg.noise_scale * noise,
            );
            let label = u8::from(rng.gen::<f64>() < p);
            prob_sum += p;
            clicks += label as usize;
            examples.push(TrainExample {
                user_id,
                history: history.iter().map(|&j| j as u64 + 1).collect(),
                target_id: target as u64 + 1,
                label,
            });
        }
    }

    let (train, test) = examples.split_at(cfg.train_examples.min(examples.len()));
    write_interactions(&out_dir.join("train.jsonl"), train)?;
    write_interactions(&out_dir.join("test.jsonl"), test)?;

    Ok(GenStats {
        train_examples: train.len(),
        test_examples: test.len(),
        click_rate: clicks as f64 / examples.len() as f64,
        mean_probability: prob_sum / examples.len() as f64,
    })
}

pub fn write_interactions(path: &Path, examples: &[TrainExample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of loading a dataset file: parsed examples plus the number of
/// records dropped for having an empty history.
#[derive(Debug)]
pub struct LoadedDataset {
    pub examples: Vec<TrainExample>,
    pub dropped_empty_history: usize,
}

/// Parses JSON-lines interaction records, truncating each history to the
/// most recent `max_history` items.
pub fn load_interactions(path: &Path, max_history: usize) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    let mut dropped = 0usize;
    let mut records = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let mut ex: TrainExample = serde_json::from_str(&line).map_err(|e| {
            DmfError::MalformedRecord { line: i + 1, detail: e.to_string() }
        })?;
        if ex.history.is_empty() {
            dropped += 1;
            continue;
        }
        if ex.history.len() > max_history {
            let start = ex.history.len() - max_history;
            ex.history.drain(..start);
        }
        examples.push(ex);
    }
    if examples.is_empty() && records > 0 {
        eprintln!("warning: {} contains no usable records", path.display());
    }
    if dropped > 0 {
        eprintln!("warning: dropped {} empty-history records from {}", dropped, path.display());
    }
    Ok(LoadedDataset { examples, dropped_empty_history: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            user_count: 200,
            item_count: 300,
            train_examples: 4000,
            test_examples: 800,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let cfg = small_cfg();
        gen_synthetic(&cfg, d1.path()).unwrap();
        gen_synthetic(&cfg, d2.path()).unwrap();
        for f in ["train.jsonl", "test.jsonl", "items.mmf"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{} differs between identical seeds", f);
        }
    }

    #[test]
    fn round_trip_records() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let examples = vec![
            TrainExample { user_id: 1, history: vec![2, 3], target_id: 4, label: 1 },
            TrainExample { user_id: 2, history: vec![9], target_id: 5, label: 0 },
        ];
        write_interactions(&path, &examples).unwrap();
        let back = load_interactions(&path, 100).unwrap();
        assert_eq!(back.examples, examples);
    }

    #[test]
    fn long_history_truncated_to_recent() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let history: Vec<u64> = (1..=150).collect();
        write_interactions(
            &path,
            &[TrainExample { user_id: 1, history, target_id: 7, label: 1 }],
        )
        .unwrap();
        let back = load_interactions(&path, 100).unwrap();
        assert_eq!(back.examples[0].history.len(), 100);
        assert_eq!(back.examples[0].history[0], 51);
        assert_eq!(*back.examples[0].history.last().unwrap(), 150);
    }

    #[test]
    fn empty_file_and_empty_history() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "").unwrap();
        let back = load_interactions(&path, 100).unwrap();
        assert!(back.examples.is_empty());

        write_interactions(
            &path,
            &[TrainExample { user_id: 1, history: vec![], target_id: 7, label: 1 }],
        )
        .unwrap();
        let back = load_interactions(&path, 100).unwrap();
        assert!(back.examples.is_empty());
        assert_eq!(back.dropped_empty_history, 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "{\"user_id\":1,\"history\":[2],\"target_id\":3,\"label\":1}\nnot json\n").unwrap();
        match load_interactions(&path, 100) {
            Err(DmfError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed record error, got {:?}", other),
        }
    }

    #[test]
    fn zero_similarity_weight_decorrelates_labels() {
        let dir = tempdir().unwrap();
        let cfg = SyntheticConfig {
            similarity_weight: 0.0,
            affinity_weight: 0.0,
            noise_scale: 0.1,
            train_examples: 10_000,
            test_examples: 0,
            user_count: 400,
            item_count: 300,
            ..Default::default()
        };
        gen_synthetic(&cfg, dir.path()).unwrap();
        let data = load_interactions(&dir.path().join("train.jsonl"), 100).unwrap();
        let table = MultimodalTable::load(&dir.path().join("items.mmf")).unwrap();
        // point-biserial correlation between label and mean target cosine
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ex in &data.examples {
            let t = table.get(ex.target_id).unwrap().to_vec();
            let c = ex
                .history
                .iter()
                .map(|id| dot(&t, table.get(*id).unwrap()))
                .sum::<f64>()
                / ex.history.len() as f64;
            xs.push(c);
            ys.push(ex.label as f64);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
        let corr = cov / (sx * sy);
        assert!(corr.abs() < 0.05, "correlation {} should be near zero", corr);
    }

    #[test]
    fn strong_similarity_signal_is_separable() {
        let dir = tempdir().unwrap();
        let cfg = SyntheticConfig {
            similarity_weight: 8.0,
            affinity_weight: 0.0,
            noise_scale: 0.1,
            // low multimodal dimension and sharp preference sampling keep
            // the cosine spread wide enough to dominate the label noise
            multimodal_dim: 4,
            history_gamma: 6.0,
            train_examples: 8_000,
            test_examples: 0,
            user_count: 300,
            item_count: 300,
            ..Default::default()
        };
        gen_synthetic(&cfg, dir.path()).unwrap();
        let data = load_interactions(&dir.path().join("train.jsonl"), 100).unwrap();
        let table = MultimodalTable::load(&dir.path().join("items.mmf")).unwrap();
        let mut labels = Vec::new();
        let mut scores = Vec::new();
        for ex in &data.examples {
            let t = table.get(ex.target_id).unwrap().to_vec();
            let c = ex
                .history
                .iter()
                .map(|id| dot(&t, table.get(*id).unwrap()))
                .sum::<f64>()
                / ex.history.len() as f64;
            labels.push(ex.label);
            scores.push(c);
        }
        let a = crate::metrics::auc(&labels, &scores).unwrap();
        assert!(a > 0.8, "oracle classifier AUC {} too low", a);
    }

    #[test]
    fn click_rate_tracks_mean_probability() {
        let dir = tempdir().unwrap();
        let cfg = SyntheticConfig {
            train_examples: 100_000,
            test_examples: 0,
            user_count: 2000,
            item_count: 500,
            ..Default::default()
        };
        let stats = gen_synthetic(&cfg, dir.path()).unwrap();
        assert!((stats.click_rate - stats.mean_probability).abs() < 0.02);
    }
}
