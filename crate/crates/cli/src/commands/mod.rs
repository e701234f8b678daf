pub mod bench;
pub mod eval;
pub mod gen;
pub mod train;
pub mod verify;

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{Context, Result};
use dmf_core::{
    load_interactions, prepare_example, Bucketizer, ModelParams, MultimodalTable,
    PreparedExample, TrainExample,
};

pub struct Dataset {
    pub train: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    pub mm: MultimodalTable,
    pub item_ids: Vec<u64>,
    pub user_ids: Vec<u64>,
}

/// Loads `train.jsonl`, `test.jsonl`, and `items.mmf` from a dataset
/// directory and derives the vocabularies.
pub fn load_dataset(dir: &Path, max_history: usize) -> Result<Dataset> {
    let train = load_interactions(&dir.join("train.jsonl"), max_history)
        .with_context(|| format!("loading {}", dir.join("train.jsonl").display()))?
        .examples;
    let test_path = dir.join("test.jsonl");
    let test = if test_path.exists() {
        load_interactions(&test_path, max_history)?.examples
    } else {
        Vec::new()
    };
    let mm = MultimodalTable::load(&dir.join("items.mmf"))
        .with_context(|| format!("loading {}", dir.join("items.mmf").display()))?;

    let mut items: BTreeSet<u64> = mm.ids().into_iter().collect();
    let mut users: BTreeSet<u64> = BTreeSet::new();
    for ex in train.iter().chain(&test) {
        users.insert(ex.user_id);
        items.insert(ex.target_id);
        items.extend(&ex.history);
    }
    Ok(Dataset {
        train,
        test,
        mm,
        item_ids: items.into_iter().collect(),
        user_ids: users.into_iter().collect(),
    })
}

/// Fits the equal-frequency bucketizer on target-history similarity scores
/// sampled from the training examples.
pub fn fit_bucketizer(
    data: &Dataset,
    bucket_count: usize,
    max_scores: usize,
) -> Result<Bucketizer> {
    let mut scores: Vec<f64> = Vec::new();
    'outer: for ex in &data.train {
        if let Some(target) = data.mm.get(ex.target_id) {
            let target = target.to_vec();
            for id in &ex.history {
                if let Some(v) = data.mm.get(*id) {
                    scores.push(dmf_core::dot(&target, v).clamp(-1.0, 1.0));
                    if scores.len() >= max_scores {
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(Bucketizer::fit_equal_frequency(&scores, bucket_count)?)
}

pub fn prepare_all(
    examples: &[TrainExample],
    params: &ModelParams<f32>,
    mm: &MultimodalTable,
    bz: &Bucketizer,
) -> Result<Vec<PreparedExample>> {
    examples
        .iter()
        .map(|ex| prepare_example(ex, params, mm, bz).map_err(Into::into))
        .collect()
}
