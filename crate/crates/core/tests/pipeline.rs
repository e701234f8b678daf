//! End-to-end pipeline tests: generate data, train briefly, checkpoint,
//! reload, and confirm the reloaded model is numerically identical.

use dmf_core::*;

fn small_world() -> (Vec<TrainExample>, Vec<TrainExample>, MultimodalTable) {
    let cfg = SyntheticConfig {
        user_count: 40,
        item_count: 120,
        multimodal_dim: 8,
        train_examples: 600,
        test_examples: 200,
        seed: 5,
        ..Default::default()
    };
    let dir = std::env::temp_dir().join(format!("dmf-pipeline-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    gen_synthetic(&cfg, &dir).unwrap();
    let train = load_interactions(&dir.join("train.jsonl"), 50).unwrap().examples;
    let test = load_interactions(&dir.join("test.jsonl"), 50).unwrap().examples;
    let mm = MultimodalTable::load(&dir.join("items.mmf")).unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    (train, test, mm)
}

fn vocab(train: &[TrainExample], test: &[TrainExample], mm: &MultimodalTable) -> (Vec<u64>, Vec<u64>) {
    let mut items: std::collections::BTreeSet<u64> = mm.ids().into_iter().collect();
    let mut users = std::collections::BTreeSet::new();
    for ex in train.iter().chain(test) {
        users.insert(ex.user_id);
        items.insert(ex.target_id);
        items.extend(ex.history.iter().copied());
    }
    (items.into_iter().collect(), users.into_iter().collect())
}

fn fit_bucketizer(train: &[TrainExample], mm: &MultimodalTable, m: usize) -> Bucketizer {
    let mut scores = Vec::new();
    for ex in train {
        if let Some(t) = mm.get(ex.target_id) {
            let t = t.to_vec();
            for id in &ex.history {
                if let Some(v) = mm.get(*id) {
                    scores.push(dot(&t, v).clamp(-1.0, 1.0));
                }
            }
        }
    }
    Bucketizer::fit_equal_frequency(&scores, m).unwrap()
}

#[test]
fn train_checkpoint_reload_scores_match() {
    let (train, test, mm) = small_world();
    let (item_ids, user_ids) = vocab(&train, &test, &mm);
    let bz = fit_bucketizer(&train, &mm, 8);

    let cfg = ModelConfig { strategy: Strategy::Dmf, alpha: 0.3, ..ModelConfig::desk() };
    let mut params = ModelParams::<f32>::init(cfg, item_ids, user_ids, 21).unwrap();
    let prep: Vec<PreparedExample> =
        train.iter().map(|ex| prepare_example(ex, &params, &mm, &bz).unwrap()).collect();
    let test_prep: Vec<PreparedExample> =
        test.iter().map(|ex| prepare_example(ex, &params, &mm, &bz).unwrap()).collect();

    let mut opt = AdamState::new(&mut params, AdamConfig::default());
    let tc = TrainConfig { batch_size: 64, epochs: 1, seed: 21 };
    let before = train_epoch(&mut params, &mut opt, &prep, &tc, 0).unwrap();
    let after = train_epoch(&mut params, &mut opt, &prep, &tc, 1).unwrap();
    assert!(
        after.mean_loss < before.mean_loss,
        "loss did not decrease: {} -> {}",
        before.mean_loss,
        after.mean_loss
    );

    let path = std::env::temp_dir().join(format!("dmf-ckpt-{}.dmf", std::process::id()));
    save_checkpoint(&params, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    let _ = std::fs::remove_file(&path);

    let (labels_a, scores_a) = evaluate_scores(&params, &test_prep).unwrap();
    let (labels_b, scores_b) = evaluate_scores(&reloaded, &test_prep).unwrap();
    assert_eq!(labels_a, labels_b);
    assert_eq!(scores_a.len(), scores_b.len());
    for (a, b) in scores_a.iter().zip(&scores_b) {
        assert_eq!(a.to_bits(), b.to_bits(), "reloaded checkpoint changed a score");
    }
}

#[test]
fn checkpoint_rejects_truncated_file() {
    let (train, test, mm) = small_world();
    let (item_ids, user_ids) = vocab(&train, &test, &mm);
    let cfg = ModelConfig { strategy: Strategy::Decoupled, ..ModelConfig::desk() };
    let params = ModelParams::<f32>::init(cfg, item_ids, user_ids, 3).unwrap();
    let path = std::env::temp_dir().join(format!("dmf-ckpt-trunc-{}.dmf", std::process::id()));
    save_checkpoint(&params, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&path).is_err(), "truncated checkpoint should fail to load");
    let _ = std::fs::remove_file(&path);
}
