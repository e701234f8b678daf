//! Ranking metrics: AUC (Mann-Whitney, ties at half weight) and
//! impression-weighted GAUC.

use std::collections::HashMap;

use crate::error::{DmfError, Result};

/// Rank-based AUC. Ties contribute 0.5 per pair. Undefined (error) when the
/// labels are single-class.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DmfError::UndefinedMetric(format!(
            "auc needs both classes, got {} pos / {} neg",
            n_pos, n_neg
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tied groups, 1-based
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let numerator = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(numerator / (n_pos as f64 * n_neg as f64))
}

/// All-pairs counting oracle for AUC; O(n^2), used for verification.
pub fn auc_pair_counting(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DmfError::UndefinedMetric("single-class input".into()));
    }
    let mut numerator = 0.0f64;
    for i in 0..labels.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..labels.len() {
            if labels[j] != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                numerator += 1.0;
            } else if scores[i] == scores[j] {
                numerator += 0.5;
            }
        }
    }
    Ok(numerator / (n_pos as f64 * n_neg as f64))
}

/// GAUC result together with how many users were skipped for having
/// single-class labels.
#[derive(Debug, Clone, Copy)]
pub struct GaucResult {
    pub gauc: f64,
    pub users_skipped: usize,
}

/// Per-user AUC, weighted by that user's impression count. Users whose
/// labels are single-class are skipped and their weight excluded.
pub fn gauc(user_ids: &[u64], labels: &[u8], scores: &[f64]) -> Result<GaucResult> {
    assert_eq!(user_ids.len(), labels.len());
    assert_eq!(user_ids.len(), scores.len());
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, &u) in user_ids.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let mut weighted = 0.0f64;
    let mut total_weight = 0.0f64;
    let mut skipped = 0usize;
    for idxs in groups.values() {
        let ls: Vec<u8> = idxs.iter().map(|&i| labels[i]).collect();
        let ss: Vec<f64> = idxs.iter().map(|&i| scores[i]).collect();
        match auc(&ls, &ss) {
            Ok(a) => {
                let w = idxs.len() as f64;
                weighted += w * a;
                total_weight += w;
            }
            Err(_) => skipped += 1,
        }
    }
    if total_weight == 0.0 {
        return Err(DmfError::UndefinedMetric("every user is single-class".into()));
    }
    Ok(GaucResult { gauc: weighted / total_weight, users_skipped: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        assert_eq!(auc(&[1, 0], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[1, 0], &[0.1, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(auc(&[1, 1], &[0.2, 0.3]).is_err());
    }

    #[test]
    fn matches_pair_counting_with_ties() {
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u32
        };
        for _ in 0..50 {
            let n = 3 + (next() % 48) as usize;
            let labels: Vec<u8> = (0..n).map(|_| (next() % 2) as u8).collect();
            // quantized scores force ties
            let scores: Vec<f64> = (0..n).map(|_| (next() % 7) as f64 / 7.0).collect();
            if labels.iter().all(|&y| y == 1) || labels.iter().all(|&y| y == 0) {
                continue;
            }
            let fast = auc(&labels, &scores).unwrap();
            let slow = auc_pair_counting(&labels, &scores).unwrap();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn auc_monotone_transform_invariant() {
        let labels = [1u8, 0, 1, 0, 1];
        let scores = [0.9, 0.3, 0.5, 0.4, 0.2];
        let a = auc(&labels, &scores).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 4.0).exp()).collect();
        assert_eq!(a, auc(&labels, &transformed).unwrap());
    }

    #[test]
    fn gauc_single_user_equals_auc() {
        let labels = [1u8, 0, 1, 0];
        let scores = [0.8, 0.6, 0.3, 0.1];
        let a = auc(&labels, &scores).unwrap();
        let g = gauc(&[7, 7, 7, 7], &labels, &scores).unwrap();
        assert_eq!(g.gauc, a);
        assert_eq!(g.users_skipped, 0);
    }

    #[test]
    fn gauc_weighted_two_users() {
        // user 1: three impressions, AUC 1.0; user 2: one... needs two.
        // weights 3 and 1 -> 0.75
        let user_ids = [1u64, 1, 1, 2, 2, 2];
        let labels = [1u8, 0, 0, 1, 0, 0];
        let scores = [0.9, 0.2, 0.1, 0.1, 0.5, 0.6];
        // user1 AUC = 1.0 over 3 impressions, user2 AUC = 0.0 over 3;
        // adjust weights to 3 and 1 via a separate case below.
        let g = gauc(&user_ids, &labels, &scores).unwrap();
        assert_eq!(g.gauc, 0.5);

        let user_ids = [1u64, 1, 1, 2, 2];
        let labels = [1u8, 0, 0, 1, 0];
        let scores = [0.9, 0.2, 0.1, 0.1, 0.5];
        // user1 AUC 1.0 weight 3, user2 AUC 0.0 weight 2 -> 0.6
        let g = gauc(&user_ids, &labels, &scores).unwrap();
        assert_eq!(g.gauc, 0.6);
    }

    #[test]
    fn gauc_skips_single_class_user() {
        let user_ids = [1u64, 1, 2, 2];
        let labels = [1u8, 0, 1, 1];
        let scores = [0.9, 0.2, 0.3, 0.4];
        let g = gauc(&user_ids, &labels, &scores).unwrap();
        assert_eq!(g.gauc, 1.0);
        assert_eq!(g.users_skipped, 1);
        assert!(gauc(&[1, 1], &[1, 1], &[0.1, 0.2]).is_err());
    }
}
