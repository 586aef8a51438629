use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Homogeneity, completeness and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Entropy-based external scores (natural log). Homogeneity is 1 when the
/// class entropy is 0, completeness is 1 when the cluster entropy is 0, and
/// the V-measure is 0 when both scores are 0.
pub fn clustering_scores<A, B>(classes: &[A], clusters: &[B]) -> Result<ClusterScores, EvalError>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if classes.len() != clusters.len() {
        return Err(EvalError::IdMismatch(format!("{} labels for {} assignments", classes.len(), clusters.len())));
    }
    if classes.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = classes.len() as f64;
    let mut class_ix: HashMap<&A, usize> = HashMap::new();
    let mut cluster_ix: HashMap<&B, usize> = HashMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (a, b) in classes.iter().zip(clusters) {
        let next = class_ix.len();
        let ci = *class_ix.entry(a).or_insert(next);
        let next = cluster_ix.len();
        let ki = *cluster_ix.entry(b).or_insert(next);
        *joint.entry((ci, ki)).or_default() += 1;
    }
    let mut class_n = vec![0usize; class_ix.len()];
    let mut cluster_n = vec![0usize; cluster_ix.len()];
    for (&(c, k), &v) in &joint {
        class_n[c] += v;
        cluster_n[k] += v;
    }
    let h_c = entropy(class_n.iter().copied(), n);
    let h_k = entropy(cluster_n.iter().copied(), n);
    let h_joint = entropy(joint.values().copied(), n);
    // H(C|K) = H(C,K) − H(K)
    let h_c_given_k = (h_joint - h_k).max(0.0);
    let h_k_given_c = (h_joint - h_c).max(0.0);
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    let v_measure = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(ClusterScores { homogeneity, completeness, v_measure })
}

/// [`clustering_scores`] over id-keyed maps that must cover the same ids.
pub fn clustering_scores_by_id<A, B>(
    classes: &BTreeMap<String, A>,
    clusters: &BTreeMap<String, B>,
) -> Result<ClusterScores, EvalError>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if let Some(id) = classes.keys().find(|id| !clusters.contains_key(*id)) {
        return Err(EvalError::IdMismatch(format!("{id} has a label but no cluster")));
    }
    if let Some(id) = clusters.keys().find(|id| !classes.contains_key(*id)) {
        return Err(EvalError::IdMismatch(format!("{id} has a cluster but no label")));
    }
    let a: Vec<&A> = classes.values().collect();
    let b: Vec<&B> = clusters.values().collect();
    clustering_scores(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_relabeled() {
        let s = clustering_scores(&["a", "a", "b", "c"], &[5, 5, 1, 2]).unwrap();
        assert_eq!((s.homogeneity, s.completeness, s.v_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_cluster_over_two_classes() {
        let s = clustering_scores(&["a", "a", "b", "b"], &[0, 0, 0, 0]).unwrap();
        assert!(s.homogeneity.abs() < 1e-15);
        assert_eq!(s.completeness, 1.0);
        assert!(s.v_measure.abs() < 1e-15);
    }

    #[test]
    fn mismatched_ids() {
        assert!(matches!(clustering_scores(&[1, 2], &[1]), Err(EvalError::IdMismatch(_))));
        let a: BTreeMap<String, u8> = [("x".to_string(), 1)].into();
        let b: BTreeMap<String, u8> = [("y".to_string(), 1)].into();
        assert!(matches!(clustering_scores_by_id(&a, &b), Err(EvalError::IdMismatch(_))));
    }
}
