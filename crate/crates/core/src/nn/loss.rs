use ndarray::{Array2, ArrayView2};

use super::graph::{logsumexp, Graph, Var};
use super::params::ParamStore;
use super::NnError;
use crate::Scalar;

/// Multiple Negatives Ranking loss over dot-product scores: row `i` of
/// `anchors` should score highest against row `i` of `positives`.
pub fn mnr_loss_node<T: Scalar>(g: &mut Graph<T>, anchors: Var, positives: Var) -> Var {
    let k = g.shape(anchors).0;
    let scores = g.matmul_nt(anchors, positives);
    let lp = g.log_softmax_rows(scores);
    let diag = g.pick(lp, (0..k).map(|i| (i, i)).collect());
    let total = g.sum(diag);
    g.scale(total, -T::one() / T::from_usize_lossy(k))
}

fn check_batch<T: Scalar>(anchors: &ArrayView2<'_, T>, positives: &ArrayView2<'_, T>) -> Result<(), NnError> {
    if anchors.dim() != positives.dim() || anchors.nrows() == 0 {
        return Err(NnError::BatchMismatch { anchors: anchors.nrows(), positives: positives.nrows() });
    }
    Ok(())
}

/// `J = -(1/k) Σᵢ [S(aᵢ,pᵢ) - ln Σⱼ exp S(aᵢ,pⱼ)]` with `S` the dot product.
pub fn mnr_loss<T: Scalar>(anchors: ArrayView2<'_, T>, positives: ArrayView2<'_, T>) -> Result<T, NnError> {
    check_batch(&anchors, &positives)?;
    let k = anchors.nrows();
    let scores = anchors.dot(&positives.t());
    let total = (0..k)
        .map(|i| scores[[i, i]] - logsumexp(scores.row(i).iter().copied()))
        .fold(T::zero(), |a, b| a + b);
    Ok(-total / T::from_usize_lossy(k))
}

/// Loss and its gradients with respect to the anchor and positive rows.
pub fn mnr_loss_with_grads<T: Scalar>(
    anchors: ArrayView2<'_, T>,
    positives: ArrayView2<'_, T>,
) -> Result<(T, Array2<T>, Array2<T>), NnError> {
    check_batch(&anchors, &positives)?;
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(anchors.to_owned());
    let p = g.input(positives.to_owned());
    let loss = mnr_loss_node(&mut g, a, p);
    let grads = g.backward(loss, Array2::from_elem((1, 1), T::one()));
    let zeros = || Array2::zeros(anchors.dim());
    let ga = grads.get(a).cloned().unwrap_or_else(zeros);
    let gp = grads.get(p).cloned().unwrap_or_else(zeros);
    Ok((g.scalar(loss), ga, gp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_pair_is_zero() {
        let a = array![[0.3, -1.2, 2.0]];
        let p = array![[1.0, 0.5, -0.7]];
        assert_eq!(mnr_loss(a.view(), p.view()).unwrap(), 0.0);
    }

    #[test]
    fn uniform_scores_give_ln2() {
        let a = array![[1.0, 0.0], [1.0, 0.0]];
        let p = array![[0.5, 3.0], [0.5, -3.0]];
        let l = mnr_loss(a.view(), p.view()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_mismatch() {
        let a = array![[1.0, 0.0]];
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(mnr_loss(a.view(), p.view()), Err(NnError::BatchMismatch { .. })));
    }

    #[test]
    fn graph_route_matches_direct() {
        let a: Array2<f64> = array![[0.1, 0.4], [-0.3, 0.8], [1.1, -0.2]];
        let p = array![[0.5, -0.1], [0.2, 0.9], [-0.7, 0.3]];
        let direct = mnr_loss(a.view(), p.view()).unwrap();
        let (via_graph, ga, gp) = mnr_loss_with_grads(a.view(), p.view()).unwrap();
        assert!((direct - via_graph).abs() < 1e-14);
        assert_eq!(ga.dim(), (3, 2));
        assert_eq!(gp.dim(), (3, 2));
    }
}
