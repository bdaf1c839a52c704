//! k-nearest-neighbour graph convolution over instances in feature space.

use log::warn;

use super::ModelError;
use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// Symmetrised k-NN neighbour lists over the unmasked rows of `features`.
///
/// Row `i` lists `j` if `j` is among the `k` nearest unmasked rows of `i`
/// (squared Euclidean distance, ties to the lower index) or vice versa.
/// Self-loops are implicit and not listed; masked rows get no neighbours and
/// are never anyone's neighbour.
pub fn knn_graph(features: &Tensor, mask: &[bool], k: usize) -> Result<Vec<Vec<usize>>, ModelError> {
    let n = features.rows();
    if mask.len() != n {
        return Err(ModelError::Mask {
            mask: mask.len(),
            rows: n,
        });
    }
    if k == 0 {
        return Err(ModelError::Config("k-NN graph needs k >= 1".into()));
    }
    let valid: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if k >= valid.len() && valid.len() > 1 {
        warn!(
            "k = {k} >= {} instances: k-NN graph degenerates to the complete graph",
            valid.len()
        );
    }
    let mut adjacency = vec![Vec::new(); n];
    for &i in &valid {
        let xi = features.row(i);
        let mut dists: Vec<(f64, usize)> = valid
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| {
                let d = xi
                    .iter()
                    .zip(features.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, j)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in dists.iter().take(k) {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Ok(adjacency)
}

/// `ReLU(D⁻¹ A H W)` with `A` the neighbour lists plus self-loops.
pub fn gcn_layer(tape: &mut Tape, h: Var, neighbors: &[Vec<usize>], weight: Var) -> Result<Var, ModelError> {
    let agg = tape.neighbor_mean(h, neighbors)?;
    let lin = tape.matmul(agg, weight)?;
    Ok(tape.relu(lin)?)
}
