//! Static stock graph and the learned edge refinement.

use std::ops::Range;

use numcore::{sigmoid, Tensor};

use super::ModelError;

/// Pearson correlation over the positions where both series are present.
pub fn pearson(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Prior weight of one off-diagonal edge: `0.5·[same sector] + 0.5·max(0, ρ)`.
pub fn edge_prior(same_sector: bool, rho: f64) -> f64 {
    0.5 * if same_sector { 1.0 } else { 0.0 } + 0.5 * rho.max(0.0)
}

/// Prior matrix from [`edge_prior`] with a unit diagonal.
///
/// `returns[i][t]` spans the whole timeline; only `days` are read, and they
/// must end at or before `train_end`.
pub fn init_edges(
    sectors: &[usize],
    returns: &[Vec<Option<f64>>],
    days: Range<usize>,
    train_end: usize,
) -> Result<Tensor, ModelError> {
    if days.end > train_end {
        return Err(ModelError::Leakage {
            last_day: days.end - 1,
            train_end,
        });
    }
    let n = sectors.len();
    if returns.len() != n {
        return Err(ModelError::Shape(format!("{} return series for {n} stocks", returns.len())));
    }
    let mut e = Tensor::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let rho = pearson(&returns[i][days.clone()], &returns[j][days.clone()]).unwrap_or(0.0);
            let v = edge_prior(sectors[i] == sectors[j], rho);
            e.set(i, j, v);
            e.set(j, i, v);
        }
    }
    Ok(e)
}

/// `σ(w_eᵀ[h_i ‖ h_j] + b_e)` for one pair of node states.
pub fn refine_edge(h_i: &[f64], h_j: &[f64], w_e: &[f64], b_e: f64) -> f64 {
    debug_assert_eq!(w_e.len(), h_i.len() + h_j.len());
    let z: f64 = h_i.iter().chain(h_j).zip(w_e).map(|(h, w)| h * w).sum();
    sigmoid(z + b_e)
}
