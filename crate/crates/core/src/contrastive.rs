//! Kernel-based contrastive objective over graph node representations.
//!
//! For each emotion class present in a dialogue, the nodes carrying that
//! class form the positive set and every other node the negative set; the
//! squared kernel mean discrepancy between the two sets (biased V-statistic,
//! RBF kernel) is the cell's loss, and the objective is the mean over cells.
//!
//! The kernel bandwidth follows the median heuristic computed on the tape,
//! so gradients flow through the bandwidth as well as the distances.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

/// Kernel bandwidth selection for the RBF kernel
/// `k(x, y) = exp(-gamma * |x - y|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelConfig {
    /// `gamma = 1 / (2 m^2)` with `m` the median pairwise distance within
    /// the cell; falls back to `gamma = 1` when the median is degenerate
    /// (zero distance).
    MedianHeuristic,
    Fixed(f64),
}

/// One contrastive cell: row indices of the positive and negative sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub class: usize,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

/// Build one cell per class that has at least one member and at least one
/// non-member.
pub fn partition_by_class(labels: &[usize], n_classes: usize) -> Vec<Cell> {
    (0..n_classes)
        .filter_map(|class| {
            let pos: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| i)
                .collect();
            let neg: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != class)
                .map(|(i, _)| i)
                .collect();
            if pos.is_empty() || neg.is_empty() {
                None
            } else {
                Some(Cell { class, pos, neg })
            }
        })
        .collect()
}

// -- pure reference path --------------------------------------------------

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    (-gamma * squared_distance(x, y)).exp()
}

/// Median-heuristic bandwidth over all distinct pairs of `rows`. Returns
/// None when there are no pairs or the median distance is zero.
pub fn median_heuristic_gamma(rows: &[Vec<f64>]) -> Option<f64> {
    let n = rows.len();
    let mut d2: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for p in 0..n {
        for q in (p + 1)..n {
            d2.push(squared_distance(&rows[p], &rows[q]));
        }
    }
    if d2.is_empty() {
        return None;
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let c = d2.len();
    if c % 2 == 1 {
        let mid = d2[c / 2];
        if mid <= 0.0 {
            None
        } else {
            Some(1.0 / (2.0 * mid))
        }
    } else {
        let (a, b) = (d2[c / 2 - 1], d2[c / 2]);
        if a <= 0.0 || b <= 0.0 {
            None
        } else {
            let m = (a.sqrt() + b.sqrt()) / 2.0;
            Some(1.0 / (2.0 * m * m))
        }
    }
}

/// Biased V-statistic kernel mean discrepancy between two sample sets:
/// mean(k within pos) + mean(k within neg) - 2 mean(k across). Reference
/// double-loop implementation.
pub fn mmd_vstat(pos: &[Vec<f64>], neg: &[Vec<f64>], gamma: f64) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("mmd needs non-empty positive and negative sets"));
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut s_pp = 0.0;
    for x in pos {
        for y in pos {
            s_pp += rbf_kernel(x, y, gamma);
        }
    }
    let mut s_nn = 0.0;
    for x in neg {
        for y in neg {
            s_nn += rbf_kernel(x, y, gamma);
        }
    }
    let mut s_pn = 0.0;
    for x in pos {
        for y in neg {
            s_pn += rbf_kernel(x, y, gamma);
        }
    }
    Ok(s_pp / (np * np) + s_nn / (nn * nn) - 2.0 * s_pn / (np * nn))
}

// -- tape path -------------------------------------------------------------

/// Squared distances between all distinct pairs of `rows`, as tape nodes,
/// indexed by `pair_index(p, q)` with `p < q`.
struct PairDistances {
    n: usize,
    nodes: Vec<NodeId>,
}

impl PairDistances {
    fn build(tape: &mut Tape, rows: &[NodeId]) -> Result<PairDistances> {
        let n = rows.len();
        let mut nodes = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for p in 0..n {
            for q in (p + 1)..n {
                let diff = tape.sub(rows[p], rows[q])?;
                let sq = tape.mul(diff, diff)?;
                nodes.push(tape.sum(sq)?);
            }
        }
        Ok(PairDistances { n, nodes })
    }

    fn get(&self, p: usize, q: usize) -> NodeId {
        debug_assert!(p < q && q < self.n);
        // index of (p, q) in row-major upper-triangle order
        let before = p * self.n - p * (p + 1) / 2;
        self.nodes[before + (q - p - 1)]
    }
}

/// Median-heuristic bandwidth on the tape. Selection happens by value, and
/// the selected distance nodes stay differentiable; degenerate medians fall
/// back to a constant unit bandwidth.
fn median_gamma_on_tape(tape: &mut Tape, dists: &PairDistances) -> Result<NodeId> {
    if dists.nodes.is_empty() {
        return tape.scalar_const(1.0);
    }
    let mut order: Vec<usize> = (0..dists.nodes.len()).collect();
    order.sort_by(|&a, &b| {
        let va = tape.value(dists.nodes[a]).item();
        let vb = tape.value(dists.nodes[b]).item();
        va.partial_cmp(&vb).expect("finite distances").then(a.cmp(&b))
    });
    let c = order.len();
    if c % 2 == 1 {
        let mid = dists.nodes[order[c / 2]];
        if tape.value(mid).item() <= 0.0 {
            return tape.scalar_const(1.0);
        }
        // gamma = 1 / (2 d^2), with m^2 = d^2 directly
        let denom = tape.affine(mid, 2.0, 0.0)?;
        tape.powf(denom, -1.0)
    } else {
        let a = dists.nodes[order[c / 2 - 1]];
        let b = dists.nodes[order[c / 2]];
        if tape.value(a).item() <= 0.0 || tape.value(b).item() <= 0.0 {
            return tape.scalar_const(1.0);
        }
        let sa = tape.powf(a, 0.5)?;
        let sb = tape.powf(b, 0.5)?;
        let s = tape.add(sa, sb)?;
        let m = tape.affine(s, 0.5, 0.0)?;
        let m2 = tape.mul(m, m)?;
        let denom = tape.affine(m2, 2.0, 0.0)?;
        tape.powf(denom, -1.0)
    }
}

/// Kernel mean discrepancy of one cell on the tape. `rows` are the node
/// representation vectors; `pos`/`neg` index into them.
pub fn mmd_on_tape(
    tape: &mut Tape,
    rows: &[NodeId],
    pos: &[usize],
    neg: &[usize],
    kernel: KernelConfig,
) -> Result<NodeId> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("mmd needs non-empty positive and negative sets"));
    }
    let cell_rows: Vec<NodeId> = pos.iter().chain(neg.iter()).map(|&i| rows[i]).collect();
    let dists = PairDistances::build(tape, &cell_rows)?;
    let gamma = match kernel {
        KernelConfig::Fixed(g) => {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid(format!("kernel bandwidth must be positive, got {g}")));
            }
            tape.scalar_const(g)?
        }
        KernelConfig::MedianHeuristic => median_gamma_on_tape(tape, &dists)?,
    };

    // kernel value for a distinct pair (cell-local indices)
    let mut kernel_cache: Vec<Option<NodeId>> = vec![None; dists.nodes.len()];
    let mut kernel_at = |tape: &mut Tape, p: usize, q: usize| -> Result<NodeId> {
        let (p, q) = if p < q { (p, q) } else { (q, p) };
        let before = p * dists.n - p * (p + 1) / 2;
        let idx = before + (q - p - 1);
        if let Some(k) = kernel_cache[idx] {
            return Ok(k);
        }
        let prod = tape.mul(gamma, dists.get(p, q))?;
        let neg_prod = tape.affine(prod, -1.0, 0.0)?;
        let k = tape.exp(neg_prod)?;
        kernel_cache[idx] = Some(k);
        Ok(k)
    };

    let np = pos.len();
    let nn = neg.len();
    // within-set sums over distinct pairs; the diagonal contributes the
    // constant set size since k(x, x) = 1
    let mut pp = Vec::new();
    for p in 0..np {
        for q in (p + 1)..np {
            pp.push(kernel_at(tape, p, q)?);
        }
    }
    let mut nn_pairs = Vec::new();
    for p in 0..nn {
        for q in (p + 1)..nn {
            nn_pairs.push(kernel_at(tape, np + p, np + q)?);
        }
    }
    let mut pn = Vec::new();
    for p in 0..np {
        for q in 0..nn {
            pn.push(kernel_at(tape, p, np + q)?);
        }
    }

    let sum_or_zero = |tape: &mut Tape, ids: &[NodeId]| -> Result<NodeId> {
        if ids.is_empty() {
            tape.scalar_const(0.0)
        } else {
            let c = tape.concat(ids)?;
            tape.sum(c)
        }
    };
    let s_pp_off = sum_or_zero(tape, &pp)?;
    let s_nn_off = sum_or_zero(tape, &nn_pairs)?;
    let s_pn = sum_or_zero(tape, &pn)?;

    let npf = np as f64;
    let nnf = nn as f64;
    let t_pp = tape.affine(s_pp_off, 2.0 / (npf * npf), npf / (npf * npf))?;
    let t_nn = tape.affine(s_nn_off, 2.0 / (nnf * nnf), nnf / (nnf * nnf))?;
    let t_pn = tape.affine(s_pn, -2.0 / (npf * nnf), 0.0)?;
    let partial = tape.add(t_pp, t_nn)?;
    tape.add(partial, t_pn)
}

/// Mean cell discrepancy over the class partition of `labels`. Returns a
/// constant zero node when no class yields a valid cell.
pub fn contrastive_loss(
    tape: &mut Tape,
    rows: &[NodeId],
    labels: &[usize],
    n_classes: usize,
    kernel: KernelConfig,
) -> Result<NodeId> {
    if rows.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} rows vs {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let cells = partition_by_class(labels, n_classes);
    if cells.is_empty() {
        return tape.scalar_const(0.0);
    }
    let mut per_cell = Vec::with_capacity(cells.len());
    for cell in &cells {
        per_cell.push(mmd_on_tape(tape, rows, &cell.pos, &cell.neg, kernel)?);
    }
    let all = tape.concat(&per_cell)?;
    tape.mean(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{central_difference, grad_close};
    use crate::autodiff::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rbf_kernel_analytic_values() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7), 1.0);
        let k = rbf_kernel(&[0.0, 0.0], &[3.0, 4.0], 0.1);
        assert!((k - (-2.5f64).exp()).abs() <= 1e-15);
    }

    #[test]
    fn median_gamma_hand_cases() {
        // distances 1, 2, 3 -> squared 1, 4, 9 -> median 4 -> gamma 1/8
        let rows = vec![vec![0.0], vec![1.0], vec![3.0]];
        let g = median_heuristic_gamma(&rows).unwrap();
        assert!((g - 0.125).abs() <= 1e-15);

        // one pair: odd count, gamma = 1 / (2 * d^2)
        let two = vec![vec![0.0], vec![2.0]];
        let g2 = median_heuristic_gamma(&two).unwrap();
        assert!((g2 - 1.0 / 8.0).abs() <= 1e-15);

        // identical points: degenerate median
        let same = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(median_heuristic_gamma(&same).is_none());
    }

    #[test]
    fn mmd_of_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let set: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let v = mmd_vstat(&set, &set, 0.5).unwrap();
        assert!(v.abs() <= 1e-12, "mmd of identical sets: {v}");
    }

    #[test]
    fn mmd_is_symmetric_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let np = rng.gen_range(1..5);
            let nn = rng.gen_range(1..5);
            let mk = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..n)
                    .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect()
            };
            let pos = mk(np, &mut rng);
            let neg = mk(nn, &mut rng);
            let a = mmd_vstat(&pos, &neg, 0.3).unwrap();
            let b = mmd_vstat(&neg, &pos, 0.3).unwrap();
            assert!((a - b).abs() <= 1e-12);
            assert!(a >= -1e-12, "mmd estimate {a} below zero");
        }
    }

    #[test]
    fn separated_sets_score_higher_than_overlapping_ones() {
        let near: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.1, 0.0]];
        let far: Vec<Vec<f64>> = vec![vec![5.0, 5.0], vec![5.1, 5.0]];
        let overlapping = mmd_vstat(&near, &near.clone(), 0.5).unwrap();
        let separated = mmd_vstat(&near, &far, 0.5).unwrap();
        assert!(separated > overlapping + 0.5);
    }

    fn tape_mmd_value(
        rows: &[Vec<f64>],
        pos: &[usize],
        neg: &[usize],
        kernel: KernelConfig,
    ) -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<_> = rows
            .iter()
            .map(|r| tape.leaf(&Tensor::vector(r.clone()).unwrap().with_grad()))
            .collect();
        let m = mmd_on_tape(&mut tape, &ids, pos, neg, kernel).unwrap();
        tape.value(m).item()
    }

    #[test]
    fn tape_mmd_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let np = rng.gen_range(1..6);
            let nn = rng.gen_range(1..6);
            let rows: Vec<Vec<f64>> = (0..np + nn)
                .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let pos: Vec<usize> = (0..np).collect();
            let neg: Vec<usize> = (np..np + nn).collect();

            let gamma = 0.4;
            let got = tape_mmd_value(&rows, &pos, &neg, KernelConfig::Fixed(gamma));
            let want = mmd_vstat(&rows[..np], &rows[np..], gamma).unwrap();
            assert!((got - want).abs() <= 1e-12, "fixed gamma: {got} vs {want}");

            let got_med = tape_mmd_value(&rows, &pos, &neg, KernelConfig::MedianHeuristic);
            let g_med = median_heuristic_gamma(&rows).unwrap_or(1.0);
            let want_med = mmd_vstat(&rows[..np], &rows[np..], g_med).unwrap();
            assert!(
                (got_med - want_med).abs() <= 1e-12,
                "median gamma: {got_med} vs {want_med}"
            );
        }
    }

    #[test]
    fn tape_median_fallback_on_duplicate_points() {
        let rows = vec![vec![1.0, 1.0]; 4];
        let v = tape_mmd_value(&rows, &[0, 1], &[2, 3], KernelConfig::MedianHeuristic);
        // all kernel values are 1 regardless of bandwidth, so the value is 0
        assert!(v.abs() <= 1e-12);
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        // includes the bandwidth path: gamma depends on the rows, so the
        // analytic gradient must track both the distances and the median
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let flat: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (np, nn, d) = (3usize, 2usize, 3usize);
        let pos: Vec<usize> = (0..np).collect();
        let neg: Vec<usize> = (np..np + nn).collect();

        let eval = |flat: &[f64]| -> f64 {
            let rows: Vec<Vec<f64>> = flat.chunks(d).map(|c| c.to_vec()).collect();
            tape_mmd_value(&rows, &pos, &neg, KernelConfig::MedianHeuristic)
        };

        // analytic gradient
        let mut tape = Tape::new();
        let ids: Vec<_> = flat
            .chunks(d)
            .map(|c| tape.leaf(&Tensor::vector(c.to_vec()).unwrap().with_grad()))
            .collect();
        let m = mmd_on_tape(&mut tape, &ids, &pos, &neg, KernelConfig::MedianHeuristic).unwrap();
        let grads = tape.backward(m).unwrap();

        for r in 0..np + nn {
            let gr = grads
                .get(ids[r])
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; d]);
            for j in 0..d {
                let numeric = central_difference(&eval, &flat, r * d + j, 1e-5);
                assert!(
                    grad_close(gr[j], numeric, 1e-4, 1e-7),
                    "row {r} coord {j}: analytic {} vs numeric {numeric}",
                    gr[j]
                );
            }
        }
    }

    #[test]
    fn two_point_cell_gradient_is_zero_through_median() {
        // with one positive and one negative, the median bandwidth makes the
        // kernel value constant exp(-1/2); the two gradient paths cancel
        let rows = [vec![0.3, -0.9], vec![1.4, 0.2]];
        let mut tape = Tape::new();
        let ids: Vec<_> = rows
            .iter()
            .map(|r| tape.leaf(&Tensor::vector(r.clone()).unwrap().with_grad()))
            .collect();
        let m = mmd_on_tape(&mut tape, &ids, &[0], &[1], KernelConfig::MedianHeuristic).unwrap();
        let expect = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((tape.value(m).item() - expect).abs() <= 1e-12);
        let grads = tape.backward(m).unwrap();
        for id in ids {
            for &g in grads.get(id).unwrap().data() {
                assert!(g.abs() <= 1e-12, "expected cancelling gradients, got {g}");
            }
        }
    }

    #[test]
    fn partition_covers_each_present_class() {
        let cells = partition_by_class(&[0, 1, 0, 2], 3);
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0], Cell { class: 0, pos: vec![0, 2], neg: vec![1, 3] });
        assert_eq!(cells[1].pos, vec![1]);
        assert_eq!(cells[2].neg, vec![0, 1, 2]);

        assert!(partition_by_class(&[1, 1, 1], 3).is_empty());
        assert!(partition_by_class(&[], 3).is_empty());
    }

    #[test]
    fn contrastive_loss_is_mean_over_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels = [0usize, 0, 1, 1, 2, 2];

        let mut tape = Tape::new();
        let ids: Vec<_> = rows
            .iter()
            .map(|r| tape.leaf(&Tensor::vector(r.clone()).unwrap().with_grad()))
            .collect();
        let loss = contrastive_loss(&mut tape, &ids, &labels, 3, KernelConfig::Fixed(0.5)).unwrap();

        let mut want = 0.0;
        for cell in partition_by_class(&labels, 3) {
            let pos: Vec<Vec<f64>> = cell.pos.iter().map(|&i| rows[i].clone()).collect();
            let neg: Vec<Vec<f64>> = cell.neg.iter().map(|&i| rows[i].clone()).collect();
            want += mmd_vstat(&pos, &neg, 0.5).unwrap();
        }
        want /= 3.0;
        assert!((tape.value(loss).item() - want).abs() <= 1e-12);
    }

    #[test]
    fn contrastive_loss_without_cells_is_zero_constant() {
        let mut tape = Tape::new();
        let ids: Vec<_> = (0..2)
            .map(|_| tape.leaf(&Tensor::vector(vec![0.1, 0.2]).unwrap().with_grad()))
            .collect();
        let loss = contrastive_loss(&mut tape, &ids, &[1, 1], 3, KernelConfig::MedianHeuristic)
            .unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }
}
