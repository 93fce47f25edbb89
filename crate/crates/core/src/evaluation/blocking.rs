//! Hexagonal spatial blocks and their assignment to folds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{distance, PlotObservation};
use crate::error::{Error, Result};
use crate::rng;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Pointy-top hexagonal tessellation with plots assigned to the nearest
/// cell center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexBlocking {
    /// Flat-to-flat width, m.
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub plot_ids: Vec<String>,
    /// Block id (1-based) of each plot.
    pub block_of: Vec<usize>,
    /// Axial `(q, r)` index of each block, `block_axial[id - 1]`.
    pub block_axial: Vec<(i64, i64)>,
}

impl HexBlocking {
    /// Circumradius, m.
    pub fn radius(&self) -> f64 {
        self.cell_size / SQRT_3
    }

    /// Inradius (half the flat-to-flat width), m.
    pub fn inradius(&self) -> f64 {
        self.cell_size / 2.0
    }

    pub fn n_blocks(&self) -> usize {
        self.block_axial.len()
    }

    /// Center of block `id`, m.
    pub fn center(&self, id: usize) -> [f64; 2] {
        let (q, r) = self.block_axial[id - 1];
        axial_center(q, r, self.radius(), self.origin)
    }

    /// Number of plots in each block, indexed by `id - 1`.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks()];
        for &b in &self.block_of {
            sizes[b - 1] += 1;
        }
        sizes
    }
}

fn axial_center(q: i64, r: i64, radius: f64, origin: [f64; 2]) -> [f64; 2] {
    [
        origin[0] + radius * SQRT_3 * (q as f64 + r as f64 / 2.0),
        origin[1] + radius * 1.5 * r as f64,
    ]
}

/// Nearest hex cell to `p`; equidistant candidates resolve to the smaller
/// `(r, q)`, which is also the smaller block id after relabeling.
fn nearest_cell(p: [f64; 2], radius: f64, origin: [f64; 2]) -> (i64, i64) {
    let x = p[0] - origin[0];
    let y = p[1] - origin[1];
    let fq = (SQRT_3 / 3.0 * x - y / 3.0) / radius;
    let fr = (2.0 / 3.0 * y) / radius;
    let (q0, r0) = (fq.round() as i64, fr.round() as i64);
    let tol = 1e-9 * radius;
    let mut best: Option<((i64, i64), f64)> = None;
    for dr in -2..=2 {
        for dq in -2..=2 {
            let (q, r) = (q0 + dq, r0 + dr);
            let d = distance(p, axial_center(q, r, radius, origin));
            best = match best {
                None => Some(((q, r), d)),
                Some((cell, bd)) => {
                    if d < bd - tol || ((d - bd).abs() <= tol && (r, q) < (cell.1, cell.0)) {
                        Some(((q, r), d))
                    } else {
                        Some((cell, bd))
                    }
                }
            };
        }
    }
    best.map(|b| b.0).expect("candidate set is non-empty")
}

/// Lower-left corner of the plots' bounding box.
pub fn bbox_origin(plots: &[PlotObservation]) -> [f64; 2] {
    let x = plots.iter().map(|p| p.coords[0]).fold(f64::INFINITY, f64::min);
    let y = plots.iter().map(|p| p.coords[1]).fold(f64::INFINITY, f64::min);
    [x, y]
}

/// Assigns every plot to the hex cell whose center is nearest. Non-empty
/// cells are numbered from 1 in `(r, q)` order.
pub fn assign_hex_blocks(plots: &[PlotObservation], cell_size: f64, origin: Option<[f64; 2]>) -> Result<HexBlocking> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::Config(format!("hex cell size must be positive, got {cell_size}")));
    }
    let origin = origin.unwrap_or_else(|| bbox_origin(plots));
    let radius = cell_size / SQRT_3;
    let cells: Vec<(i64, i64)> = plots.iter().map(|p| nearest_cell(p.coords, radius, origin)).collect();
    let mut ids: BTreeMap<(i64, i64), usize> = cells.iter().map(|&(q, r)| ((r, q), 0)).collect();
    for (k, v) in ids.values_mut().enumerate() {
        *v = k + 1;
    }
    Ok(HexBlocking {
        cell_size,
        origin,
        plot_ids: plots.iter().map(|p| p.plot_id.clone()).collect(),
        block_of: cells.iter().map(|&(q, r)| ids[&(r, q)]).collect(),
        block_axial: ids.keys().map(|&(r, q)| (q, r)).collect(),
    })
}

/// Fold (1-based) of every block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// `fold_of_block[id - 1]`.
    pub fold_of_block: Vec<usize>,
}

impl FoldAssignment {
    /// Fold of every plot of `blocking`.
    pub fn plot_folds(&self, blocking: &HexBlocking) -> Vec<usize> {
        blocking.block_of.iter().map(|&b| self.fold_of_block[b - 1]).collect()
    }

    /// Plot indices held out in `fold`.
    pub fn test_indices(&self, blocking: &HexBlocking, fold: usize) -> Vec<usize> {
        self.plot_folds(blocking)
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Shuffles the blocks with `seed`, then deals them largest first, each to
/// the fold currently holding the fewest plots (lowest fold on ties).
pub fn make_folds(blocking: &HexBlocking, k: usize, seed: u64) -> Result<FoldAssignment> {
    let sizes = blocking.block_sizes();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if sizes.len() < k {
        return Err(Error::Config(format!(
            "{k} folds requested but only {} non-empty blocks",
            sizes.len()
        )));
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut rng::substream(seed, "cv/folds"));
    order.sort_by(|a, b| sizes[*b].cmp(&sizes[*a]));
    let mut load = vec![0usize; k];
    let mut fold_of_block = vec![0; sizes.len()];
    for b in order {
        let f = (0..k).min_by_key(|&f| (load[f], f)).expect("k > 0");
        load[f] += sizes[b];
        fold_of_block[b] = f + 1;
    }
    Ok(FoldAssignment { k, fold_of_block })
}

/// Every plot in its own block, for unblocked cross-validation.
pub fn singleton_blocks(plots: &[PlotObservation]) -> HexBlocking {
    HexBlocking {
        cell_size: f64::NAN,
        origin: [0.0, 0.0],
        plot_ids: plots.iter().map(|p| p.plot_id.clone()).collect(),
        block_of: (1..=plots.len()).collect(),
        block_axial: (0..plots.len() as i64).map(|i| (i, 0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plot(id: &str, x: f64, y: f64) -> PlotObservation {
        PlotObservation {
            plot_id: id.into(),
            coords: [x, y],
            outcomes: Default::default(),
            predictors: vec![],
        }
    }

    #[test]
    fn one_cell_and_far_apart() {
        let ps = [plot("a", 10.0, 10.0), plot("b", 40.0, 30.0), plot("c", 0.0, 50.0)];
        let b = assign_hex_blocks(&ps, 250.0, Some([20.0, 20.0])).unwrap();
        assert_eq!(b.n_blocks(), 1);
        let ps = [plot("a", 0.0, 0.0), plot("b", 1000.0, 0.0)];
        let b = assign_hex_blocks(&ps, 250.0, None).unwrap();
        assert_eq!(b.n_blocks(), 2);
        assert_ne!(b.block_of[0], b.block_of[1]);
    }

    #[test]
    fn tie_goes_to_lower_id() {
        // midway between the centers of (0,0) and (1,0)
        let s = 250.0;
        let p = plot("m", s / 2.0, 0.0);
        let b = assign_hex_blocks(&[p, plot("far", 5.0 * s, 0.0)], s, Some([0.0, 0.0])).unwrap();
        assert_eq!(b.block_axial[b.block_of[0] - 1], (0, 0));
        assert_eq!(b.block_of[0], 1);
    }

    #[test]
    fn folds_are_deterministic_and_balanced() {
        let ps: Vec<PlotObservation> = (0..146)
            .map(|i| plot(&format!("p{i}"), (i % 14) as f64 * 100.0 + 13.0, (i / 14) as f64 * 100.0 + 7.0))
            .collect();
        let b = assign_hex_blocks(&ps, 250.0, None).unwrap();
        let f1 = make_folds(&b, 20, 3).unwrap();
        assert_eq!(f1, make_folds(&b, 20, 3).unwrap());
        let folds = f1.plot_folds(&b);
        for f in 1..=20 {
            let n = folds.iter().filter(|&&x| x == f).count();
            assert!((4..=10).contains(&n), "fold {f} has {n} plots");
        }
        let all = make_folds(&b, b.n_blocks(), 1).unwrap();
        let mut seen = all.fold_of_block.clone();
        seen.sort();
        assert_eq!(seen, (1..=b.n_blocks()).collect::<Vec<_>>());
        assert!(make_folds(&b, b.n_blocks() + 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn nearest_center_is_nearest(x in -2000.0..2000.0f64, y in -2000.0..2000.0f64) {
            let r = 250.0 / SQRT_3;
            let (q, rr) = nearest_cell([x, y], r, [0.0, 0.0]);
            let d = distance([x, y], axial_center(q, rr, r, [0.0, 0.0]));
            prop_assert!(d <= r + 1e-9);
            for dq in -3..=3 {
                for dr in -3..=3 {
                    let other = distance([x, y], axial_center(q + dq, rr + dr, r, [0.0, 0.0]));
                    prop_assert!(d <= other + 1e-9);
                }
            }
        }

        #[test]
        fn folds_partition_blocks(n in 5usize..60, k in 2usize..5, seed in 0u64..1000) {
            let ps: Vec<PlotObservation> = (0..n).map(|i| plot(&i.to_string(), i as f64 * 300.0, 0.0)).collect();
            let b = assign_hex_blocks(&ps, 250.0, None).unwrap();
            let f = make_folds(&b, k.min(b.n_blocks()), seed).unwrap();
            let folds = f.plot_folds(&b);
            for fold in 1..=f.k {
                prop_assert!(folds.contains(&fold));
            }
            prop_assert_eq!(folds.len(), n);
        }
    }
}
