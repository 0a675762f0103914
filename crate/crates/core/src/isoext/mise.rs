use serde::{Deserialize, Serialize};

use super::{marching_cubes, ScalarGrid};
use crate::geometry::{Aabb, TriangleMesh};
use crate::{Error, Point3, Result};

/// A pointwise-decodable occupancy function: evaluating a batch of positions
/// must equal evaluating each position on its own.
pub trait OccupancyField {
    /// Occupancy probabilities in `[0, 1]`, one per position.
    fn probabilities(&self, points: &[Point3]) -> Result<Vec<f64>>;

    /// Decision threshold τ.
    fn threshold(&self) -> f64 {
        0.5
    }
}

impl<T: OccupancyField + ?Sized> OccupancyField for &T {
    fn probabilities(&self, points: &[Point3]) -> Result<Vec<f64>> {
        (**self).probabilities(points)
    }

    fn threshold(&self) -> f64 {
        (**self).threshold()
    }
}

/// Adapts a closure `position -> probability` into a field.
pub struct FnField<F> {
    pub f: F,
    pub threshold: f64,
}

impl<F: Fn(&Point3) -> f64> FnField<F> {
    pub fn new(f: F) -> Self {
        FnField { f, threshold: 0.5 }
    }
}

impl<F: Fn(&Point3) -> f64> OccupancyField for FnField<F> {
    fn probabilities(&self, points: &[Point3]) -> Result<Vec<f64>> {
        Ok(points.iter().map(&self.f).collect())
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiseConfig {
    /// Cells per axis of the first, fully evaluated grid.
    pub initial_res: usize,
    /// Cells per axis of the grid handed to marching cubes.
    pub final_res: usize,
    /// Positions per field call.
    pub batch: usize,
    #[serde(skip, default = "Aabb::unit")]
    pub bounds: Aabb,
}

impl Default for MiseConfig {
    fn default() -> Self {
        MiseConfig { initial_res: 16, final_res: 80, batch: 16_384, bounds: Aabb::unit() }
    }
}

#[derive(Debug, Clone)]
pub struct MiseOutput {
    pub mesh: TriangleMesh,
    /// Set when no coarse cell straddles the threshold.
    pub empty: bool,
    /// Total field evaluations.
    pub evaluations: usize,
    /// Cells per axis at each refinement level.
    pub levels: Vec<usize>,
}

/// Refinement chain from `initial` to `final_res`: every level divides the
/// next, starting at the smallest divisor of `final_res` not below `initial`.
pub fn refinement_levels(initial: usize, final_res: usize) -> Vec<usize> {
    let start = (initial.max(1)..=final_res).find(|r| final_res % r == 0).unwrap_or(final_res);
    let mut levels = vec![start];
    let mut cur = start;
    while cur < final_res {
        let factor = (2..).find(|k| final_res % (cur * k) == 0).expect("final_res itself terminates the search");
        cur *= factor;
        levels.push(cur);
    }
    levels
}

/// Multiresolution isosurface extraction.
///
/// Evaluates the field on a coarse lattice, then repeatedly subdivides only
/// the cells whose corners disagree about the threshold, and finally runs
/// marching cubes on the finest lattice. Lattice points that were never
/// evaluated lie inside cells known to be entirely on one side and inherit a
/// corner value of that cell, so for fields that do not change side inside
/// skipped cells the result equals dense extraction at `final_res`.
pub fn mise_extract(field: &dyn OccupancyField, cfg: &MiseConfig) -> Result<MiseOutput> {
    let tau = field.threshold();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1)")));
    }
    if cfg.final_res < 2 || cfg.initial_res == 0 || cfg.initial_res > cfg.final_res {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= initial_res ({}) <= final_res ({}) and final_res >= 2",
            cfg.initial_res, cfg.final_res
        )));
    }
    let levels = refinement_levels(cfg.initial_res, cfg.final_res);
    let n = cfg.final_res + 1;
    let dims = [n; 3];
    let lattice = ScalarGrid::new(dims, cfg.bounds, vec![0.0; n * n * n])?;
    let idx = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    let mut values = vec![f64::NAN; n * n * n];
    let mut known = vec![false; n * n * n];
    let mut evaluations = 0usize;

    let mut evaluate = |pending: &mut Vec<[usize; 3]>, values: &mut Vec<f64>, known: &mut Vec<bool>| -> Result<()> {
        for chunk in pending.chunks(cfg.batch.max(1)) {
            let pts: Vec<Point3> = chunk.iter().map(|&[i, j, k]| lattice.position(i, j, k)).collect();
            let probs = field.probabilities(&pts)?;
            if probs.len() != pts.len() {
                return Err(Error::InvalidArgument(format!("field returned {} values for {} points", probs.len(), pts.len())));
            }
            for (q, (&[i, j, k], &p)) in chunk.iter().zip(&probs).enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::FieldOutOfRange { index: evaluations + q, value: p });
                }
                values[idx(i, j, k)] = p;
                known[idx(i, j, k)] = true;
            }
            evaluations += chunk.len();
        }
        pending.clear();
        Ok(())
    };

    // Level 0: every lattice point of the coarse grid.
    let step0 = cfg.final_res / levels[0];
    let mut pending = Vec::new();
    for k in (0..n).step_by(step0) {
        for j in (0..n).step_by(step0) {
            for i in (0..n).step_by(step0) {
                pending.push([i, j, k]);
            }
        }
    }
    evaluate(&mut pending, &mut values, &mut known)?;

    // Cells are addressed by their minimum lattice corner and edge length.
    let mut candidates: Vec<[usize; 3]> = Vec::new();
    for k in (0..cfg.final_res).step_by(step0) {
        for j in (0..cfg.final_res).step_by(step0) {
            for i in (0..cfg.final_res).step_by(step0) {
                candidates.push([i, j, k]);
            }
        }
    }

    let straddles = |values: &[f64], [i, j, k]: [usize; 3], s: usize| {
        let mut above = false;
        let mut below = false;
        for dz in [0, s] {
            for dy in [0, s] {
                for dx in [0, s] {
                    if values[idx(i + dx, j + dy, k + dz)] > tau {
                        above = true;
                    } else {
                        below = true;
                    }
                }
            }
        }
        above && below
    };
    let fill_cell = |values: &mut [f64], known: &[bool], [i, j, k]: [usize; 3], s: usize| {
        let v = values[idx(i, j, k)];
        for z in k..=k + s {
            for y in j..=j + s {
                for x in i..=i + s {
                    let id = idx(x, y, z);
                    if !known[id] && values[id].is_nan() {
                        values[id] = v;
                    }
                }
            }
        }
    };

    let mut any_active = false;
    for (level, &res) in levels.iter().enumerate() {
        let step = cfg.final_res / res;
        let mut active = Vec::new();
        for &cell in &candidates {
            if straddles(&values, cell, step) {
                active.push(cell);
            } else if step > 1 {
                fill_cell(&mut values, &known, cell, step);
            }
        }
        if level == 0 {
            any_active = !active.is_empty();
        }
        let Some(&next_res) = levels.get(level + 1) else { break };
        let sub = cfg.final_res / next_res;
        candidates.clear();
        for &[i, j, k] in &active {
            for z in (k..=k + step).step_by(sub) {
                for y in (j..=j + step).step_by(sub) {
                    for x in (i..=i + step).step_by(sub) {
                        if !known[idx(x, y, z)] {
                            known[idx(x, y, z)] = true;
                            pending.push([x, y, z]);
                        }
                    }
                }
            }
            for z in (k..k + step).step_by(sub) {
                for y in (j..j + step).step_by(sub) {
                    for x in (i..i + step).step_by(sub) {
                        candidates.push([x, y, z]);
                    }
                }
            }
        }
        evaluate(&mut pending, &mut values, &mut known)?;
    }

    if !any_active {
        return Ok(MiseOutput { mesh: TriangleMesh::empty(), empty: true, evaluations, levels });
    }
    debug_assert!(values.iter().all(|v| !v.is_nan()));
    let grid = ScalarGrid::new(dims, cfg.bounds, values)?;
    let mesh = marching_cubes(&grid, tau);
    let empty = mesh.is_empty();
    Ok(MiseOutput { mesh, empty, evaluations, levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_chains() {
        assert_eq!(refinement_levels(16, 80), vec![16, 80]);
        assert_eq!(refinement_levels(16, 128), vec![16, 32, 64, 128]);
        assert_eq!(refinement_levels(10, 80), vec![10, 20, 40, 80]);
        assert_eq!(refinement_levels(7, 80), vec![8, 16, 80]);
        assert_eq!(refinement_levels(32, 32), vec![32]);
    }

    #[test]
    fn constant_field_is_flagged_empty() {
        let out = mise_extract(&FnField::new(|_| 0.0), &MiseConfig::default()).unwrap();
        assert!(out.empty && out.mesh.is_empty());
        assert_eq!(out.evaluations, 17 * 17 * 17);
    }

    #[test]
    fn out_of_range_field_rejected() {
        let err = mise_extract(&FnField::new(|p: &Point3| 1.5 + p.x), &MiseConfig::default()).unwrap_err();
        assert!(matches!(err, Error::FieldOutOfRange { .. }));
    }

    #[test]
    fn bad_resolutions_rejected() {
        let f = FnField::new(|_| 0.0);
        assert!(mise_extract(&f, &MiseConfig { initial_res: 40, final_res: 20, ..Default::default() }).is_err());
        assert!(mise_extract(&f, &MiseConfig { initial_res: 1, final_res: 1, ..Default::default() }).is_err());
        let bad_tau = FnField { f: |_: &Point3| 0.0, threshold: 1.0 };
        assert!(mise_extract(&bad_tau, &MiseConfig::default()).is_err());
    }
}
