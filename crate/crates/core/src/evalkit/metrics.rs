use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::distr::{Distribution, Uniform};

use crate::geometry::Aabb;
use crate::isoext::OccupancyField;
use crate::{seeded_rng, Error, Point3, Result};

/// Nearest-neighbour distances (unsquared) from each point of `from` to `to`.
pub fn nn_distances(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    let pts: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pts).expect("non-empty target set");
    from.iter()
        .map(|p| tree.query(&[p.x, p.y, p.z]).nearest_one::<SquaredEuclidean<f64>>().execute().distance.sqrt())
        .collect()
}

fn nonempty(a: &[Point3], b: &[Point3], what: &'static str) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::EmptyPointSet(what))
    } else {
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// L1 Chamfer distance: the two directional mean nearest-neighbour distances,
/// averaged.
pub fn cd_l1(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty(a, b, "cd_l1")?;
    Ok(0.5 * (mean(&nn_distances(a, b)) + mean(&nn_distances(b, a))))
}

/// L2 Chamfer distance: the two directional mean squared nearest-neighbour
/// distances, summed.
pub fn cd_l2(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty(a, b, "cd_l2")?;
    let sq = |v: Vec<f64>| v.into_iter().map(|d| d * d).collect::<Vec<_>>();
    Ok(mean(&sq(nn_distances(a, b))) + mean(&sq(nn_distances(b, a))))
}

/// Precision, recall and their harmonic mean at distance `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub fn f_score(pred: &[Point3], gt: &[Point3], threshold: f64) -> Result<FScore> {
    nonempty(pred, gt, "f_score")?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("F-score threshold must be positive, got {threshold}")));
    }
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64;
    let precision = frac(nn_distances(pred, gt));
    let recall = frac(nn_distances(gt, pred));
    let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(FScore { precision, recall, f })
}

/// Monte-Carlo intersection-over-union of two fields over uniform samples in
/// `bounds`, each field thresholded at its own τ. Returns 1 when both fields
/// are empty on every sample.
pub fn volumetric_iou(
    a: &dyn OccupancyField,
    b: &dyn OccupancyField,
    samples: usize,
    seed: u64,
    bounds: &Aabb,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("volumetric IoU needs at least one sample".into()));
    }
    let mut rng = seeded_rng(seed);
    let axes: Vec<Uniform<f64>> = (0..3)
        .map(|i| Uniform::new_inclusive(bounds.min[i], bounds.max[i]))
        .collect::<Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pts: Vec<Point3> =
        (0..samples).map(|_| Point3::new(axes[0].sample(&mut rng), axes[1].sample(&mut rng), axes[2].sample(&mut rng))).collect();
    let (pa, pb) = (a.probabilities(&pts)?, b.probabilities(&pts)?);
    let (ta, tb) = (a.threshold(), b.threshold());
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in pa.iter().zip(&pb) {
        let (ia, ib) = (*x > ta, *y > tb);
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
