//! Sequential design: boundary-targeted candidates with greedy maximin
//! selection, the ±ε paired variant, and the Sobol and max-variance
//! comparators.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predict::SampleModels;
use crate::rng::Rng;
use crate::tessellation::{assign_cell, Tessellation};

pub const BISECTION_TOLERANCE: f64 = 1e-6;
/// Pair draws allowed per requested candidate.
pub const DRAWS_PER_CANDIDATE: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub points: Vec<Vec<f64>>,
    pub region_id: usize,
    pub tolerance: f64,
    /// Number of candidates asked for; more than `points.len()` when the draw
    /// budget ran out.
    pub requested: usize,
}

impl CandidateSet {
    pub fn is_partial(&self) -> bool {
        self.points.len() < self.requested
    }
}

/// The region holding the fewest data points (lowest label on ties), the
/// default target for boundary sampling.
pub fn smallest_region(counts: &[usize]) -> Option<usize> {
    (0..counts.len()).min_by_key(|&i| (counts[i], i))
}

/// Samples `n_star` points on the boundary of `region_id` by drawing uniform
/// pairs that straddle it and bisecting each segment down to the tolerance.
pub fn boundary_candidates(tess: &Tessellation, region_id: usize, n_star: usize, rng: &mut Rng) -> Result<CandidateSet> {
    if tess.r() < 2 {
        return Err(Error::NoBoundary);
    }
    if region_id >= tess.r() {
        return Err(Error::InvalidArgument(format!("region {region_id} does not exist (r = {})", tess.r())));
    }
    let d = tess.dim();
    let budget = n_star.saturating_mul(DRAWS_PER_CANDIDATE);
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_star);
    let mut draws = 0;
    while pairs.len() < n_star && draws < budget {
        draws += 1;
        let a: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        match (tess.region_of(&a) == region_id, tess.region_of(&b) == region_id) {
            (true, false) => pairs.push((a, b)),
            (false, true) => pairs.push((b, a)),
            _ => {}
        }
    }
    let points = pairs
        .into_par_iter()
        .map(|(a, b)| bisect(tess, region_id, a, b))
        .collect();
    Ok(CandidateSet {
        points,
        region_id,
        tolerance: BISECTION_TOLERANCE,
        requested: n_star,
    })
}

/// `inside` is in the target region and `outside` is not; halves the segment
/// until it is shorter than the tolerance and returns its midpoint.
fn bisect(tess: &Tessellation, region: usize, mut inside: Vec<f64>, mut outside: Vec<f64>) -> Vec<f64> {
    while dist(&inside, &outside) > BISECTION_TOLERANCE {
        let mid = midpoint(&inside, &outside);
        if tess.region_of(&mid) == region {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    midpoint(&inside, &outside)
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Picks `n_p` candidates one at a time, each maximizing its minimum distance
/// to the existing design plus the points already picked. Ties go to the
/// lowest candidate index. Returns candidate indices in selection order.
pub fn greedy_maximin_select(candidates: &[Vec<f64>], existing: &[Vec<f64>], n_p: usize) -> Result<Vec<usize>> {
    if n_p == 0 || n_p > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ n_p ≤ {} candidates, got n_p = {n_p}",
            candidates.len()
        )));
    }
    let mut nearest: Vec<f64> = candidates
        .par_iter()
        .map(|c| existing.iter().map(|e| dist(c, e)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        let mut best: Option<usize> = None;
        for (i, &v) in nearest.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| v > nearest[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("n_p ≤ candidates");
        chosen.push(pick);
        let p = candidates[pick].clone();
        nearest.par_iter_mut().zip(candidates).for_each(|(n, c)| *n = n.min(dist(c, &p)));
    }
    Ok(chosen)
}

/// A boundary point split into two points along the line to the nearest
/// centre of the target region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPair {
    /// Displaced towards the centre.
    pub inner: Vec<f64>,
    /// Displaced away from it.
    pub outer: Vec<f64>,
    pub centre: Vec<f64>,
}

/// `x ± ε (x_T − x)` for each selected point, where `x_T` is the nearest
/// centre of `region_id`. Points leaving the cube are pulled back along the
/// same line. Points coinciding with their centre are skipped.
pub fn epsilon_pairs(selected: &[Vec<f64>], tess: &Tessellation, region_id: usize, epsilon: f64) -> Result<Vec<EpsilonPair>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    if region_id >= tess.r() {
        return Err(Error::InvalidArgument(format!("region {region_id} does not exist")));
    }
    let own: Vec<Vec<f64>> = (0..tess.k())
        .filter(|&j| tess.region_of_centre(j) == region_id)
        .map(|j| tess.centre(j).to_vec())
        .collect();
    let mut out = Vec::with_capacity(selected.len());
    for x in selected {
        let centre = &own[assign_cell(x, &own)?];
        let dir: Vec<f64> = centre.iter().zip(x).map(|(c, v)| epsilon * (c - v)).collect();
        if dir.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            continue;
        }
        out.push(EpsilonPair {
            inner: step_within_cube(x, &dir, 1.0),
            outer: step_within_cube(x, &dir, -1.0),
            centre: centre.clone(),
        });
    }
    Ok(out)
}

/// `x + t·sign·dir` with `t ≤ 1` as large as keeps the point in the cube.
fn step_within_cube(x: &[f64], dir: &[f64], sign: f64) -> Vec<f64> {
    let mut t: f64 = 1.0;
    for (v, d) in x.iter().zip(dir) {
        let s = sign * d;
        if s > 0.0 {
            t = t.min((1.0 - v) / s);
        } else if s < 0.0 {
            t = t.min(-v / s);
        }
    }
    let t = t.max(0.0);
    x.iter().zip(dir).map(|(v, d)| (v + t * sign * d).clamp(0.0, 1.0)).collect()
}

/// The `n_p` pool indices with the largest mixture-variance proxy (variance of
/// the per-sample means plus mean squared predictive scale), ranked once.
/// Ties go to the lower index.
pub fn max_variance_points(models: &SampleModels, pool: &[Vec<f64>], n_p: usize) -> Result<Vec<usize>> {
    if n_p == 0 || n_p > pool.len() {
        return Err(Error::InvalidArgument(format!("need 1 ≤ n_p ≤ {}", pool.len())));
    }
    let scores = pool
        .par_iter()
        .map(|x| models.variance_proxy(x))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n_p);
    Ok(order)
}
