//! Voronoi cells joined into regions.
//!
//! A [`Tessellation`] is a set of `k` centres in the unit cube plus a set
//! partition of those centres into `r` regions. A point belongs to the cell of
//! its nearest centre and to the region containing that cell, so regions can
//! be non-convex or disconnected.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::TrainingSet;

/// Centres plus their cell-to-region relationship.
///
/// Region labels are kept canonical: centre 0 is in region 0, and each new
/// region label is the next unused integer in centre order. Two tessellations
/// describing the same partition therefore compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TessellationDoc", into = "TessellationDoc")]
pub struct Tessellation {
    dim: usize,
    centres: Vec<Vec<f64>>,
    labels: Vec<usize>,
    regions: usize,
}

/// JSON form: centres as a `k × d` array and the relationship as a list of
/// blocks of (zero-based) centre indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TessellationDoc {
    centres: Vec<Vec<f64>>,
    relationship: Vec<Vec<usize>>,
}

impl TryFrom<TessellationDoc> for Tessellation {
    type Error = Error;
    fn try_from(doc: TessellationDoc) -> Result<Self> {
        Tessellation::new(doc.centres, doc.relationship)
    }
}

impl From<Tessellation> for TessellationDoc {
    fn from(t: Tessellation) -> Self {
        TessellationDoc {
            relationship: t.blocks(),
            centres: t.centres,
        }
    }
}

/// Where a newborn centre goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Join(usize),
    NewRegion,
}

fn canonicalize(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map: Vec<(usize, usize)> = Vec::new();
    let out = labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect();
    (out, map.len())
}

impl Tessellation {
    /// Builds a tessellation from centres and a list of blocks that must
    /// partition `0..k`.
    pub fn new(centres: Vec<Vec<f64>>, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let k = centres.len();
        let mut labels = vec![usize::MAX; k];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidArgument("relationship contains an empty block".into()));
            }
            for &c in block {
                if c >= k || labels[c] != usize::MAX {
                    return Err(Error::InvalidArgument(format!(
                        "centre {c} is out of range or listed twice"
                    )));
                }
                labels[c] = b;
            }
        }
        if labels.contains(&usize::MAX) {
            return Err(Error::InvalidArgument("relationship does not cover every centre".into()));
        }
        Self::from_labels(centres, labels)
    }

    /// Builds a tessellation from a region label per centre (any integers).
    pub fn from_labels(centres: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let dim = centres.first().map(Vec::len).unwrap_or(0);
        if centres.is_empty() || dim == 0 {
            return Err(Error::InvalidArgument("a tessellation needs at least one centre".into()));
        }
        if labels.len() != centres.len() {
            return Err(Error::InvalidArgument("one label per centre required".into()));
        }
        for (i, c) in centres.iter().enumerate() {
            check_dim(dim, c.len())?;
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("centre {i} lies outside the unit cube")));
            }
            if centres[..i].iter().any(|o| o == c) {
                return Err(Error::InvalidArgument(format!("centre {i} duplicates an earlier centre")));
            }
        }
        let (labels, regions) = canonicalize(&labels);
        Ok(Tessellation {
            dim,
            centres,
            labels,
            regions,
        })
    }

    /// One centre at the middle of the cube: the always-valid starting point.
    pub fn single(dim: usize) -> Self {
        Tessellation {
            dim,
            centres: vec![vec![0.5; dim]],
            labels: vec![0],
            regions: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of centres.
    pub fn k(&self) -> usize {
        self.centres.len()
    }

    /// Number of regions.
    pub fn r(&self) -> usize {
        self.regions
    }

    pub fn centres(&self) -> &[Vec<f64>] {
        &self.centres
    }

    pub fn centre(&self, i: usize) -> &[f64] {
        &self.centres[i]
    }

    /// Region label of each centre.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn region_of_centre(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// The relationship as blocks of centre indices, in region order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.regions];
        for (c, &l) in self.labels.iter().enumerate() {
            blocks[l].push(c);
        }
        blocks
    }

    pub fn region_size(&self, region: usize) -> usize {
        self.labels.iter().filter(|&&l| l == region).count()
    }

    /// Adds a centre at `point`, either into an existing region or as a new one.
    pub fn with_birth(&self, point: Vec<f64>, placement: Placement) -> Self {
        let label = match placement {
            Placement::Join(r) => {
                assert!(r < self.regions, "region {r} out of range");
                r
            }
            Placement::NewRegion => self.regions,
        };
        let mut centres = self.centres.clone();
        centres.push(point);
        let mut labels = self.labels.clone();
        labels.push(label);
        let (labels, regions) = canonicalize(&labels);
        Tessellation {
            dim: self.dim,
            centres,
            labels,
            regions,
        }
    }

    /// Removes centre `j`; a region left without centres disappears.
    pub fn with_death(&self, j: usize) -> Self {
        assert!(self.k() >= 2, "cannot remove the last centre");
        let mut centres = self.centres.clone();
        centres.remove(j);
        let mut labels = self.labels.clone();
        labels.remove(j);
        let (labels, regions) = canonicalize(&labels);
        Tessellation {
            dim: self.dim,
            centres,
            labels,
            regions,
        }
    }

    pub fn with_moved(&self, j: usize, point: Vec<f64>) -> Self {
        let mut t = self.clone();
        t.centres[j] = point;
        t
    }

    /// Puts centre `j` into `placement` (another region or a new singleton).
    pub fn with_relabel(&self, j: usize, placement: Placement) -> Self {
        let mut labels = self.labels.clone();
        labels[j] = match placement {
            Placement::Join(r) => r,
            Placement::NewRegion => self.regions,
        };
        let (labels, regions) = canonicalize(&labels);
        Tessellation {
            dim: self.dim,
            centres: self.centres.clone(),
            labels,
            regions,
        }
    }

    /// The relabelling options for centre `j` that change the partition:
    /// every other region, plus a new singleton unless `j` is already alone.
    pub fn change_options(&self, j: usize) -> Vec<Placement> {
        let own = self.labels[j];
        let mut opts: Vec<Placement> = (0..self.regions).filter(|&r| r != own).map(Placement::Join).collect();
        if self.region_size(own) > 1 {
            opts.push(Placement::NewRegion);
        }
        opts
    }

    /// Region of an arbitrary point.
    pub fn region_of(&self, x: &[f64]) -> usize {
        self.labels[nearest(x, &self.centres)]
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        nearest(x, &self.centres)
    }

    pub fn in_unit_cube(&self) -> bool {
        self.centres.iter().flatten().all(|v| (0.0..=1.0).contains(v))
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn nearest(x: &[f64], centres: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centres.iter().enumerate() {
        let d = sq_dist(x, c);
        // strict: ties keep the lowest index
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Index of the centre nearest to `x` (Euclidean); ties go to the lowest index.
pub fn assign_cell(x: &[f64], centres: &[Vec<f64>]) -> Result<usize> {
    let first = centres
        .first()
        .ok_or_else(|| Error::InvalidArgument("no centres".into()))?;
    check_dim(first.len(), x.len())?;
    for c in centres {
        check_dim(first.len(), c.len())?;
    }
    Ok(nearest(x, centres))
}

/// Region of the cell containing `x`.
pub fn assign_region(x: &[f64], tess: &Tessellation) -> Result<usize> {
    Ok(tess.labels[assign_cell(x, &tess.centres)?])
}

/// Bell number `b_k` (number of set partitions of `k` items), `1 ≤ k ≤ 25`.
pub fn bell_number(k: usize) -> Result<u64> {
    if !(1..=25).contains(&k) {
        return Err(Error::InvalidArgument(format!("bell_number defined for 1..=25, got {k}")));
    }
    // b_{m+1} = Σ_j C(m, j) b_j
    let mut bell: Vec<u128> = vec![1];
    for m in 0..k {
        let mut binom: u128 = 1;
        let mut next: u128 = 0;
        for (j, b) in bell.iter().enumerate() {
            next += binom * b;
            binom = binom * (m - j) as u128 / (j + 1) as u128;
        }
        bell.push(next);
    }
    u64::try_from(bell[k]).map_err(|_| Error::InvalidArgument("Bell number overflow".into()))
}

/// `ln b_k`, extended past the exact range with the Bell recurrence in log space.
pub fn ln_bell(k: usize) -> f64 {
    if let Ok(b) = bell_number(k) {
        return (b as f64).ln();
    }
    let mut ln_bell: Vec<f64> = vec![0.0];
    for m in 0..k {
        let terms: Vec<f64> = (0..=m).map(|j| ln_binom(m, j) + ln_bell[j]).collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ln_bell.push(mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln());
    }
    ln_bell[k]
}

fn ln_binom(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Region of every data point and the per-region counts `n_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionAssignment {
    pub region_of_point: Vec<usize>,
    pub counts: Vec<usize>,
}

impl RegionAssignment {
    /// Data indices of each region, in increasing order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m: Vec<Vec<usize>> = self.counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for (i, &r) in self.region_of_point.iter().enumerate() {
            m[r].push(i);
        }
        m
    }
}

/// Splits the data by region. Regions without data are kept with count 0.
pub fn partition_data(data: &TrainingSet, tess: &Tessellation) -> RegionAssignment {
    let mut counts = vec![0; tess.r()];
    let region_of_point = data
        .points()
        .map(|x| {
            let r = tess.region_of(x);
            counts[r] += 1;
            r
        })
        .collect();
    RegionAssignment {
        region_of_point,
        counts,
    }
}
