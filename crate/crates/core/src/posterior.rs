//! Prior over tessellations and the region-product integrated likelihood.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{self, FitOptions, GpFit, GpHyperparams, TrainingSet, MIN_POINTS};
use crate::rng::{fnv1a, rng_from_seed, splitmix};
use crate::tessellation::{ln_bell, partition_data, RegionAssignment, Tessellation};

/// Prior settings. Only the Poisson-process intensity is a modelling choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Intensity of the Poisson process on `[0,1]^d`.
    pub lambda: f64,
    /// Include the discrete-uniform `1/k` factor for the region count.
    /// On by default; switching it off is only meant for sensitivity checks.
    #[serde(default = "default_true")]
    pub region_count_factor: bool,
}

fn default_true() -> bool {
    true
}

impl PriorConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(PriorConfig {
            lambda,
            region_count_factor: true,
        })
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            lambda: 5.0,
            region_count_factor: true,
        }
    }
}

/// `ln π(t)` for a tessellation, up to a constant independent of `k`.
///
/// Poisson process on the unit cube with ordered, uniformly placed centres
/// (`λ^k / k!`), times `1/k` for the region count and `1/b_k` for the
/// relationship. Centre locations contribute nothing beyond the support.
pub fn log_prior(tess: &Tessellation, prior: &PriorConfig) -> f64 {
    log_prior_k(tess.k(), prior)
}

pub(crate) fn log_prior_k(k: usize, prior: &PriorConfig) -> f64 {
    let kf = k as f64;
    let mut lp = kf * prior.lambda.ln() - libm::lgamma(kf + 1.0) - ln_bell(k);
    if prior.region_count_factor {
        lp -= kf.ln();
    }
    lp
}

/// Sum over regions of the per-region integrated likelihood, using the
/// hyperparameters carried by `fits` (one per region, in region order).
pub fn log_integrated_likelihood(data: &TrainingSet, tess: &Tessellation, fits: &[GpFit]) -> Result<f64> {
    let hypers: Vec<GpHyperparams> = fits.iter().map(|f| f.hyper.clone()).collect();
    log_integrated_likelihood_with(data, tess, &hypers)
}

/// As [`log_integrated_likelihood`] but taking hyperparameters directly.
pub fn log_integrated_likelihood_with(data: &TrainingSet, tess: &Tessellation, hypers: &[GpHyperparams]) -> Result<f64> {
    if hypers.len() != tess.r() {
        return Err(Error::InvalidArgument(format!(
            "{} fits for {} regions",
            hypers.len(),
            tess.r()
        )));
    }
    let assignment = partition_data(data, tess);
    check_counts(&assignment)?;
    let mut total = 0.0;
    for (members, hyper) in assignment.members().iter().zip(hypers) {
        total += gp::log_integrated_region(&data.subset(members), hyper)?;
    }
    Ok(total)
}

fn check_counts(a: &RegionAssignment) -> Result<()> {
    for (r, &n) in a.counts.iter().enumerate() {
        if n < MIN_POINTS {
            return Err(Error::InvalidTessellation(format!(
                "region {r} holds {n} data points, at least {MIN_POINTS} required"
            )));
        }
    }
    Ok(())
}

/// A tessellation with a GP fitted on every region.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub tess: Tessellation,
    /// Data indices of each region.
    pub members: Vec<Vec<usize>>,
    /// Each region's data, aligned with `region_fits`.
    pub region_data: Vec<TrainingSet>,
    pub region_fits: Vec<GpFit>,
    pub log_prior: f64,
    pub log_integrated_lik: f64,
    pub log_posterior: f64,
}

impl FittedModel {
    /// Builds region fits for known hyperparameters (no optimization).
    pub fn from_hypers(
        data: &TrainingSet,
        tess: Tessellation,
        hypers: &[GpHyperparams],
        prior: &PriorConfig,
    ) -> Result<Self> {
        if hypers.len() != tess.r() {
            return Err(Error::InvalidArgument("one hyperparameter set per region required".into()));
        }
        let assignment = partition_data(data, &tess);
        check_counts(&assignment)?;
        let members = assignment.members();
        let region_data: Vec<TrainingSet> = members.iter().map(|m| data.subset(m)).collect();
        let region_fits = region_data
            .iter()
            .zip(hypers)
            .map(|(d, h)| GpFit::new(d, h.clone()))
            .collect::<Result<Vec<_>>>()?;
        let log_integrated_lik = region_data
            .iter()
            .zip(hypers)
            .map(|(d, h)| gp::log_integrated_region(d, h))
            .sum::<Result<f64>>()?;
        let log_prior = log_prior(&tess, prior);
        Ok(FittedModel {
            tess,
            members,
            region_data,
            region_fits,
            log_prior,
            log_integrated_lik,
            log_posterior: log_prior + log_integrated_lik,
        })
    }

    pub fn hypers(&self) -> Vec<GpHyperparams> {
        self.region_fits.iter().map(|f| f.hyper.clone()).collect()
    }

    /// Data count of each region.
    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Partitions the data, maximizes each region's likelihood and assembles the
/// log posterior.
pub fn evaluate_model(
    data: &TrainingSet,
    tess: &Tessellation,
    prior: &PriorConfig,
    deterministic: bool,
    opts: &FitOptions,
    optimizer_seed: u64,
) -> Result<FittedModel> {
    let assignment = partition_data(data, tess);
    check_counts(&assignment)?;
    let hypers = assignment
        .members()
        .par_iter()
        .map(|m| fit_region(data, m, deterministic, opts, optimizer_seed).map(|s| s.hyper))
        .collect::<Result<Vec<_>>>()?;
    FittedModel::from_hypers(data, tess.clone(), &hypers, prior)
}

/// Score of one region: its fitted hyperparameters and integrated likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionScore {
    pub hyper: GpHyperparams,
    pub log_lik: f64,
}

/// The optimizer seed for a region depends only on which data it holds, so a
/// region's fit does not depend on how the sampler arrived at it.
fn region_seed(optimizer_seed: u64, members: &[usize]) -> u64 {
    splitmix(optimizer_seed ^ fnv1a(members.iter().flat_map(|&i| (i as u32).to_le_bytes())))
}

fn fit_region(
    data: &TrainingSet,
    members: &[usize],
    deterministic: bool,
    opts: &FitOptions,
    optimizer_seed: u64,
) -> Result<RegionScore> {
    let sub = data.subset(members);
    let mut rng = rng_from_seed(region_seed(optimizer_seed, members));
    let fit = gp::fit_hyperparams_floored(&sub, deterministic, opts, &mut rng, &[])?;
    let log_lik = gp::log_integrated_region(&sub, &fit.hyper)?;
    Ok(RegionScore {
        hyper: fit.hyper,
        log_lik,
    })
}

/// Log target contribution of a tessellation, excluding the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub log_lik: f64,
    pub hypers: Vec<GpHyperparams>,
}

/// Anything that can score a tessellation; `None` marks an invalid one.
pub trait Scorer: Sync {
    fn score(&self, tess: &Tessellation) -> Option<Score>;

    /// Dimension of the input space.
    fn dim(&self) -> usize;
}

/// Scores tessellations with per-region GP fits, memoized by region membership.
pub struct GpScorer<'a> {
    data: &'a TrainingSet,
    deterministic: bool,
    opts: FitOptions,
    optimizer_seed: u64,
    cache: Mutex<HashMap<Vec<u32>, Option<RegionScore>>>,
}

impl<'a> GpScorer<'a> {
    pub fn new(data: &'a TrainingSet, deterministic: bool, opts: FitOptions, optimizer_seed: u64) -> Self {
        GpScorer {
            data,
            deterministic,
            opts,
            optimizer_seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn data(&self) -> &TrainingSet {
        self.data
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }

    fn region(&self, members: &[usize]) -> Option<RegionScore> {
        let key: Vec<u32> = members.iter().map(|&i| i as u32).collect();
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return hit.clone();
        }
        let fresh = fit_region(self.data, members, self.deterministic, &self.opts, self.optimizer_seed).ok();
        self.cache
            .lock()
            .expect("cache poisoned")
            .entry(key)
            .or_insert(fresh)
            .clone()
    }
}

impl Scorer for GpScorer<'_> {
    fn score(&self, tess: &Tessellation) -> Option<Score> {
        let assignment = partition_data(self.data, tess);
        if assignment.counts.iter().any(|&n| n < MIN_POINTS) {
            return None;
        }
        let members = assignment.members();
        let regions: Vec<Option<RegionScore>> = if members.len() > 1 {
            members.par_iter().map(|m| self.region(m)).collect()
        } else {
            members.iter().map(|m| self.region(m)).collect()
        };
        let mut log_lik = 0.0;
        let mut hypers = Vec::with_capacity(regions.len());
        for r in regions {
            let r = r?;
            log_lik += r.log_lik;
            hypers.push(r.hyper);
        }
        Some(Score { log_lik, hypers })
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }
}

/// A flat likelihood: every tessellation is valid and scores zero. Running the
/// sampler against it samples the prior.
pub struct ConstantScorer {
    pub dim: usize,
}

impl Scorer for ConstantScorer {
    fn score(&self, tess: &Tessellation) -> Option<Score> {
        Some(Score {
            log_lik: 0.0,
            hypers: vec![
                GpHyperparams {
                    roughness: vec![1.0; self.dim],
                    nugget: 0.0,
                };
                tess.r()
            ],
        })
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::fit_hyperparams;
    use crate::rng::rng_from_seed;
    use crate::testbed;

    fn tess_with_k(k: usize, shift: f64) -> Tessellation {
        let centres = (0..k).map(|i| vec![(i as f64 + shift) / (k as f64 + 1.0)]).collect();
        Tessellation::new(centres, vec![(0..k).collect()]).unwrap()
    }

    #[test]
    fn log_prior_ignores_locations() {
        let p = PriorConfig::new(5.0).unwrap();
        assert_eq!(log_prior(&tess_with_k(3, 0.2), &p), log_prior(&tess_with_k(3, 0.7), &p));
    }

    #[test]
    fn log_prior_k2_vs_k3() {
        let p = PriorConfig::new(5.0).unwrap();
        // Poisson λ^k/k!, region count 1/k, relationship 1/b_k with b_2 = 2, b_3 = 5
        let direct = |k: f64, b: f64| (5.0f64.powf(k) / (1..=k as u64).product::<u64>() as f64 / k / b).ln();
        let want = direct(3.0, 5.0) - direct(2.0, 2.0);
        let closed = (5.0f64 / 3.0).ln() + (2.0f64 / 3.0).ln() + (2.0f64 / 5.0).ln();
        assert!((want - closed).abs() < 1e-12);
        let got = log_prior(&tess_with_k(3, 0.5), &p) - log_prior(&tess_with_k(2, 0.5), &p);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn log_prior_decreasing_beyond_lambda() {
        let p = PriorConfig::new(5.0).unwrap();
        for k in 5..=15 {
            assert!(log_prior_k(k + 1, &p) < log_prior_k(k, &p));
        }
        let p = PriorConfig::new(2.5).unwrap();
        for k in 3..=13 {
            assert!(log_prior_k(k + 1, &p) < log_prior_k(k, &p));
        }
    }

    #[test]
    fn region_count_factor_switch() {
        let mut p = PriorConfig::new(5.0).unwrap();
        let with = log_prior_k(4, &p);
        p.region_count_factor = false;
        assert!((log_prior_k(4, &p) - with - 4.0f64.ln()).abs() < 1e-12);
    }

    fn wiggly_1d(n: usize) -> TrainingSet {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let ys = xs
            .iter()
            .map(|x| (7.0 * x[0]).sin() + if x[0] > 0.5 { 8.0 } else { 0.0 })
            .collect();
        TrainingSet::new(xs, ys).unwrap()
    }

    #[test]
    fn split_beats_merge_on_a_step() {
        let data = wiggly_1d(24);
        let merged = Tessellation::single(1);
        let split = Tessellation::new(vec![vec![0.25], vec![0.75]], vec![vec![0], vec![1]]).unwrap();
        let h = GpHyperparams::new(vec![5.0], 0.0).unwrap();
        let m = log_integrated_likelihood_with(&data, &merged, std::slice::from_ref(&h)).unwrap();
        let s = log_integrated_likelihood_with(&data, &split, &[h.clone(), h]).unwrap();
        assert!(s > m + 5.0, "split {s} vs merged {m}");
    }

    #[test]
    fn label_permutation_invariance() {
        let data = wiggly_1d(30);
        let c = vec![vec![0.1], vec![0.45], vec![0.8]];
        let a = Tessellation::new(c.clone(), vec![vec![0, 2], vec![1]]).unwrap();
        let ha = vec![GpHyperparams::new(vec![3.0], 0.0).unwrap(), GpHyperparams::new(vec![9.0], 0.0).unwrap()];
        // same partition, centres listed in a different order
        let b = Tessellation::new(vec![c[1].clone(), c[2].clone(), c[0].clone()], vec![vec![0], vec![1, 2]]).unwrap();
        let la = log_integrated_likelihood_with(&data, &a, &ha).unwrap();
        let lb = log_integrated_likelihood_with(&data, &b, &[ha[1].clone(), ha[0].clone()]).unwrap();
        assert!((la - lb).abs() < 1e-10);
    }

    #[test]
    fn too_small_region_is_invalid() {
        let data = wiggly_1d(20);
        let t = Tessellation::new(vec![vec![0.02], vec![0.2]], vec![vec![0], vec![1]]).unwrap();
        assert!(partition_data(&data, &t).counts[0] < 4);
        let h = GpHyperparams::new(vec![1.0], 0.0).unwrap();
        assert!(matches!(
            log_integrated_likelihood_with(&data, &t, &[h.clone(), h]),
            Err(Error::InvalidTessellation(_))
        ));
        let p = PriorConfig::default();
        assert!(evaluate_model(&data, &t, &p, true, &FitOptions::default(), 0).is_err());
        let scorer = GpScorer::new(&data, true, FitOptions::default(), 0);
        assert!(scorer.score(&t).is_none());
    }

    #[test]
    fn empty_region_is_invalid() {
        let data = wiggly_1d(20);
        // the cell of centre 1 is x > 0.995, which holds no data
        let t = Tessellation::new(vec![vec![0.0], vec![1.0], vec![0.99]], vec![vec![0, 2], vec![1]]).unwrap();
        let a = partition_data(&data, &t);
        assert_eq!(a.counts[1], 0);
        assert!(evaluate_model(&data, &t, &PriorConfig::default(), true, &FitOptions::default(), 0).is_err());
    }

    #[test]
    fn evaluate_model_single_region_matches_standalone_fit() {
        let data = wiggly_1d(20);
        let m = evaluate_model(&data, &Tessellation::single(1), &PriorConfig::default(), true, &FitOptions::default(), 3).unwrap();
        assert!(m.log_posterior.is_finite());
        assert_eq!(m.region_fits.len(), 1);
        let lp = log_prior(&Tessellation::single(1), &PriorConfig::default());
        assert!((m.log_posterior - lp - m.log_integrated_lik).abs() < 1e-12);
        let standalone = fit_hyperparams(&data, true, &FitOptions::default(), &mut rng_from_seed(region_seed(3, &(0..20).collect::<Vec<_>>()))).unwrap();
        assert_eq!(standalone.hyper, m.region_fits[0].hyper);
    }

    #[test]
    fn evaluate_model_is_deterministic_and_order_invariant() {
        let data = wiggly_1d(30);
        let c = vec![vec![0.1], vec![0.45], vec![0.8]];
        let a = Tessellation::new(c.clone(), vec![vec![0, 2], vec![1]]).unwrap();
        let b = Tessellation::new(vec![c[2].clone(), c[1].clone(), c[0].clone()], vec![vec![1], vec![2, 0]]).unwrap();
        let p = PriorConfig::default();
        let opts = FitOptions::default();
        let ma = evaluate_model(&data, &a, &p, true, &opts, 9).unwrap();
        let ma2 = evaluate_model(&data, &a, &p, true, &opts, 9).unwrap();
        let mb = evaluate_model(&data, &b, &p, true, &opts, 9).unwrap();
        assert_eq!(ma.log_posterior, ma2.log_posterior);
        assert!((ma.log_posterior - mb.log_posterior).abs() < 1e-10);
    }

    #[test]
    fn scorer_memoizes_regions() {
        let data = wiggly_1d(24);
        let scorer = GpScorer::new(&data, true, FitOptions::default(), 1);
        let t = Tessellation::new(vec![vec![0.25], vec![0.75]], vec![vec![0], vec![1]]).unwrap();
        let s1 = scorer.score(&t).unwrap();
        assert_eq!(scorer.cache_len(), 2);
        // nudging a centre without moving any data point reuses both fits
        let s2 = scorer.score(&t.with_moved(0, vec![0.26])).unwrap();
        assert_eq!(scorer.cache_len(), 2);
        assert_eq!(s1, s2);
        let m = evaluate_model(&data, &t, &PriorConfig::default(), true, &FitOptions::default(), 1).unwrap();
        assert!((m.log_integrated_lik - s1.log_lik).abs() < 1e-9);
    }

    /// The diamond data favour a tessellation that isolates the diamond.
    #[test]
    fn diamond_split_beats_single_region() {
        let design = testbed::maximin_lhs(80, 2, &mut rng_from_seed(crate::rng::stream_seed(1, crate::rng::Stream::Design)), 10);
        let ys: Vec<f64> = design.iter().map(|x| testbed::eta1(x)).collect();
        let data = TrainingSet::new(design, ys).unwrap();
        let p = PriorConfig::default();
        let opts = FitOptions::default();
        let single = evaluate_model(&data, &Tessellation::single(2), &p, true, &opts, 0).unwrap();
        // the centre's mirror images across the diamond's edges make its cell exactly T
        let split = Tessellation::new(
            vec![vec![0.5, 0.5], vec![0.3, 0.7], vec![0.7, 0.3], vec![0.7, 0.7], vec![0.3, 0.3]],
            vec![vec![0], vec![1, 2, 3, 4]],
        )
        .unwrap();
        let two = evaluate_model(&data, &split, &p, true, &opts, 0).unwrap();
        assert!(
            two.log_posterior > single.log_posterior,
            "split {} vs single {}",
            two.log_posterior,
            single.log_posterior
        );
    }
}
