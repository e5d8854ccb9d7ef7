//! Test functions with known discontinuities, maximin Latin hypercube
//! designs and the end-to-end benchmark runs.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adaptive::{self, boundary_candidates, greedy_maximin_select, max_variance_points, smallest_region};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, TrainingSet};
use crate::posterior::{evaluate_model, GpScorer, PriorConfig, Score, Scorer};
use crate::predict::{grid_points, integrated_surface_from, mse, GridAnchor, SampleModels};
use crate::rjmcmc::{map_model, region_count_posterior, run_chain_with, Chain, McmcConfig, RegionCountPosterior};
use crate::rng::{stream_rng, stream_seed, Rng, Stream};
use crate::sobol::sobol_points;
use crate::tessellation::Tessellation;

/// Height of every discontinuity.
pub const JUMP: f64 = 10.0;

/// The diamond `T`: `|x2 − x1| ≤ 0.2` and `0.8 ≤ x1 + x2 ≤ 1.2`.
pub fn in_diamond(x: &[f64]) -> bool {
    (x[1] - x[0]).abs() <= 0.2 && (0.8..=1.2).contains(&(x[0] + x[1]))
}

/// Euclidean distance from `x` to the edge of the diamond.
pub fn diamond_boundary_distance(x: &[f64]) -> f64 {
    const V: [(f64, f64); 4] = [(0.5, 0.3), (0.7, 0.5), (0.5, 0.7), (0.3, 0.5)];
    (0..4)
        .map(|i| {
            let (a, b) = (V[i], V[(i + 1) % 4]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let t = (((x[0] - a.0) * dx + (x[1] - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            (x[0] - a.0 - t * dx).hypot(x[1] - a.1 - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `sin x1 + cos x2`, plus ten outside the diamond.
pub fn eta1(x: &[f64]) -> f64 {
    let base = x[0].sin() + x[1].cos();
    if in_diamond(x) {
        base
    } else {
        base + JUMP
    }
}

fn in_disc(x: &[f64], c: (f64, f64), r: f64) -> bool {
    (x[0] - c.0).powi(2) + (x[1] - c.1).powi(2) <= r * r
}

/// The set `L`, evaluated left to right as written:
/// `((x1 ∈ [0.25, 0.6] ∪ x2 ∈ [0.3, 0.6]) ∪ D1 ∪ D2) ∩ D3`.
pub fn in_curved_l(x: &[f64]) -> bool {
    let bands = (0.25..=0.6).contains(&x[0]) || (0.3..=0.6).contains(&x[1]);
    let discs = in_disc(x, (0.25, 0.6), 0.15) || in_disc(x, (0.6, 0.6), 0.15);
    (bands || discs) && in_disc(x, (0.4125, 0.3), 0.175)
}

pub fn eta2_base(x: &[f64]) -> f64 {
    let (a, b) = (x[0] * x[0], x[1] * x[1]);
    a + 5.0 * b + 3.0 * (10.0 * a + 5.0 * b).cos()
}

/// `x1² + 5x2² + 3cos(10x1² + 5x2²)`, plus ten inside `L`.
pub fn eta2(x: &[f64]) -> f64 {
    let base = eta2_base(x);
    if in_curved_l(x) {
        base + JUMP
    } else {
        base
    }
}

/// Synthetic six-input function with a curved boundary in `(x1, x6)`.
pub fn in_regime6(x: &[f64]) -> bool {
    x[5] > 0.25 + 0.5 * x[0] * x[0]
}

pub fn regime6_base(x: &[f64]) -> f64 {
    x[0] * x[0] + (2.0 * x[1]).sin() + x[2].cos() + 0.5 * x[3] + x[4] * x[5]
}

pub fn regime6(x: &[f64]) -> f64 {
    regime6_base(x) + if in_regime6(x) { JUMP } else { 0.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Diamond,
    Curved,
    /// Not from the literature: a 6-d two-regime analogue.
    Regime6,
}

impl Scenario {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "diamond" => Ok(Scenario::Diamond),
            "curved" => Ok(Scenario::Curved),
            "regime6" => Ok(Scenario::Regime6),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario {other:?} (expected diamond, curved or regime6)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Diamond => "diamond",
            Scenario::Curved => "curved",
            Scenario::Regime6 => "regime6",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Scenario::Regime6 => 6,
            _ => 2,
        }
    }

    pub fn default_points(self) -> usize {
        match self {
            Scenario::Diamond => 80,
            Scenario::Curved => 70,
            Scenario::Regime6 => 150,
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Scenario::Diamond => eta1(x),
            Scenario::Curved => eta2(x),
            Scenario::Regime6 => regime6(x),
        }
    }

    /// Membership of the set carrying the branch that differs from the
    /// others' (`T`, `L`, or the upper regime).
    pub fn indicator(self, x: &[f64]) -> bool {
        match self {
            Scenario::Diamond => in_diamond(x),
            Scenario::Curved => in_curved_l(x),
            Scenario::Regime6 => in_regime6(x),
        }
    }

    pub fn base(self, x: &[f64]) -> f64 {
        match self {
            Scenario::Diamond => x[0].sin() + x[1].cos(),
            Scenario::Curved => eta2_base(x),
            Scenario::Regime6 => regime6_base(x),
        }
    }

    /// Published MSEs of this and competing methods, for reference.
    pub fn literature_values(self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            Scenario::Diamond => &[
                ("proposed", 1.84),
                ("treed_gp", 1.98),
                ("standard_gp", 2.04),
                ("convolution_gp", 2.13),
                ("adaptive_boundary", 1.352),
                ("adaptive_sobol", 1.511),
                ("adaptive_max_variance", 1.392),
            ],
            Scenario::Curved => &[("proposed", 4.498), ("treed_gp", 6.886), ("standard_gp", 6.473)],
            Scenario::Regime6 => &[],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Points at which MSE is measured: the 100×100 grid in 2-d, Sobol points
    /// otherwise.
    pub fn evaluation_points(self, per_axis: usize, anchor: GridAnchor) -> Result<Vec<Vec<f64>>> {
        match self.dim() {
            2 => grid_points(&[per_axis, per_axis], anchor),
            d => sobol_points(4096, d),
        }
    }
}

fn min_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            best = best.min(adaptive::dist(&points[i], &points[j]));
        }
    }
    best
}

/// One random Latin hypercube: each axis stratum `[i/n, (i+1)/n)` holds
/// exactly one point.
pub fn random_lhs(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(perm) {
            p[j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Maximin Latin hypercube: `n_restarts` random designs, each improved by
/// swapping one coordinate between a member of the closest pair and another
/// point whenever that raises the minimum distance (ties broken by the number
/// of pairs at the minimum). The first restart's unimproved design is also a
/// contender, so the result is never worse than `random_lhs` with the same
/// RNG state.
pub fn maximin_lhs(n: usize, d: usize, rng: &mut Rng, n_restarts: usize) -> Vec<Vec<f64>> {
    assert!(n >= 2 && d >= 1, "maximin_lhs needs n ≥ 2, d ≥ 1");
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let consider = |best: &mut Option<(f64, Vec<Vec<f64>>)>, pts: &Vec<Vec<f64>>| {
        let m = min_pairwise(pts);
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            *best = Some((m, pts.clone()));
        }
    };
    for _ in 0..n_restarts.max(1) {
        let mut pts = random_lhs(n, d, rng);
        consider(&mut best, &pts);
        hill_climb(&mut pts, rng);
        consider(&mut best, &pts);
    }
    best.expect("at least one restart").1
}

/// (minimum distance, number of pairs within 1e-12 of it)
fn criterion(dm: &[f64], n: usize) -> (f64, usize) {
    let mut m = f64::INFINITY;
    let mut count = 0;
    for i in 0..n {
        for j in 0..i {
            let v = dm[i * n + j];
            if v < m - 1e-12 {
                m = v;
                count = 1;
            } else if (v - m).abs() <= 1e-12 {
                count += 1;
            }
        }
    }
    (m, count)
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 + 1e-12 || ((a.0 - b.0).abs() <= 1e-12 && a.1 < b.1)
}

fn hill_climb(pts: &mut [Vec<f64>], rng: &mut Rng) {
    let n = pts.len();
    let d = pts[0].len();
    let mut dm = vec![0.0; n * n];
    let refresh_row = |dm: &mut [f64], pts: &[Vec<f64>], i: usize| {
        for j in 0..n {
            let v = if i == j { f64::INFINITY } else { adaptive::dist(&pts[i], &pts[j]) };
            dm[i * n + j] = v;
            dm[j * n + i] = v;
        }
    };
    for i in 0..n {
        refresh_row(&mut dm, pts, i);
    }
    let mut current = criterion(&dm, n);
    let mut stale = 0;
    let patience = 40 * n;
    while stale < patience {
        stale += 1;
        // a member of a closest pair
        let (mut a, mut b) = (0, 1);
        for i in 0..n {
            for j in 0..i {
                if dm[i * n + j] < dm[a * n + b] {
                    a = i;
                    b = j;
                }
            }
        }
        let i = if rng.random::<bool>() { a } else { b };
        let mut other = rng.random_range(0..n - 1);
        if other >= i {
            other += 1;
        }
        let axis = rng.random_range(0..d);
        let swap = |pts: &mut [Vec<f64>]| {
            let t = pts[i][axis];
            pts[i][axis] = pts[other][axis];
            pts[other][axis] = t;
        };
        swap(pts);
        let saved: Vec<f64> = dm.clone();
        refresh_row(&mut dm, pts, i);
        refresh_row(&mut dm, pts, other);
        let next = criterion(&dm, n);
        if better(next, current) {
            current = next;
            stale = 0;
        } else {
            swap(pts);
            dm = saved;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub n_iterations: usize,
    pub lambda: f64,
    /// Design size; the scenario default when `None`.
    pub n_points: Option<usize>,
    pub lhs_restarts: usize,
    pub grid_per_axis: usize,
    pub grid_anchor: GridAnchor,
    pub burn_in_fraction: f64,
    pub thin: usize,
    /// Region fits inside the chain.
    pub chain_fit: FitOptions,
    /// Forbids every tessellation with more than one region. Only useful to
    /// check that report guards catch a broken sampler.
    pub pin_single_region: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 1,
            n_iterations: 20_000,
            lambda: 5.0,
            n_points: None,
            lhs_restarts: 10,
            grid_per_axis: 100,
            grid_anchor: GridAnchor::Corner,
            burn_in_fraction: 0.25,
            thin: 10,
            chain_fit: crate::rjmcmc::chain_fit_options(),
            pin_single_region: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn mcmc(&self, dim: usize) -> Result<McmcConfig> {
        let mut c = McmcConfig::new(dim, self.n_iterations, self.seed);
        c.prior = PriorConfig::new(self.lambda)?;
        c.burn_in_fraction = self.burn_in_fraction;
        c.thin = self.thin;
        c.fit = self.chain_fit.clone();
        Ok(c)
    }
}

/// Rejects every tessellation with more than one region.
struct Pinned<'a, S: Scorer>(&'a S);

impl<S: Scorer> Scorer for Pinned<'_, S> {
    fn score(&self, tess: &Tessellation) -> Option<Score> {
        if tess.r() > 1 {
            None
        } else {
            self.0.score(tess)
        }
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// Runs the sampler on `data` with the benchmark's settings.
pub fn benchmark_chain(data: &TrainingSet, config: &BenchmarkConfig) -> Result<Chain> {
    let mcmc = config.mcmc(data.dim())?;
    let scorer = GpScorer::new(data, true, mcmc.fit.clone(), stream_seed(mcmc.seed, Stream::Optimizer));
    if config.pin_single_region {
        run_chain_with(&Pinned(&scorer), &mcmc)
    } else {
        run_chain_with(&scorer, &mcmc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub lambda: f64,
    pub n_s: usize,
    pub n_points: usize,
    pub mse_proposed: f64,
    pub mse_single_gp: f64,
    pub region_count_posterior: RegionCountPosterior,
    pub map_region_count: usize,
    pub acceptance_rates: BTreeMap<String, f64>,
    pub runtime_seconds: f64,
    pub literature_values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

/// A finished benchmark together with the artifacts needed downstream.
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub data: TrainingSet,
    pub chain: Chain,
    pub config: BenchmarkConfig,
}

fn evaluate(scenario: Scenario, points: &[Vec<f64>]) -> Result<TrainingSet> {
    let ys = points.iter().map(|x| scenario.eval(x)).collect();
    TrainingSet::new(points.to_vec(), ys)
}

/// MSE of a single stationary GP (one region, full hyperparameter search).
pub fn single_gp_mse(scenario: Scenario, data: &TrainingSet, points: &[Vec<f64>], seed: u64) -> Result<f64> {
    let model = evaluate_model(
        data,
        &Tessellation::single(data.dim()),
        &PriorConfig::default(),
        true,
        &FitOptions::default(),
        stream_seed(seed, Stream::Optimizer),
    )?;
    let fit = &model.region_fits[0];
    let pred: Vec<f64> = points.iter().map(|x| fit.predict_mean(data, x)).collect::<Result<_>>()?;
    let truth: Vec<f64> = points.iter().map(|x| scenario.eval(x)).collect();
    mse(&pred, &truth)
}

fn integrated_mse(scenario: Scenario, chain: &Chain, data: &TrainingSet, points: &[Vec<f64>]) -> Result<f64> {
    let models = SampleModels::build(&chain.samples, data)?;
    let grid = integrated_surface_from(&models, points)?.with_truth(|x| scenario.eval(x));
    grid.mse()
}

/// The maximin LHS design for a benchmark and its outputs.
pub fn benchmark_design(scenario: Scenario, config: &BenchmarkConfig) -> Result<TrainingSet> {
    let n = config.n_points.unwrap_or(scenario.default_points());
    let mut rng = stream_rng(config.seed, Stream::Design);
    let design = maximin_lhs(n, scenario.dim(), &mut rng, config.lhs_restarts);
    evaluate(scenario, &design)
}

pub fn run_benchmark(scenario: Scenario, config: &BenchmarkConfig) -> Result<BenchmarkRun> {
    let start = Instant::now();
    let data = benchmark_design(scenario, config)?;
    run_benchmark_on(scenario, data, config, start)
}

fn run_benchmark_on(scenario: Scenario, data: TrainingSet, config: &BenchmarkConfig, start: Instant) -> Result<BenchmarkRun> {
    let chain = benchmark_chain(&data, config)?;
    let points = scenario.evaluation_points(config.grid_per_axis, config.grid_anchor)?;
    let mse_proposed = integrated_mse(scenario, &chain, &data, &points)?;
    let mse_single_gp = single_gp_mse(scenario, &data, &points, config.seed)?;
    let t = &chain.tallies;
    let acceptance_rates = [("birth", t.birth), ("death", t.death), ("move", t.moves), ("change", t.change)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.rate()))
        .collect();
    let report = BenchmarkReport {
        scenario,
        seed: config.seed,
        lambda: config.lambda,
        n_s: config.n_iterations,
        n_points: data.len(),
        mse_proposed,
        mse_single_gp,
        region_count_posterior: region_count_posterior(&chain),
        map_region_count: chain.map_sample().tessellation.r(),
        acceptance_rates,
        runtime_seconds: start.elapsed().as_secs_f64(),
        literature_values: scenario.literature_values(),
        checks: vec![
            Check {
                name: "mse_proposed < mse_single_gp".into(),
                passed: mse_proposed < mse_single_gp,
            },
            Check {
                name: "MAP model has more than one region".into(),
                passed: chain.map_sample().tessellation.r() > 1,
            },
        ],
    };
    Ok(BenchmarkRun {
        report,
        data,
        chain,
        config: config.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Boundary,
    Sobol,
    MaxVariance,
}

impl Sampler {
    pub const ALL: [Sampler; 3] = [Sampler::Boundary, Sampler::Sobol, Sampler::MaxVariance];

    pub fn name(self) -> &'static str {
        match self {
            Sampler::Boundary => "boundary",
            Sampler::Sobol => "sobol",
            Sampler::MaxVariance => "max-variance",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Points added by each sampler.
    pub n_p: usize,
    /// Boundary candidate set size (also the max-variance pool size).
    pub n_star: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { n_p: 5, n_star: 2000 }
    }
}

/// Chooses `n_p` new design points with the given sampler.
pub fn select_points(
    sampler: Sampler,
    chain: &Chain,
    data: &TrainingSet,
    mcmc: &McmcConfig,
    config: &AdaptiveConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let d = data.dim();
    match sampler {
        Sampler::Sobol => sobol_points(config.n_p, d),
        Sampler::MaxVariance => {
            let pool: Vec<Vec<f64>> = (0..config.n_star).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
            let models = SampleModels::build(&chain.samples, data)?;
            let idx = max_variance_points(&models, &pool, config.n_p)?;
            Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
        }
        Sampler::Boundary => {
            let map = map_model(chain, data, mcmc)?;
            let target = smallest_region(&map.counts()).ok_or(Error::NoBoundary)?;
            let set = boundary_candidates(&map.tess, target, config.n_star, rng)?;
            let existing: Vec<Vec<f64>> = data.points().map(<[f64]>::to_vec).collect();
            let idx = greedy_maximin_select(&set.points, &existing, config.n_p)?;
            Ok(idx.into_iter().map(|i| set.points[i].clone()).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerOutcome {
    pub sampler: Sampler,
    pub added: Vec<Vec<f64>>,
    pub mse: f64,
    pub region_count_posterior: RegionCountPosterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_p: usize,
    pub n_star: usize,
    pub mse_before: f64,
    pub region_count_before: RegionCountPosterior,
    pub outcomes: Vec<SamplerOutcome>,
    pub runtime_seconds: f64,
    pub literature_values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl AdaptiveReport {
    pub fn outcome(&self, sampler: Sampler) -> Option<&SamplerOutcome> {
        self.outcomes.iter().find(|o| o.sampler == sampler)
    }
}

/// Augments the base design with each sampler in turn, reruns the chain on
/// the augmented data and compares.
pub fn run_adaptive_benchmark(base: &BenchmarkRun, config: &AdaptiveConfig) -> Result<AdaptiveReport> {
    let start = Instant::now();
    let scenario = base.report.scenario;
    let mcmc = base.config.mcmc(base.data.dim())?;
    let mut outcomes = Vec::new();
    for sampler in Sampler::ALL {
        let mut rng = stream_rng(base.config.seed, Stream::Sampler);
        let added = select_points(sampler, &base.chain, &base.data, &mcmc, config, &mut rng)?;
        let mut data = base.data.clone();
        let ys: Vec<f64> = added.iter().map(|x| scenario.eval(x)).collect();
        data.extend(&added, &ys)?;
        let run = run_benchmark_on(scenario, data, &base.config, Instant::now())?;
        outcomes.push(SamplerOutcome {
            sampler,
            added,
            mse: run.report.mse_proposed,
            region_count_posterior: run.report.region_count_posterior,
        });
    }
    let boundary = &outcomes[0];
    let before_r2 = base.report.region_count_posterior.prob(2);
    let checks = vec![
        Check {
            name: "boundary mse ≤ comparators".into(),
            passed: outcomes[1..].iter().all(|o| boundary.mse <= o.mse),
        },
        Check {
            name: "P(r=2) increases after boundary sampling".into(),
            passed: boundary.region_count_posterior.prob(2) > before_r2,
        },
    ];
    Ok(AdaptiveReport {
        scenario,
        seed: base.config.seed,
        n_p: config.n_p,
        n_star: config.n_star,
        mse_before: base.report.mse_proposed,
        region_count_before: base.report.region_count_posterior.clone(),
        outcomes,
        runtime_seconds: start.elapsed().as_secs_f64(),
        literature_values: scenario.literature_values(),
        checks,
    })
}
