//! Reversible-jump MCMC over tessellations.
//!
//! Four move types: birth (add a centre), death (remove one), move (perturb
//! one) and change (reassign one centre's region). With a single centre only
//! birth and move are possible; the resulting imbalance in move-type
//! probabilities is corrected by the adjustment factors 1/2 (birth from
//! `k = 1`) and 2 (death from `k = 2`).
//!
//! The acceptance ratio is posterior ratio × relationship proposal ratio ×
//! adjustment. Birth draws the newborn's region uniformly from `r + 1`
//! options, so a birth carries a factor `r + 1` and a death `1 / (r' + 1)`,
//! with `r'` the region count after the death. Move and change proposals are
//! symmetric.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FitOptions, GpHyperparams, TrainingSet};
use crate::posterior::{evaluate_model, log_prior, FittedModel, GpScorer, PriorConfig, Scorer};
use crate::rng::{stream_rng, stream_seed, Rng, Stream};
use crate::tessellation::{Placement, Tessellation};

/// Sampler settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations `n_s`.
    pub n_iterations: usize,
    /// Diagonal of the move-proposal covariance `Σ_p` (variances, unit-cube
    /// coordinates).
    pub move_step_var: Vec<f64>,
    /// Root seed; the chain and optimizer streams are derived from it.
    pub seed: u64,
    pub prior: PriorConfig,
    /// Pin every nugget to zero (deterministic simulator).
    pub deterministic: bool,
    /// Fraction of iterations discarded before storing samples.
    pub burn_in_fraction: f64,
    /// Store every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Hyperparameter search used for region fits inside the chain.
    pub fit: FitOptions,
    /// Iterations per pilot round for tuning `Σ_p`; zero disables tuning.
    pub pilot_iterations: usize,
}

impl McmcConfig {
    pub fn new(dim: usize, n_iterations: usize, seed: u64) -> Self {
        McmcConfig {
            n_iterations,
            move_step_var: vec![0.05 * 0.05; dim],
            seed,
            prior: PriorConfig::default(),
            deterministic: true,
            burn_in_fraction: 0.25,
            thin: 10,
            fit: chain_fit_options(),
            pilot_iterations: 0,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.move_step_var.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.move_step_var.len(),
            });
        }
        if self.move_step_var.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::InvalidArgument("move step variances must be positive".into()));
        }
        if self.thin == 0 || !(0.0..1.0).contains(&self.burn_in_fraction) || self.n_iterations == 0 {
            return Err(Error::InvalidArgument("need n_iterations ≥ 1, thin ≥ 1 and burn-in in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Region fits inside the chain use a lighter search than standalone fits:
/// the chain evaluates tens of thousands of regions and a region's score only
/// needs to be consistent, which the membership-keyed seed guarantees.
pub fn chain_fit_options() -> FitOptions {
    FitOptions {
        restarts: 2,
        screening: 10,
        max_evals: 150,
        ..FitOptions::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Birth,
    Death,
    Move,
    Change,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub proposed: usize,
    pub accepted: usize,
    /// Proposals discarded before scoring: out-of-cube moves or tessellations
    /// leaving some region with fewer than four points.
    pub invalid: usize,
}

impl Tally {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveTallies {
    pub birth: Tally,
    pub death: Tally,
    #[serde(rename = "move")]
    pub moves: Tally,
    pub change: Tally,
}

impl MoveTallies {
    fn get_mut(&mut self, kind: MoveKind) -> &mut Tally {
        match kind {
            MoveKind::Birth => &mut self.birth,
            MoveKind::Death => &mut self.death,
            MoveKind::Move => &mut self.moves,
            MoveKind::Change => &mut self.change,
        }
    }

    pub fn total_proposed(&self) -> usize {
        self.birth.proposed + self.death.proposed + self.moves.proposed + self.change.proposed
    }
}

/// One stored state of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub iteration: usize,
    pub log_posterior: f64,
    pub tessellation: Tessellation,
    /// Fitted hyperparameters of each region.
    pub hypers: Vec<GpHyperparams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub samples: Vec<ChainSample>,
    pub tallies: MoveTallies,
    pub map_index: usize,
    /// `Σ_p` diagonal actually used (after any pilot tuning).
    pub move_step_var: Vec<f64>,
}

impl Chain {
    /// Wraps stored samples, locating the MAP sample.
    pub fn from_samples(samples: Vec<ChainSample>) -> Result<Self> {
        let map_index = argmax(&samples)?;
        Ok(Chain {
            samples,
            tallies: MoveTallies::default(),
            map_index,
            move_step_var: Vec::new(),
        })
    }

    pub fn map_sample(&self) -> &ChainSample {
        &self.samples[self.map_index]
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ChainSample>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}

fn argmax(samples: &[ChainSample]) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty chain".into()));
    }
    let mut best = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.log_posterior > samples[best].log_posterior {
            best = i;
        }
    }
    Ok(best)
}

/// A proposed tessellation with its log proposal-ratio term and adjustment.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub tess: Tessellation,
    /// `ln(q(reverse) / q(forward))` from the relationship draw.
    pub log_proposal_ratio: f64,
    pub adjustment: f64,
}

/// Adds a centre uniformly on the cube; its region is uniform over the `r`
/// existing regions and a new singleton.
pub fn propose_birth(tess: &Tessellation, rng: &mut Rng) -> Proposal {
    let point: Vec<f64> = (0..tess.dim()).map(|_| rng.random::<f64>()).collect();
    let r = tess.r();
    let choice = rng.random_range(0..=r);
    let placement = if choice == r { Placement::NewRegion } else { Placement::Join(choice) };
    Proposal {
        tess: tess.with_birth(point, placement),
        log_proposal_ratio: ((r + 1) as f64).ln(),
        adjustment: birth_adjustment(tess.k()),
    }
}

/// Removes a uniformly chosen centre.
pub fn propose_death(tess: &Tessellation, rng: &mut Rng) -> Result<Proposal> {
    if tess.k() < 2 {
        return Err(Error::InvalidArgument("death proposed with a single centre".into()));
    }
    let j = rng.random_range(0..tess.k());
    let next = tess.with_death(j);
    let r_after = next.r();
    Ok(Proposal {
        tess: next,
        log_proposal_ratio: -((r_after + 1) as f64).ln(),
        adjustment: death_adjustment(tess.k()),
    })
}

pub fn birth_adjustment(k: usize) -> f64 {
    if k == 1 {
        0.5
    } else {
        1.0
    }
}

pub fn death_adjustment(k: usize) -> f64 {
    if k == 2 {
        2.0
    } else {
        1.0
    }
}

/// Gaussian step for one uniformly chosen centre. Returns `None` when the
/// step leaves the unit cube (the move is rejected outright).
pub fn propose_move(tess: &Tessellation, rng: &mut Rng, step_var: &[f64]) -> Option<Tessellation> {
    let j = rng.random_range(0..tess.k());
    let point: Vec<f64> = tess
        .centre(j)
        .iter()
        .zip(step_var)
        .map(|(c, v)| {
            let z: f64 = StandardNormal.sample(rng);
            c + v.sqrt() * z
        })
        .collect();
    if point.iter().all(|v| (0.0..=1.0).contains(v)) {
        Some(tess.with_moved(j, point))
    } else {
        None
    }
}

/// Reassigns a uniformly chosen centre to a different region or a new one.
pub fn propose_change(tess: &Tessellation, rng: &mut Rng) -> Result<Tessellation> {
    if tess.k() < 2 {
        return Err(Error::InvalidArgument("change proposed with a single centre".into()));
    }
    let j = rng.random_range(0..tess.k());
    let opts = tess.change_options(j);
    let pick = opts[rng.random_range(0..opts.len())];
    Ok(tess.with_relabel(j, pick))
}

struct State {
    tess: Tessellation,
    log_prior: f64,
    log_lik: f64,
    hypers: Vec<GpHyperparams>,
}

impl State {
    fn log_posterior(&self) -> f64 {
        self.log_prior + self.log_lik
    }
}

/// Runs the sampler on `data` with per-region GP fits.
pub fn run_chain(data: &TrainingSet, config: &McmcConfig) -> Result<Chain> {
    let scorer = GpScorer::new(
        data,
        config.deterministic,
        config.fit.clone(),
        stream_seed(config.seed, Stream::Optimizer),
    );
    run_chain_with(&scorer, config)
}

/// Runs the sampler against any scorer, starting from one centre at the
/// middle of the cube.
pub fn run_chain_with<S: Scorer>(scorer: &S, config: &McmcConfig) -> Result<Chain> {
    run_chain_from(scorer, config, Tessellation::single(scorer.dim()))
}

pub fn run_chain_from<S: Scorer>(scorer: &S, config: &McmcConfig, start: Tessellation) -> Result<Chain> {
    config.validate(scorer.dim())?;
    let mut rng = stream_rng(config.seed, Stream::Chain);
    let mut step_var = config.move_step_var.clone();
    if config.pilot_iterations > 0 {
        step_var = tune_step(scorer, config, &start, &mut rng)?;
    }
    let (samples, tallies) = sample(scorer, config, start, &step_var, config.n_iterations, &mut rng)?;
    let map_index = argmax(&samples)?;
    Ok(Chain {
        samples,
        tallies,
        map_index,
        move_step_var: step_var,
    })
}

/// Pilot rounds scaling `Σ_p` until move acceptance lands in 20–40%.
fn tune_step<S: Scorer>(scorer: &S, config: &McmcConfig, start: &Tessellation, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut var = config.move_step_var.clone();
    let mut state = start.clone();
    for _ in 0..8 {
        let (samples, tallies) = sample(scorer, config, state.clone(), &var, config.pilot_iterations, rng)?;
        if let Some(last) = samples.last() {
            state = last.tessellation.clone();
        }
        let rate = tallies.moves.rate();
        let factor = if rate < 0.2 {
            0.5
        } else if rate > 0.4 {
            2.0
        } else {
            break;
        };
        for v in &mut var {
            *v = (*v * factor).clamp(1e-8, 0.25);
        }
    }
    Ok(var)
}

fn sample<S: Scorer>(
    scorer: &S,
    config: &McmcConfig,
    start: Tessellation,
    step_var: &[f64],
    iterations: usize,
    rng: &mut Rng,
) -> Result<(Vec<ChainSample>, MoveTallies)> {
    let score = scorer
        .score(&start)
        .ok_or_else(|| Error::InvalidTessellation("the starting tessellation is invalid for this data".into()))?;
    let mut state = State {
        log_prior: log_prior(&start, &config.prior),
        tess: start,
        log_lik: score.log_lik,
        hypers: score.hypers,
    };
    let burn_in = (iterations as f64 * config.burn_in_fraction).floor() as usize;
    let mut tallies = MoveTallies::default();
    let mut samples = Vec::with_capacity((iterations - burn_in.min(iterations)) / config.thin + 1);

    for it in 0..iterations {
        let k = state.tess.k();
        let kind = if k == 1 {
            [MoveKind::Birth, MoveKind::Move][rng.random_range(0..2)]
        } else {
            [MoveKind::Birth, MoveKind::Death, MoveKind::Move, MoveKind::Change][rng.random_range(0..4)]
        };
        let proposal = match kind {
            MoveKind::Birth => Some(propose_birth(&state.tess, rng)),
            MoveKind::Death => Some(propose_death(&state.tess, rng)?),
            MoveKind::Move => propose_move(&state.tess, rng, step_var).map(|tess| Proposal {
                tess,
                log_proposal_ratio: 0.0,
                adjustment: 1.0,
            }),
            MoveKind::Change => Some(Proposal {
                tess: propose_change(&state.tess, rng)?,
                log_proposal_ratio: 0.0,
                adjustment: 1.0,
            }),
        };
        // drawn every iteration so the stream does not depend on validity
        let u: f64 = rng.random();
        let tally = tallies.get_mut(kind);
        tally.proposed += 1;
        let scored = proposal.and_then(|p| scorer.score(&p.tess).map(|s| (p, s)));
        match scored {
            None => tally.invalid += 1,
            Some((p, s)) => {
                let lp = log_prior(&p.tess, &config.prior);
                let log_alpha = (lp + s.log_lik) - state.log_posterior() + p.log_proposal_ratio + p.adjustment.ln();
                if u.ln() < log_alpha {
                    tally.accepted += 1;
                    state = State {
                        tess: p.tess,
                        log_prior: lp,
                        log_lik: s.log_lik,
                        hypers: s.hypers,
                    };
                }
            }
        }
        if it >= burn_in && (it - burn_in).is_multiple_of(config.thin) {
            samples.push(ChainSample {
                iteration: it,
                log_posterior: state.log_posterior(),
                tessellation: state.tess.clone(),
                hypers: state.hypers.clone(),
            });
        }
    }
    Ok((samples, tallies))
}

/// The highest-posterior stored sample, refitted from scratch with the full
/// hyperparameter search.
pub fn map_model(chain: &Chain, data: &TrainingSet, config: &McmcConfig) -> Result<FittedModel> {
    if chain.is_empty() {
        return Err(Error::InvalidArgument("empty chain".into()));
    }
    let best = &chain.samples[argmax(&chain.samples)?];
    evaluate_model(
        data,
        &best.tessellation,
        &config.prior,
        config.deterministic,
        &FitOptions::default(),
        stream_seed(config.seed, Stream::Optimizer),
    )
}

/// Empirical distribution of the region count over stored samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCountPosterior(pub BTreeMap<usize, f64>);

impl RegionCountPosterior {
    pub fn prob(&self, r: usize) -> f64 {
        self.0.get(&r).copied().unwrap_or(0.0)
    }

    /// Most probable region count (smallest on ties).
    pub fn mode(&self) -> usize {
        let mut best = (0, -1.0);
        for (&r, &p) in &self.0 {
            if p > best.1 {
                best = (r, p);
            }
        }
        best.0
    }
}

pub fn region_count_posterior(chain: &Chain) -> RegionCountPosterior {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &chain.samples {
        *counts.entry(s.tessellation.r()).or_default() += 1;
    }
    let n = chain.samples.len() as f64;
    RegionCountPosterior(counts.into_iter().map(|(r, c)| (r, c as f64 / n)).collect())
}
