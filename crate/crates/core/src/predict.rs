//! Per-sample predictions and the Monte-Carlo integrated surface.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::{PredictiveT, TrainingSet};
use crate::posterior::{FittedModel, PriorConfig};
use crate::rjmcmc::ChainSample;

/// Routes `x` to its region and predicts with that region's GP.
pub fn predict_sample(model: &FittedModel, x: &[f64]) -> Result<PredictiveT> {
    check_dim(model.tess.dim(), x.len())?;
    let region = model.tess.region_of(x);
    model.region_fits[region].predict(&model.region_data[region], x)
}

/// Distinct stored states with their multiplicities. Rejected iterations
/// repeat the previous state, so a chain usually holds far fewer distinct
/// models than samples.
pub struct SampleModels {
    pub models: Vec<FittedModel>,
    pub weights: Vec<usize>,
}

impl SampleModels {
    pub fn build(samples: &[ChainSample], data: &TrainingSet) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty chain".into()));
        }
        let mut unique: Vec<&ChainSample> = Vec::new();
        let mut weights: Vec<usize> = Vec::new();
        for s in samples {
            match unique
                .iter()
                .position(|u| u.tessellation == s.tessellation && u.hypers == s.hypers)
            {
                Some(i) => weights[i] += 1,
                None => {
                    unique.push(s);
                    weights.push(1);
                }
            }
        }
        let prior = PriorConfig::default();
        let models = unique
            .par_iter()
            .map(|s| FittedModel::from_hypers(data, s.tessellation.clone(), &s.hypers, &prior))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleModels { models, weights })
    }

    pub fn total_weight(&self) -> usize {
        self.weights.iter().sum()
    }

    /// Weighted mean of the per-sample predictive means.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (m, &w) in self.models.iter().zip(&self.weights) {
            acc += w as f64 * predict_sample(m, x)?.mean;
        }
        Ok(acc / self.total_weight() as f64)
    }

    /// Variance of the per-sample means plus the mean squared scale.
    pub fn variance_proxy(&self, x: &[f64]) -> Result<f64> {
        let total = self.total_weight() as f64;
        let preds = self
            .models
            .iter()
            .map(|m| predict_sample(m, x))
            .collect::<Result<Vec<_>>>()?;
        let mean = preds.iter().zip(&self.weights).map(|(p, &w)| w as f64 * p.mean).sum::<f64>() / total;
        let spread = preds
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w as f64 * (p.mean - mean).powi(2))
            .sum::<f64>()
            / total;
        let scale_sq = preds.iter().zip(&self.weights).map(|(p, &w)| w as f64 * p.scale * p.scale).sum::<f64>() / total;
        Ok(spread + scale_sq)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub points: Vec<Vec<f64>>,
    pub integrated_mean: Vec<f64>,
    pub per_sample_available: bool,
    pub truth: Option<Vec<f64>>,
}

impl PredictionGrid {
    pub fn with_truth(mut self, f: impl Fn(&[f64]) -> f64) -> Self {
        self.truth = Some(self.points.iter().map(|p| f(p)).collect());
        self
    }

    pub fn mse(&self) -> Result<f64> {
        match &self.truth {
            Some(t) => mse(&self.integrated_mean, t),
            None => Err(Error::InvalidArgument("grid has no truth values".into())),
        }
    }

    /// CSV with header `x1..xd,integrated_mean[,truth,sq_error]`. `map`
    /// transforms the stored unit-cube coordinates for output.
    pub fn write_csv<W: Write>(&self, w: W, map: impl Fn(&[f64]) -> Vec<f64>) -> Result<()> {
        let d = self.points.first().map_or(0, Vec::len);
        let names: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        self.write_csv_named(w, &names, map)
    }

    /// As [`write_csv`](Self::write_csv) with the given input column names.
    pub fn write_csv_named<W: Write>(&self, w: W, names: &[String], map: impl Fn(&[f64]) -> Vec<f64>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = names.to_vec();
        header.push("integrated_mean".into());
        if self.truth.is_some() {
            header.push("truth".into());
            header.push("sq_error".into());
        }
        out.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = map(p).iter().map(|v| v.to_string()).collect();
            let m = self.integrated_mean[i];
            row.push(m.to_string());
            if let Some(t) = &self.truth {
                row.push(t[i].to_string());
                row.push((m - t[i]).powi(2).to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pointwise average of per-sample predictive means over stored samples.
pub fn integrated_surface(samples: &[ChainSample], data: &TrainingSet, points: &[Vec<f64>]) -> Result<PredictionGrid> {
    let models = SampleModels::build(samples, data)?;
    integrated_surface_from(&models, points)
}

pub fn integrated_surface_from(models: &SampleModels, points: &[Vec<f64>]) -> Result<PredictionGrid> {
    let integrated_mean = points.par_iter().map(|x| models.mean(x)).collect::<Result<Vec<_>>>()?;
    Ok(PredictionGrid {
        points: points.to_vec(),
        integrated_mean,
        per_sample_available: true,
        truth: None,
    })
}

pub fn mse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mse needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            truth.len()
        )));
    }
    let s: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(s / predictions.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridAnchor {
    /// `i / (m - 1)`, including both faces.
    #[default]
    Corner,
    /// `(i + 0.5) / m`.
    CellCentre,
}

/// Equispaced tensor grid on the unit cube, first coordinate varying slowest.
pub fn grid_points(per_axis: &[usize], anchor: GridAnchor) -> Result<Vec<Vec<f64>>> {
    if per_axis.is_empty() || per_axis.iter().any(|&m| m == 0 || (m == 1 && anchor == GridAnchor::Corner)) {
        return Err(Error::InvalidArgument("grid needs at least one axis and ≥ 2 points per axis".into()));
    }
    let coord = |i: usize, m: usize| match anchor {
        GridAnchor::Corner => i as f64 / (m - 1) as f64,
        GridAnchor::CellCentre => (i as f64 + 0.5) / m as f64,
    };
    let total: usize = per_axis.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut p = vec![0.0; per_axis.len()];
        for j in (0..per_axis.len()).rev() {
            p[j] = coord(flat % per_axis[j], per_axis[j]);
            flat /= per_axis[j];
        }
        out.push(p);
    }
    Ok(out)
}

/// Parses `"100x100"` (or a single count applied to every axis).
pub fn parse_grid_spec(spec: &str, dim: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = spec.split(['x', 'X']).collect();
    let counts = parts
        .iter()
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad grid spec {spec:?}")))?;
    match counts.len() {
        1 => Ok(vec![counts[0]; dim]),
        n if n == dim => Ok(counts),
        n => Err(Error::DimensionMismatch { expected: dim, found: n }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpHyperparams;
    use crate::rng::rng_from_seed;
    use crate::tessellation::Tessellation;
    use rand::Rng as _;

    fn step_data() -> TrainingSet {
        let xs: Vec<Vec<f64>> = (0..24).map(|i| vec![(i as f64 + 0.5) / 24.0]).collect();
        let ys = xs.iter().map(|x| x[0].sin() + if x[0] > 0.5 { 3.0 } else { 0.0 }).collect();
        TrainingSet::new(xs, ys).unwrap()
    }

    fn two_region_sample() -> ChainSample {
        let h = GpHyperparams::new(vec![4.0], 0.0).unwrap();
        ChainSample {
            iteration: 0,
            log_posterior: 0.0,
            tessellation: Tessellation::new(vec![vec![0.25], vec![0.75]], vec![vec![0], vec![1]]).unwrap(),
            hypers: vec![h.clone(), h],
        }
    }

    #[test]
    fn interpolates_training_points() {
        let data = step_data();
        let s = two_region_sample();
        let model = FittedModel::from_hypers(&data, s.tessellation.clone(), &s.hypers, &PriorConfig::default()).unwrap();
        for (x, y) in data.points().zip(data.outputs()) {
            let p = predict_sample(&model, x).unwrap();
            assert!((p.mean - y).abs() < 1e-8);
            assert!(p.scale < 1e-6);
        }
        let grid = integrated_surface(&[s.clone(), s], &data, &data.points().map(<[f64]>::to_vec).collect::<Vec<_>>()).unwrap();
        for (m, y) in grid.integrated_mean.iter().zip(data.outputs()) {
            assert!((m - y).abs() < 1e-8);
        }
    }

    #[test]
    fn other_regions_data_is_ignored() {
        let data = step_data();
        let s = two_region_sample();
        let model = FittedModel::from_hypers(&data, s.tessellation.clone(), &s.hypers, &PriorConfig::default()).unwrap();
        let x = [0.31];
        let full = predict_sample(&model, &x).unwrap();
        // drop every point of region 1 and rebuild
        let keep: Vec<usize> = (0..data.len()).filter(|&i| data.point(i)[0] < 0.5).collect();
        let mut ys = data.subset(&keep);
        let left = FittedModel::from_hypers(&ys, Tessellation::single(1), &s.hypers[..1], &PriorConfig::default()).unwrap();
        let ablated = predict_sample(&left, &x).unwrap();
        assert_eq!(full.mean.to_bits(), ablated.mean.to_bits());
        assert_eq!(full.scale.to_bits(), ablated.scale.to_bits());
        // and changing region 1's outputs leaves region 0's prediction unchanged
        ys = data.clone();
        let shifted: Vec<f64> = ys.outputs().iter().zip(ys.points()).map(|(y, p)| if p[0] > 0.5 { y * 7.0 } else { *y }).collect();
        ys = TrainingSet::new(ys.points().map(<[f64]>::to_vec).collect(), shifted).unwrap();
        let other = FittedModel::from_hypers(&ys, s.tessellation.clone(), &s.hypers, &PriorConfig::default()).unwrap();
        assert_eq!(predict_sample(&other, &x).unwrap().mean.to_bits(), full.mean.to_bits());
    }

    #[test]
    fn same_cell_routes_identically() {
        let data = step_data();
        let s = two_region_sample();
        let model = FittedModel::from_hypers(&data, s.tessellation.clone(), &s.hypers, &PriorConfig::default()).unwrap();
        assert_eq!(model.tess.region_of(&[0.1]), model.tess.region_of(&[0.4]));
        assert!(predict_sample(&model, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn single_sample_and_idempotence() {
        let data = step_data();
        let s = two_region_sample();
        let pts = grid_points(&[37], GridAnchor::Corner).unwrap();
        let one = integrated_surface(std::slice::from_ref(&s), &data, &pts).unwrap();
        let model = FittedModel::from_hypers(&data, s.tessellation.clone(), &s.hypers, &PriorConfig::default()).unwrap();
        for (p, m) in pts.iter().zip(&one.integrated_mean) {
            assert_eq!(*m, predict_sample(&model, p).unwrap().mean);
        }
        let two = integrated_surface(&[s.clone(), s], &data, &pts).unwrap();
        assert_eq!(one.integrated_mean, two.integrated_mean);
    }

    #[test]
    fn order_invariant() {
        let data = step_data();
        let a = two_region_sample();
        let mut b = a.clone();
        b.tessellation = Tessellation::single(1);
        b.hypers.truncate(1);
        let mut c = a.clone();
        c.hypers[0].roughness[0] = 9.0;
        let pts = grid_points(&[21], GridAnchor::CellCentre).unwrap();
        let x = integrated_surface(&[a.clone(), b.clone(), c.clone(), a.clone()], &data, &pts).unwrap();
        let y = integrated_surface(&[c, a.clone(), a, b], &data, &pts).unwrap();
        for (u, v) in x.integrated_mean.iter().zip(&y.integrated_mean) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_examples() {
        let t = [1.0, 2.0, -3.0];
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
        assert!((mse(&shifted, &t).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse(&t[..2], &t).is_err());
        assert!(mse(&[], &[]).is_err());
        let mut rng = rng_from_seed(3);
        let a: Vec<f64> = (0..500).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut sum = 0.0;
        for i in 0..500 {
            let d = a[i] - b[i];
            sum += d * d;
        }
        assert!((mse(&a, &b).unwrap() - sum / 500.0).abs() < 1e-12);
    }

    #[test]
    fn grids() {
        let g = grid_points(&[100, 100], GridAnchor::Corner).unwrap();
        assert_eq!(g.len(), 10_000);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[1], vec![0.0, 1.0 / 99.0]);
        assert_eq!(g[9_999], vec![1.0, 1.0]);
        let c = grid_points(&[4], GridAnchor::CellCentre).unwrap();
        assert_eq!(c, vec![vec![0.125], vec![0.375], vec![0.625], vec![0.875]]);
        assert_eq!(parse_grid_spec("100x100", 2).unwrap(), vec![100, 100]);
        assert_eq!(parse_grid_spec("7", 3).unwrap(), vec![7, 7, 7]);
        assert!(parse_grid_spec("10x10", 3).is_err());
        assert!(parse_grid_spec("ax3", 2).is_err());
    }

    #[test]
    fn csv_layout() {
        let grid = PredictionGrid {
            points: vec![vec![0.0, 1.0], vec![0.5, 0.5]],
            integrated_mean: vec![1.0, 2.0],
            per_sample_available: true,
            truth: None,
        }
        .with_truth(|p| p[0] + 1.0);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf, |p| p.to_vec()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x1,x2,integrated_mean,truth,sq_error\n0,1,1,1,0\n0.5,0.5,2,1.5,0.25\n");
        assert_eq!(grid.mse().unwrap(), 0.125);
    }
}
