//! Box-constrained Nelder–Mead simplex search (maximization).

/// Outcome of one local search.
#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    /// Initial edge length of the simplex.
    pub step: f64,
    /// Stop when the spread of objective values across the simplex drops below this.
    pub f_tol: f64,
    /// Stop when every vertex is within this distance of the best vertex.
    pub x_tol: f64,
    pub max_evals: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            step: 1.0,
            f_tol: 1e-7,
            x_tol: 1e-5,
            max_evals: 400,
        }
    }
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Maximizes `f` over the box `[lower, upper]` starting from `start`.
///
/// Trial points are projected back into the box. Non-finite objective values
/// are treated as `-inf`, so the simplex simply retreats from them.
pub fn maximize<F>(
    mut f: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };

    let mut x0 = start.to_vec();
    clamp_into(&mut x0, lower, upper);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), v0));
    for j in 0..dim {
        let mut x = x0.clone();
        // step inward when the start sits on the upper face
        x[j] = if x[j] + opts.step <= upper[j] {
            x[j] + opts.step
        } else {
            x[j] - opts.step
        };
        clamp_into(&mut x, lower, upper);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        // descending by value: best first
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if best.is_finite() && worst.is_finite() {
            (best - worst).abs()
        } else {
            f64::INFINITY
        };
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol.max(1e-3) || size <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clamp_into(&mut p, lower, upper);
            p
        };

        let xr = along(1.0);
        let vr = eval(&xr, &mut evals);
        if vr > simplex[0].1 {
            let xe = along(2.0);
            let ve = eval(&xe, &mut evals);
            simplex[dim] = if ve > vr { (xe, ve) } else { (xr, vr) };
            continue;
        }
        if vr > simplex[dim - 1].1 {
            simplex[dim] = (xr, vr);
            continue;
        }
        let (xc, vc) = if vr > simplex[dim].1 {
            let xc = along(0.5);
            let vc = eval(&xc, &mut evals);
            (xc, vc)
        } else {
            let xc = along(-0.5);
            let vc = eval(&xc, &mut evals);
            (xc, vc)
        };
        if vc > simplex[dim].1.max(vr) {
            simplex[dim] = (xc, vc);
            continue;
        }
        // shrink toward the best vertex
        let bx = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = bx
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            clamp_into(&mut p, lower, upper);
            let v = eval(&p, &mut evals);
            *vertex = (p, v);
        }
    }

    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        evaluations: evals,
        converged,
    }
}
