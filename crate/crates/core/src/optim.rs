//! Nelder-Mead simplex minimization with restarts.
//!
//! Non-finite objective values are treated as `+inf`, so callers can
//! reject infeasible points by returning `NaN` or `inf`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelderMeadOptions {
    /// Evaluation budget per simplex run.
    pub max_evals: usize,
    /// Convergence threshold on the simplex spread, relative to `max(1, |x|)`.
    pub tol: f64,
    /// Fresh simplices built around the incumbent after the first run.
    pub restarts: usize,
    /// Initial edge length relative to `max(1, |x_i|)`.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 500,
            tol: 1e-6,
            restarts: 2,
            initial_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Whether the final run met the tolerance before its budget ran out.
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

struct Run {
    x: Vec<f64>,
    value: f64,
    evals: usize,
    converged: bool,
}

fn run_simplex<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    step_scale: f64,
    opts: &NelderMeadOptions,
) -> Run {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    vals.push(f0);
    let mut evals = 0;
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step * step_scale * x0[i].abs().max(1.0);
        vals.push(sanitize(f(&p)));
        evals += 1;
        pts.push(p);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut converged = false;

    loop {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);

        let spread = pts
            .iter()
            .flat_map(|p| p.iter().zip(&pts[best]).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)))
            .fold(0.0, f64::max);
        let fspread = vals[worst] - vals[best];
        if spread < opts.tol && fspread <= opts.tol * (1.0 + vals[best].abs()) {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        centroid.fill(0.0);
        for &k in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&pts[k]) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64, out: &mut [f64], pts: &[Vec<f64>], centroid: &[f64]| {
            for i in 0..n {
                out[i] = centroid[i] + coef * (pts[worst][i] - centroid[i]);
            }
        };

        along(-1.0, &mut trial, &pts, &centroid);
        let fr = sanitize(f(&trial));
        evals += 1;
        if fr < vals[best] {
            along(-2.0, &mut trial2, &pts, &centroid);
            let fe = sanitize(f(&trial2));
            evals += 1;
            if fe < fr {
                pts[worst].copy_from_slice(&trial2);
                vals[worst] = fe;
            } else {
                pts[worst].copy_from_slice(&trial);
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        let (coef, bound) = if fr < vals[worst] {
            (-0.5, fr)
        } else {
            (0.5, vals[worst])
        };
        along(coef, &mut trial2, &pts, &centroid);
        let fc = sanitize(f(&trial2));
        evals += 1;
        if fc < bound {
            pts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }
        // shrink towards the best vertex
        let anchor = pts[best].clone();
        for &k in &order[1..] {
            for (x, a) in pts[k].iter_mut().zip(&anchor) {
                *x = a + 0.5 * (*x - a);
            }
            vals[k] = sanitize(f(&pts[k]));
            evals += 1;
        }
    }

    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    Run {
        x: pts.swap_remove(best),
        value: vals[best],
        evals,
        converged,
    }
}

/// Minimizes `f` from `x0`; each restart rebuilds the simplex around the
/// incumbent with a smaller edge.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<Minimum> {
    if x0.is_empty() {
        return Err(Error::invalid("nothing to optimize"));
    }
    let f0 = sanitize(f(x0));
    let mut x = x0.to_vec();
    let mut value = f0;
    let mut evals = 1;
    let mut converged = false;
    for attempt in 0..=opts.restarts {
        let scale = 1.0 / (1u32 << attempt) as f64;
        let run = run_simplex(&mut f, &x, value, scale, opts);
        evals += run.evals;
        converged = run.converged;
        if run.value <= value {
            x = run.x;
            value = run.value;
        }
    }
    if !value.is_finite() {
        return Err(Error::Optimizer("objective is not finite anywhere in the simplex".into()));
    }
    Ok(Minimum {
        x,
        value,
        evals,
        converged,
    })
}
