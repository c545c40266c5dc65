//! Derivative-free Nelder–Mead minimizer.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Stop when the spread of objective values across the simplex falls
    /// below `ftol * (1 + |f_best|)`...
    pub ftol: f64,
    /// ...and every vertex lies within `xtol * (1 + |x_best|)` of the best one
    /// in each coordinate.
    pub xtol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iter: 2000,
            ftol: 1e-12,
            xtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

/// Minimizes `f` from `x0`. The initial simplex adds `step[d]` to coordinate
/// `d`. NaN objective values are treated as `+inf`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert_eq!(step.len(), n, "step length must match dimension");
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for d in 0..n {
        let mut p = x0.to_vec();
        p[d] += step[d];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    loop {
        sort_simplex(&mut pts, &mut vals);
        if has_converged(&pts, &vals, opts) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for p in &pts[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let worst = n;
        along(&centroid, &pts[worst], -ALPHA, &mut trial);
        let fr = eval(&trial);

        if fr < vals[0] {
            along(&centroid, &pts[worst], -GAMMA, &mut trial2);
            let fe = eval(&trial2);
            if fe < fr {
                pts[worst].copy_from_slice(&trial2);
                vals[worst] = fe;
            } else {
                pts[worst].copy_from_slice(&trial);
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        // contraction: outside if the reflection improved on the worst point
        let (fc, accept) = if fr < vals[worst] {
            along(&centroid, &pts[worst], -RHO, &mut trial2);
            let fc = eval(&trial2);
            (fc, fc <= fr)
        } else {
            along(&centroid, &pts[worst], RHO, &mut trial2);
            let fc = eval(&trial2);
            (fc, fc < vals[worst])
        };
        if accept {
            pts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }
        let best = pts[0].clone();
        for idx in 1..=n {
            for (x, b) in pts[idx].iter_mut().zip(&best) {
                *x = b + SIGMA * (*x - b);
            }
            vals[idx] = eval(&pts[idx]);
        }
    }

    SimplexResult {
        x: pts[0].clone(),
        fx: vals[0],
        iterations,
        evaluations,
        converged,
    }
}

/// `out = c + coef * (p - c)`.
fn along(c: &[f64], p: &[f64], coef: f64, out: &mut [f64]) {
    for ((o, ci), pi) in out.iter_mut().zip(c).zip(p) {
        *o = ci + coef * (pi - ci);
    }
}

/// Stable sort by value; ties keep their vertex order.
fn sort_simplex(pts: &mut Vec<Vec<f64>>, vals: &mut Vec<f64>) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    *pts = order.iter().map(|&i| std::mem::take(&mut pts[i])).collect();
    *vals = order.iter().map(|&i| vals[i]).collect();
}

fn has_converged(pts: &[Vec<f64>], vals: &[f64], opts: &SimplexOptions) -> bool {
    let fbest = vals[0];
    let fworst = vals[vals.len() - 1];
    if !fbest.is_finite() || !fworst.is_finite() {
        return false;
    }
    if fworst - fbest > opts.ftol * (1.0 + fbest.abs()) {
        return false;
    }
    let best = &pts[0];
    pts[1..].iter().all(|p| {
        p.iter()
            .zip(best)
            .all(|(x, b)| (x - b).abs() <= opts.xtol * (1.0 + b.abs()))
    })
}
