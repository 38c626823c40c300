//! Independent reference computations used only by tests.
//!
//! Nothing here shares code with `hypodiff-core`: matrices are plain
//! arrays, inverses use cofactors, and the oscillator transition is
//! computed from a power series and numerical quadrature rather than from
//! closed forms.

pub type Mat2 = [[f64; 2]; 2];

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

pub fn mat_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

pub fn mat_scale(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

pub fn mat_vec(a: &Mat2, x: &[f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

pub fn inverse2(a: &Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

/// `exp(t m)` by a Taylor series run to machine precision after scaling
/// `t m` below unit norm, followed by repeated squaring.
pub fn expm2(m: &Mat2, t: f64) -> Mat2 {
    let norm = m.iter().flatten().map(|v| v.abs()).sum::<f64>() * t.abs();
    let mut squarings = 0;
    let mut scale = t;
    while norm * (scale / t).abs() > 0.5 {
        scale /= 2.0;
        squarings += 1;
    }
    let a = mat_scale(m, scale);
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..40 {
        term = mat_scale(&mat_mul(&term, &a), 1.0 / k as f64);
        sum = mat_add(&sum, &term);
    }
    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

/// `int_0^t exp(s m) c c^T exp(s m)^T ds` by composite Simpson.
pub fn ou_cov_quadrature(m: &Mat2, c: [f64; 2], t: f64, intervals: usize) -> Mat2 {
    let n = intervals + intervals % 2;
    let h = t / n as f64;
    let cc = [[c[0] * c[0], c[0] * c[1]], [c[1] * c[0], c[1] * c[1]]];
    let integrand = |s: f64| {
        let e = expm2(m, s);
        mat_mul(&mat_mul(&e, &cc), &transpose(&e))
    };
    let mut acc = mat_add(&integrand(0.0), &integrand(t));
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc = mat_add(&acc, &mat_scale(&integrand(k as f64 * h), w));
    }
    mat_scale(&acc, h / 3.0)
}

/// Oscillator drift matrix `[[0, 1], [-D, -gamma]]`.
pub fn oscillator_matrix(d: f64, gamma: f64) -> Mat2 {
    [[0.0, 1.0], [-d, -gamma]]
}

/// Determinant of a small dense matrix by cofactor expansion.
pub fn det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    match n {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> =
                    a[1..].iter().map(|row| row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).collect()).collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[0][j] * det(&minor)
            })
            .sum(),
    }
}

/// Inverse via the adjugate.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let d = det(a);
    if n == 1 {
        return vec![vec![1.0 / d]];
    }
    let mut inv = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let minor: Vec<Vec<f64>> = a
                .iter()
                .enumerate()
                .filter(|&(r, _)| r != i)
                .map(|(_, row)| row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).collect())
                .collect();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[j][i] = sign * det(&minor) / d;
        }
    }
    inv
}

/// Multivariate normal log-density using an adjugate inverse.
pub fn mvn_log_density(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let inv = inverse(cov);
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += r[i] * inv[i][j] * r[j];
        }
    }
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + det(cov).ln() + q)
}

/// Output of the exact-observation Kalman filter and RTS smoother.
#[derive(Clone, Debug)]
pub struct KalmanOutput {
    /// `log p(V_1..V_n | V_0)`.
    pub log_likelihood: f64,
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub smoothed_mean: Vec<f64>,
    pub smoothed_var: Vec<f64>,
}

/// Kalman filter for `x_{i+1} = a x_i + e_i`, `e_i ~ N(0, q)`, with the
/// first coordinate observed exactly and the second hidden, started from
/// `U_0 ~ N(u0_mean, u0_var)` independent of `V_0`.
pub fn kalman_exact_first(a: &Mat2, q: &Mat2, v: &[f64], u0_mean: f64, u0_var: f64) -> KalmanOutput {
    let n = v.len();
    let mut fm = vec![[0.0; 2]; n];
    let mut fp = vec![[[0.0; 2]; 2]; n];
    let mut pm = vec![[0.0; 2]; n];
    let mut pp = vec![[[0.0; 2]; 2]; n];
    fm[0] = [v[0], u0_mean];
    fp[0] = [[0.0, 0.0], [0.0, u0_var]];
    let mut ll = 0.0;
    for i in 1..n {
        let m = mat_vec(a, &fm[i - 1]);
        let p = mat_add(&mat_mul(&mat_mul(a, &fp[i - 1]), &transpose(a)), q);
        pm[i] = m;
        pp[i] = p;
        let s = p[0][0];
        let innov = v[i] - m[0];
        ll += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innov * innov / s);
        let gain = p[1][0] / s;
        fm[i] = [v[i], m[1] + gain * innov];
        fp[i] = [[0.0, 0.0], [0.0, p[1][1] - gain * p[0][1]]];
    }
    let mut sm = fm.clone();
    let mut sp = fp.clone();
    for i in (0..n - 1).rev() {
        // J = P_f A^T P_pred^{-1}
        let j = mat_mul(&mat_mul(&fp[i], &transpose(a)), &inverse2(&pp[i + 1]));
        let dm = [sm[i + 1][0] - pm[i + 1][0], sm[i + 1][1] - pm[i + 1][1]];
        let corr = mat_vec(&j, &dm);
        sm[i] = [fm[i][0] + corr[0], fm[i][1] + corr[1]];
        let dp = [[sp[i + 1][0][0] - pp[i + 1][0][0], sp[i + 1][0][1] - pp[i + 1][0][1]], [
            sp[i + 1][1][0] - pp[i + 1][1][0],
            sp[i + 1][1][1] - pp[i + 1][1][1],
        ]];
        sp[i] = mat_add(&fp[i], &mat_mul(&mat_mul(&j, &dp), &transpose(&j)));
    }
    KalmanOutput {
        log_likelihood: ll,
        filtered_mean: fm.iter().map(|m| m[1]).collect(),
        filtered_var: fp.iter().map(|p| p[1][1]).collect(),
        smoothed_mean: sm.iter().map(|m| m[1]).collect(),
        smoothed_var: sp.iter().map(|p| p[1][1]).collect(),
    }
}

/// Linear map and noise covariance of one 1.5-scheme step for the
/// oscillator, typed in directly from its drift expansion:
/// `x + Delta b + Delta^2 / 2 M b` with `b = M x`, so the map is
/// `I + Delta M + Delta^2 / 2 M^2`.
pub fn ho_scheme_linear(d: f64, gamma: f64, sigma: f64, delta: f64) -> (Mat2, Mat2) {
    let m = oscillator_matrix(d, gamma);
    let m2 = mat_mul(&m, &m);
    let a = mat_add(&mat_add(&[[1.0, 0.0], [0.0, 1.0]], &mat_scale(&m, delta)), &mat_scale(&m2, delta * delta / 2.0));
    let s2 = sigma * sigma;
    let (d2, d3) = (delta * delta, delta * delta * delta);
    let q = [
        [s2 * d3 / 3.0, s2 * (d2 / 2.0 - gamma * d3 / 3.0)],
        [s2 * (d2 / 2.0 - gamma * d3 / 3.0), s2 * (delta - gamma * d2 + gamma * gamma * d3 / 3.0)],
    ];
    (a, q)
}

/// Coefficients `(c0, cx, cy, cxx, cyy, cxy)` of a bivariate quadratic
/// `c0 + cx x + cy y + cxx x^2 + cyy y^2 + cxy x y`, recovered from nine
/// evaluations on a grid of spacing `h`.
pub fn quadratic_coefficients<F: Fn(f64, f64) -> f64>(f: F, h: f64) -> [f64; 6] {
    let c0 = f(0.0, 0.0);
    let (fxp, fxm) = (f(h, 0.0), f(-h, 0.0));
    let (fyp, fym) = (f(0.0, h), f(0.0, -h));
    let cx = (fxp - fxm) / (2.0 * h);
    let cy = (fyp - fym) / (2.0 * h);
    let cxx = (fxp + fxm - 2.0 * c0) / (2.0 * h * h);
    let cyy = (fyp + fym - 2.0 * c0) / (2.0 * h * h);
    let cxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    [c0, cx, cy, cxx, cyy, cxy]
}

/// Sample mean and unbiased standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}
