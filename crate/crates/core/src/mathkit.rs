//! Constrained projections and matrix decompositions shared by all models.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Euclidean projection onto the unit simplex (sort-and-threshold).
///
/// Sorting is stable, so ties resolve deterministically.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return invalid("simplex projection of an empty vector");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("simplex projection of a non-finite vector");
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if candidate < uk {
            tau = candidate;
        }
    }
    Ok(v.iter().map(|&x| (x - tau).max(0.0)).collect())
}

/// Polar decomposition `M = U P` through the singular value decomposition.
///
/// `U` has the shape of `M` with orthonormal rows or columns (whichever is
/// the smaller dimension) and `P` is symmetric positive semi-definite with
/// side `M.ncols()`.
pub fn polar_decompose(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m.iter().any(|x| !x.is_finite()) {
        return invalid("polar decomposition of a non-finite matrix");
    }
    let svd = m.clone().svd(true, true);
    let (w, vt) = match (svd.u, svd.v_t) {
        (Some(w), Some(vt)) => (w, vt),
        _ => return invalid("singular value decomposition failed"),
    };
    let u = &w * &vt;
    let p = vt.transpose() * DMatrix::from_diagonal(&svd.singular_values) * &vt;
    Ok((u, p))
}

/// Column-orthogonal filter bank `O D` with nonnegative column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `a x J` matrix, one filter per column.
    pub filters: DMatrix<f64>,
    pub norms: Vec<f64>,
}

impl FilterBank {
    pub fn from_filters(filters: DMatrix<f64>) -> Self {
        let norms = filters.column_iter().map(|c| c.norm()).collect();
        Self { filters, norms }
    }

    /// Largest `|<k_i, k_j>|` over distinct column pairs.
    pub fn max_cross_inner(&self) -> f64 {
        let gram = self.filters.transpose() * &self.filters;
        let mut worst: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                if i != j {
                    worst = worst.max(gram[(i, j)].abs());
                }
            }
        }
        worst
    }

    /// Largest absolute column sum.
    pub fn max_column_sum(&self) -> f64 {
        self.filters
            .column_iter()
            .map(|c| c.sum().abs())
            .fold(0.0, f64::max)
    }
}

/// Alternating minimization of `||O D - K||_F` over semi-unitary `O` and
/// nonnegative diagonal `D`, starting from `D = I`.
pub fn orthogonalize_filters(k: &DMatrix<f64>, iterations: usize) -> Result<FilterBank> {
    orthogonalize_filters_traced(k, iterations).map(|(bank, _)| bank)
}

/// Like [`orthogonalize_filters`], also returning `||O D - K||_F^2` after
/// every iteration.
pub fn orthogonalize_filters_traced(
    k: &DMatrix<f64>,
    iterations: usize,
) -> Result<(FilterBank, Vec<f64>)> {
    let (a, j) = k.shape();
    if a < j {
        return invalid(format!("need at most as many filters ({j}) as pixels ({a})"));
    }
    if iterations == 0 {
        return invalid("orthogonalization needs at least one iteration");
    }
    let mut d = DVector::from_element(j, 1.0);
    let mut o = DMatrix::zeros(a, j);
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let dk_t = DMatrix::from_diagonal(&d) * k.transpose();
        let (u, _) = polar_decompose(&dk_t)?;
        o = u.transpose();
        let overlap = o.transpose() * k;
        for i in 0..j {
            d[i] = overlap[(i, i)].max(0.0);
        }
        let approx = &o * DMatrix::from_diagonal(&d);
        trace.push((approx - k).norm_squared());
    }
    let filters = o * DMatrix::from_diagonal(&d);
    Ok((
        FilterBank {
            filters,
            norms: d.iter().copied().collect(),
        },
        trace,
    ))
}

/// Subtracts the mean of every column.
pub fn project_zero_mean(k: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = k.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Lagrange multipliers of the wavelet-constraint projection, kept by the
/// caller between projections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagrangeMultipliers {
    pub scal: f64,
    pub adm: f64,
    pub orth: Vec<f64>,
}

impl LagrangeMultipliers {
    pub fn zeros(taps: usize) -> Self {
        Self {
            scal: 0.0,
            adm: 0.0,
            orth: vec![0.0; taps / 2],
        }
    }
}

/// Result of [`project_wavelet_constraints`].
#[derive(Debug, Clone)]
pub struct WaveletProjection {
    pub h: Vec<f64>,
    pub multipliers: LagrangeMultipliers,
    /// Largest absolute constraint violation at `h`.
    pub residual: f64,
    /// Euclidean norm of the full Lagrangian gradient at the returned point.
    pub stationarity: f64,
    pub iterations: usize,
    /// `residual` is below [`WAVELET_TOLERANCE`].
    pub converged: bool,
}

pub const WAVELET_TOLERANCE: f64 = 1e-8;
pub const WAVELET_GN_ITERATIONS: usize = 10;
const GN_DAMPING: f64 = 1e-12;

/// High-pass sequence `g_k = (-1)^k h_{K-k-1}`.
pub fn highpass_from_lowpass(h: &[f64]) -> Vec<f64> {
    let k = h.len();
    (0..k)
        .map(|i| if i % 2 == 0 { h[k - 1 - i] } else { -h[k - 1 - i] })
        .collect()
}

/// Constraint values of the orthonormal-wavelet feasible set: admissibility,
/// scaling sum, and the `K/2` even-shift orthogonality conditions.
pub fn wavelet_constraints(h: &[f64]) -> Vec<f64> {
    let k = h.len();
    let mut out = Vec::with_capacity(2 + k / 2);
    out.push(highpass_from_lowpass(h).iter().sum::<f64>());
    out.push(h.iter().sum::<f64>() - std::f64::consts::SQRT_2);
    for n in 0..k / 2 {
        let shift = 2 * n;
        let auto: f64 = (0..k).map(|i| h[i] * h[(i + k - shift) % k]).sum();
        out.push(auto - if n == 0 { 1.0 } else { 0.0 });
    }
    out
}

/// Largest absolute violation of [`wavelet_constraints`].
pub fn wavelet_residual(h: &[f64]) -> f64 {
    wavelet_constraints(h)
        .iter()
        .fold(0.0, |m, c| m.max(c.abs()))
}

/// Projects `target` onto the orthonormal-wavelet feasible set by
/// Gauss-Newton on the squared Lagrangian gradient, warm-started from
/// `warm`.
///
/// Returns the best iterate seen; `converged` is false when the constraint
/// residual stays above [`WAVELET_TOLERANCE`] after the iteration budget.
pub fn project_wavelet_constraints(
    target: &[f64],
    warm: &LagrangeMultipliers,
) -> Result<WaveletProjection> {
    project_wavelet_constraints_with(target, warm, WAVELET_GN_ITERATIONS)
}

pub fn project_wavelet_constraints_with(
    target: &[f64],
    warm: &LagrangeMultipliers,
    max_iterations: usize,
) -> Result<WaveletProjection> {
    let k = target.len();
    if k == 0 || !k.is_multiple_of(2) {
        return invalid(format!("generating sequence length must be even, got {k}"));
    }
    if target.iter().any(|x| !x.is_finite()) {
        return invalid("non-finite generating sequence");
    }
    let half = k / 2;
    let n = k + 2 + half;
    let mut z = DVector::zeros(n);
    for i in 0..k {
        z[i] = target[i];
    }
    z[k] = warm.scal;
    z[k + 1] = warm.adm;
    for i in 0..half {
        z[k + 2 + i] = warm.orth.get(i).copied().unwrap_or(0.0);
    }

    let adm_grad: Vec<f64> = (0..k)
        .map(|i| if (k - 1 - i).is_multiple_of(2) { 1.0 } else { -1.0 })
        .collect();

    let lagrangian_gradient = |z: &DVector<f64>| -> DVector<f64> {
        let x = &z.as_slice()[..k];
        let mut f = DVector::zeros(n);
        for i in 0..k {
            let mut g = x[i] - target[i] + z[k] + z[k + 1] * adm_grad[i];
            for m in 0..half {
                let s = 2 * m;
                g += z[k + 2 + m] * (x[(i + k - s) % k] + x[(i + s) % k]);
            }
            f[i] = g;
        }
        let c = wavelet_constraints(x);
        f[k] = c[1];
        f[k + 1] = c[0];
        for m in 0..half {
            f[k + 2 + m] = c[2 + m];
        }
        f
    };

    let jacobian = |z: &DVector<f64>| -> DMatrix<f64> {
        let x = &z.as_slice()[..k];
        let mut jm = DMatrix::zeros(n, n);
        for i in 0..k {
            jm[(i, i)] += 1.0;
            for m in 0..half {
                let s = 2 * m;
                let lam = z[k + 2 + m];
                jm[(i, (i + k - s) % k)] += lam;
                jm[(i, (i + s) % k)] += lam;
            }
            jm[(i, k)] = 1.0;
            jm[(k, i)] = 1.0;
            jm[(i, k + 1)] = adm_grad[i];
            jm[(k + 1, i)] = adm_grad[i];
            for m in 0..half {
                let s = 2 * m;
                let g = x[(i + k - s) % k] + x[(i + s) % k];
                jm[(i, k + 2 + m)] = g;
                jm[(k + 2 + m, i)] = g;
            }
        }
        jm
    };

    let score = |z: &DVector<f64>| wavelet_residual(&z.as_slice()[..k]);
    let mut best = z.clone();
    let mut best_score = score(&z);
    let mut iterations = 0;
    for _ in 0..max_iterations {
        let f = lagrangian_gradient(&z);
        if f.amax() < 1e-15 {
            break;
        }
        let jm = jacobian(&z);
        let svd = jm.svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => break,
        };
        let utf = u.transpose() * &f;
        let mut filtered = DVector::zeros(n);
        for i in 0..n {
            let s = svd.singular_values[i];
            filtered[i] = s / (s * s + GN_DAMPING) * utf[i];
        }
        let step = vt.transpose() * filtered;
        z -= step;
        iterations += 1;
        if z.iter().any(|v| !v.is_finite()) {
            break;
        }
        let sc = score(&z);
        if sc <= best_score {
            best_score = sc;
            best = z.clone();
        }
    }
    let stationarity = lagrangian_gradient(&best).norm();
    let h = best.as_slice()[..k].to_vec();
    let multipliers = LagrangeMultipliers {
        scal: best[k],
        adm: best[k + 1],
        orth: best.as_slice()[k + 2..].to_vec(),
    };
    Ok(WaveletProjection {
        h,
        multipliers,
        residual: best_score,
        stationarity,
        iterations,
        converged: best_score < WAVELET_TOLERANCE,
    })
}

/// Linear-interpolation empirical quantile.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return invalid("quantile of an empty sample");
    }
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("quantile level {q} outside [0, 1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Daubechies generating sequences used to initialize wavelet models.
pub fn daubechies(taps: usize) -> Result<Vec<f64>> {
    match taps {
        2 => Ok(vec![std::f64::consts::FRAC_1_SQRT_2; 2]),
        4 => {
            let s3 = 3f64.sqrt();
            let d = 4.0 * std::f64::consts::SQRT_2;
            Ok(vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d])
        }
        8 => Ok(vec![
            0.230_377_813_308_896_5,
            0.714_846_570_552_915_4,
            0.630_880_767_929_858_9,
            -0.027_983_769_416_859_854,
            -0.187_034_811_719_093_08,
            0.030_841_381_835_560_764,
            0.032_883_011_666_885_2,
            -0.010_597_401_785_069_032,
        ]),
        _ => invalid(format!("no built-in Daubechies sequence with {taps} taps")),
    }
}
