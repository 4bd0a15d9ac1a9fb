//! Classical rate-matrix machinery: `W`, its associated Hermitian matrix
//! `H_W`, the determinant identity linking them, and the Thouless-type
//! characteristic function used to reason about complex eigenvalues.
//!
//! Index convention: `W[(x+1)%N, x] = w+_x` (hop x -> x+1), and
//! `W[x, (x+1)%N] = w-_x` (hop x+1 -> x). Off-diagonal entries are
//! accumulated, so on a two-site ring both bonds add to the same entry.

use faer::{c64, Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::model::{mean, DisorderRealization, DistShape};

/// Largest `N |f| / 2` for which `cosh` stays finite with margin.
const COSH_ARG_MAX: f64 = 700.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRates {
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
}

pub fn transition_rates(real: &DisorderRealization) -> TransitionRates {
    let (w_plus, w_minus) = real
        .nu_x()
        .iter()
        .zip(real.f_x())
        .map(|(&nu, &f)| (nu * (0.5 * f).exp(), nu * (-0.5 * f).exp()))
        .unzip();
    TransitionRates { w_plus, w_minus }
}

/// Dense column-stochastic generator acting on probability column vectors.
#[derive(Clone, Debug)]
pub struct RateMatrix {
    entries: Mat<f64>,
}

impl RateMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> MatRef<'_, f64> {
        self.entries.as_ref()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|j| (0..n).map(|i| self.entries[(i, j)]).sum()).collect()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.norm_l2()
    }

    pub fn to_complex(&self) -> Mat<c64> {
        let n = self.n();
        Mat::from_fn(n, n, |i, j| c64::new(self.entries[(i, j)], 0.0))
    }
}

fn ring_matrix(n: usize, diag: impl Fn(usize) -> f64, up: &[f64], down: &[f64]) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(n, n);
    for x in 0..n {
        let y = (x + 1) % n;
        m[(y, x)] += up[x];
        m[(x, y)] += down[x];
        m[(x, x)] = diag(x);
    }
    m
}

/// Exact rate matrix with exponential rates on the off-diagonal and the
/// escape rates `-(w+_x + w-_{x-1})` on the diagonal.
pub fn build_w(real: &DisorderRealization) -> RateMatrix {
    let n = real.n();
    let r = transition_rates(real);
    let entries = ring_matrix(n, |x| -(r.w_plus[x] + r.w_minus[(x + n - 1) % n]), &r.w_plus, &r.w_minus);
    RateMatrix { entries }
}

/// Leading-order diagonal in the disorder strength, shared with `H_W`:
/// `(nu_x + nu_{x-1}) + (nu/2)(f_x - f_{x-1}) + (nu/4) f^2`.
fn leading_order_diagonal(real: &DisorderRealization) -> Vec<f64> {
    let n = real.n();
    let nu = real.nu_mean();
    let f = real.f_mean();
    let (nu_x, f_x) = (real.nu_x(), real.f_x());
    (0..n)
        .map(|x| {
            let xm = (x + n - 1) % n;
            (nu_x[x] + nu_x[xm]) + 0.5 * nu * (f_x[x] - f_x[xm]) + 0.25 * nu * f * f
        })
        .collect()
}

/// `W` with the exact off-diagonal rates and the leading-order diagonal.
/// Columns do not sum to zero exactly; this is the form for which the
/// determinant identity with `H_W` holds.
pub fn build_w_leading_order(real: &DisorderRealization) -> RateMatrix {
    let d = leading_order_diagonal(real);
    let r = transition_rates(real);
    RateMatrix { entries: ring_matrix(real.n(), |x| -d[x], &r.w_plus, &r.w_minus) }
}

/// Eigenvalues of `W` for a uniform ring, `k = 0..N-1` with `q = 2 pi k / N`.
pub fn clean_spectrum_w(w_plus: f64, w_minus: f64, n: usize) -> Vec<c64> {
    (0..n)
        .map(|k| {
            let q = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            c64::new(-(w_plus + w_minus) * (1.0 - q.cos()), -(w_plus - w_minus) * q.sin())
        })
        .collect()
}

/// Symmetric matrix associated with `W`, with its ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermitianSurrogate {
    entries: Mat<f64>,
    eigenvalues: Vec<f64>,
}

impl HermitianSurrogate {
    pub fn entries(&self) -> MatRef<'_, f64> {
        self.entries.as_ref()
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm_l2()
    }
}

pub fn hw_matrix(real: &DisorderRealization) -> Mat<f64> {
    let d = leading_order_diagonal(real);
    let neg: Vec<f64> = real.nu_x().iter().map(|v| -v).collect();
    ring_matrix(real.n(), |x| d[x], &neg, &neg)
}

pub fn build_hw(real: &DisorderRealization) -> Result<HermitianSurrogate> {
    let entries = hw_matrix(real);
    let eigenvalues = entries
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::ConvergenceFailure { dim: real.n() })?;
    Ok(HermitianSurrogate { entries, eigenvalues })
}

/// Relative residual of `det(l + W) = det(l - H_W) - 2[cosh(N f/2) - 1] prod(-nu_x)`
/// with `W` in leading-order form.
pub fn determinant_identity_residual(real: &DisorderRealization, lambda: c64) -> Result<f64> {
    let n = real.n();
    let arg = n as f64 * real.f_mean().abs() / 2.0;
    if arg > COSH_ARG_MAX {
        return Err(Error::Overflow(arg));
    }
    let w = build_w_leading_order(real);
    let h = hw_matrix(real);
    let lhs = Mat::<c64>::from_fn(n, n, |i, j| {
        let d = if i == j { lambda } else { c64::new(0.0, 0.0) };
        d + w.entries[(i, j)]
    })
    .determinant();
    let det_h = Mat::<c64>::from_fn(n, n, |i, j| {
        let d = if i == j { lambda } else { c64::new(0.0, 0.0) };
        d - h[(i, j)]
    })
    .determinant();
    let prod: f64 = real.nu_x().iter().map(|v| -v).product();
    let rhs = det_h - c64::new(2.0 * (arg.cosh() - 1.0) * prod, 0.0);
    Ok((lhs - rhs).norm() / (lhs.norm() + rhs.norm() + f64::EPSILON))
}

pub fn nu_geometric_mean(nu_x: &[f64]) -> f64 {
    mean(&nu_x.iter().map(|v| v.ln()).collect::<Vec<_>>()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FValue {
    Finite(f64),
    /// `lambda` coincides with an eigenvalue of `H_W`; `F` diverges to minus infinity.
    Pole,
}

impl FValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            FValue::Finite(v) => Some(v),
            FValue::Pole => None,
        }
    }
}

/// `F(l) = (1/N) sum_k ln|(l - eps_k) / nu_avg|`.
pub fn f_function(epsilons: &[f64], nu_avg: f64, lambda: f64) -> FValue {
    f_sum(epsilons.iter().copied(), epsilons.len(), nu_avg, lambda)
}

/// `F` with the lowest eigenvalue (the zero-mode partner) left out of the
/// sum, so that `F(0)` is finite on a clean ring. The normalization stays 1/N.
pub fn f_function_reduced(epsilons: &[f64], nu_avg: f64, lambda: f64) -> FValue {
    let Some(lowest) = epsilons.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)) else {
        return FValue::Finite(0.0);
    };
    let rest = epsilons.iter().enumerate().filter(|(k, _)| *k != lowest.0).map(|(_, &e)| e);
    f_sum(rest, epsilons.len(), nu_avg, lambda)
}

fn f_sum(eps: impl Iterator<Item = f64>, n: usize, nu_avg: f64, lambda: f64) -> FValue {
    let mut acc = 0.0;
    for e in eps {
        let d = (lambda - e).abs();
        if d < 1e-300 {
            return FValue::Pole;
        }
        acc += (d / nu_avg).ln();
    }
    FValue::Finite(acc / n as f64)
}

/// Thouless envelope `a0 f_c - ac ((f - f_c)/f_c) sqrt(l/nu) + (sigma_nu^2 / 8 nu^3) l`.
/// `alpha0` and `alphac` are not fixed by theory and must be supplied.
pub fn kappa_envelope(lambda: f64, f: f64, f_c: f64, sigma_nu: f64, nu: f64, alpha0: f64, alphac: f64) -> f64 {
    alpha0 * f_c - alphac * ((f - f_c) / f_c) * (lambda / nu).sqrt() + sigma_nu * sigma_nu / (8.0 * nu.powi(3)) * lambda
}

/// Delocalization threshold `Var(f_x) / 4` for the given width convention.
pub fn fc_analytic(sigma_f: f64, shape: DistShape) -> f64 {
    let var = match shape {
        DistShape::Box => sigma_f * sigma_f / 12.0,
        DistShape::Gaussian => sigma_f * sigma_f,
    };
    var / 4.0
}

/// Gaussian closed form of the anomalous-spreading exponent.
pub fn mu_gaussian(f: f64, sigma_f: f64) -> f64 {
    2.0 * f / (sigma_f * sigma_f)
}

/// Positive root of `<exp(-mu f_x)> = 1` over equally weighted samples.
pub fn mu_exponent(f_samples: &[f64]) -> Result<f64> {
    let w = vec![1.0 / f_samples.len() as f64; f_samples.len()];
    mu_exponent_weighted(f_samples, &w)
}

/// Positive root of `sum_i w_i exp(-mu f_i) = 1`; weights must sum to one.
pub fn mu_exponent_weighted(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::invalid("f_samples", "need equally many values and weights"));
    }
    let m: f64 = values.iter().zip(weights).map(|(f, w)| w * f).sum();
    if !(m > 0.0) {
        return Err(Error::NoRoot(format!("mean field {m:e} is not positive")));
    }
    if values.iter().all(|&f| f >= 0.0) {
        return Err(Error::NoRoot("no negative field values, <exp(-mu f)> < 1 for all mu > 0".into()));
    }
    // expm1 keeps g accurate near mu = 0 where the sum nearly cancels.
    let g = |mu: f64| values.iter().zip(weights).map(|(f, w)| w * (-mu * f).exp_m1()).sum::<f64>();
    let dg = |mu: f64| -values.iter().zip(weights).map(|(f, w)| w * f * (-mu * f).exp()).sum::<f64>();

    let s: f64 = values.iter().zip(weights).map(|(f, w)| w * f * f).sum();
    let mut lo = m / s;
    while g(lo) >= 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::NoRoot("could not bracket the root from below".into()));
        }
    }
    let mut hi = 2.0 * lo;
    while g(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoRoot("could not bracket the root from above".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..3 {
        let step = g(mu) / dg(mu);
        if !step.is_finite() {
            break;
        }
        mu -= step;
    }
    let residual = g(mu).abs();
    if residual >= 1e-12 {
        return Err(Error::NoRoot(format!("root residual {residual:e}")));
    }
    Ok(mu)
}
