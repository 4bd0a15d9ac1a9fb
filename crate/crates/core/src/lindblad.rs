//! Minimal Lindbladian of the disordered ring, its clean-ring analytic
//! spectra, and the effective-rate map that folds coherent hopping back into
//! a stochastic description.
//!
//! A density matrix element `rho[n][m]` lives at flat index `n * N + m`.
//! The generator is `L = L_H + L_bias + L_B + L_S` with
//!
//! - `L_H rho = -i [H, rho]`, `H = (c/2)(D + D^dag) + U(x)`;
//! - `L_B`: jumps `|x+1><x|` at rate `w+_x` and `|x><x+1|` at rate `w-_x`,
//!   with the matching anticommutator `-1/2 {Gamma, rho}`,
//!   `Gamma_x = w+_x + w-_{x-1}`;
//! - `L_S rho = -gamma rho + gamma sum_x Q_x rho Q_x` (pure dephasing);
//! - `L_bias`: diagonal, `i E_bias (N / 2 pi) sin(2 pi (n - m) / N)`.
//!
//! With this jump orientation the diagonal sector at `c = 0` is exactly `W`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::model::{derive_scales, DisorderRealization, ModelParams};
use crate::stochastic::transition_rates;

/// Dense storage bound: `N^4` complex entries.
pub const MAX_DENSE_N: usize = 96;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

pub fn build_hamiltonian(real: &DisorderRealization, c: f64) -> Mat<c64> {
    let n = real.n();
    let mut h = Mat::<c64>::zeros(n, n);
    for x in 0..n {
        let y = (x + 1) % n;
        h[(y, x)] += c64::new(0.5 * c, 0.0);
        h[(x, y)] += c64::new(0.5 * c, 0.0);
        h[(x, x)] += c64::new(real.u()[x], 0.0);
    }
    h
}

/// Dense `N^2 x N^2` generator acting on `vec(rho)` with row-major flattening.
#[derive(Clone, Debug)]
pub struct Superoperator {
    n: usize,
    entries: Mat<c64>,
}

impl Superoperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn entries(&self) -> MatRef<'_, c64> {
        self.entries.as_ref()
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm_l2()
    }

    /// `L(rho)` for an `N x N` matrix.
    pub fn apply(&self, rho: MatRef<'_, c64>) -> Mat<c64> {
        let n = self.n;
        let v = Mat::<c64>::from_fn(n * n, 1, |i, _| rho[(i / n, i % n)]);
        let out = &self.entries * &v;
        Mat::from_fn(n, n, |a, b| out[(a * n + b, 0)])
    }

    /// `|trace(L rho)| / (|rho| |L|)`.
    pub fn trace_residual(&self, rho: MatRef<'_, c64>) -> f64 {
        let out = self.apply(rho);
        let tr: c64 = (0..self.n).map(|x| out[(x, x)]).sum();
        tr.norm() / (rho.norm_l2() * self.norm())
    }

    /// Largest entry of `|R L R - conj(L)|` with `R` the swap `(n, m) -> (m, n)`.
    pub fn reflection_residual(&self) -> f64 {
        let n = self.n;
        let swap = |i: usize| (i % n) * n + i / n;
        let mut worst: f64 = 0.0;
        for j in 0..n * n {
            for i in 0..n * n {
                let d = self.entries[(swap(i), swap(j))] - self.entries[(i, j)].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Restriction to the populations `rho[x][x]`.
    pub fn diagonal_block(&self) -> Mat<c64> {
        let n = self.n;
        Mat::from_fn(n, n, |x, y| self.entries[(x * n + x, y * n + y)])
    }

    /// Real matrix similar to `L` under the unitary change of basis from
    /// `vec(rho)` to Hermitian coordinates (see [`from_real_coords`]).
    /// Valid because `L` maps Hermitian matrices to Hermitian matrices.
    pub fn to_real(&self) -> Mat<f64> {
        let n = self.n;
        let cols: Vec<[(usize, c64); 2]> = (0..n * n).map(|a| basis_column(a, n)).collect();
        Mat::from_fn(n * n, n * n, |a, b| {
            let mut acc = ZERO;
            for &(i, alpha) in &cols[a] {
                if alpha == ZERO {
                    continue;
                }
                for &(j, beta) in &cols[b] {
                    if beta == ZERO {
                        continue;
                    }
                    acc += alpha.conj() * self.entries[(i, j)] * beta;
                }
            }
            acc.re
        })
    }
}

// Column `a` of the unitary taking Hermitian coordinates to vec(rho):
// diagonal a = (x, x) -> e_a; a = (n, m), n < m -> (e_nm + e_mn)/sqrt2;
// a = (n, m), n > m -> i (e_mn - e_nm)/sqrt2.
fn basis_column(a: usize, n: usize) -> [(usize, c64); 2] {
    let (r, c) = (a / n, a % n);
    let s = FRAC_1_SQRT_2;
    if r == c {
        [(a, c64::new(1.0, 0.0)), (a, ZERO)]
    } else if r < c {
        [(a, c64::new(s, 0.0)), (c * n + r, c64::new(s, 0.0))]
    } else {
        let upper = c * n + r;
        [(upper, c64::new(0.0, s)), (a, c64::new(0.0, -s))]
    }
}

/// Maps a vector in Hermitian coordinates back to `vec(rho)`.
///
/// Coordinates: `rho[x][x]` at `(x, x)`; `sqrt2 Re rho[n][m]` at `(n, m)` and
/// `sqrt2 Im rho[n][m]` at `(m, n)` for `n < m`.
pub fn from_real_coords(v: &[c64], n: usize) -> Vec<c64> {
    let mut out = vec![ZERO; n * n];
    for (a, &va) in v.iter().enumerate() {
        for (i, coef) in basis_column(a, n) {
            out[i] += coef * va;
        }
    }
    out
}

/// Diagonal superoperator entries of the periodic bias term.
pub fn bias_diagonal(n: usize, e_bias: f64) -> Vec<c64> {
    let scale = e_bias * n as f64 / (2.0 * PI);
    (0..n * n)
        .map(|i| {
            let d = (i / n) as f64 - (i % n) as f64;
            c64::new(0.0, scale * (2.0 * PI * d / n as f64).sin())
        })
        .collect()
}

pub fn build_bias_term(n: usize, e_bias: f64) -> Result<Superoperator> {
    check_size(n)?;
    let d = bias_diagonal(n, e_bias);
    let entries = Mat::from_fn(n * n, n * n, |i, j| if i == j { d[i] } else { ZERO });
    Ok(Superoperator { n, entries })
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_DENSE_N {
        return Err(Error::TooLarge { n, max: MAX_DENSE_N });
    }
    Ok(())
}

/// Full generator with `c`, `gamma` and `E_bias = T_bath f_bias` from `params`.
pub fn build_lindbladian(real: &DisorderRealization, params: &ModelParams) -> Result<Superoperator> {
    build_lindbladian_with_bias(real, params.c, params.gamma, derive_scales(params).e_bias)
}

pub fn build_lindbladian_with_bias(real: &DisorderRealization, c: f64, gamma: f64, e_bias: f64) -> Result<Superoperator> {
    let n = real.n();
    check_size(n)?;
    let dim = n * n;
    let h = build_hamiltonian(real, c);
    let rates = transition_rates(real);
    let escape: Vec<f64> = (0..n).map(|x| rates.w_plus[x] + rates.w_minus[(x + n - 1) % n]).collect();
    let bias = bias_diagonal(n, e_bias);
    let mi = c64::new(0.0, -1.0);

    let mut l = Mat::<c64>::zeros(dim, dim);
    for a in 0..n {
        for b in 0..n {
            let row = a * n + b;
            for k in 0..n {
                if h[(a, k)] != ZERO {
                    l[(row, k * n + b)] += mi * h[(a, k)];
                }
                if h[(k, b)] != ZERO {
                    l[(row, a * n + k)] -= mi * h[(k, b)];
                }
            }
            let mut d = c64::new(-0.5 * (escape[a] + escape[b]), 0.0) + bias[row];
            if a != b {
                d -= gamma;
            }
            l[(row, row)] += d;
        }
    }
    for x in 0..n {
        let y = (x + 1) % n;
        l[(y * n + y, x * n + x)] += rates.w_plus[x];
        l[(x * n + x, y * n + y)] += rates.w_minus[x];
    }
    Ok(Superoperator { n, entries: l })
}

/// Uniform ring used by the closed-form spectra.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CleanRing {
    pub w_plus: f64,
    pub w_minus: f64,
    pub gamma: f64,
    pub c: f64,
    pub e_bias: f64,
}

impl CleanRing {
    pub fn from_params(params: &ModelParams) -> Self {
        let half = 0.5 * params.f_bias;
        Self {
            w_plus: params.nu * half.exp(),
            w_minus: params.nu * (-half).exp(),
            gamma: params.gamma,
            c: params.c,
            e_bias: derive_scales(params).e_bias,
        }
    }

    /// `gamma_0 = gamma + w+ + w-`.
    pub fn gamma0(&self) -> f64 {
        self.gamma + self.w_plus + self.w_minus
    }

    /// `gamma_q = gamma + w+ e^{-iq} + w- e^{iq}`.
    pub fn gamma_q(&self, q: f64) -> c64 {
        c64::new(self.gamma, 0.0) + self.w_plus * c64::from_polar(1.0, -q) + self.w_minus * c64::from_polar(1.0, q)
    }
}

/// Centered off-diagonal distances `r` in `(-N/2, N/2]`, excluding 0.
fn centered_offsets(n: usize) -> impl Iterator<Item = i64> {
    let n = n as i64;
    (1..n).map(move |k| if k > n / 2 { k - n } else { k })
}

/// `gamma + w+ + w- - i E r` for every `r != 0`, each `N` times.
pub fn clean_decoherence_spectrum(ring: &CleanRing, n: usize) -> Vec<c64> {
    let base = ring.gamma0();
    centered_offsets(n)
        .flat_map(|r| std::iter::repeat_n(c64::new(base, -ring.e_bias * r as f64), n))
        .collect()
}

/// Same as [`clean_decoherence_spectrum`] with the periodic bias
/// `E (N / 2 pi) sin(2 pi r / N)`; exact for the assembled `L` at `c = 0`.
pub fn clean_decoherence_spectrum_periodic(ring: &CleanRing, n: usize) -> Vec<c64> {
    let base = ring.gamma0();
    let scale = ring.e_bias * n as f64 / (2.0 * PI);
    centered_offsets(n)
        .flat_map(|r| {
            let im = -scale * (2.0 * PI * r as f64 / n as f64).sin();
            std::iter::repeat_n(c64::new(base, im), n)
        })
        .collect()
}

/// Relaxation-branch eigenvalue `gamma_0 - sqrt(gamma_q^2 - 4 c^2 sin^2(q/2))`
/// of the clean ring, ignoring `E_bias`.
///
/// The square root is resolved through the bound state of the `(x, r)`
/// lattice: with `t = c sin(q/2)` the result is `gamma_0 - t (zeta - 1/zeta)`
/// where `zeta` is the root of `zeta^2 + (gamma_q/t) zeta + 1 = 0` inside the
/// unit circle. This is the branch that tends to `gamma_0 - gamma_q` as
/// `c -> 0` and it stays continuous in `c`.
pub fn analytic_relaxation_branch(q: f64, ring: &CleanRing) -> c64 {
    let t = ring.c * (0.5 * q).sin();
    let g0 = c64::new(ring.gamma0(), 0.0);
    let gq = ring.gamma_q(q);
    if t == 0.0 {
        return g0 - gq;
    }
    let b = gq / t;
    let disc = (b * b - 4.0).sqrt();
    let (z1, z2) = ((-b + disc) * 0.5, (-b - disc) * 0.5);
    // The larger root is free of cancellation; the roots multiply to one.
    let big = if z1.norm() >= z2.norm() { z1 } else { z2 };
    let zeta = if big.norm() > 1.0 + 1e-12 {
        big.inv()
    } else {
        // Both roots on the unit circle: pick the one continuous with the
        // side the spectrum approaches from, set by the sign of sin q.
        let s = q.sin();
        if (z1.im >= 0.0) == (s >= 0.0) { z1 } else { z2 }
    };
    g0 - t * (zeta - zeta.inv())
}

/// One Bloch block of the clean generator, `r = -R..=R` at row `r + R`.
#[derive(Clone, Debug)]
pub struct QBlock {
    pub q: f64,
    pub r_cutoff: usize,
    pub entries: Mat<c64>,
}

/// `-gamma_0 + gamma_q |0><0| - i E r - c sin(q/2) [D_perp - D_perp^dag]`,
/// truncated to `|r| <= r_cutoff`. Entries are generator entries, so the
/// eigenvalues are `-lambda`.
pub fn q_block(q: f64, ring: &CleanRing, r_cutoff: usize) -> QBlock {
    let size = 2 * r_cutoff + 1;
    let t = ring.c * (0.5 * q).sin();
    let gq = ring.gamma_q(q);
    let entries = Mat::from_fn(size, size, |i, j| {
        let r = i as f64 - r_cutoff as f64;
        if i == j {
            let mut d = c64::new(-ring.gamma0(), -ring.e_bias * r);
            if i == r_cutoff {
                d += gq;
            }
            d
        } else if j == i + 1 {
            c64::new(t, 0.0)
        } else if i == j + 1 {
            c64::new(-t, 0.0)
        } else {
            ZERO
        }
    });
    QBlock { q, r_cutoff, entries }
}

/// Per-bond decay scale `gamma_x = -(gamma + w+_x + w-_x)` entering the
/// effective rates through `(lambda - gamma_x)`.
pub fn bond_decay_scales(real: &DisorderRealization, gamma: f64) -> Vec<f64> {
    let r = transition_rates(real);
    r.w_plus.iter().zip(&r.w_minus).map(|(p, m)| -(gamma + p + m)).collect()
}

/// `nu_x + (c^2/2) (lambda - gamma_x) / ((lambda - gamma_x)^2 + E_x^2)`.
pub fn effective_rates(real: &DisorderRealization, c: f64, gamma_x: &[f64], lambda: c64) -> Result<Vec<c64>> {
    if gamma_x.len() != real.n() {
        return Err(Error::invalid("gamma_x", "one decay scale per bond is required"));
    }
    real.nu_x()
        .iter()
        .zip(gamma_x)
        .zip(real.e_x())
        .enumerate()
        .map(|(bond, ((&nu, &g), &e))| {
            let d = lambda - g;
            let den = d * d + e * e;
            if den.norm() < 1e-12 {
                return Err(Error::Pole { bond });
            }
            Ok(nu + 0.5 * c * c * d / den)
        })
        .collect()
}

/// Order-of-magnitude rate dispersion induced by hopping,
/// `(c^2 / nu^3) T_bath^2 sigma_f^2`.
pub fn effective_sigma_nu(params: &ModelParams) -> f64 {
    let p = params;
    p.c * p.c / p.nu.powi(3) * p.t_bath * p.t_bath * p.sigma_f * p.sigma_f
}

/// [`effective_sigma_nu`] capped below the `2 nu` width at which box rates
/// would reach zero.
pub fn effective_sigma_nu_clipped(params: &ModelParams) -> f64 {
    effective_sigma_nu(params).min(0.95 * 2.0 * params.nu)
}

/// Stochastic stand-in for the Lindbladian: bond rates replaced by
/// `Re nu_eff(lambda = 0)`, fields and potential unchanged.
pub fn surrogate_realization(real: &DisorderRealization, c: f64, gamma: f64) -> Result<DisorderRealization> {
    let gx = bond_decay_scales(real, gamma);
    let nu = effective_rates(real, c, &gx, ZERO)?;
    real.with_nu(nu.iter().map(|v| v.re).collect())
}
