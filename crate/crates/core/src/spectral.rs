//! Eigendecomposition wrappers and per-mode diagnostics.
//!
//! Spectra are reported as decay rates `lambda = -eig`, so physical spectra
//! lie in `Re lambda >= 0`, sorted by `(Re, Im)`.

use std::f64::consts::PI;
use std::io::Write;

use faer::{c64, Mat, MatRef};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lindblad::{from_real_coords, Superoperator};
use crate::stochastic::RateMatrix;

/// Accepted eigenpair residual relative to the Frobenius norm of the matrix.
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Eigendecomposition {
    pub values: Vec<c64>,
    /// Right eigenvectors, one per column, in the order of `values`.
    pub vectors: Mat<c64>,
}

fn by_re_im(a: &c64, b: &c64) -> std::cmp::Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn sorted(values: Vec<c64>, vectors: MatRef<'_, c64>) -> Eigendecomposition {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| by_re_im(&values[a], &values[b]));
    Eigendecomposition {
        values: idx.iter().map(|&i| values[i]).collect(),
        vectors: Mat::from_fn(vectors.nrows(), idx.len(), |r, c| vectors[(r, idx[c])]),
    }
}

/// Eigenpairs of a general complex matrix, checked against the residual bound.
pub fn eigendecompose(a: MatRef<'_, c64>) -> Result<Eigendecomposition> {
    let dim = a.nrows();
    check_finite(a.nrows(), |i, j| a[(i, j)].re.is_finite() && a[(i, j)].im.is_finite())?;
    let evd = a.eigen().map_err(|_| Error::ConvergenceFailure { dim })?;
    let values: Vec<c64> = (0..dim).map(|i| evd.S()[i]).collect();
    let out = sorted(values, evd.U());
    let av = a * &out.vectors;
    check_residual(&out, a.norm_l2(), |i, j| av[(i, j)])?;
    Ok(out)
}

/// Eigenpairs of a real matrix. Complex eigenvalues come in exact
/// conjugate pairs and real eigenvalues have zero imaginary part.
pub fn eigendecompose_real(a: MatRef<'_, f64>) -> Result<Eigendecomposition> {
    let dim = a.nrows();
    check_finite(dim, |i, j| a[(i, j)].is_finite())?;
    let evd = a.eigen().map_err(|_| Error::ConvergenceFailure { dim })?;
    let values: Vec<c64> = (0..dim).map(|i| evd.S()[i]).collect();
    let out = sorted(values, evd.U());
    let vr = Mat::<f64>::from_fn(dim, dim, |i, j| out.vectors[(i, j)].re);
    let vi = Mat::<f64>::from_fn(dim, dim, |i, j| out.vectors[(i, j)].im);
    let (avr, avi) = (a * &vr, a * &vi);
    check_residual(&out, a.norm_l2(), |i, j| c64::new(avr[(i, j)], avi[(i, j)]))?;
    Ok(out)
}

pub fn eigenvalues(a: MatRef<'_, c64>) -> Result<Vec<c64>> {
    let mut v = a.eigenvalues().map_err(|_| Error::ConvergenceFailure { dim: a.nrows() })?;
    v.sort_by(by_re_im);
    Ok(v)
}

pub fn eigenvalues_real(a: MatRef<'_, f64>) -> Result<Vec<c64>> {
    let mut v = a.eigenvalues().map_err(|_| Error::ConvergenceFailure { dim: a.nrows() })?;
    v.sort_by(by_re_im);
    Ok(v)
}

fn check_finite(dim: usize, ok: impl Fn(usize, usize) -> bool) -> Result<()> {
    for j in 0..dim {
        for i in 0..dim {
            if !ok(i, j) {
                return Err(Error::invalid("matrix", format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn check_residual(e: &Eigendecomposition, norm: f64, av: impl Fn(usize, usize) -> c64) -> Result<()> {
    let worst = max_residual_with(e, av);
    if worst > RESIDUAL_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::ConvergenceFailure { dim: e.values.len() });
    }
    Ok(())
}

fn max_residual_with(e: &Eigendecomposition, av: impl Fn(usize, usize) -> c64) -> f64 {
    let dim = e.vectors.nrows();
    let mut worst: f64 = 0.0;
    for (j, &l) in e.values.iter().enumerate() {
        let mut r2 = 0.0;
        let mut v2 = 0.0;
        for i in 0..dim {
            let v = e.vectors[(i, j)];
            r2 += (av(i, j) - l * v).norm_sqr();
            v2 += v.norm_sqr();
        }
        worst = worst.max((r2 / v2).sqrt());
    }
    worst
}

/// Largest `|A v - l v| / |v|` over the decomposition.
pub fn max_residual(a: MatRef<'_, c64>, e: &Eigendecomposition) -> f64 {
    let av = a * &e.vectors;
    max_residual_with(e, |i, j| av[(i, j)])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeMetrics {
    /// Diagonal norm: weight `sum_x |rho_xx|^2` of the populations in the
    /// unit-normalized mode (the partial sum of the normalization over the
    /// diagonal).
    pub q: f64,
    /// `trace(rho)` of the unit-normalized mode.
    pub trace: c64,
    /// `sum |rho|^4` of the unit-normalized mode.
    pub ipr: f64,
}

/// Metrics of a mode given as `vec(rho)` of length `N^2`.
pub fn mode_metrics(mode: &[c64], n: usize) -> Result<ModeMetrics> {
    if mode.len() != n * n {
        return Err(Error::invalid("mode_vector", format!("length {} is not N^2 = {}", mode.len(), n * n)));
    }
    let norm2: f64 = mode.iter().map(|v| v.norm_sqr()).sum();
    if !(norm2 > 0.0) {
        return Err(Error::ZeroVector);
    }
    let inv = norm2.sqrt().recip();
    let diag = (0..n).map(|x| mode[x * n + x] * inv);
    let (mut q, mut trace) = (0.0, c64::new(0.0, 0.0));
    for d in diag {
        q += d.norm_sqr();
        trace += d;
    }
    let ipr = mode.iter().map(|v| (v.norm_sqr() * inv * inv).powi(2)).sum();
    Ok(ModeMetrics { q, trace, ipr })
}

/// Metrics of a rate-matrix mode, read as a diagonal density matrix.
pub fn population_metrics(p: &[c64]) -> Result<ModeMetrics> {
    let norm2: f64 = p.iter().map(|v| v.norm_sqr()).sum();
    if !(norm2 > 0.0) {
        return Err(Error::ZeroVector);
    }
    let inv = norm2.sqrt().recip();
    Ok(ModeMetrics {
        q: 1.0,
        trace: p.iter().sum::<c64>() * inv,
        ipr: p.iter().map(|v| (v.norm_sqr() * inv * inv).powi(2)).sum(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    Relaxation,
    Decoherence,
    Unresolved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountScope {
    All,
    RelaxationOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeRecord {
    pub metrics: ModeMetrics,
    pub branch: Branch,
    pub pair_id: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    /// Ring size.
    pub n: usize,
    /// Decay rates `-eig`, sorted by `(Re, Im)`.
    pub eigenvalues: Vec<c64>,
    pub modes: Vec<ModeRecord>,
    /// Populations `rho_xx` (or `p_x`) of each mode, unnormalized.
    pub populations: Vec<Vec<c64>>,
    /// Indices of the relaxation set: the `N` modes of largest `Q`, kept
    /// closed under conjugation.
    pub relaxation: Vec<usize>,
}

/// Default imaginary-part tolerance, `1e-8 max |lambda|`.
pub fn default_tol_im(eigs: &[c64]) -> f64 {
    1e-8 * eigs.iter().map(|e| e.norm()).fold(0.0, f64::max)
}

impl SpectrumReport {
    pub fn tol_im(&self) -> f64 {
        default_tol_im(&self.eigenvalues)
    }

    pub fn relaxation_eigenvalues(&self) -> Vec<c64> {
        let mut v: Vec<c64> = self.relaxation.iter().map(|&i| self.eigenvalues[i]).collect();
        v.sort_by(by_re_im);
        v
    }

    pub fn count_complex(&self, scope: CountScope, tol_im: f64) -> Result<usize> {
        match scope {
            CountScope::All => count_complex(&self.eigenvalues, tol_im),
            CountScope::RelaxationOnly => count_complex(&self.relaxation_eigenvalues(), tol_im),
        }
    }

    /// Eigenvalues below `1e-9 max|lambda|` in modulus.
    pub fn stationary_count(&self) -> usize {
        let tol = 1e-9 * self.eigenvalues.iter().map(|e| e.norm()).fold(1.0, f64::max);
        self.eigenvalues.iter().filter(|e| e.norm() < tol).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            re_lambda: f64,
            im_lambda: f64,
            #[serde(rename = "Q")]
            q: f64,
            #[serde(rename = "IPR")]
            ipr: f64,
            branch: Branch,
            pair_id: Option<usize>,
        }
        let mut w = csv::Writer::from_writer(out);
        for (l, m) in self.eigenvalues.iter().zip(&self.modes) {
            w.serialize(Row {
                re_lambda: l.re,
                im_lambda: l.im,
                q: m.metrics.q,
                ipr: m.metrics.ipr,
                branch: m.branch,
                pair_id: m.pair_id,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of eigenvalues with `|Im| > tol_im`; must be even.
pub fn count_complex(eigs: &[c64], tol_im: f64) -> Result<usize> {
    let k = eigs.iter().filter(|e| e.im.abs() > tol_im).count();
    if k % 2 == 1 {
        return Err(Error::PairingAnomaly { unpaired: 1, tol: tol_im });
    }
    Ok(k)
}

/// Pair labels: each eigenvalue with `Im > tol_im` is matched to the unused
/// eigenvalue closest to its conjugate; both get the same id.
pub fn pair_ids(eigs: &[c64], tol_im: f64) -> Result<Vec<Option<usize>>> {
    let scale = eigs.iter().map(|e| e.norm()).fold(1.0, f64::max);
    let pair_tol = 1e-9 * scale;
    let mut ids = vec![None; eigs.len()];
    let mut next = 0;
    let mut unpaired = 0;
    for i in 0..eigs.len() {
        if eigs[i].im <= tol_im {
            continue;
        }
        let target = eigs[i].conj();
        let partner = (0..eigs.len())
            .filter(|&j| ids[j].is_none() && eigs[j].im < -tol_im)
            .min_by(|&a, &b| (eigs[a] - target).norm().total_cmp(&(eigs[b] - target).norm()));
        match partner {
            Some(j) if (eigs[j] - target).norm() <= pair_tol => {
                ids[i] = Some(next);
                ids[j] = Some(next);
                next += 1;
            }
            _ => unpaired += 1,
        }
    }
    unpaired += eigs.iter().zip(&ids).filter(|(e, id)| e.im < -tol_im && id.is_none()).count();
    if unpaired > 0 {
        return Err(Error::PairingAnomaly { unpaired, tol: tol_im });
    }
    Ok(ids)
}

/// Branch labels from diagonal norms: the `n` largest are relaxation
/// modes. When the drop from rank `n` to rank `n + 1` is under 10% of the
/// rank-`n` value, every mode within that margin of the boundary is
/// `Unresolved`.
pub fn classify_branch(q: &[f64], n: usize) -> Vec<Branch> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]));
    let mut labels = vec![Branch::Decoherence; q.len()];
    for &i in order.iter().take(n) {
        labels[i] = Branch::Relaxation;
    }
    if q.len() > n && n > 0 {
        let (qn, qn1) = (q[order[n - 1]], q[order[n]]);
        let margin = 0.1 * qn;
        if qn - qn1 < margin {
            for (i, &qi) in q.iter().enumerate() {
                if qi >= qn1 - margin && qi <= qn + margin {
                    labels[i] = Branch::Unresolved;
                }
            }
        }
    }
    labels
}

/// Top-`n` modes by `Q`, taking conjugate partners together and skipping
/// a pair that would overflow the set.
fn relaxation_set(q: &[f64], pairs: &[Option<usize>], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let mut taken = vec![false; q.len()];
    let mut out = Vec::with_capacity(n);
    for &i in &order {
        if out.len() == n {
            break;
        }
        if taken[i] {
            continue;
        }
        match pairs[i] {
            None => {
                taken[i] = true;
                out.push(i);
            }
            Some(id) => {
                if out.len() + 2 > n {
                    continue;
                }
                for (j, p) in pairs.iter().enumerate() {
                    if *p == Some(id) {
                        taken[j] = true;
                        out.push(j);
                    }
                }
            }
        }
    }
    out
}

fn report_from(n: usize, decomposition: Eigendecomposition, metrics: Vec<ModeMetrics>, populations: Vec<Vec<c64>>, lindblad: bool) -> Result<SpectrumReport> {
    let eigenvalues: Vec<c64> = decomposition.values.iter().map(|e| -e).collect();
    // Sort by lambda rather than by eig.
    let mut idx: Vec<usize> = (0..eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| by_re_im(&eigenvalues[a], &eigenvalues[b]));
    let eigenvalues: Vec<c64> = idx.iter().map(|&i| eigenvalues[i]).collect();
    let metrics: Vec<ModeMetrics> = idx.iter().map(|&i| metrics[i]).collect();
    let populations: Vec<Vec<c64>> = idx.iter().map(|&i| populations[i].clone()).collect();

    let ids = pair_ids(&eigenvalues, default_tol_im(&eigenvalues))?;
    let q: Vec<f64> = metrics.iter().map(|m| m.q).collect();
    let (branches, relaxation) = if lindblad {
        (classify_branch(&q, n), relaxation_set(&q, &ids, n))
    } else {
        (vec![Branch::Relaxation; q.len()], (0..q.len()).collect())
    };
    let modes = metrics
        .into_iter()
        .zip(branches)
        .zip(&ids)
        .map(|((metrics, branch), &pair_id)| ModeRecord { metrics, branch, pair_id })
        .collect();
    Ok(SpectrumReport { n, eigenvalues, modes, populations, relaxation })
}

pub fn analyze_rate_matrix(w: &RateMatrix) -> Result<SpectrumReport> {
    let n = w.n();
    let e = eigendecompose_real(w.entries())?;
    let populations: Vec<Vec<c64>> = (0..n).map(|j| (0..n).map(|i| e.vectors[(i, j)]).collect()).collect();
    let metrics = populations.iter().map(|p| population_metrics(p)).collect::<Result<Vec<_>>>()?;
    report_from(n, e, metrics, populations, false)
}

/// Full diagonalization through the real Hermitian-coordinate form of `L`.
pub fn analyze_superoperator(l: &Superoperator) -> Result<SpectrumReport> {
    let n = l.n();
    let e = eigendecompose_real(l.to_real().as_ref())?;
    let dim = n * n;
    let mut metrics = Vec::with_capacity(dim);
    let mut populations = Vec::with_capacity(dim);
    for j in 0..dim {
        let v: Vec<c64> = (0..dim).map(|i| e.vectors[(i, j)]).collect();
        let rho = from_real_coords(&v, n);
        metrics.push(mode_metrics(&rho, n)?);
        populations.push((0..n).map(|x| rho[x * n + x]).collect());
    }
    report_from(n, e, metrics, populations, true)
}

/// Decay rates of `W`, sorted.
pub fn rate_matrix_spectrum(w: &RateMatrix) -> Result<Vec<c64>> {
    let mut v: Vec<c64> = eigenvalues_real(w.entries())?.iter().map(|e| -e).collect();
    v.sort_by(by_re_im);
    Ok(v)
}

/// Decay rates of `L`, sorted, without eigenvectors.
pub fn superoperator_spectrum(l: &Superoperator) -> Result<Vec<c64>> {
    let mut v: Vec<c64> = eigenvalues_real(l.to_real().as_ref())?.iter().map(|e| -e).collect();
    v.sort_by(by_re_im);
    Ok(v)
}

/// Wavenumber in `(-pi, pi]` of the largest discrete Fourier component of
/// `p_x`, with the convention `p_x ~ exp(i q x)`.
pub fn dominant_wavenumber(p: &[c64]) -> f64 {
    let n = p.len();
    let mut best = (0, -1.0);
    for k in 0..n {
        let mut acc = c64::new(0.0, 0.0);
        for (x, v) in p.iter().enumerate() {
            acc += v * c64::from_polar(1.0, -2.0 * PI * (k * x % n) as f64 / n as f64);
        }
        if acc.norm_sqr() > best.1 {
            best = (k, acc.norm_sqr());
        }
    }
    let k = best.0 as i64;
    let k = if k > n as i64 / 2 { k - n as i64 } else { k };
    2.0 * PI * k as f64 / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transport {
    /// Drift velocity, positive for forward bias.
    pub v: f64,
    /// Diffusion coefficient.
    pub d: f64,
}

/// Fits `lambda_q = i v q + D q^2` to clean-ring relaxation modes given as
/// `(q, lambda)`. Only `0 < |q| <= 8 pi / N` enters; cubic and quartic
/// corrections are fitted alongside and discarded.
pub fn transport_fit(modes: &[(f64, c64)], n: usize) -> Result<Transport> {
    let qmax = 8.0 * PI / n as f64 + 1e-12;
    let pts: Vec<(f64, c64)> = modes.iter().copied().filter(|(q, _)| *q != 0.0 && q.abs() <= qmax).collect();
    if pts.len() < 5 {
        return Err(Error::invalid("modes", format!("need at least 5 small-q modes, got {}", pts.len())));
    }
    let odd: Vec<(f64, f64)> = pts.iter().map(|(q, l)| (*q, l.im)).collect();
    let even: Vec<(f64, f64)> = pts.iter().map(|(q, l)| (*q, l.re)).collect();
    let (v, _, res_v) = fit_two(&odd, |q| q, |q| q.powi(3));
    let (d, _, res_d) = fit_two(&even, |q| q * q, |q| q.powi(4));
    let res = res_v.max(res_d);
    if res > 0.05 {
        return Err(Error::NonParabolic(res));
    }
    Ok(Transport { v, d })
}

// Least squares y ~ a f(q) + b g(q); returns (a, b, relative residual).
fn fit_two(pts: &[(f64, f64)], f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> (f64, f64, f64) {
    let (mut ff, mut fg, mut gg, mut fy, mut gy, mut yy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(q, y) in pts {
        let (a, b) = (f(q), g(q));
        ff += a * a;
        fg += a * b;
        gg += b * b;
        fy += a * y;
        gy += b * y;
        yy += y * y;
    }
    let det = ff * gg - fg * fg;
    if det.abs() < 1e-300 {
        return (0.0, 0.0, 0.0);
    }
    let a = (fy * gg - gy * fg) / det;
    let b = (ff * gy - fg * fy) / det;
    let rss: f64 = pts.iter().map(|&(q, y)| (y - a * f(q) - b * g(q)).powi(2)).sum();
    let rel = if yy > 0.0 { (rss / yy).sqrt() } else { 0.0 };
    (a, b, rel)
}

/// Follows eigenvalues through a sequence of spectra by greedy nearest
/// matching between consecutive steps. Returns one trajectory per
/// eigenvalue of the first spectrum.
pub fn track_modes(spectra: &[Vec<c64>]) -> Vec<Vec<c64>> {
    let Some(first) = spectra.first() else {
        return Vec::new();
    };
    let mut tracks: Vec<Vec<c64>> = first.iter().map(|&e| vec![e]).collect();
    for next in &spectra[1..] {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (t, track) in tracks.iter().enumerate() {
            let last = *track.last().unwrap();
            for (j, e) in next.iter().enumerate() {
                candidates.push(((e - last).norm(), t, j));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut track_done = vec![false; tracks.len()];
        let mut used = vec![false; next.len()];
        let mut assigned = vec![None; tracks.len()];
        for (_, t, j) in candidates {
            if !track_done[t] && !used[j] {
                track_done[t] = true;
                used[j] = true;
                assigned[t] = Some(j);
            }
        }
        for (t, a) in assigned.into_iter().enumerate() {
            if let Some(j) = a {
                tracks[t].push(next[j]);
            }
        }
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{analytic_relaxation_branch, build_lindbladian_with_bias, CleanRing};
    use crate::model::{rescale_field, sample_realization, DisorderRealization, ModelParams};
    use crate::stochastic::{build_w, clean_spectrum_w};
    use proptest::prelude::*;

    fn realization(n: usize, sigma_f: f64, sigma_nu: f64, f: f64, seed: u64) -> DisorderRealization {
        let p = ModelParams { n, sigma_f, sigma_nu, f_bias: f, seed, ..Default::default() };
        sample_realization(&p).unwrap()
    }

    fn near(a: c64, b: c64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn eigendecompose_examples() {
        let id = Mat::<c64>::identity(4, 4);
        let e = eigendecompose(id.as_ref()).unwrap();
        assert!(e.values.iter().all(|v| near(*v, c64::new(1.0, 0.0), 1e-14)));

        let w = build_w(&DisorderRealization::clean(3, 1.0, 0.0).unwrap());
        let e = eigendecompose(w.to_complex().as_ref()).unwrap();
        let want = [-3.0, -3.0, 0.0];
        for (v, w) in e.values.iter().zip(want) {
            assert!(near(*v, c64::new(w, 0.0), 1e-12));
        }

        let rot = Mat::<c64>::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => c64::new(1.0, 0.0),
            (1, 0) => c64::new(-1.0, 0.0),
            _ => c64::new(0.0, 0.0),
        });
        let e = eigendecompose(rot.as_ref()).unwrap();
        assert!(near(e.values[0], c64::new(0.0, -1.0), 1e-14));
        assert!(near(e.values[1], c64::new(0.0, 1.0), 1e-14));
        assert!(max_residual(rot.as_ref(), &e) < 1e-14);
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut m = Mat::<f64>::identity(3, 3);
        m[(1, 2)] = f64::NAN;
        assert!(matches!(eigendecompose_real(m.as_ref()), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn real_solver_gives_exact_pairs() {
        let w = build_w(&realization(16, 0.05, 0.1, 0.1, 2));
        let e = eigendecompose_real(w.entries()).unwrap();
        for v in &e.values {
            if v.im != 0.0 {
                assert!(e.values.contains(&v.conj()));
            }
        }
    }

    #[test]
    fn mode_metric_examples() {
        let n = 4;
        let mut uniform = vec![c64::new(0.0, 0.0); n * n];
        for x in 0..n {
            uniform[x * n + x] = c64::new(0.5, 0.0);
        }
        let m = mode_metrics(&uniform, n).unwrap();
        assert!((m.trace.norm() - 2.0).abs() < 1e-15);
        assert!((m.q - 1.0).abs() < 1e-15);
        assert!((m.ipr - 0.25).abs() < 1e-15);

        let mut coherence = vec![c64::new(0.0, 0.0); n * n];
        coherence[1] = c64::new(0.0, 3.0);
        let m = mode_metrics(&coherence, n).unwrap();
        assert_eq!((m.q, m.trace.norm(), m.ipr), (0.0, 0.0, 1.0));

        let mut single = vec![c64::new(0.0, 0.0); n * n];
        single[5] = c64::new(-2.0, 0.0);
        let m = mode_metrics(&single, n).unwrap();
        assert!((m.trace.norm() - 1.0).abs() < 1e-15 && (m.q - 1.0).abs() < 1e-15 && (m.ipr - 1.0).abs() < 1e-15);

        assert!(matches!(mode_metrics(&vec![c64::new(0.0, 0.0); 16], 4), Err(Error::ZeroVector)));
        assert!(mode_metrics(&[c64::new(1.0, 0.0); 5], 2).is_err());
    }

    #[test]
    fn classify_by_gap() {
        let q = [0.9, 0.1, 0.8, 0.05, 0.95];
        let b = classify_branch(&q, 3);
        assert_eq!(b, [Branch::Relaxation, Branch::Decoherence, Branch::Relaxation, Branch::Decoherence, Branch::Relaxation]);
        let q = [0.9, 0.76, 0.8, 0.05];
        let b = classify_branch(&q, 2);
        assert_eq!(b, [Branch::Relaxation, Branch::Unresolved, Branch::Unresolved, Branch::Decoherence]);
    }

    #[test]
    fn count_examples() {
        let w = build_w(&realization(16, 0.1, 0.1, 0.0, 4));
        let s = rate_matrix_spectrum(&w).unwrap();
        assert_eq!(count_complex(&s, default_tol_im(&s)).unwrap(), 0);
        for n in [7, 8] {
            let w = build_w(&DisorderRealization::clean(n, 1.0, 0.1).unwrap());
            let s = rate_matrix_spectrum(&w).unwrap();
            let want = if n % 2 == 1 { n - 1 } else { n - 2 };
            assert_eq!(count_complex(&s, default_tol_im(&s)).unwrap(), want);
        }
        let odd = [c64::new(1.0, 1.0), c64::new(1.0, 0.0)];
        assert!(matches!(count_complex(&odd, 1e-8), Err(Error::PairingAnomaly { .. })));
        assert!(pair_ids(&odd, 1e-8).is_err());
    }

    #[test]
    fn rate_matrix_report() {
        let w = build_w(&DisorderRealization::clean(8, 1.0, 0.0).unwrap());
        let r = analyze_rate_matrix(&w).unwrap();
        assert_eq!(r.stationary_count(), 1);
        assert!(r.eigenvalues[0].norm() < 1e-12);
        assert!(r.modes.iter().all(|m| m.branch == Branch::Relaxation));
        let m0 = r.modes[0].metrics;
        assert!((m0.ipr - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn c0_lindblad_relaxation_set_is_w_spectrum() {
        let r = realization(6, 0.1, 0.2, 0.02, 7);
        let l = build_lindbladian_with_bias(&r, 0.0, 5.0, 0.0).unwrap();
        let rep = analyze_superoperator(&l).unwrap();
        let rel = rep.relaxation_eigenvalues();
        let w = rate_matrix_spectrum(&build_w(&r)).unwrap();
        for (a, b) in rel.iter().zip(&w) {
            assert!(near(*a, *b, 1e-9), "{a} vs {b}");
        }
        for (i, m) in rep.modes.iter().enumerate() {
            if m.branch == Branch::Decoherence {
                assert!(rep.eigenvalues[i].re >= 5.0 + 2.0 * 0.9 - 1e-9);
            }
        }
        assert_eq!(rep.stationary_count(), 1);
    }

    #[test]
    fn stationary_mode_dominates_diagonal_norm() {
        let r = realization(6, 0.02, 0.05, 0.003, 1);
        let l = build_lindbladian_with_bias(&r, 0.3, 1.0, 0.6).unwrap();
        let rep = analyze_superoperator(&l).unwrap();
        assert_eq!(rep.stationary_count(), 1);
        let i0 = (0..rep.eigenvalues.len()).min_by(|&a, &b| rep.eigenvalues[a].norm().total_cmp(&rep.eigenvalues[b].norm())).unwrap();
        let qmax = rep.modes.iter().map(|m| m.metrics.q).fold(0.0, f64::max);
        assert!(rep.modes[i0].metrics.q >= 0.9 * qmax);
    }

    #[test]
    fn strong_hopping_mixes_branches() {
        let r = DisorderRealization::clean(8, 1.0, 0.003).unwrap();
        let l = build_lindbladian_with_bias(&r, 2.0, 0.0, 0.6).unwrap();
        let rep = analyze_superoperator(&l).unwrap();
        assert!(rep.modes.iter().any(|m| m.branch == Branch::Unresolved));
    }

    #[test]
    fn csv_columns() {
        let w = build_w(&DisorderRealization::clean(4, 1.0, 0.1).unwrap());
        let rep = analyze_rate_matrix(&w).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "re_lambda,im_lambda,Q,IPR,branch,pair_id");
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn dominant_wavenumber_of_plane_waves() {
        for k in 0..8i64 {
            let q = 2.0 * PI * k as f64 / 8.0;
            let p: Vec<c64> = (0..8).map(|x| c64::from_polar(1.0, q * x as f64)).collect();
            let want = if k > 4 { q - 2.0 * PI } else { q };
            assert!((dominant_wavenumber(&p) - want).abs() < 1e-12);
        }
    }

    fn clean_w_modes(n: usize, f: f64) -> Vec<(f64, c64)> {
        let rep = analyze_rate_matrix(&build_w(&DisorderRealization::clean(n, 1.0, f).unwrap())).unwrap();
        rep.eigenvalues.iter().zip(&rep.populations).map(|(l, p)| (dominant_wavenumber(p), *l)).collect()
    }

    #[test]
    fn transport_clean_unbiased() {
        // Degenerate +-q pairs mix into standing waves; both members share
        // lambda, so the fitted D is unaffected and v stays zero.
        let t = transport_fit(&clean_w_modes(32, 0.0), 32).unwrap();
        assert!(t.v.abs() < 1e-8);
        assert!((t.d - 1.0).abs() < 0.01);
    }

    #[test]
    fn transport_clean_biased() {
        let t = transport_fit(&clean_w_modes(32, 0.1), 32).unwrap();
        let (wp, wm) = (0.05f64.exp(), (-0.05f64).exp());
        assert!((t.v - (wp - wm)).abs() < 0.01 * (wp - wm), "{t:?}");
        assert!((t.d - (wp + wm) / 2.0).abs() < 0.01, "{t:?}");
    }

    #[test]
    fn transport_with_hopping_matches_expansion() {
        // A small bias lifts the degeneracies that make the unbiased clean
        // generator defective; D is unchanged at this order.
        let (n, c, gamma, f) = (16, 1.0, 5.0, 0.01f64);
        let (wp, wm) = ((0.5 * f).exp(), (-0.5 * f).exp());
        let l = build_lindbladian_with_bias(&DisorderRealization::clean(n, 1.0, f).unwrap(), c, gamma, 0.0).unwrap();
        let rep = analyze_superoperator(&l).unwrap();
        let modes: Vec<(f64, c64)> = rep
            .relaxation
            .iter()
            .map(|&i| (dominant_wavenumber(&rep.populations[i]), rep.eigenvalues[i]))
            .collect();
        let t = transport_fit(&modes, n).unwrap();
        let want = (wp + wm) / 2.0 + c * c / (2.0 * (gamma + wp + wm));
        assert!((t.d - want).abs() < 0.02 * want, "{} vs {want}", t.d);
        let ring = CleanRing { w_plus: wp, w_minus: wm, gamma, c, e_bias: 0.0 };
        // The ring closes the r-lattice, so the closed form holds up to terms
        // of order zeta^N with |zeta| < 0.3 here.
        for (q, lam) in &modes {
            assert!(near(*lam, analytic_relaxation_branch(*q, &ring), 1e-4), "{q} {lam}");
        }
    }

    #[test]
    fn defective_generator_is_reported() {
        // Unbiased clean ring with hopping: degenerate decoherence modes form
        // Jordan blocks and no accurate eigenvector basis exists.
        let l = build_lindbladian_with_bias(&DisorderRealization::clean(8, 1.0, 0.0).unwrap(), 1.0, 5.0, 0.0).unwrap();
        assert!(matches!(analyze_superoperator(&l), Err(Error::ConvergenceFailure { .. })));
        assert_eq!(superoperator_spectrum(&l).unwrap().len(), 64);
    }

    #[test]
    fn transport_rejects_non_parabolic_input() {
        let modes: Vec<(f64, c64)> = (1..=4)
            .flat_map(|k| {
                let q = 2.0 * PI * k as f64 / 32.0;
                [(q, c64::new(q.abs().sqrt(), 0.0)), (-q, c64::new(q.abs().sqrt(), 0.0))]
            })
            .collect();
        assert!(matches!(transport_fit(&modes, 32), Err(Error::NonParabolic(_))));
    }

    #[test]
    fn tracking_follows_crossing_free_paths() {
        let spectra: Vec<Vec<c64>> = (0..5)
            .map(|k| vec![c64::new(1.0 + 0.1 * k as f64, 0.0), c64::new(3.0 - 0.1 * k as f64, 0.5)])
            .collect();
        let t = track_modes(&spectra);
        assert_eq!(t.len(), 2);
        assert!(t[0].iter().all(|e| e.im == 0.0));
        assert_eq!(t[1][4], c64::new(2.6, 0.5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn lindblad_spectrum_invariants(seed in any::<u64>(), n in 3usize..6, c in 0.0..1.5f64, gamma in 0.0..5.0f64, f in -0.05..0.05f64) {
            let r = realization(n, 0.05, 0.2, f, seed);
            let l = build_lindbladian_with_bias(&r, c, gamma, 200.0 * f).unwrap();
            let rep = analyze_superoperator(&l).unwrap();
            prop_assert_eq!(rep.stationary_count(), 1);
            for (e, m) in rep.eigenvalues.iter().zip(&rep.modes) {
                prop_assert!(m.metrics.ipr >= 1.0 / (n * n) as f64 - 1e-12 && m.metrics.ipr <= 1.0 + 1e-12);
                prop_assert!(m.metrics.trace.norm() <= (n as f64).sqrt() + 1e-12);
                if e.im.abs() > rep.tol_im() { prop_assert!(m.pair_id.is_some()); }
            }
            prop_assert_eq!(rep.relaxation.len(), n);
            prop_assert_eq!(rep.count_complex(CountScope::All, rep.tol_im())? % 2, 0);
            prop_assert_eq!(rep.count_complex(CountScope::RelaxationOnly, rep.tol_im())? % 2, 0);
        }

        #[test]
        fn c0_relaxation_set_matches_w(seed in any::<u64>(), n in 3usize..7, gamma in 0.0..6.0f64, f in -0.05..0.05f64) {
            let r = realization(n, 0.1, 0.3, f, seed);
            let rep = analyze_superoperator(&build_lindbladian_with_bias(&r, 0.0, gamma, 0.0).unwrap()).unwrap();
            let w = rate_matrix_spectrum(&build_w(&r)).unwrap();
            let mut rel = rep.relaxation_eigenvalues();
            // bijection by greedy nearest matching
            for e in &w {
                let k = (0..rel.len()).min_by(|&a, &b| (rel[a] - e).norm().total_cmp(&(rel[b] - e).norm())).unwrap();
                prop_assert!((rel[k] - e).norm() < 1e-9);
                rel.remove(k);
            }
        }

        #[test]
        fn unbiased_w_spectrum_is_real(seed in any::<u64>(), n in 3usize..24, sf in 0.0..0.5f64) {
            let r = rescale_field(&realization(n, sf, 0.3, 0.0, seed), 0.0, 1.0);
            let s = rate_matrix_spectrum(&build_w(&r)).unwrap();
            prop_assert_eq!(count_complex(&s, default_tol_im(&s)).unwrap(), 0);
        }

        #[test]
        fn clean_w_matches_formula(n in 2usize..20, f in -0.3..0.3f64) {
            let s = rate_matrix_spectrum(&build_w(&DisorderRealization::clean(n, 1.0, f).unwrap())).unwrap();
            let want = clean_spectrum_w((0.5 * f).exp(), (-0.5 * f).exp(), n);
            for e in &s {
                prop_assert!(want.iter().any(|w| (-w - e).norm() < 1e-12));
            }
        }
    }
}
