//! Disorder-ensemble drivers: grid sweeps of the complex-eigenvalue
//! fraction and per-realization thresholds `f_c` and `sigma_critical`.
//!
//! Realization `k` of any run uses the seed `realization_seed(master, k)`
//! regardless of the grid cell, so a sweep stretches one frozen disorder
//! pattern per realization across the whole grid.

use std::io::Write;

use faer::c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{build_lindbladian, surrogate_realization};
use crate::model::{realization_seed, rescale_field, sample_realization, DisorderRealization, ModelParams};
use crate::spectral::{analyze_superoperator, count_complex, default_tol_im, rate_matrix_spectrum};
use crate::stochastic::build_w;

/// Largest ring accepted for Lindblad sweeps.
pub const MAX_LINDBLAD_SWEEP_N: usize = 64;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "QWALK_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Classical rate matrix `W`.
    Stochastic,
    /// Full minimal Lindbladian; observables use its relaxation branch.
    Lindblad,
    /// `W` with bond rates replaced by the effective rates at `lambda = 0`.
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    F,
    SigmaF,
    C,
    SigmaNu,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::F => "f",
            Axis::SigmaF => "sigma_f",
            Axis::C => "c",
            Axis::SigmaNu => "sigma_nu",
        }
    }

    pub fn apply(self, params: &mut ModelParams, value: f64) {
        match self {
            Axis::F => params.f_bias = value,
            Axis::SigmaF => params.sigma_f = value,
            Axis::C => params.c = value,
            Axis::SigmaNu => params.sigma_nu = value,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f" | "f_bias" => Ok(Axis::F),
            "sigma_f" => Ok(Axis::SigmaF),
            "c" => Ok(Axis::C),
            "sigma_nu" => Ok(Axis::SigmaNu),
            other => Err(Error::invalid("axis", format!("unknown axis `{other}` (f, sigma_f, c, sigma_nu)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisGrid {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl AxisGrid {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid", "grid must be non-empty and finite"));
        }
        let up = values.windows(2).all(|w| w[1] > w[0]);
        let down = values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::invalid("grid", format!("{} grid is not strictly monotone", axis.name())));
        }
        Ok(Self { axis, values })
    }

    pub fn linspace(axis: Axis, start: f64, end: f64, count: usize) -> Result<Self> {
        let values = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..count).map(|k| start + (end - start) * k as f64 / (count - 1) as f64).collect(),
        };
        Self::new(axis, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    NcmplxFraction,
    FcThreshold,
    SigmaCritical,
}

/// Knobs of the threshold searches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdConfig {
    /// Number of lowest nonzero relaxation modes inspected by the `f_c` predicate.
    pub k_modes: usize,
    /// Imaginary-part tolerance relative to the spectral radius.
    pub tol_im_rel: f64,
    /// Upper end of the `f` bracket.
    pub f_max: f64,
    /// Absolute resolution of `f_c`.
    pub f_abs_tol: f64,
    /// Relative resolution of `f_c`; the stricter of the two applies.
    pub f_rel_tol: f64,
    /// First `sigma_f` tried when bracketing `sigma_critical`.
    pub sigma_start: f64,
    /// Largest `sigma_f` tried before reporting no transition.
    pub sigma_max: f64,
    /// Absolute resolution of `sigma_critical`.
    pub sigma_abs_tol: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            k_modes: 4,
            tol_im_rel: 1e-8,
            f_max: 0.05,
            f_abs_tol: 1e-5,
            f_rel_tol: 1e-2,
            sigma_start: 0.005,
            sigma_max: 0.5,
            sigma_abs_tol: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Found(f64),
    /// The predicate never fired inside the search range.
    NoTransition,
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::Found(v) => Some(v),
            Threshold::NoTransition => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdOutcome {
    pub threshold: Threshold,
    /// The predicate held at every sanity probe above the threshold.
    pub monotone: bool,
}

/// Decay rates of the relaxation modes and the tolerance scale of the full spectrum.
pub fn relaxation_spectrum(real: &DisorderRealization, params: &ModelParams, model: ModelKind) -> Result<(Vec<c64>, f64)> {
    match model {
        ModelKind::Stochastic => {
            let s = rate_matrix_spectrum(&build_w(real))?;
            let scale = radius(&s);
            Ok((s, scale))
        }
        ModelKind::Surrogate => {
            let s = rate_matrix_spectrum(&build_w(&surrogate_realization(real, params.c, params.gamma)?))?;
            let scale = radius(&s);
            Ok((s, scale))
        }
        ModelKind::Lindblad => {
            let rep = analyze_superoperator(&build_lindbladian(real, params)?)?;
            Ok((rep.relaxation_eigenvalues(), radius(&rep.eigenvalues)))
        }
    }
}

fn radius(s: &[c64]) -> f64 {
    s.iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// `N_cmplx / N` over the relaxation modes.
pub fn ncmplx_fraction(real: &DisorderRealization, params: &ModelParams, model: ModelKind) -> Result<f64> {
    let (s, scale) = relaxation_spectrum(real, params, model)?;
    let tol = 1e-8 * scale;
    Ok(count_complex(&s, tol)? as f64 / real.n() as f64)
}

/// True when one of the `k` lowest nonzero relaxation modes has `|Im| > tol`.
fn low_modes_complex(spectrum: &[c64], scale: f64, cfg: &ThresholdConfig) -> bool {
    let tol = cfg.tol_im_rel * scale;
    let Some(zero) = (0..spectrum.len()).min_by(|&a, &b| spectrum[a].norm().total_cmp(&spectrum[b].norm())) else {
        return false;
    };
    let mut rest: Vec<c64> = spectrum.iter().enumerate().filter(|(i, _)| *i != zero).map(|(_, &e)| e).collect();
    rest.sort_by(|a, b| a.re.total_cmp(&b.re));
    rest.iter().take(cfg.k_modes).any(|e| e.im.abs() > tol)
}

fn with_field(real: &DisorderRealization, params: &ModelParams, f: f64, scale: f64) -> (DisorderRealization, ModelParams) {
    let r = rescale_field(real, f, scale);
    let p = ModelParams { f_bias: f, ..params.clone() };
    (r, p)
}

/// Critical mean field of one frozen realization: the fluctuations of
/// `f_x` are held fixed while their mean is varied.
pub fn threshold_fc(real: &DisorderRealization, params: &ModelParams, model: ModelKind, cfg: &ThresholdConfig) -> Result<ThresholdOutcome> {
    let pred = |f: f64| -> Result<bool> {
        let (r, p) = with_field(real, params, f, 1.0);
        let (s, scale) = relaxation_spectrum(&r, &p, model)?;
        Ok(low_modes_complex(&s, scale, cfg))
    };
    if !pred(cfg.f_max)? {
        return Ok(ThresholdOutcome { threshold: Threshold::NoTransition, monotone: true });
    }
    // Geometric descent to a bracket [lo, hi] with pred(lo) false.
    let floor = 1e-3 * cfg.f_abs_tol.min(cfg.f_rel_tol * cfg.f_max);
    let mut hi = cfg.f_max;
    let mut lo = loop {
        let cand = hi / 4.0;
        if cand < floor {
            break 0.0;
        }
        if !pred(cand)? {
            break cand;
        }
        hi = cand;
    };
    while hi - lo > cfg.f_abs_tol.min(cfg.f_rel_tol * hi) {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let fc = 0.5 * (lo + hi);
    let mut monotone = true;
    for m in [1.5, 2.0, 4.0] {
        let f = (m * fc).min(cfg.f_max);
        if f > hi && !pred(f)? {
            monotone = false;
        }
    }
    Ok(ThresholdOutcome { threshold: Threshold::Found(fc), monotone })
}

fn complex_count(real: &DisorderRealization, params: &ModelParams, model: ModelKind, tol_rel: f64) -> Result<usize> {
    let (s, scale) = relaxation_spectrum(real, params, model)?;
    count_complex(&s, tol_rel * scale)
}

/// Smallest `sigma_f` (at fixed mean field `params.f_bias`) at which a mode
/// that is complex on the clean ring turns real. The realization's field
/// pattern is stretched uniformly; it must have been drawn with
/// `sigma_f > 0` so that the pattern is not flat.
pub fn sigma_critical(real: &DisorderRealization, params: &ModelParams, model: ModelKind, cfg: &ThresholdConfig) -> Result<ThresholdOutcome> {
    let f = params.f_bias;
    let unit = params.sigma_f;
    if !(unit > 0.0) {
        return Err(Error::invalid("sigma_f", "sigma_critical needs a realization drawn with sigma_f > 0"));
    }
    let at = |sigma: f64| -> Result<usize> {
        let (r, p) = with_field(real, params, f, sigma / unit);
        let p = ModelParams { sigma_f: sigma, ..p };
        complex_count(&r, &p, model, cfg.tol_im_rel)
    };
    let n0 = at(0.0)?;
    if n0 == 0 {
        return Ok(ThresholdOutcome { threshold: Threshold::Found(0.0), monotone: true });
    }
    let pred = |sigma: f64| -> Result<bool> { Ok(at(sigma)? < n0) };
    let mut lo = 0.0;
    let mut hi = cfg.sigma_start;
    loop {
        if pred(hi)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > cfg.sigma_max {
            return Ok(ThresholdOutcome { threshold: Threshold::NoTransition, monotone: true });
        }
    }
    while hi - lo > cfg.sigma_abs_tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let sc = 0.5 * (lo + hi);
    let mut monotone = true;
    for m in [1.25, 1.5, 2.0] {
        if m * sc > hi && !pred(m * sc)? {
            monotone = false;
        }
    }
    Ok(ThresholdOutcome { threshold: Threshold::Found(sc), monotone })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSpec {
    pub model: ModelKind,
    pub axis1: AxisGrid,
    pub axis2: AxisGrid,
    pub fixed: ModelParams,
    pub realizations: usize,
    pub observable: Observable,
    pub threshold: ThresholdConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.fixed.validate()?;
        if self.realizations == 0 {
            return Err(Error::invalid("realizations", "need at least one realization"));
        }
        if self.model == ModelKind::Lindblad && self.fixed.n > MAX_LINDBLAD_SWEEP_N {
            return Err(Error::TooLarge { n: self.fixed.n, max: MAX_LINDBLAD_SWEEP_N });
        }
        if self.axis1.axis == self.axis2.axis {
            return Err(Error::invalid("axes", "the two axes must differ"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub i1: usize,
    pub i2: usize,
    pub axis1: f64,
    pub axis2: f64,
    pub realization: usize,
    pub seed: u64,
    /// `None` for a threshold sentinel.
    pub value: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub axis1: AxisGrid,
    pub axis2: AxisGrid,
    /// Row-major over `(i1, i2, realization)`.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Mean over realizations of each cell, ignoring sentinels; NaN when a
    /// cell has only sentinels.
    pub fn means(&self) -> Vec<Vec<f64>> {
        let (n1, n2) = (self.axis1.values.len(), self.axis2.values.len());
        let mut sum = vec![vec![(0.0, 0usize); n2]; n1];
        for r in &self.rows {
            if let Some(v) = r.value {
                let cell = &mut sum[r.i1][r.i2];
                cell.0 += v;
                cell.1 += 1;
            }
        }
        sum.into_iter()
            .map(|row| row.into_iter().map(|(s, k)| if k == 0 { f64::NAN } else { s / k as f64 }).collect())
            .collect()
    }

    pub fn sentinel_count(&self) -> usize {
        self.rows.iter().filter(|r| r.value.is_none()).count()
    }

    pub fn write_rows<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis1", "axis2", "realization", "observable"])?;
        for r in &self.rows {
            w.write_record(&[
                r.axis1.to_string(),
                r.axis2.to_string(),
                r.realization.to_string(),
                r.value.unwrap_or(f64::NAN).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_means<W: Write>(&self, out: W) -> Result<()> {
        let means = self.means();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["axis1", "axis2", "mean", "sentinels"])?;
        for (i1, a1) in self.axis1.values.iter().enumerate() {
            for (i2, a2) in self.axis2.values.iter().enumerate() {
                let sentinels = self.rows.iter().filter(|r| r.i1 == i1 && r.i2 == i2 && r.value.is_none()).count();
                w.write_record(&[a1.to_string(), a2.to_string(), means[i1][i2].to_string(), sentinels.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Worker pool sized by `QWALK_WORKERS` (default: all cores).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let k: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::invalid("QWALK_WORKERS", format!("`{v}` is not a worker count")))?;
        if k == 0 {
            return Err(Error::invalid("QWALK_WORKERS", "worker count must be positive"));
        }
        b = b.num_threads(k);
    }
    b.build().map_err(|e| Error::invalid("QWALK_WORKERS", e.to_string()))
}

/// Value of `observable` for one parameter set and one realization seed.
pub fn evaluate(params: &ModelParams, model: ModelKind, observable: Observable, cfg: &ThresholdConfig) -> Result<Option<f64>> {
    let real = sample_realization(params)?;
    match observable {
        Observable::NcmplxFraction => ncmplx_fraction(&real, params, model).map(Some),
        Observable::FcThreshold => Ok(threshold_fc(&real, params, model, cfg)?.threshold.value()),
        Observable::SigmaCritical => Ok(sigma_critical(&real, params, model, cfg)?.threshold.value()),
    }
}

pub fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let (n1, n2, nr) = (spec.axis1.values.len(), spec.axis2.values.len(), spec.realizations);
    let tasks: Vec<(usize, usize, usize)> =
        (0..n1).flat_map(|i1| (0..n2).flat_map(move |i2| (0..nr).map(move |r| (i1, i2, r)))).collect();
    let run = |&(i1, i2, realization): &(usize, usize, usize)| -> Result<SweepRow> {
        let (a1, a2) = (spec.axis1.values[i1], spec.axis2.values[i2]);
        let seed = realization_seed(spec.fixed.seed, realization as u64);
        let mut p = ModelParams { seed, ..spec.fixed.clone() };
        spec.axis1.axis.apply(&mut p, a1);
        spec.axis2.axis.apply(&mut p, a2);
        let value = evaluate(&p, spec.model, spec.observable, &spec.threshold)
            .map_err(|e| Error::Cell { i1, i2, realization, source: Box::new(e) })?;
        Ok(SweepRow { i1, i2, axis1: a1, axis2: a2, realization, seed, value })
    };
    let rows = worker_pool()?.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    Ok(SweepResult { axis1: spec.axis1.clone(), axis2: spec.axis2.clone(), rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRecord {
    pub realization: usize,
    pub seed: u64,
    pub outcome: ThresholdOutcome,
}

/// One threshold per realization under the master seed `params.seed`.
pub fn threshold_batch(
    params: &ModelParams,
    model: ModelKind,
    observable: Observable,
    realizations: usize,
    cfg: &ThresholdConfig,
) -> Result<Vec<ThresholdRecord>> {
    params.validate()?;
    if realizations == 0 {
        return Err(Error::invalid("realizations", "need at least one realization"));
    }
    if model == ModelKind::Lindblad && params.n > MAX_LINDBLAD_SWEEP_N {
        return Err(Error::TooLarge { n: params.n, max: MAX_LINDBLAD_SWEEP_N });
    }
    let run = |realization: usize| -> Result<ThresholdRecord> {
        let seed = realization_seed(params.seed, realization as u64);
        let p = ModelParams { seed, ..params.clone() };
        let wrap = |e| Error::Cell { i1: 0, i2: 0, realization, source: Box::new(e) };
        let real = sample_realization(&p).map_err(wrap)?;
        let outcome = match observable {
            Observable::FcThreshold => threshold_fc(&real, &p, model, cfg),
            Observable::SigmaCritical => sigma_critical(&real, &p, model, cfg),
            Observable::NcmplxFraction => Err(Error::invalid("observable", "not a threshold observable")),
        }
        .map_err(wrap)?;
        Ok(ThresholdRecord { realization, seed, outcome })
    };
    worker_pool()?.install(|| (0..realizations).into_par_iter().map(run).collect())
}

pub fn write_threshold_table<W: Write>(records: &[ThresholdRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["realization", "seed", "threshold", "sentinel_flag", "monotone"])?;
    for r in records {
        let (v, flag) = match r.outcome.threshold {
            Threshold::Found(v) => (v, 0),
            Threshold::NoTransition => (f64::NAN, 1),
        };
        w.write_record(&[
            r.realization.to_string(),
            r.seed.to_string(),
            v.to_string(),
            flag.to_string(),
            (r.outcome.monotone as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdStats {
    pub per_realization: Vec<Threshold>,
    /// Non-sentinel values in ascending order.
    pub sorted: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub sentinels: usize,
}

impl ThresholdStats {
    /// `(value, cumulative fraction)` with fractions `k / len`.
    pub fn cumulative_histogram(&self) -> Vec<(f64, f64)> {
        let m = self.sorted.len() as f64;
        self.sorted.iter().enumerate().map(|(k, &v)| (v, (k + 1) as f64 / m)).collect()
    }

    pub fn write_histogram<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "threshold", "cumulative_fraction"])?;
        for (k, (v, frac)) in self.cumulative_histogram().into_iter().enumerate() {
            w.write_record(&[(k + 1).to_string(), v.to_string(), frac.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn aggregate(values: &[Threshold]) -> Result<ThresholdStats> {
    let mut sorted: Vec<f64> = values.iter().filter_map(|t| t.value()).collect();
    let sentinels = values.len() - sorted.len();
    if sorted.is_empty() {
        return Err(Error::EmptyAfterFilter { sentinels });
    }
    sorted.sort_by(f64::total_cmp);
    Ok(ThresholdStats {
        per_realization: values.to_vec(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: median(&sorted),
        sorted,
        sentinels,
    })
}

/// Median of an ascending slice.
pub fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Default tolerance helper re-exported for callers that count by hand.
pub fn tol_im(eigs: &[c64]) -> f64 {
    default_tol_im(eigs)
}
