//! Model parameters, derived energy scales and disorder realizations.
//!
//! Every realization is a frozen set of bond rates `nu_x`, stochastic fields
//! `f_x` and site potentials `U(x)` on a ring. Widths `sigma_f`/`sigma_nu`
//! are full widths for [`DistShape::Box`] and standard deviations for
//! [`DistShape::Gaussian`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STREAM_NU: u64 = 0;
const STREAM_F: u64 = 1;
const STREAM_U: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistShape {
    Box,
    Gaussian,
}

/// Scalar controls of the model. Field names follow the JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub nu: f64,
    pub c: f64,
    pub gamma: f64,
    pub f_bias: f64,
    pub sigma_f: f64,
    pub sigma_nu: f64,
    #[serde(rename = "T_bath")]
    pub t_bath: f64,
    pub dist_shape: DistShape,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n: 32,
            nu: 1.0,
            c: 0.0,
            gamma: 0.0,
            f_bias: 0.0,
            sigma_f: 0.0,
            sigma_nu: 0.0,
            t_bath: 200.0,
            dist_shape: DistShape::Box,
            seed: 0,
        }
    }
}

/// Soft violations of `c, sigma_E << nu << T_bath`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HierarchyWarning {
    HoppingNotSmall,
    BathNotHot,
}

impl std::fmt::Display for HierarchyWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HierarchyWarning::HoppingNotSmall => write!(f, "c >= nu: coherent hopping is not perturbative"),
            HierarchyWarning::BathNotHot => write!(f, "T_bath <= nu: bath is not in the high temperature regime"),
        }
    }
}

impl ModelParams {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(s)?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("nu", self.nu),
            ("c", self.c),
            ("gamma", self.gamma),
            ("f_bias", self.f_bias),
            ("sigma_f", self.sigma_f),
            ("sigma_nu", self.sigma_nu),
            ("T_bath", self.t_bath),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("{v} is not finite")));
            }
        }
        if self.n < 3 {
            return Err(Error::invalid("N", format!("ring needs at least 3 sites, got {}", self.n)));
        }
        if self.nu <= 0.0 {
            return Err(Error::invalid("nu", "must be positive"));
        }
        if self.c < 0.0 {
            return Err(Error::invalid("c", "must be non-negative"));
        }
        if self.gamma < 0.0 {
            return Err(Error::invalid("gamma", "must be non-negative"));
        }
        if self.sigma_f < 0.0 {
            return Err(Error::invalid("sigma_f", "must be non-negative"));
        }
        if self.sigma_nu < 0.0 {
            return Err(Error::invalid("sigma_nu", "must be non-negative"));
        }
        if self.t_bath <= 0.0 {
            return Err(Error::invalid("T_bath", "must be positive"));
        }
        Ok(())
    }

    pub fn hierarchy_warnings(&self) -> Vec<HierarchyWarning> {
        let mut out = Vec::new();
        if self.c >= self.nu {
            out.push(HierarchyWarning::HoppingNotSmall);
        }
        if self.t_bath <= self.nu {
            out.push(HierarchyWarning::BathNotHot);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedScales {
    /// Dispersion of the site potential, `sigma_f * T_bath`.
    pub sigma_e: f64,
    /// Dimensionless friction `nu / (2 T_bath)`.
    pub eta: f64,
    /// Coherent bias energy `T_bath * f_bias`.
    pub e_bias: f64,
}

pub fn derive_scales(params: &ModelParams) -> DerivedScales {
    DerivedScales {
        sigma_e: params.sigma_f * params.t_bath,
        eta: params.nu / (2.0 * params.t_bath),
        e_bias: params.t_bath * params.f_bias,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegimeLabel {
    /// `sigma_f < 1`
    pub classical_high_t: bool,
    /// `eta < 1`
    pub quantum_high_t: bool,
    /// `eta > sigma_f`: coherent effects are a perturbation of the stochastic dynamics.
    pub sinai_regime: bool,
}

pub fn classify_regime(params: &ModelParams) -> RegimeLabel {
    regime_from(params.sigma_f, derive_scales(params).eta)
}

pub fn regime_from(sigma_f: f64, eta: f64) -> RegimeLabel {
    RegimeLabel {
        classical_high_t: sigma_f < 1.0,
        quantum_high_t: eta < 1.0,
        sinai_regime: eta > sigma_f,
    }
}

/// One frozen disorder realization on a ring of `N` sites.
///
/// Bond `x` joins sites `x` and `x + 1 (mod N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderRealization {
    nu_x: Vec<f64>,
    f_x: Vec<f64>,
    u: Vec<f64>,
    e_x: Vec<f64>,
}

impl DisorderRealization {
    /// Builds a realization from explicit arrays. Rings of two sites are
    /// accepted here (the two bonds then join the same pair of sites).
    pub fn from_parts(nu_x: Vec<f64>, f_x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let n = nu_x.len();
        if n < 2 {
            return Err(Error::invalid("N", format!("ring needs at least 2 sites, got {n}")));
        }
        if f_x.len() != n || u.len() != n {
            return Err(Error::invalid("N", "nu_x, f_x and U must have equal length"));
        }
        if nu_x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("nu_x", "bond rates must be positive and finite"));
        }
        if f_x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("f_x", "fields and potentials must be finite"));
        }
        let e_x = bond_energy_drops(&u);
        Ok(Self { nu_x, f_x, u, e_x })
    }

    /// Uniform ring: every bond has rate `nu` and field `f`, flat potential.
    pub fn clean(n: usize, nu: f64, f: f64) -> Result<Self> {
        Self::from_parts(vec![nu; n], vec![f; n], vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.nu_x.len()
    }

    pub fn nu_x(&self) -> &[f64] {
        &self.nu_x
    }

    pub fn f_x(&self) -> &[f64] {
        &self.f_x
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn e_x(&self) -> &[f64] {
        &self.e_x
    }

    pub fn f_mean(&self) -> f64 {
        mean(&self.f_x)
    }

    pub fn nu_mean(&self) -> f64 {
        mean(&self.nu_x)
    }

    /// Same fields and potential, different bond rates.
    pub fn with_nu(&self, nu_x: Vec<f64>) -> Result<Self> {
        Self::from_parts(nu_x, self.f_x.clone(), self.u.clone())
    }
}

fn bond_energy_drops(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    (0..n).map(|x| -(u[(x + 1) % n] - u[x])).collect()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Draws a realization from `params` using `params.seed`.
///
/// Bond rates, fields and potentials come from independent ChaCha streams
/// of the same key, so changing one width leaves the other arrays intact and
/// a sweep over widths stretches one frozen pattern. The fields are shifted
/// so that their sample mean is exactly `f_bias`.
pub fn sample_realization(params: &ModelParams) -> Result<DisorderRealization> {
    params.validate()?;
    if params.sigma_nu >= 2.0 * params.nu {
        return Err(Error::invalid(
            "sigma_nu",
            format!("sigma_nu = {} allows non-positive rates (must be < 2 nu)", params.sigma_nu),
        ));
    }
    let n = params.n;
    let sigma_e = derive_scales(params).sigma_e;

    let mut rng = stream(params.seed, STREAM_NU);
    let nu_x: Vec<f64> = match params.dist_shape {
        DistShape::Box => (0..n)
            .map(|_| params.nu + params.sigma_nu * (rng.random::<f64>() - 0.5))
            .collect(),
        DistShape::Gaussian => (0..n)
            .map(|_| loop {
                let z: f64 = rng.sample(StandardNormal);
                let v = params.nu + params.sigma_nu * z;
                if v > 0.0 {
                    break v;
                }
            })
            .collect(),
    };

    let mut rng = stream(params.seed, STREAM_F);
    let f_x: Vec<f64> = if params.sigma_f == 0.0 {
        vec![params.f_bias; n]
    } else {
        let raw: Vec<f64> = (0..n)
            .map(|_| params.sigma_f * draw_centered(&mut rng, params.dist_shape))
            .collect();
        let shift = mean(&raw);
        raw.iter().map(|d| params.f_bias + (d - shift)).collect()
    };

    let mut rng = stream(params.seed, STREAM_U);
    let u: Vec<f64> = match params.dist_shape {
        DistShape::Box => (0..n).map(|_| sigma_e * rng.random::<f64>()).collect(),
        DistShape::Gaussian => (0..n)
            .map(|_| sigma_e * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };

    DisorderRealization::from_parts(nu_x, f_x, u)
}

fn draw_centered(rng: &mut ChaCha20Rng, shape: DistShape) -> f64 {
    match shape {
        DistShape::Box => rng.random::<f64>() - 0.5,
        DistShape::Gaussian => rng.sample(StandardNormal),
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed of realization `index` under a master seed. Counter based, so any
/// worker can compute the seed of any task without shared state.
pub fn realization_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Replaces the field by `new_f + new_scale * (f_x - mean(f_x))`.
///
/// Relative magnitudes of the fluctuations are preserved; bond rates and the
/// potential are untouched.
pub fn rescale_field(real: &DisorderRealization, new_f: f64, new_scale: f64) -> DisorderRealization {
    let old = real.f_mean();
    let f_x = real.f_x.iter().map(|f| new_f + new_scale * (f - old)).collect();
    DisorderRealization {
        nu_x: real.nu_x.clone(),
        f_x,
        u: real.u.clone(),
        e_x: real.e_x.clone(),
    }
}
