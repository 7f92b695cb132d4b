//! Semantic simulation of singular-value estimation and the linear-algebra
//! routines built on it: noisy spectra, multiplication, inversion, thresholded
//! projection and norm estimation.

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Singular triples of a matrix, singular values descending.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    /// Left singular vectors as columns; absent when the factors were built
    /// from a Gram matrix.
    pub u: Option<Mat<f64>>,
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns.
    pub v: Mat<f64>,
    /// Absolute rank tolerance; singular values at or below it count as zero.
    pub tol: f64,
}

impl SvdFactors {
    /// Thin SVD of `m`.
    pub fn of(m: MatRef<'_, f64>) -> Result<Self> {
        let (u, sigma, v) = linalg::thin_svd(m)?;
        let tol = linalg::RANK_TOL * sigma.first().copied().unwrap_or(0.0);
        Ok(Self {
            u: Some(u),
            sigma,
            v,
            tol,
        })
    }

    /// Right factors of `m` from the eigendecomposition of `mᵀm`.
    pub fn from_gram(gram: MatRef<'_, f64>) -> Result<Self> {
        let (vals, v) = linalg::sym_eigen_desc(gram)?;
        let sigma: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let tol = linalg::GRAM_RANK_TOL * sigma.first().copied().unwrap_or(0.0);
        Ok(Self {
            u: None,
            sigma,
            v,
            tol,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above the tolerance.
    pub fn rank(&self) -> usize {
        self.sigma.iter().take_while(|&&s| s > self.tol).count()
    }

    /// `σ_max/σ_min` over the numerical rank.
    pub fn condition_number(&self) -> f64 {
        match self.rank() {
            0 => f64::INFINITY,
            r => self.sigma[0] / self.sigma[r - 1],
        }
    }

    /// `Vᵀx`.
    pub fn right_coefficients(&self, x: &[f64]) -> Vec<f64> {
        linalg::matvec_t(self.v.as_ref(), x)
    }

    fn left(&self) -> Result<&Mat<f64>> {
        self.u
            .as_ref()
            .ok_or_else(|| Error::invalid("left singular vectors were not computed"))
    }
}

/// Noise parameters for simulated estimation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Relative singular-value error.
    pub epsilon: f64,
    /// Multiplicative norm-estimation error.
    pub eta: f64,
    pub seed: u64,
    /// When false every routine is exact.
    pub enabled: bool,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            epsilon: 0.0,
            eta: 0.0,
            seed: 0,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} must lie in [0, 1)", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} must lie in [0, 1)", self.eta)));
        }
        Ok(())
    }
}

/// How a direction whose estimate lands in `(θ, (1+δ)θ]` is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryPolicy {
    /// Keep it: the acceptance test is `σ̃ ≤ (1+δ)θ`.
    Keep,
    /// Drop it: the acceptance test is `σ̃ ≤ θ`.
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionSpec {
    pub theta: f64,
    pub delta: f64,
    pub boundary: BoundaryPolicy,
}

impl ProjectionSpec {
    pub fn new(theta: f64, delta: f64) -> Result<Self> {
        let s = Self {
            theta,
            delta,
            boundary: BoundaryPolicy::Keep,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta {} must be positive", self.theta)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta {} must lie in (0, 1]", self.delta)));
        }
        Ok(())
    }

    /// Acceptance bound on the estimated singular value.
    pub fn cutoff(&self) -> f64 {
        match self.boundary {
            BoundaryPolicy::Keep => (1.0 + self.delta) * self.theta,
            BoundaryPolicy::Drop => self.theta,
        }
    }

    /// Absolute estimation precision `δθ`.
    pub fn precision(&self) -> f64 {
        self.delta * self.theta
    }

    /// Noiseless keep decision.
    pub fn keeps(&self, sigma: f64) -> bool {
        sigma <= self.cutoff()
    }

    /// True when a noisy estimate of `sigma` may fall on either side of the
    /// cutoff.
    pub fn is_uncertain(&self, sigma: f64) -> bool {
        let c = self.cutoff();
        let p = self.precision();
        sigma > c - p && sigma <= c + p
    }
}

/// Gaussian draw with standard deviation `half_width/3`, rejected until it
/// lies within `±half_width` of `center`.
pub fn truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, center: f64, half_width: f64) -> f64 {
    if half_width <= 0.0 {
        return center;
    }
    let sd = half_width / 3.0;
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let dz = z * sd;
        if dz.abs() <= half_width {
            return center + dz;
        }
    }
}

/// Relative-error estimates `σ̃_i ∈ [σ_i(1−ε), σ_i(1+ε)]`.
pub fn noisy_singular_values<R: Rng + ?Sized>(sigma: &[f64], cfg: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    if !cfg.enabled || cfg.epsilon == 0.0 {
        return sigma.to_vec();
    }
    sigma
        .iter()
        .map(|&s| truncated_gaussian(rng, s, s * cfg.epsilon))
        .collect()
}

/// Unit vector along `Σ σ̃_i ⟨v_i, x⟩ u_i`.
pub fn simulate_matrix_multiplication<R: Rng + ?Sized>(
    f: &SvdFactors,
    x: &[f64],
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let u = f.left()?;
    let sig = noisy_singular_values(&f.sigma, cfg, rng);
    let c = f.right_coefficients(x);
    let w: Vec<f64> = c.iter().zip(&sig).map(|(c, s)| c * s).collect();
    let mut out = linalg::matvec(u.as_ref(), &w);
    let n = linalg::normalize(&mut out);
    if n <= 1e-12 * f.sigma_max() * linalg::norm(x) || n == 0.0 {
        return Err(Error::ZeroVector("Mx is numerically zero".into()));
    }
    Ok(out)
}

/// Unit vector along `Σ ⟨u_i, x⟩ v_i / σ̃_i` over the directions with
/// `σ_i ≥ σ_max/kappa_cap`.
pub fn simulate_matrix_inversion<R: Rng + ?Sized>(
    f: &SvdFactors,
    x: &[f64],
    cfg: &NoiseConfig,
    kappa_cap: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let u = f.left()?;
    let floor = (f.sigma_max() / kappa_cap).max(f.tol);
    let retained = f.sigma.iter().take_while(|&&s| s >= floor && s > f.tol).count();
    if retained == 0 {
        return Err(Error::RankDeficient("no singular value survives the cap".into()));
    }
    let sig = noisy_singular_values(&f.sigma[..retained], cfg, rng);
    let c = linalg::matvec_t(u.as_ref().subcols(0, retained), x);
    let w: Vec<f64> = c.iter().zip(&sig).map(|(c, s)| c / s).collect();
    let mut out = linalg::matvec(f.v.as_ref().subcols(0, retained), &w);
    if linalg::normalize(&mut out) == 0.0 {
        return Err(Error::ZeroVector("x is orthogonal to the retained space".into()));
    }
    Ok(out)
}

/// Outcome of a thresholded projection expressed in singular-direction
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedCoefficients {
    /// Input coefficients with the rejected directions zeroed.
    pub coefficients: Vec<f64>,
    pub kept: Vec<bool>,
    /// `‖projected‖/‖x‖`.
    pub success_ratio: f64,
}

/// Keeps direction `i` iff its absolute-error estimate `σ̃_i` (precision `δθ`)
/// passes the cutoff. `x_norm` is the norm of the full input vector, which may
/// exceed the norm of `coeffs` when part of it lies outside the listed
/// directions.
pub fn project_coefficients<R: Rng + ?Sized>(
    sigma: &[f64],
    tol: f64,
    coeffs: &[f64],
    x_norm: f64,
    spec: &ProjectionSpec,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<ProjectedCoefficients> {
    spec.validate()?;
    if x_norm == 0.0 {
        return Err(Error::ZeroVector("cannot project a zero vector".into()));
    }
    let cutoff = spec.cutoff();
    let noisy = cfg.enabled;
    let kept: Vec<bool> = sigma
        .iter()
        .map(|&s| {
            if s <= tol {
                false
            } else if noisy && spec.is_uncertain(s) {
                truncated_gaussian(rng, s, spec.precision()) <= cutoff
            } else {
                s <= cutoff
            }
        })
        .collect();
    let coefficients: Vec<f64> = coeffs
        .iter()
        .zip(&kept)
        .map(|(&c, &k)| if k { c } else { 0.0 })
        .collect();
    let pn = linalg::norm(&coefficients);
    if !kept.iter().any(|&k| k) || pn < 1e-12 * x_norm {
        return Err(Error::ProjectionFailed(format!(
            "{} direction(s) kept, projected norm {pn:.3e} of {x_norm:.3e}",
            kept.iter().filter(|&&k| k).count()
        )));
    }
    Ok(ProjectedCoefficients {
        coefficients,
        kept,
        success_ratio: pn / x_norm,
    })
}

/// Unit vector along the projection of `x` onto the right singular directions
/// with small singular values, and the success ratio `‖projected‖/‖x‖`.
pub fn simulate_projection<R: Rng + ?Sized>(
    f: &SvdFactors,
    x: &[f64],
    spec: &ProjectionSpec,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let c = f.right_coefficients(x);
    let p = project_coefficients(&f.sigma, f.tol, &c, linalg::norm(x), spec, cfg, rng)?;
    let mut out = linalg::matvec(f.v.as_ref(), &p.coefficients);
    linalg::normalize(&mut out);
    Ok((out, p.success_ratio))
}

/// `true_norm · (1 + u)` with `u` uniform on `[−η, η]`.
pub fn estimate_norm<R: Rng + ?Sized>(true_norm: f64, cfg: &NoiseConfig, rng: &mut R) -> f64 {
    if !cfg.enabled || cfg.eta == 0.0 {
        return true_norm;
    }
    let u = rng.random_range(-cfg.eta..=cfg.eta);
    true_norm * (1.0 + u)
}
