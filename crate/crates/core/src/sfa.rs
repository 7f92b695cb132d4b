//! Slow feature analysis: the exact classical solver and the noisy simulated
//! pipeline (whitening, derivative-covariance spectrum, slow-space projection).
//!
//! With `B = XᵀX/n`, `A = ẊᵀẊ/a` and `X = U S Vᵀ`, the whitening operator is
//! `B^{-1/2} = V D Vᵀ` with `D = √n S⁻¹`. Working in the coordinates
//! `z = D Vᵀ x`, the derivative spectrum comes from the `r × r` matrix
//! `C = D VᵀAV D`, whose eigenvalues are the squared singular values of
//! `Ż = Ẋ B^{-1/2}/√a`.

use std::io::{Read, Write};

use faer::{Mat, MatRef};
use rand::Rng;

use crate::data::DerivativePairs;
use crate::error::{Error, Result};
use crate::linalg;
use crate::noisy_linalg::{self, NoiseConfig, ProjectionSpec};
use crate::rng;
use crate::snapshot::{Reader, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Oracle,
    Noisy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KappaMode {
    Full,
    /// Keep the `⌈fraction · rank⌉` largest singular values of `X`.
    Threshold(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaPolicy {
    Fixed(f64),
    /// Bisection for a threshold that keeps exactly `K − 1` directions.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QsfaConfig {
    pub mode: Mode,
    pub kappa_mode: KappaMode,
    pub theta_policy: ThetaPolicy,
    pub delta: f64,
    pub classes: usize,
    pub noise: NoiseConfig,
    /// Redraw the whitening spectrum for every query instead of freezing one
    /// draw at training time.
    pub redraw_whitening: bool,
}

impl Default for QsfaConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Oracle,
            kappa_mode: KappaMode::Full,
            theta_policy: ThetaPolicy::Auto,
            delta: 0.054,
            classes: 10,
            noise: NoiseConfig::noiseless(),
            redraw_whitening: false,
        }
    }
}

impl QsfaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if let KappaMode::Threshold(f) = self.kappa_mode {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("kappa fraction {f} must lie in (0, 1]")));
            }
        }
        if let ThetaPolicy::Fixed(t) = self.theta_policy {
            ProjectionSpec::new(t, self.delta)?;
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!("delta {} must lie in (0, 1]", self.delta)));
        }
        self.noise.validate()
    }

    pub fn noisy(&self) -> bool {
        self.mode == Mode::Noisy && self.noise.enabled
    }
}

/// Derivative data, either as sampled index pairs or as an explicit matrix.
#[derive(Clone, Copy)]
pub enum Derivatives<'a> {
    Pairs(&'a DerivativePairs),
    Matrix(MatRef<'a, f64>),
}

impl Derivatives<'_> {
    fn count(&self) -> usize {
        match self {
            Self::Pairs(p) => p.count(),
            Self::Matrix(m) => m.nrows(),
        }
    }

    /// `ẊᵀẊ` (unnormalized).
    fn gram(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        match self {
            Self::Pairs(p) => p.covariance(x),
            Self::Matrix(m) => linalg::gram(*m),
        }
    }
}

/// Result of the exact classical solver.
#[derive(Clone, Debug)]
pub struct SfaSolution {
    /// `d × (K−1)` orthonormal right singular directions of `Ż`, slowest first.
    pub w: Mat<f64>,
    /// Matching singular values of `Ż`, ascending.
    pub sigma: Vec<f64>,
    /// `Y = ZW` on the training rows.
    pub y: Mat<f64>,
    /// The generalized eigenvectors `B^{-1/2} w_j` solving `Au = λBu`.
    pub generalized: Mat<f64>,
}

/// Exact SFA by direct SVDs of `X` and `Ż`.
pub fn classical_sfa(x: MatRef<'_, f64>, xdot: MatRef<'_, f64>, classes: usize) -> Result<SfaSolution> {
    let out = classes - 1;
    let (n, a) = (x.nrows() as f64, xdot.nrows() as f64);
    let (_, s, v) = linalg::thin_svd(x)?;
    let tol = linalg::RANK_TOL * s.first().copied().unwrap_or(0.0);
    let r = s.iter().take_while(|&&v| v > tol).count();
    if r < out {
        return Err(Error::RankDeficient(format!("rank {r} is below K-1 = {out}")));
    }
    let vr = v.as_ref().subcols(0, r);
    // B^{-1/2} restricted to the range of X, as V_r diag(√n/s) V_rᵀ.
    let whiten = Mat::from_fn(x.ncols(), r, |i, j| vr[(i, j)] * n.sqrt() / s[j]);
    let zdot_r = linalg::mat_mul(xdot, whiten.as_ref());
    let scaled = Mat::from_fn(zdot_r.nrows(), r, |i, j| zdot_r[(i, j)] / a.sqrt());
    let (_, zs, zv) = linalg::thin_svd(scaled.as_ref())?;
    // Singular values come out descending; the slow ones are at the end.
    let idx: Vec<usize> = (0..out).map(|j| r - 1 - j).collect();
    let wc = Mat::from_fn(r, out, |i, j| zv[(i, idx[j])]);
    let mut w = linalg::mat_mul(vr, wc.as_ref());
    linalg::fix_column_signs(&mut w);
    let gen = {
        let t = linalg::mat_tmul(vr, w.as_ref());
        linalg::mat_mul(whiten.as_ref(), t.as_ref())
    };
    let y = linalg::mat_mul(x, gen.as_ref());
    Ok(SfaSolution {
        w,
        sigma: idx.iter().map(|&i| zs[i]).collect(),
        y,
        generalized: gen,
    })
}

/// Whitened rows `Z = X (XᵀX)^{-1/2}` over the numerical range of `X`, so that
/// `ZᵀZ` is the identity on that range.
pub fn whiten_rows(x: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let (_, s, v) = linalg::thin_svd(x)?;
    let tol = linalg::RANK_TOL * s.first().copied().unwrap_or(0.0);
    let r = s.iter().take_while(|&&v| v > tol).count();
    let vr = v.as_ref().subcols(0, r);
    let op = {
        let scaled = Mat::from_fn(x.ncols(), r, |i, j| vr[(i, j)] / s[j]);
        linalg::mat_mul(scaled.as_ref(), vr.transpose())
    };
    Ok(linalg::mat_mul(x, op.as_ref()))
}

/// Trained slow-feature model.
#[derive(Clone, Debug, PartialEq)]
pub struct QsfaModel {
    pub config: QsfaConfig,
    /// Training row count `n`.
    pub n: usize,
    /// Derivative count `a`.
    pub a: usize,
    /// Singular values of `X`, descending, full spectrum.
    pub x_sigma: Vec<f64>,
    /// Numerical rank of `X`.
    pub x_rank: usize,
    /// Directions kept for whitening after the condition cap.
    pub retained: usize,
    /// `d × r` leading right singular vectors of `X`.
    pub v: Mat<f64>,
    /// Whitening weights `√n / σ̃_i` for the retained directions.
    pub whitening: Vec<f64>,
    /// Singular values of `Ż`, ascending.
    pub zdot_sigma: Vec<f64>,
    /// `r × c` eigenvectors of `C` for the candidate directions, in `z`
    /// coordinates, slowest first.
    pub directions: Mat<f64>,
    /// `d × c` map from an input row to its candidate coefficients.
    pub projector: Mat<f64>,
    pub theta: f64,
    pub delta: f64,
}

/// Projection of one input row.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Output coordinates (zero for rejected directions).
    pub y: Vec<f64>,
    /// `‖y‖/‖z‖` with `z` the whitened input.
    pub success_ratio: f64,
    /// Norm estimate of `y`.
    pub norm_estimate: f64,
}

impl QsfaModel {
    /// Trains on preprocessed rows `x` and their derivatives.
    pub fn train(x: MatRef<'_, f64>, derivatives: Derivatives<'_>, config: &QsfaConfig) -> Result<Self> {
        config.validate()?;
        let (n, d) = (x.nrows(), x.ncols());
        let k1 = config.classes - 1;
        let a = derivatives.count();
        if n == 0 || a == 0 {
            return Err(Error::invalid("training needs rows and derivatives"));
        }
        log::info!("qsfa: gram of {n} x {d}");
        let (x_sigma, v_full, x_rank) = {
            let g = linalg::gram(x);
            let f = noisy_linalg::SvdFactors::from_gram(g.as_ref())?;
            let rank = f.rank();
            (f.sigma, f.v, rank)
        };
        if x_rank < k1 {
            return Err(Error::RankDeficient(format!("rank {x_rank} of X is below K-1 = {k1}")));
        }
        let retained = match config.kappa_mode {
            KappaMode::Full => x_rank,
            KappaMode::Threshold(f) => ((f * x_rank as f64).ceil() as usize).clamp(k1, x_rank),
        };
        let v = if retained == v_full.ncols() {
            v_full
        } else {
            let t = v_full.as_ref().subcols(0, retained).to_owned();
            drop(v_full);
            t
        };
        let mut sig = x_sigma[..retained].to_vec();
        if config.noisy() {
            let mut r = rng::stream(config.noise.seed, "whitening", &[]);
            sig = noisy_linalg::noisy_singular_values(&sig, &config.noise, &mut r);
        }
        let whitening: Vec<f64> = sig.iter().map(|s| (n as f64).sqrt() / s).collect();

        log::info!("qsfa: derivative covariance from {a} derivatives");
        let c = {
            let amat = derivatives.gram(x);
            let t = linalg::mat_mul(amat.as_ref(), v.as_ref());
            drop(amat);
            let mut c = linalg::mat_tmul(v.as_ref(), t.as_ref());
            drop(t);
            let inv_a = 1.0 / a as f64;
            for j in 0..retained {
                for i in 0..retained {
                    c[(i, j)] *= whitening[i] * whitening[j] * inv_a;
                }
            }
            linalg::symmetrize(&mut c);
            c
        };
        log::info!("qsfa: eigendecomposition of {retained} x {retained}");
        let (lambda, wc) = linalg::sym_eigen_asc(c.as_ref())?;
        drop(c);
        let zdot_sigma: Vec<f64> = lambda.iter().map(|&l| l.max(0.0).sqrt()).collect();

        let theta = match config.theta_policy {
            ThetaPolicy::Fixed(t) => t,
            ThetaPolicy::Auto => auto_theta(&zdot_sigma, k1, config.delta)?,
        };
        let spec = ProjectionSpec::new(theta, config.delta)?;
        let candidates = match config.mode {
            Mode::Oracle => k1,
            Mode::Noisy => zdot_sigma
                .iter()
                .take_while(|&&s| s <= spec.cutoff() + spec.precision())
                .count()
                .max(k1),
        };
        let mut directions = wc.as_ref().subcols(0, candidates).to_owned();
        drop(wc);
        let mut projector = {
            let scaled = Mat::from_fn(d, retained, |i, j| v[(i, j)] * whitening[j]);
            linalg::mat_mul(scaled.as_ref(), directions.as_ref())
        };
        // Orient each slow direction by its representation in input space.
        let basis = linalg::mat_mul(v.as_ref(), directions.as_ref());
        for j in 0..candidates {
            let col = linalg::col(basis.as_ref(), j);
            let pivot = col.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
            if pivot < 0.0 {
                for i in 0..retained {
                    directions[(i, j)] = -directions[(i, j)];
                }
                for i in 0..d {
                    projector[(i, j)] = -projector[(i, j)];
                }
            }
        }
        Ok(Self {
            config: *config,
            n,
            a,
            x_sigma,
            x_rank,
            retained,
            v,
            whitening,
            zdot_sigma,
            directions,
            projector,
            theta,
            delta: config.delta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn spec(&self) -> ProjectionSpec {
        ProjectionSpec::new(self.theta, self.delta).expect("validated at training")
    }

    /// `σ_max/σ_min` of `X` over its numerical rank.
    pub fn kappa(&self) -> f64 {
        self.x_sigma[0] / self.x_sigma[self.x_rank - 1]
    }

    /// Condition number after the cap.
    pub fn kappa_retained(&self) -> f64 {
        self.x_sigma[0] / self.x_sigma[self.retained - 1]
    }

    /// The `K − 1` slow directions in input space, `d × (K−1)`.
    pub fn slow_basis(&self) -> Mat<f64> {
        let k1 = self.config.classes - 1;
        linalg::mat_mul(self.v.as_ref(), self.directions.as_ref().subcols(0, k1))
    }

    /// Whitened coordinates `z = D Vᵀ x`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let c = linalg::matvec_t(self.v.as_ref(), x);
        c.iter().zip(&self.whitening).map(|(c, w)| c * w).collect()
    }

    /// Candidate coefficients of every row of `x`, `n × c`.
    pub fn coefficients(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        linalg::mat_mul(x, self.projector.as_ref())
    }

    /// Norms of the whitened rows of `x`.
    pub fn whitened_norms(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        const CHUNK: usize = 2048;
        let mut out = Vec::with_capacity(x.nrows());
        let scaled = Mat::from_fn(self.v.nrows(), self.retained, |i, j| self.v[(i, j)] * self.whitening[j]);
        let mut start = 0;
        while start < x.nrows() {
            let len = CHUNK.min(x.nrows() - start);
            let z = linalg::mat_mul(x.subrows(start, len), scaled.as_ref());
            out.extend((0..len).map(|i| (0..z.ncols()).map(|j| z[(i, j)] * z[(i, j)]).sum::<f64>().sqrt()));
            start += len;
        }
        out
    }

    /// Projects one row given its candidate coefficients and whitened norm.
    /// `stream` identifies the query for the noise draws.
    pub fn project_coefficients(&self, coeffs: &[f64], z_norm: f64, stream: &[u64]) -> Result<Projection> {
        let noise = &self.config.noise;
        let (y, ratio) = match self.config.mode {
            Mode::Noisy => {
                let mut r = rng::stream(noise.seed, "projection", stream);
                let sigma = &self.zdot_sigma[..coeffs.len()];
                let p = noisy_linalg::project_coefficients(sigma, 0.0, coeffs, z_norm, &self.spec(), noise, &mut r)?;
                (p.coefficients, p.success_ratio)
            }
            Mode::Oracle => {
                let yn = linalg::norm(coeffs);
                if z_norm == 0.0 || yn < 1e-12 * z_norm {
                    return Err(Error::ProjectionFailed(format!(
                        "projected norm {yn:.3e} of whitened norm {z_norm:.3e}"
                    )));
                }
                (coeffs.to_vec(), yn / z_norm)
            }
        };
        let norm_estimate = if self.config.noisy() {
            let mut r = rng::stream(noise.seed, "output-norm", stream);
            noisy_linalg::estimate_norm(linalg::norm(&y), noise, &mut r)
        } else {
            linalg::norm(&y)
        };
        Ok(Projection {
            y,
            success_ratio: ratio,
            norm_estimate,
        })
    }

    /// Whitened coordinates of a query row, with a fresh whitening error when
    /// the model redraws it per query.
    pub fn whiten_query(&self, x: &[f64], stream: &[u64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} coordinates, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut z = self.whiten(x);
        if self.config.noisy() && self.config.redraw_whitening {
            let mut r = rng::stream(self.config.noise.seed, "whitening-query", stream);
            for zi in z.iter_mut() {
                *zi /= noisy_linalg::truncated_gaussian(&mut r, 1.0, self.config.noise.epsilon);
            }
        }
        Ok(z)
    }

    /// Projects one input row. Noisy draws come from streams keyed by `stream`.
    pub fn project(&self, x: &[f64], stream: &[u64]) -> Result<Projection> {
        let z = self.whiten_query(x, stream)?;
        let coeffs = linalg::matvec_t(self.directions.as_ref(), &z);
        self.project_coefficients(&coeffs, linalg::norm(&z), stream)
    }

    /// Oracle projections `Wᵀ B^{-1/2} x` of every row, `n × (K−1)`.
    pub fn project_oracle(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let k1 = self.config.classes - 1;
        linalg::mat_mul(x, self.projector.as_ref().subcols(0, k1))
    }

    /// Projects every row of `x`. Rows whose projection fails are reported as
    /// `None`.
    pub fn project_batch(&self, x: MatRef<'_, f64>, tag: u64) -> Vec<Option<Projection>> {
        if self.config.redraw_whitening && self.config.noisy() {
            return (0..x.nrows())
                .map(|i| self.project(&linalg::row(x, i), &[tag, i as u64, 0]).ok())
                .collect();
        }
        let coeffs = self.coefficients(x);
        let norms = self.whitened_norms(x);
        (0..x.nrows())
            .map(|i| {
                let c = linalg::row(coeffs.as_ref(), i);
                self.project_coefficients(&c, norms[i], &[tag, i as u64, 0]).ok()
            })
            .collect()
    }

    /// Slowness of each output coordinate, as the quadratic-form ratio
    /// `wᵀAw / wᵀBw`.
    pub fn delta_values(&self) -> Vec<f64> {
        let k1 = self.config.classes - 1;
        self.zdot_sigma[..k1].iter().map(|s| s * s).collect()
    }

    const MAGIC: &'static [u8; 8] = b"QSFAMDL1";

    pub fn save<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        let c = &self.config;
        w.bytes(Self::MAGIC)?;
        w.u64(match c.mode {
            Mode::Oracle => 0,
            Mode::Noisy => 1,
        })?;
        match c.kappa_mode {
            KappaMode::Full => {
                w.u64(0)?;
                w.f64(1.0)?;
            }
            KappaMode::Threshold(f) => {
                w.u64(1)?;
                w.f64(f)?;
            }
        }
        match c.theta_policy {
            ThetaPolicy::Auto => {
                w.u64(0)?;
                w.f64(0.0)?;
            }
            ThetaPolicy::Fixed(t) => {
                w.u64(1)?;
                w.f64(t)?;
            }
        }
        w.f64(c.delta)?;
        w.usize(c.classes)?;
        w.f64(c.noise.epsilon)?;
        w.f64(c.noise.eta)?;
        w.u64(c.noise.seed)?;
        w.u64(c.noise.enabled as u64)?;
        w.u64(c.redraw_whitening as u64)?;
        w.usize(self.n)?;
        w.usize(self.a)?;
        w.f64s(&self.x_sigma)?;
        w.usize(self.x_rank)?;
        w.usize(self.retained)?;
        w.mat(&self.v)?;
        w.f64s(&self.whitening)?;
        w.f64s(&self.zdot_sigma)?;
        w.mat(&self.directions)?;
        w.mat(&self.projector)?;
        w.f64(self.theta)?;
        w.f64(self.delta)?;
        w.finish()
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(Self::MAGIC)?;
        let mode = match r.u64()? {
            0 => Mode::Oracle,
            1 => Mode::Noisy,
            m => return Err(Error::Snapshot(format!("unknown mode tag {m}"))),
        };
        let kappa_mode = match (r.u64()?, r.f64()?) {
            (0, _) => KappaMode::Full,
            (1, f) => KappaMode::Threshold(f),
            (t, _) => return Err(Error::Snapshot(format!("unknown kappa tag {t}"))),
        };
        let theta_policy = match (r.u64()?, r.f64()?) {
            (0, _) => ThetaPolicy::Auto,
            (1, t) => ThetaPolicy::Fixed(t),
            (t, _) => return Err(Error::Snapshot(format!("unknown theta tag {t}"))),
        };
        let delta = r.f64()?;
        let classes = r.usize()?;
        let noise = NoiseConfig {
            epsilon: r.f64()?,
            eta: r.f64()?,
            seed: r.u64()?,
            enabled: r.u64()? != 0,
        };
        let redraw_whitening = r.u64()? != 0;
        let config = QsfaConfig {
            mode,
            kappa_mode,
            theta_policy,
            delta,
            classes,
            noise,
            redraw_whitening,
        };
        Ok(Self {
            config,
            n: r.usize()?,
            a: r.usize()?,
            x_sigma: r.f64s()?,
            x_rank: r.usize()?,
            retained: r.usize()?,
            v: r.mat()?,
            whitening: r.f64s()?,
            zdot_sigma: r.f64s()?,
            directions: r.mat()?,
            projector: r.mat()?,
            theta: r.f64()?,
            delta: r.f64()?,
        })
    }
}

/// Picks `θ` so that the noiseless projection keeps exactly `wanted`
/// directions of the ascending spectrum `sigma`.
///
/// Two bisections locate the bracket `[θ_lo, θ_hi)` of thresholds with the
/// right count. Inside it, thresholds for which every keep decision is
/// deterministic under `δθ` estimation noise are preferred; the midpoint of
/// that range is returned when it exists, the bracket midpoint otherwise.
pub fn auto_theta(sigma: &[f64], wanted: usize, delta: f64) -> Result<f64> {
    if wanted == 0 || wanted > sigma.len() {
        return Err(Error::invalid(format!(
            "cannot keep {wanted} of {} directions",
            sigma.len()
        )));
    }
    let count = |theta: f64| sigma.iter().filter(|&&s| s <= (1.0 + delta) * theta).count();
    let top = sigma.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    // Smallest θ whose count reaches `target`, by bisection.
    let first_reaching = |target: usize| -> f64 {
        let (mut lo, mut hi) = (0.0, 2.0 * top);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if count(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let lo = first_reaching(wanted);
    let hi = if wanted == sigma.len() { 2.0 * top } else { first_reaching(wanted + 1) };
    let kept = count(lo);
    if kept != wanted || hi <= lo {
        return Err(Error::ThresholdSearch { wanted, kept, lo, hi });
    }
    let robust_lo = sigma[wanted - 1];
    let robust_hi = sigma.get(wanted).map_or(f64::INFINITY, |s| s / (1.0 + 2.0 * delta));
    let theta = if robust_lo < robust_hi && robust_hi.is_finite() {
        0.5 * (robust_lo + robust_hi)
    } else {
        0.5 * (lo + hi)
    };
    debug_assert_eq!(count(theta), wanted);
    Ok(theta)
}

/// Per-vector statistics of `‖projected‖/‖whitened‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioStats {
    pub mean: f64,
    pub variance: f64,
    /// `‖Y‖_F/‖Z‖_F` over the whole sample.
    pub aggregate: f64,
    /// Rows whose whitened vector is zero.
    pub degenerate: usize,
}

/// Noiseless projection ratios of the rows of `x` onto the `K − 1` slow
/// directions.
pub fn projection_ratio(model: &QsfaModel, x: MatRef<'_, f64>) -> Result<RatioStats> {
    if x.nrows() == 0 {
        return Err(Error::invalid("empty sample"));
    }
    let y = model.project_oracle(x);
    let zn = model.whitened_norms(x);
    let mut ratios = Vec::with_capacity(x.nrows());
    let (mut ysq, mut zsq, mut degenerate) = (0.0, 0.0, 0);
    for (i, &z) in zn.iter().enumerate() {
        let yn = (0..y.ncols()).map(|j| y[(i, j)] * y[(i, j)]).sum::<f64>().sqrt();
        ysq += yn * yn;
        zsq += z * z;
        if z == 0.0 {
            degenerate += 1;
        } else {
            ratios.push(yn / z);
        }
    }
    let m = ratios.len().max(1) as f64;
    let mean = ratios.iter().sum::<f64>() / m;
    let variance = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m;
    Ok(RatioStats {
        mean,
        variance,
        aggregate: if zsq > 0.0 { (ysq / zsq).sqrt() } else { 0.0 },
        degenerate,
    })
}

/// Slowness of each column of `y`, measured as the mean squared pair
/// difference over the mean square of the column.
pub fn pair_delta_values(y: MatRef<'_, f64>, pairs: &DerivativePairs) -> Vec<f64> {
    let n = y.nrows() as f64;
    (0..y.ncols())
        .map(|j| {
            let num: f64 = pairs
                .pairs
                .iter()
                .map(|&(a, b)| (y[(a as usize, j)] - y[(b as usize, j)]).powi(2))
                .sum::<f64>()
                / pairs.count() as f64;
            let den: f64 = (0..y.nrows()).map(|i| y[(i, j)].powi(2)).sum::<f64>() / n;
            num / den
        })
        .collect()
}

/// Draws a uniformly random orthonormal `d × k` frame (for optimality checks).
pub fn random_frame<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Mat<f64> {
    let g = Mat::from_fn(d, k, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng));
    let (u, _, _) = linalg::thin_svd(g.as_ref()).expect("finite gaussian matrix");
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_theta_isolates_count() {
        let s = [0.1, 0.2, 0.5, 0.9];
        let t = auto_theta(&s, 2, 0.05).unwrap();
        assert!(t >= 0.2 && 1.1 * t < 0.5, "{t}");
        assert!(matches!(auto_theta(&[0.1, 0.3, 0.3], 2, 0.05), Err(Error::ThresholdSearch { .. })));
    }
}
