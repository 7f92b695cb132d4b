//! Matrix parameters that drive the simulated running time, and the cost
//! model evaluated on them.

use faer::MatRef;

use crate::data::{self, DerivativePairs, DerivativeSpec, PreprocessConfig, Preprocessor, RawDataset};
use crate::error::{Error, Result};
use crate::linalg;

/// Grid step for the exponent `p` in `μ`.
pub const MU_GRID_STEP: f64 = 0.05;
const MU_GRID: usize = 21;

/// Anything that can hand out its rows one at a time.
pub trait RowSource {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn row_into(&self, i: usize, buf: &mut [f64]);
}

impl RowSource for MatRef<'_, f64> {
    fn nrows(&self) -> usize {
        MatRef::nrows(self)
    }

    fn ncols(&self) -> usize {
        MatRef::ncols(self)
    }

    fn row_into(&self, i: usize, buf: &mut [f64]) {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = self[(i, j)];
        }
    }
}

/// Derivative rows generated from sampled pairs on demand.
pub struct PairRows<'a> {
    pub x: MatRef<'a, f64>,
    pub pairs: &'a DerivativePairs,
}

impl RowSource for PairRows<'_> {
    fn nrows(&self) -> usize {
        self.pairs.count()
    }

    fn ncols(&self) -> usize {
        self.x.ncols()
    }

    fn row_into(&self, r: usize, buf: &mut [f64]) {
        let (a, b) = self.pairs.pairs[r];
        for (j, v) in buf.iter_mut().enumerate() {
            *v = self.x[(a as usize, j)] - self.x[(b as usize, j)];
        }
    }
}

/// Entry statistics of a matrix divided by `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryStats {
    pub frob: f64,
    pub max_l1: f64,
    pub mu: f64,
    /// Grid point achieving `mu`, or `None` when the Frobenius norm wins.
    pub mu_p: Option<f64>,
    /// `sqrt(s_{2p}(M) s_{2(1−p)}(Mᵀ))` at each grid point.
    pub mu_grid: Vec<f64>,
}

/// One pass over the entries. `s_q(M) = max_i Σ_j |m_ij|^q`, with `|0|^0`
/// taken as 0 so that `s_0` counts nonzeros.
pub fn entry_stats(m: &dyn RowSource, scale: f64) -> EntryStats {
    let (n, d) = (m.nrows(), m.ncols());
    let mut buf = vec![0.0; d];
    let mut col_sums = vec![[0.0f64; MU_GRID]; d];
    let mut best_row = [0.0f64; MU_GRID];
    let (mut frob_sq, mut max_l1) = (0.0f64, 0.0f64);
    let inv = 1.0 / scale;
    for i in 0..n {
        m.row_into(i, &mut buf);
        let mut row = [0.0f64; MU_GRID];
        let mut l1 = 0.0;
        for (j, &raw) in buf.iter().enumerate() {
            let v = (raw * inv).abs();
            if v == 0.0 {
                continue;
            }
            l1 += v;
            frob_sq += v * v;
            // Powers v^(0.1 k) for k = 0..=20 by repeated multiplication.
            let step = v.powf(0.1);
            let mut pw = [0.0f64; MU_GRID];
            let mut acc = 1.0;
            for p in pw.iter_mut() {
                *p = acc;
                acc *= step;
            }
            pw[10] = v;
            pw[20] = v * v;
            for k in 0..MU_GRID {
                row[k] += pw[k];
                col_sums[j][k] += pw[MU_GRID - 1 - k];
            }
        }
        max_l1 = max_l1.max(l1);
        for k in 0..MU_GRID {
            best_row[k] = best_row[k].max(row[k]);
        }
    }
    let mut best_col = [0.0f64; MU_GRID];
    for c in &col_sums {
        for k in 0..MU_GRID {
            best_col[k] = best_col[k].max(c[k]);
        }
    }
    let frob = frob_sq.sqrt();
    let mu_grid: Vec<f64> = (0..MU_GRID).map(|k| (best_row[k] * best_col[k]).sqrt()).collect();
    let (mut mu, mut mu_p) = (frob, None);
    for (k, &g) in mu_grid.iter().enumerate() {
        if g < mu {
            mu = g;
            mu_p = Some(k as f64 * MU_GRID_STEP);
        }
    }
    EntryStats {
        frob,
        max_l1,
        mu,
        mu_p,
        mu_grid,
    }
}

/// `σ_max / σ_j` with `j = ⌈fraction · rank⌉` (descending order, counted by
/// number of singular values).
pub fn kappa_threshold(spectrum: &[f64], rank: usize, fraction: f64) -> f64 {
    if rank == 0 {
        return f64::INFINITY;
    }
    let j = ((fraction * rank as f64).ceil() as usize).clamp(1, rank);
    spectrum[0] / spectrum[j - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixProfile {
    /// Frobenius norm of the spectrally normalized matrix.
    pub frob: f64,
    pub max_l1: f64,
    pub mu: f64,
    pub mu_p: Option<f64>,
    pub kappa: f64,
    pub kappa_t: f64,
    pub kappa_fraction: f64,
    pub rank: usize,
    /// Largest singular value before normalization.
    pub scale: f64,
    /// Singular values, descending, before normalization.
    pub spectrum: Vec<f64>,
}

impl MatrixProfile {
    /// Profile from rows and a precomputed descending singular spectrum.
    pub fn from_parts(m: &dyn RowSource, spectrum: Vec<f64>, tol: f64, fraction: f64) -> Result<Self> {
        let scale = spectrum.first().copied().unwrap_or(0.0);
        if scale <= 0.0 {
            return Err(Error::ZeroMatrix);
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("kappa fraction {fraction} must lie in (0, 1]")));
        }
        let rank = spectrum.iter().take_while(|&&s| s > tol).count();
        let e = entry_stats(m, scale);
        Ok(Self {
            frob: e.frob,
            max_l1: e.max_l1,
            mu: e.mu,
            mu_p: e.mu_p,
            kappa: spectrum[0] / spectrum[rank - 1],
            kappa_t: kappa_threshold(&spectrum, rank, fraction),
            kappa_fraction: fraction,
            rank,
            scale,
            spectrum,
        })
    }

    /// Profile of a dense matrix, spectrum from its Gram eigenvalues.
    pub fn of(m: MatRef<'_, f64>, fraction: f64) -> Result<Self> {
        let spectrum = gram_spectrum(linalg::gram(m).as_ref())?;
        let tol = linalg::GRAM_RANK_TOL * spectrum.first().copied().unwrap_or(0.0);
        Self::from_parts(&m, spectrum, tol, fraction)
    }

    /// Profile of the derivative matrix defined by `pairs` over `x`.
    pub fn of_pairs(x: MatRef<'_, f64>, pairs: &DerivativePairs, fraction: f64) -> Result<Self> {
        let spectrum = gram_spectrum(pairs.covariance(x).as_ref())?;
        let tol = linalg::GRAM_RANK_TOL * spectrum.first().copied().unwrap_or(0.0);
        Self::from_parts(&PairRows { x, pairs }, spectrum, tol, fraction)
    }

    pub fn frob_sq(&self) -> f64 {
        self.frob * self.frob
    }
}

/// Singular values from the eigenvalues of a Gram matrix, descending.
pub fn gram_spectrum(gram: MatRef<'_, f64>) -> Result<Vec<f64>> {
    Ok(linalg::sym_eigenvalues_desc(gram)?
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostInputs {
    pub kappa: f64,
    pub mu_x: f64,
    pub mu_xdot: f64,
    pub theta: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub classes: usize,
    /// `‖Z‖/‖projected‖`, the inverse of the mean projection ratio.
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    pub inputs: CostInputs,
    pub qsfa_cost: f64,
    pub classifier_cost: f64,
}

/// `qsfa = (κ μ(X) ln(1/ε) + (μ(X) + μ(Ẋ))/(δθ)) · ratio` and
/// `classifier = qsfa · K/η`, with polylogarithmic factors set to 1.
pub fn estimate_cost(inputs: CostInputs) -> Result<CostEstimate> {
    let i = inputs;
    let positive = [i.kappa, i.mu_x, i.mu_xdot, i.theta, i.delta, i.eta, i.ratio];
    if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(i.epsilon > 0.0 && i.epsilon < 1.0) || i.classes == 0 {
        return Err(Error::invalid(format!("cost inputs out of range: {i:?}")));
    }
    let qsfa_cost = (i.kappa * i.mu_x * (1.0 / i.epsilon).ln() + (i.mu_x + i.mu_xdot) / (i.delta * i.theta)) * i.ratio;
    Ok(CostEstimate {
        inputs,
        qsfa_cost,
        classifier_cost: qsfa_cost * i.classes as f64 / i.eta,
    })
}

impl CostEstimate {
    pub const CSV_HEADER: &'static str =
        "kappa,mu_x,mu_xdot,theta,delta,epsilon,eta,classes,ratio,qsfa_cost,classifier_cost";

    pub fn csv_row(&self) -> String {
        let i = &self.inputs;
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:e},{:.6},{},{:.6},{:.6e},{:.6e}",
            i.kappa, i.mu_x, i.mu_xdot, i.theta, i.delta, i.epsilon, i.eta, i.classes, i.ratio, self.qsfa_cost, self.classifier_cost
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Number of training rows.
    N,
    /// PCA dimension before expansion.
    D,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Self::N),
            "d" => Ok(Self::D),
            _ => Err(Error::Config(format!("sweep axis must be `n` or `d`, got `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::N => "n",
            Self::D => "d",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub axis_value: usize,
    pub x: MatrixProfile,
    pub xdot: MatrixProfile,
}

pub const PROFILE_CSV_HEADER: &str = "axis_value,matrix_tag,frob,max_l1,mu,kappa,kappa_t";

pub fn profile_csv_row(axis_value: usize, tag: &str, p: &MatrixProfile) -> String {
    format!(
        "{axis_value},{tag},{:.6},{:.6},{:.6},{:.6},{:.6}",
        p.frob, p.max_l1, p.mu, p.kappa, p.kappa_t
    )
}

/// Profiles `X` and `Ẋ` at each grid point, varying the training-row count
/// (`n`) or the PCA dimension (`d`).
pub fn sensitivity_sweep(
    train: &RawDataset,
    base: &PreprocessConfig,
    derivatives: &DerivativeSpec,
    axis: SweepAxis,
    grid: &[usize],
    fraction: f64,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    grid.iter()
        .map(|&g| {
            let (subset, cfg) = match axis {
                SweepAxis::N => (train.head(g), base.clone()),
                SweepAxis::D => (
                    train.clone(),
                    PreprocessConfig {
                        pca_dim: Some(g),
                        ..base.clone()
                    },
                ),
            };
            let labeled = subset.labeled()?;
            let (_, x) = Preprocessor::fit(subset.images.as_ref(), &cfg)?;
            let pairs = data::sample_pairs(&labeled.class_index, derivatives)?;
            Ok(SweepPoint {
                axis_value: g,
                x: MatrixProfile::of(x.as_ref(), fraction)?,
                xdot: MatrixProfile::of_pairs(x.as_ref(), &pairs, fraction)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    #[test]
    fn identity_profile() {
        let m = Mat::<f64>::identity(5, 5);
        let p = MatrixProfile::of(m.as_ref(), 0.995).unwrap();
        assert!((p.frob - 5f64.sqrt()).abs() < 1e-12);
        assert!((p.max_l1 - 1.0).abs() < 1e-12);
        assert!((p.mu - 1.0).abs() < 1e-12);
        assert!((p.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_plug_in() {
        let c = estimate_cost(CostInputs {
            kappa: 1.0,
            mu_x: 1.0,
            mu_xdot: 1.0,
            theta: 1.0,
            delta: 1.0,
            epsilon: (-1f64).exp(),
            eta: 0.5,
            classes: 1,
            ratio: 1.0,
        })
        .unwrap();
        assert!((c.qsfa_cost - 3.0).abs() < 1e-12);
    }
}
