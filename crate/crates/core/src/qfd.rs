//! Frobenius-distance estimation and classification.
//!
//! `F_k(x0) = ‖X_k − X0‖_F² / (2(‖X_k‖_F² + |T_k|‖x0‖²))`, where `X0` repeats
//! `x0` once per cluster row. Expanding the numerator gives
//! `‖X_k‖_F² − 2⟨Σ_i x(i), x0⟩ + |T_k|‖x0‖²`, so a cluster is summarized by
//! its squared Frobenius norm, its size and its row sum.

use faer::MatRef;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::qram::QramStore;
use crate::rng;
use crate::sfa::QsfaModel;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSummary {
    pub k: usize,
    pub frob_sq: f64,
    pub size: usize,
    pub sum: Vec<f64>,
}

impl ClusterSummary {
    /// One summary per class of the labelled rows.
    pub fn from_rows(rows: MatRef<'_, f64>, labels: &[usize], classes: usize) -> Result<Vec<Self>> {
        let d = rows.ncols();
        let mut out: Vec<Self> = (0..classes)
            .map(|k| Self {
                k,
                frob_sq: 0.0,
                size: 0,
                sum: vec![0.0; d],
            })
            .collect();
        for j in 0..d {
            let col = linalg::col_slice(rows, j);
            for (i, &v) in col.iter().enumerate() {
                let c = &mut out[labels[i]];
                c.sum[j] += v;
                c.frob_sq += v * v;
            }
        }
        for &l in labels {
            out[l].size += 1;
        }
        if let Some(c) = out.iter().find(|c| c.size == 0) {
            return Err(Error::invalid(format!("class {} has no rows", c.k)));
        }
        Ok(out)
    }

    /// Summaries read back from a store's trees.
    pub fn from_store(store: &QramStore) -> Vec<Self> {
        (0..store.classes())
            .map(|k| {
                let mut sum = vec![0.0; store.d()];
                for &i in store.members(k) {
                    for (s, v) in sum.iter_mut().zip(store.row_tree(i).values()) {
                        *s += v;
                    }
                }
                Self {
                    k,
                    frob_sq: store.class_frobenius_sq(k),
                    size: store.class_size(k),
                    sum,
                }
            })
            .collect()
    }

    /// `N_k = ‖X_k‖_F² + |T_k|‖x0‖²`.
    pub fn normalizer(&self, x0_norm_sq: f64) -> f64 {
        self.frob_sq + self.size as f64 * x0_norm_sq
    }

    pub fn distance(&self, x0: &[f64]) -> Result<f64> {
        self.distance_scaled(x0, 1.0, 1.0)
    }

    /// `F_k` with the cluster scaled by `c` and the test point by `c0`.
    pub fn distance_scaled(&self, x0: &[f64], c: f64, c0: f64) -> Result<f64> {
        let nx = linalg::dot(x0, x0) * c0 * c0;
        let cross = linalg::dot(&self.sum, x0) * c * c0;
        let fk = c * c * self.frob_sq;
        let t = self.size as f64;
        let den = 2.0 * (fk + t * nx);
        if den <= 0.0 {
            return Err(Error::ZeroVector(format!(
                "cluster {} and the test point are both zero",
                self.k
            )));
        }
        Ok(((fk - 2.0 * cross + t * nx) / den).clamp(0.0, 1.0))
    }
}

/// `F_k` by explicit row differences.
pub fn frobenius_distance_exact(cluster: MatRef<'_, f64>, x0: &[f64]) -> Result<f64> {
    if cluster.nrows() == 0 {
        return Err(Error::invalid("empty cluster"));
    }
    let (mut num, mut frob) = (0.0, 0.0);
    for i in 0..cluster.nrows() {
        for (j, &x) in x0.iter().enumerate() {
            let v = cluster[(i, j)];
            num += (v - x).powi(2);
            frob += v * v;
        }
    }
    let den = 2.0 * (frob + cluster.nrows() as f64 * linalg::dot(x0, x0));
    if den == 0.0 {
        return Err(Error::ZeroVector("cluster and test point are both zero".into()));
    }
    Ok(num / den)
}

/// Shots per estimate: `⌈ln(40K)/(2η²)⌉`, the two-sided Hoeffding count for
/// error `η` with failure probability `1/(20K)`.
pub fn shot_count(eta: f64, classes: usize) -> usize {
    ((40.0 * classes as f64).ln() / (2.0 * eta * eta)).ceil() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceEstimate {
    pub k: usize,
    pub f_exact: f64,
    pub f_hat: f64,
    pub shots: usize,
    pub successes: usize,
    pub eta: f64,
}

/// Estimates a probability `f` from `shots` Bernoulli draws.
pub fn sample_shots<R: Rng + ?Sized>(f: f64, shots: usize, rng: &mut R) -> usize {
    (0..shots).filter(|_| rng.random::<f64>() < f).count()
}

/// Shot estimate of a precomputed distance. `eta = 0` returns the exact value.
pub fn estimate_from_exact<R: Rng + ?Sized>(k: usize, f_exact: f64, eta: f64, classes: usize, rng: &mut R) -> DistanceEstimate {
    estimate_with_shots(k, f_exact, eta, shot_count(eta, classes), rng)
}

/// Shot estimate with an explicit shot count. `eta = 0` returns the exact value.
pub fn estimate_with_shots<R: Rng + ?Sized>(k: usize, f_exact: f64, eta: f64, shots: usize, rng: &mut R) -> DistanceEstimate {
    if eta == 0.0 || shots == 0 {
        return DistanceEstimate {
            k,
            f_exact,
            f_hat: f_exact,
            shots: 0,
            successes: 0,
            eta,
        };
    }
    let successes = sample_shots(f_exact, shots, rng);
    DistanceEstimate {
        k,
        f_exact,
        f_hat: successes as f64 / shots as f64,
        shots,
        successes,
        eta,
    }
}

pub fn qfe_estimate<R: Rng + ?Sized>(
    cluster: &ClusterSummary,
    x0: &[f64],
    eta: f64,
    classes: usize,
    rng: &mut R,
) -> Result<DistanceEstimate> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::invalid(format!("eta {eta} must lie in [0, 1/2)")));
    }
    Ok(estimate_from_exact(cluster.k, cluster.distance(x0)?, eta, classes, rng))
}

/// Index of the smallest value; ties go to the smallest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Most frequent label; ties go to the smallest label.
pub fn majority(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// Argmin over the per-class shot estimates. The estimate for class `k` uses
/// the stream `(seed, "shots", id ++ [k])`.
pub fn classify(clusters: &[ClusterSummary], x0: &[f64], eta: f64, seed: u64, id: &[u64]) -> Result<(usize, Vec<DistanceEstimate>)> {
    if clusters.len() < 2 {
        return Err(Error::invalid("classification needs at least two clusters"));
    }
    let k = clusters.len();
    let mut key = id.to_vec();
    key.push(0);
    let est = clusters
        .iter()
        .map(|c| {
            *key.last_mut().expect("nonempty") = c.k as u64;
            let mut r = rng::stream(seed, "shots", &key);
            qfe_estimate(c, x0, eta, k, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let f: Vec<f64> = est.iter().map(|e| e.f_hat).collect();
    Ok((clusters[argmin(&f)].k, est))
}

/// Majority vote over `rounds` independent [`classify`] calls.
pub fn classify_majority(clusters: &[ClusterSummary], x0: &[f64], eta: f64, rounds: usize, seed: u64, id: &[u64]) -> Result<usize> {
    if rounds == 0 || rounds.is_multiple_of(2) {
        return Err(Error::invalid(format!("rounds must be odd, got {rounds}")));
    }
    let mut key = id.to_vec();
    key.push(0);
    let labels = (0..rounds)
        .map(|r| {
            *key.last_mut().expect("nonempty") = r as u64;
            classify(clusters, x0, eta, seed, &key).map(|(l, _)| l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(majority(&labels, clusters.len()))
}

/// Outcome for one test point.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// `None` when the projection failed (a rejected point).
    pub predicted: Option<usize>,
    /// Shot estimates of the last round, one per class (NaN when rejected).
    pub f_hat: Vec<f64>,
    pub shots: usize,
}

/// Classifier over projected training outputs: cluster summaries built from
/// the store plus the exact class norms used for norm-estimation noise.
#[derive(Clone, Debug)]
pub struct EndToEnd {
    pub clusters: Vec<ClusterSummary>,
    pub eta: f64,
    pub rounds: usize,
    pub seed: u64,
    /// Apply multiplicative norm-estimation noise.
    pub noisy_norms: bool,
    /// Shots per estimate; defaults to [`shot_count`].
    pub shots: usize,
}

impl EndToEnd {
    pub fn new(store: &QramStore, eta: f64, rounds: usize, seed: u64, noisy_norms: bool) -> Result<Self> {
        Self::from_clusters(ClusterSummary::from_store(store), eta, rounds, seed, noisy_norms)
    }

    pub fn from_clusters(clusters: Vec<ClusterSummary>, eta: f64, rounds: usize, seed: u64, noisy_norms: bool) -> Result<Self> {
        if rounds == 0 || rounds.is_multiple_of(2) {
            return Err(Error::invalid(format!("rounds must be odd, got {rounds}")));
        }
        if clusters.len() < 2 {
            return Err(Error::invalid("classification needs at least two clusters"));
        }
        if !(0.0..0.5).contains(&eta) {
            return Err(Error::invalid(format!("eta {eta} must lie in [0, 1/2)")));
        }
        let shots = if eta > 0.0 { shot_count(eta, clusters.len()) } else { 0 };
        Ok(Self {
            clusters,
            eta,
            rounds,
            seed,
            noisy_norms,
            shots,
        })
    }

    /// One round on an already projected test point: estimated norms enter
    /// through the normalizers, then shots are drawn and the argmin taken.
    pub fn round(&self, y0: &[f64], y0_norm_estimate: f64, test_id: u64, round: u64) -> Result<(usize, Vec<DistanceEstimate>)> {
        let k = self.clusters.len();
        let true_norm = linalg::norm(y0);
        let c0 = if self.noisy_norms && true_norm > 0.0 { y0_norm_estimate / true_norm } else { 1.0 };
        let mut est = Vec::with_capacity(k);
        for c in &self.clusters {
            let key = [test_id, c.k as u64, round];
            let scale = if self.noisy_norms && self.eta > 0.0 {
                let mut r = rng::stream(self.seed, "class-norm", &key);
                1.0 + r.random_range(-self.eta..=self.eta)
            } else {
                1.0
            };
            let f = c.distance_scaled(y0, scale, c0)?;
            let mut r = rng::stream(self.seed, "shots", &key);
            est.push(estimate_with_shots(c.k, f, self.eta, self.shots, &mut r));
        }
        let f: Vec<f64> = est.iter().map(|e| e.f_hat).collect();
        Ok((self.clusters[argmin(&f)].k, est))
    }

    /// Classifies a test point from its candidate coefficients and whitened
    /// norm, with a majority over rounds. Each round redraws the projection
    /// noise. A failed projection in any round rejects the point.
    pub fn classify_coefficients(&self, model: &QsfaModel, coeffs: &[f64], z_norm: f64, test_id: u64) -> Result<Classification> {
        let mut labels = Vec::with_capacity(self.rounds);
        let mut last = Vec::new();
        for r in 0..self.rounds as u64 {
            let p = match model.project_coefficients(coeffs, z_norm, &[1, test_id, r]) {
                Ok(p) => p,
                Err(Error::ProjectionFailed(_)) => return Ok(self.rejected()),
                Err(e) => return Err(e),
            };
            let (l, est) = self.round(&p.y, p.norm_estimate, test_id, r)?;
            labels.push(l);
            last = est;
        }
        Ok(self.finish(&labels, &last))
    }

    /// Classifies a point already living in the clusters' space, without any
    /// projection step.
    pub fn classify_point(&self, y0: &[f64], test_id: u64) -> Result<Classification> {
        let norm = linalg::norm(y0);
        let mut labels = Vec::with_capacity(self.rounds);
        let mut last = Vec::new();
        for r in 0..self.rounds as u64 {
            let (l, est) = self.round(y0, norm, test_id, r)?;
            labels.push(l);
            last = est;
        }
        Ok(self.finish(&labels, &last))
    }

    pub fn classify(&self, model: &QsfaModel, x0: &[f64], test_id: u64) -> Result<Classification> {
        let z = model.whiten_query(x0, &[1, test_id])?;
        let coeffs = linalg::matvec_t(model.directions.as_ref(), &z);
        self.classify_coefficients(model, &coeffs, linalg::norm(&z), test_id)
    }

    fn finish(&self, labels: &[usize], last: &[DistanceEstimate]) -> Classification {
        Classification {
            predicted: Some(majority(labels, self.clusters.len())),
            f_hat: last.iter().map(|e| e.f_hat).collect(),
            shots: last.first().map_or(0, |e| e.shots),
        }
    }

    pub fn rejected(&self) -> Classification {
        Classification {
            predicted: None,
            f_hat: vec![f64::NAN; self.clusters.len()],
            shots: 0,
        }
    }
}

/// End-to-end classification of one raw test row through a trained model and
/// a store of projected training outputs.
pub fn end_to_end_classify(model: &QsfaModel, store: &QramStore, x0: &[f64], eta: f64, seed: u64, test_id: u64) -> Result<Classification> {
    let e = EndToEnd::new(store, eta, 1, seed, true)?;
    e.classify(model, x0, test_id)
}

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestRecord {
    pub test_id: usize,
    pub true_label: usize,
    pub classification: Classification,
}

impl TestRecord {
    pub fn header(classes: usize) -> String {
        let mut h = String::from("test_id,true_label,predicted,reject");
        for k in 0..classes {
            h.push_str(&format!(",f_hat_{k}"));
        }
        h.push_str(",shots");
        h
    }

    pub fn csv_row(&self) -> String {
        let c = &self.classification;
        let mut s = format!(
            "{},{},{},{}",
            self.test_id,
            self.true_label,
            c.predicted.map_or(-1, |p| p as i64),
            u8::from(c.predicted.is_none())
        );
        for f in &c.f_hat {
            if f.is_nan() {
                s.push(',');
            } else {
                s.push_str(&format!(",{f:.6}"));
            }
        }
        s.push_str(&format!(",{}", c.shots));
        s
    }

    pub fn correct(&self) -> bool {
        self.classification.predicted == Some(self.true_label)
    }
}
