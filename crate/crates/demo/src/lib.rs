//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three interactive pieces: a Frobenius-distance classifier over synthetic
//! planar clusters, the keep/drop band of a thresholded projection, and
//! empirical sampling from an amplitude tree.

use qsfa::noisy_linalg::{self, NoiseConfig, ProjectionSpec};
use qsfa::qfd::{self, ClusterSummary};
use qsfa::qram::AmplitudeTree;
use qsfa::rng;
use rand::Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: qsfa::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Labelled planar points drawn around evenly spaced centres.
#[wasm_bindgen]
pub struct Clusters {
    points: Vec<[f64; 2]>,
    labels: Vec<usize>,
    summaries: Vec<ClusterSummary>,
}

#[wasm_bindgen]
impl Clusters {
    /// `classes` Gaussian blobs of `per_class` points with standard deviation
    /// `spread`, centred on a circle of radius 1.
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, per_class: usize, spread: f64, seed: u64) -> Result<Clusters, JsError> {
        if !(2..=8).contains(&classes) || per_class == 0 || !(spread >= 0.0) {
            return Err(JsError::new("need 2 to 8 classes, at least one point each and a nonnegative spread"));
        }
        let mut r = rng::stream(seed, "demo-points", &[]);
        let mut points = Vec::with_capacity(classes * per_class);
        let mut labels = Vec::with_capacity(classes * per_class);
        for k in 0..classes {
            let a = std::f64::consts::TAU * k as f64 / classes as f64;
            for _ in 0..per_class {
                // Box-Muller pair.
                let u: f64 = 1.0 - r.random::<f64>();
                let v: f64 = r.random();
                let rad = (-2.0 * u.ln()).sqrt() * spread;
                let t = std::f64::consts::TAU * v;
                points.push([a.cos() + rad * t.cos(), a.sin() + rad * t.sin()]);
                labels.push(k);
            }
        }
        let summaries = summarize(&points, &labels, classes);
        Ok(Clusters {
            points,
            labels,
            summaries,
        })
    }

    pub fn classes(&self) -> usize {
        self.summaries.len()
    }

    /// Flat `[x, y, label, x, y, label, ...]`.
    pub fn points(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.labels)
            .flat_map(|(p, &l)| [p[0], p[1], l as f64])
            .collect()
    }

    /// Classifies `(x, y)`. Returns `[label, shots, F_0.., F̂_0..]` with the
    /// exact distances followed by their shot estimates.
    pub fn classify(&self, x: f64, y: f64, eta: f64, seed: u64) -> Result<Vec<f64>, JsError> {
        let (label, est) = qfd::classify(&self.summaries, &[x, y], eta, seed, &[0]).map_err(js_err)?;
        let mut out = vec![label as f64, est[0].shots as f64];
        out.extend(est.iter().map(|e| e.f_exact));
        out.extend(est.iter().map(|e| e.f_hat));
        Ok(out)
    }

    /// Labels on a `cells × cells` grid over `[-extent, extent]²`, row-major
    /// from the top-left corner.
    pub fn label_map(&self, cells: usize, extent: f64, eta: f64, seed: u64) -> Result<Vec<u8>, JsError> {
        let mut out = Vec::with_capacity(cells * cells);
        for row in 0..cells {
            for col in 0..cells {
                let x = -extent + 2.0 * extent * (col as f64 + 0.5) / cells as f64;
                let y = extent - 2.0 * extent * (row as f64 + 0.5) / cells as f64;
                let id = [(row * cells + col) as u64];
                let (l, _) = qfd::classify(&self.summaries, &[x, y], eta, seed, &id).map_err(js_err)?;
                out.push(l as u8);
            }
        }
        Ok(out)
    }
}

/// Cluster summaries of planar points.
pub fn summarize(points: &[[f64; 2]], labels: &[usize], classes: usize) -> Vec<ClusterSummary> {
    let mut out: Vec<ClusterSummary> = (0..classes)
        .map(|k| ClusterSummary {
            k,
            frob_sq: 0.0,
            size: 0,
            sum: vec![0.0; 2],
        })
        .collect();
    for (p, &l) in points.iter().zip(labels) {
        let c = &mut out[l];
        c.frob_sq += p[0] * p[0] + p[1] * p[1];
        c.size += 1;
        c.sum[0] += p[0];
        c.sum[1] += p[1];
    }
    out
}

/// Fraction of `trials` noisy threshold decisions that keep each singular
/// value, with cutoff `(1 + δ)θ` and estimation precision `δθ`.
#[wasm_bindgen]
pub fn keep_frequencies(sigma: Vec<f64>, theta: f64, delta: f64, trials: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let spec = ProjectionSpec::new(theta, delta).map_err(js_err)?;
    if sigma.is_empty() || trials == 0 {
        return Err(JsError::new("need singular values and at least one trial"));
    }
    let cfg = NoiseConfig {
        epsilon: 0.0,
        eta: 0.0,
        seed,
        enabled: true,
    };
    let coeffs = vec![1.0; sigma.len()];
    let norm = (sigma.len() as f64).sqrt();
    let mut kept = vec![0usize; sigma.len()];
    for t in 0..trials {
        let mut r = rng::stream(seed, "demo-band", &[t as u64]);
        if let Ok(p) = noisy_linalg::project_coefficients(&sigma, 0.0, &coeffs, norm, &spec, &cfg, &mut r) {
            for (k, &b) in kept.iter_mut().zip(&p.kept) {
                *k += usize::from(b);
            }
        }
    }
    Ok(kept.iter().map(|&k| k as f64 / trials as f64).collect())
}

/// Band boundaries `[θ, (1+δ)θ − δθ, (1+δ)θ, (1+δ)θ + δθ]`.
#[wasm_bindgen]
pub fn band_edges(theta: f64, delta: f64) -> Result<Vec<f64>, JsError> {
    let s = ProjectionSpec::new(theta, delta).map_err(js_err)?;
    Ok(vec![theta, s.cutoff() - s.precision(), s.cutoff(), s.cutoff() + s.precision()])
}

/// Samples `draws` leaves of an amplitude tree over `values`. Returns the
/// exact probabilities followed by the empirical frequencies.
#[wasm_bindgen]
pub fn sample_histogram(values: Vec<f64>, draws: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    if values.is_empty() || draws == 0 {
        return Err(JsError::new("need values and at least one draw"));
    }
    let tree = AmplitudeTree::new(&values);
    let amps = tree.amplitudes().map_err(js_err)?;
    let mut counts = vec![0usize; values.len()];
    let mut r = rng::stream(seed, "demo-qram", &[]);
    for _ in 0..draws {
        counts[tree.sample(&mut r).map_err(js_err)?] += 1;
    }
    let mut out: Vec<f64> = amps.iter().map(|a| a * a).collect();
    out.extend(counts.iter().map(|&c| c as f64 / draws as f64));
    Ok(out)
}

/// Depth of the tree over `len` leaves.
#[wasm_bindgen]
pub fn tree_depth(len: usize) -> usize {
    AmplitudeTree::new(&vec![1.0; len.max(1)]).depth()
}
