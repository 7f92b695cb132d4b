//! MNIST loading, preprocessing and derivative-pair sampling.

use std::fs;
use std::io::Read;
use std::path::Path;

use faer::{Mat, MatRef};
use flate2::read::GzDecoder;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Largest expanded dimension accepted by [`polynomial_expand`].
pub const MAX_EXPANDED_DIM: usize = 1_000_000;

/// Pixels scaled to `[0, 1]` with their class labels.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub images: Mat<f64>,
    pub labels: Vec<usize>,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` images, or all of them when `n` exceeds the count.
    pub fn head(&self, n: usize) -> RawDataset {
        let n = n.min(self.len());
        RawDataset {
            images: self.images.as_ref().subrows(0, n).to_owned(),
            labels: self.labels[..n].to_vec(),
            image_rows: self.image_rows,
            image_cols: self.image_cols,
        }
    }

    pub fn labeled(&self) -> Result<LabeledMatrix> {
        LabeledMatrix::new(self.images.clone(), self.labels.clone(), MNIST_CLASSES)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "file ends inside the header"))
}

/// Parsed IDX image file: count, rows, cols and the pixel bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected {IMAGE_MAGIC:#010x} for images, found {magic:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    let rows = be_u32(bytes, 8, "rows")? as usize;
    let cols = be_u32(bytes, 12, "cols")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            "pixels",
            format!("truncated: {count} images need {need} bytes, found {}", body.len()),
        ));
    }
    Ok((count, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected {LABEL_MAGIC:#010x} for labels, found {magic:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            "labels",
            format!("truncated: {count} labels declared, {} present", body.len()),
        ));
    }
    Ok(&body[..count])
}

/// Builds a dataset from raw IDX bytes (already decompressed).
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<RawDataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::format(
            "count",
            format!("{count} images but {} labels", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= MNIST_CLASSES) {
        return Err(Error::format("labels", format!("label {bad} is not below {MNIST_CLASSES}")));
    }
    let d = rows * cols;
    let images = Mat::from_fn(count, d, |i, j| f64::from(pixels[i * d + j]) / 255.0);
    Ok(RawDataset {
        images,
        labels: labels.iter().map(|&l| l as usize).collect(),
        image_rows: rows,
        image_cols: cols,
    })
}

/// Loads an IDX image/label file pair. Gzip-compressed files are detected by
/// their magic bytes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<RawDataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    dataset_from_idx(&images, &labels)
}

/// Serializes images (values in `[0,1]`, rounded to bytes) as an IDX image file.
pub fn encode_idx_images(images: MatRef<'_, f64>, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(images.ncols(), rows * cols);
    let mut out = Vec::with_capacity(16 + images.nrows() * images.ncols());
    for v in [IMAGE_MAGIC, images.nrows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..images.nrows() {
        for j in 0..images.ncols() {
            out.push((images[(i, j)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Data matrix (one sample per row) with class labels and per-class row lists.
///
/// Storage is column-major so that Gram products and column statistics run on
/// contiguous memory.
#[derive(Clone, Debug)]
pub struct LabeledMatrix {
    pub rows: Mat<f64>,
    pub labels: Vec<usize>,
    pub class_index: Vec<Vec<usize>>,
}

impl LabeledMatrix {
    pub fn new(rows: Mat<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} rows but {} labels",
                rows.nrows(),
                labels.len()
            )));
        }
        let class_index = class_index(&labels, classes)?;
        linalg::check_finite(rows.as_ref())?;
        Ok(Self {
            rows,
            labels,
            class_index,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        linalg::row(self.rows.as_ref(), i)
    }

    pub fn with_rows(&self, rows: Mat<f64>) -> Result<Self> {
        Self::new(rows, self.labels.clone(), self.classes())
    }

    /// Keeps the listed rows, in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let rows = Mat::from_fn(ids.len(), self.d(), |i, j| self.rows[(ids[i], j)]);
        let labels = ids.iter().map(|&i| self.labels[i]).collect();
        Self::new(rows, labels, self.classes())
    }
}

/// Row ids of each class, in increasing order.
pub fn class_index(labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut index = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} at row {i} is not below {classes}")));
        }
        index[l].push(i);
    }
    Ok(index)
}

/// Mean and leading principal directions of a data matrix.
#[derive(Clone, Debug)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `d × pca_dim`, orthonormal columns, variance descending.
    pub components: Mat<f64>,
    pub variances: Vec<f64>,
}

fn column_means(x: MatRef<'_, f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| (0..x.nrows()).map(|i| x[(i, j)]).sum::<f64>() / n)
        .collect()
}

fn centered(x: MatRef<'_, f64>, mean: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j])
}

pub fn fit_pca(x: MatRef<'_, f64>, pca_dim: usize) -> Result<PcaBasis> {
    if x.nrows() == 0 {
        return Err(Error::invalid("PCA on an empty matrix"));
    }
    if pca_dim == 0 || pca_dim > x.ncols() {
        return Err(Error::invalid(format!(
            "pca_dim {pca_dim} must lie in 1..={}",
            x.ncols()
        )));
    }
    let mean = column_means(x);
    let c = centered(x, &mean);
    let mut cov = linalg::gram(c.as_ref());
    drop(c);
    let n = x.nrows() as f64;
    for j in 0..cov.ncols() {
        for i in 0..cov.nrows() {
            cov[(i, j)] /= n;
        }
    }
    let (vals, vecs) = linalg::sym_eigen_desc(cov.as_ref())?;
    let top = vals[0].max(0.0);
    let rank = vals.iter().filter(|&&v| v > 1e-12 * top).count();
    if top == 0.0 || pca_dim > rank {
        return Err(Error::RankDeficient(format!(
            "pca_dim {pca_dim} exceeds the data rank {rank}"
        )));
    }
    let mut components = vecs.as_ref().subcols(0, pca_dim).to_owned();
    linalg::fix_column_signs(&mut components);
    Ok(PcaBasis {
        mean,
        components,
        variances: vals[..pca_dim].to_vec(),
    })
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let c = centered(x, &self.mean);
        linalg::mat_mul(c.as_ref(), self.components.as_ref())
    }
}

/// Binomial coefficient, saturating at `usize::MAX`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Number of monomials of degree `1..=degree` in `m` variables.
pub fn expanded_dim(m: usize, degree: usize) -> usize {
    binomial(m + degree, degree).saturating_sub(1)
}

/// The monomial list of a polynomial expansion.
///
/// Monomials are grouped by total degree, highest first. Within a degree they
/// follow descending lexicographic order of the exponent vector, so for
/// `x = [x1, x2, x3]` and degree 2 the columns are
/// `x1², x1x2, x1x3, x2², x2x3, x3², x1, x2, x3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monomials {
    pub inputs: usize,
    pub degree: usize,
    /// Each term as the nondecreasing list of variable indices it multiplies.
    pub terms: Vec<Vec<u32>>,
}

impl Monomials {
    pub fn new(inputs: usize, degree: usize) -> Result<Self> {
        if !(1..=3).contains(&degree) {
            return Err(Error::invalid(format!("polynomial degree {degree} not in 1..=3")));
        }
        if inputs == 0 {
            return Err(Error::invalid("polynomial expansion of zero inputs"));
        }
        let dim = expanded_dim(inputs, degree);
        if dim > MAX_EXPANDED_DIM {
            return Err(Error::invalid(format!(
                "expanded dimension {dim} exceeds the limit {MAX_EXPANDED_DIM}"
            )));
        }
        let mut terms = Vec::with_capacity(dim);
        let mut current = Vec::with_capacity(degree);
        for deg in (1..=degree).rev() {
            push_terms(inputs as u32, 0, deg, &mut current, &mut terms);
        }
        debug_assert_eq!(terms.len(), dim);
        Ok(Self {
            inputs,
            degree,
            terms,
        })
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    /// Exponent vector of term `t`.
    pub fn exponents(&self, t: usize) -> Vec<u32> {
        let mut e = vec![0; self.inputs];
        for &v in &self.terms[t] {
            e[v as usize] += 1;
        }
        e
    }

    pub fn expand(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(x.ncols(), self.inputs);
        let n = x.nrows();
        let cols: Vec<&[f64]> = (0..x.ncols()).map(|j| linalg::col_slice(x, j)).collect();
        let mut out = Mat::<f64>::zeros(n, self.dim());
        for (t, term) in self.terms.iter().enumerate() {
            let dst = out.col_as_slice_mut(t);
            dst.copy_from_slice(cols[term[0] as usize]);
            for &v in &term[1..] {
                for (o, s) in dst.iter_mut().zip(cols[v as usize]) {
                    *o *= s;
                }
            }
        }
        out
    }
}

// Depth-first over variables with the exponent of the current variable taken
// from high to low yields descending lexicographic order.
fn push_terms(inputs: u32, var: u32, remaining: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if remaining == 0 {
        out.push(current.clone());
        return;
    }
    if var == inputs {
        return;
    }
    for e in (0..=remaining).rev() {
        for _ in 0..e {
            current.push(var);
        }
        push_terms(inputs, var + 1, remaining - e, current, out);
        current.truncate(current.len() - e);
    }
}

/// All monomials of degree `1..=degree` over the columns of `x`.
pub fn polynomial_expand(x: MatRef<'_, f64>, degree: usize) -> Result<Mat<f64>> {
    let x = x.to_owned();
    Ok(Monomials::new(x.ncols(), degree)?.expand(x.as_ref()))
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 0 for a constant column.
    pub std: Vec<f64>,
    /// When false only the mean is removed.
    pub scale: bool,
}

impl Standardizer {
    pub fn fit(x: MatRef<'_, f64>, scale: bool) -> Self {
        let mean = column_means(x);
        let n = x.nrows() as f64;
        let std = (0..x.ncols())
            .map(|j| {
                let m = mean[j];
                let var = (0..x.nrows()).map(|i| (x[(i, j)] - m).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std, scale }
    }

    pub fn constant_columns(&self) -> usize {
        self.std.iter().filter(|&&s| s == 0.0).count()
    }

    pub fn apply_in_place(&self, x: &mut Mat<f64>) {
        for j in 0..x.ncols() {
            let (m, s) = (self.mean[j], self.std[j]);
            let col = x.col_as_slice_mut(j);
            if s == 0.0 {
                col.iter_mut().for_each(|v| *v = 0.0);
            } else if self.scale {
                col.iter_mut().for_each(|v| *v = (*v - m) / s);
            } else {
                col.iter_mut().for_each(|v| *v -= m);
            }
        }
    }
}

/// Standardizes every column; constant columns become zero. Returns the
/// fitted map, whose [`Standardizer::constant_columns`] counts the warnings.
pub fn standardize(x: MatRef<'_, f64>) -> (Mat<f64>, Standardizer) {
    let s = Standardizer::fit(x, true);
    let mut out = x.to_owned();
    s.apply_in_place(&mut out);
    if s.constant_columns() > 0 {
        log::warn!("{} constant columns zeroed during standardization", s.constant_columns());
    }
    (out, s)
}

/// Divides `x` by its largest singular value and returns that value.
pub fn spectral_normalize(x: MatRef<'_, f64>) -> Result<(Mat<f64>, f64)> {
    let scale = linalg::largest_singular_value(x);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::ZeroMatrix);
    }
    let out = Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / scale);
    Ok((out, scale))
}

/// Where standardization happens in the preprocessing chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Standardize {
    Off,
    /// Remove column means after expansion, no scaling.
    CenterOnly,
    /// Scale the PCA components to unit variance before expansion; the
    /// expanded monomials are not re-centred.
    BeforeExpansion,
    /// Zero mean and unit variance per expanded column.
    AfterExpansion,
}

impl Standardize {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "center" => Ok(Self::CenterOnly),
            "before" => Ok(Self::BeforeExpansion),
            "after" => Ok(Self::AfterExpansion),
            _ => Err(Error::Config(format!(
                "standardize must be one of off, center, before, after; got `{s}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::CenterOnly => "center",
            Self::BeforeExpansion => "before",
            Self::AfterExpansion => "after",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// `None` keeps the raw pixels.
    pub pca_dim: Option<usize>,
    /// 1 disables expansion.
    pub poly_degree: usize,
    pub standardize: Standardize,
    pub spectral_normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            pca_dim: Some(40),
            poly_degree: 2,
            standardize: Standardize::BeforeExpansion,
            spectral_normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if let Some(p) = self.pca_dim {
            if p == 0 || p > input_dim {
                return Err(Error::Config(format!("pca_dim {p} must lie in 1..={input_dim}")));
            }
        }
        if !(1..=3).contains(&self.poly_degree) {
            return Err(Error::Config(format!(
                "poly_degree {} must be 1, 2 or 3",
                self.poly_degree
            )));
        }
        Ok(())
    }

    /// Dimension of the preprocessed rows.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        expanded_dim(self.pca_dim.unwrap_or(input_dim), self.poly_degree)
    }
}

/// Training-set statistics for the whole preprocessing chain, reusable on
/// held-out data.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    pub pca: Option<PcaBasis>,
    pub before: Option<Standardizer>,
    pub monomials: Monomials,
    pub after: Option<Standardizer>,
    /// Spectral scale divided out at the end (1 when disabled).
    pub scale: f64,
}

impl Preprocessor {
    /// Fits the chain on `x` and returns it together with the transformed rows.
    pub fn fit(x: MatRef<'_, f64>, config: &PreprocessConfig) -> Result<(Self, Mat<f64>)> {
        config.validate(x.ncols())?;
        let (pca, reduced) = match config.pca_dim {
            Some(p) => {
                let basis = fit_pca(x, p)?;
                let r = basis.transform(x);
                (Some(basis), r)
            }
            None => (None, x.to_owned()),
        };
        let mut reduced = reduced;
        let before = (config.standardize == Standardize::BeforeExpansion).then(|| {
            let s = Standardizer::fit(reduced.as_ref(), true);
            s.apply_in_place(&mut reduced);
            s
        });
        let monomials = Monomials::new(reduced.ncols(), config.poly_degree)?;
        let mut expanded = if config.poly_degree == 1 {
            reduced
        } else {
            let e = monomials.expand(reduced.as_ref());
            drop(reduced);
            e
        };
        let after = match config.standardize {
            Standardize::CenterOnly => Some(Standardizer::fit(expanded.as_ref(), false)),
            Standardize::AfterExpansion => Some(Standardizer::fit(expanded.as_ref(), true)),
            _ => None,
        };
        if let Some(s) = &after {
            s.apply_in_place(&mut expanded);
            if s.constant_columns() > 0 {
                log::warn!("{} constant columns zeroed after expansion", s.constant_columns());
            }
        }
        let scale = if config.spectral_normalize {
            let s = linalg::largest_singular_value(expanded.as_ref());
            if s == 0.0 {
                return Err(Error::ZeroMatrix);
            }
            scale_in_place(&mut expanded, 1.0 / s);
            s
        } else {
            1.0
        };
        let pre = Self {
            config: config.clone(),
            pca,
            before,
            monomials,
            after,
            scale,
        };
        Ok((pre, expanded))
    }

    pub fn output_dim(&self) -> usize {
        self.monomials.dim()
    }

    pub fn transform(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let mut reduced = match &self.pca {
            Some(p) => p.transform(x),
            None => x.to_owned(),
        };
        if let Some(s) = &self.before {
            s.apply_in_place(&mut reduced);
        }
        let mut expanded = if self.config.poly_degree == 1 {
            reduced
        } else {
            self.monomials.expand(reduced.as_ref())
        };
        if let Some(s) = &self.after {
            s.apply_in_place(&mut expanded);
        }
        if self.scale != 1.0 {
            scale_in_place(&mut expanded, 1.0 / self.scale);
        }
        expanded
    }

    /// Transforms `x` in blocks of at most `chunk` rows, handing each block and
    /// its first row index to `f`.
    pub fn transform_chunks<F>(&self, x: MatRef<'_, f64>, chunk: usize, mut f: F) -> Result<()>
    where
        F: FnMut(usize, Mat<f64>) -> Result<()>,
    {
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < x.nrows() {
            let len = chunk.min(x.nrows() - start);
            f(start, self.transform(x.subrows(start, len)))?;
            start += len;
        }
        Ok(())
    }
}

pub fn scale_in_place(m: &mut Mat<f64>, factor: f64) {
    for j in 0..m.ncols() {
        m.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= factor);
    }
}

/// How many derivative pairs to draw from a class of a given size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPolicy {
    /// A fixed number of pairs per class.
    Fixed(usize),
    /// Twice the class size.
    Double,
    /// `⌈|T_k| ln |T_k|⌉`.
    NLogN,
}

impl PairPolicy {
    pub fn count(self, class_size: usize) -> usize {
        match self {
            Self::Fixed(m) => m,
            Self::Double => 2 * class_size,
            Self::NLogN => ((class_size as f64) * (class_size as f64).ln()).ceil() as usize,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Self::Double),
            "nlogn" => Ok(Self::NLogN),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&m| m > 0)
                .map(Self::Fixed)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "pairs_per_class must be a positive integer, `double` or `nlogn`; got `{s}`"
                    ))
                }),
        }
    }

    pub fn name(self) -> String {
        match self {
            Self::Fixed(m) => m.to_string(),
            Self::Double => "double".into(),
            Self::NLogN => "nlogn".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DerivativeSpec {
    pub pairs_per_class: PairPolicy,
    pub seed: u64,
}

impl Default for DerivativeSpec {
    fn default() -> Self {
        Self {
            pairs_per_class: PairPolicy::Fixed(10_000),
            seed: 0,
        }
    }
}

/// Sampled ordered same-class pairs `(i, j)`, `i ≠ j`. Each pair stands for
/// the derivative row `x(i) − x(j)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivativePairs {
    pub pairs: Vec<(u32, u32)>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// Draws pairs uniformly with replacement from the ordered same-class pairs of
/// each class. Class `k` uses its own stream, so the draw for one class does not
/// depend on the sizes of the others.
pub fn sample_pairs(class_index: &[Vec<usize>], spec: &DerivativeSpec) -> Result<DerivativePairs> {
    let mut pairs = Vec::new();
    let mut labels = Vec::new();
    for (k, members) in class_index.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {k} has {} member(s); derivatives need at least 2",
                members.len()
            )));
        }
        let m = spec.pairs_per_class.count(members.len());
        let mut r = rng::stream(spec.seed, "derivative-pairs", &[k as u64]);
        for _ in 0..m {
            let a = r.random_range(0..members.len());
            let mut b = r.random_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            pairs.push((members[a] as u32, members[b] as u32));
            labels.push(k);
        }
    }
    Ok(DerivativePairs {
        pairs,
        labels,
        classes: class_index.len(),
    })
}

impl DerivativePairs {
    /// The normalization count `a`.
    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn materialize(&self, x: MatRef<'_, f64>) -> Result<LabeledMatrix> {
        let rows = Mat::from_fn(self.pairs.len(), x.ncols(), |r, j| {
            let (a, b) = self.pairs[r];
            x[(a as usize, j)] - x[(b as usize, j)]
        });
        LabeledMatrix::new(rows, self.labels.clone(), self.classes)
    }

    /// Derivative row `r` without materializing the matrix.
    pub fn row(&self, x: MatRef<'_, f64>, r: usize) -> Vec<f64> {
        let (a, b) = self.pairs[r];
        (0..x.ncols())
            .map(|j| x[(a as usize, j)] - x[(b as usize, j)])
            .collect()
    }

    /// `ẊᵀẊ` computed as `XᵀLX`, where `L` is the Laplacian of the pair
    /// multigraph. The cost is one pass over the pairs per column plus a
    /// single `d × n × d` product, independent of the number of pairs.
    pub fn covariance(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        const BLOCK: usize = 512;
        let (n, d) = (x.nrows(), x.ncols());
        let mut out = Mat::<f64>::zeros(d, d);
        let mut start = 0;
        while start < d {
            let width = BLOCK.min(d - start);
            let mut lx = Mat::<f64>::zeros(n, width);
            for c in 0..width {
                let src = linalg::col_slice(x, start + c);
                let dst = lx.col_as_slice_mut(c);
                for &(a, b) in &self.pairs {
                    let diff = src[a as usize] - src[b as usize];
                    dst[a as usize] += diff;
                    dst[b as usize] -= diff;
                }
            }
            let block = linalg::mat_tmul(x, lx.as_ref());
            for c in 0..width {
                for i in 0..d {
                    out[(i, start + c)] = block[(i, c)];
                }
            }
            start += width;
        }
        linalg::symmetrize(&mut out);
        out
    }
}

/// Samples pairs and materializes the derivative matrix.
pub fn build_derivatives(data: &LabeledMatrix, spec: &DerivativeSpec) -> Result<(LabeledMatrix, DerivativePairs)> {
    let pairs = sample_pairs(&data.class_index, spec)?;
    let m = pairs.materialize(data.rows.as_ref())?;
    Ok((m, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_variable_order() {
        let m = Monomials::new(3, 2).unwrap();
        let want: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![0, 1],
            vec![0, 2],
            vec![1, 1],
            vec![1, 2],
            vec![2, 2],
            vec![0],
            vec![1],
            vec![2],
        ];
        assert_eq!(m.terms, want);
    }

    #[test]
    fn dims() {
        for (m, p, d) in [(40, 2, 860), (90, 2, 4185), (30, 3, 5455), (35, 3, 8435), (36, 3, 9138), (80, 2, 3320)] {
            assert_eq!(expanded_dim(m, p), d);
            assert_eq!(Monomials::new(m, p).unwrap().dim(), d);
        }
    }

    #[test]
    fn rejects_huge_expansion() {
        assert!(Monomials::new(200, 3).is_err());
    }

    #[test]
    fn standardize_small_columns() {
        let x = Mat::from_fn(2, 2, |i, j| if j == 0 { 1.0 } else { 2.0 * i as f64 });
        let (s, st) = standardize(x.as_ref());
        assert_eq!(st.constant_columns(), 1);
        assert_eq!((s[(0, 0)], s[(1, 0)]), (0.0, 0.0));
        assert_eq!((s[(0, 1)], s[(1, 1)]), (-1.0, 1.0));
    }

    #[test]
    fn idx_errors_name_field() {
        let mut bytes = encode_idx_images(Mat::<f64>::zeros(1, 4).as_ref(), 2, 2);
        bytes[3] = 0x01;
        match parse_idx_images(&bytes) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("{other:?}"),
        }
        let bytes = encode_idx_images(Mat::<f64>::zeros(2, 4).as_ref(), 2, 2);
        match parse_idx_images(&bytes[..bytes.len() - 1]) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "pixels"),
            other => panic!("{other:?}"),
        }
        let images = encode_idx_images(Mat::<f64>::zeros(2, 4).as_ref(), 2, 2);
        let labels = encode_idx_labels(&[1, 2, 3]);
        match dataset_from_idx(&images, &labels) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "count"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_member_class_pairs() {
        let x = Mat::from_fn(2, 2, |i, j| (i * 2 + j) as f64);
        let data = LabeledMatrix::new(x, vec![0, 0], 1).unwrap();
        let spec = DerivativeSpec {
            pairs_per_class: PairPolicy::Fixed(20),
            seed: 3,
        };
        let (d, _) = build_derivatives(&data, &spec).unwrap();
        for r in 0..d.n() {
            let row = d.row(r);
            assert!(row == vec![2.0, 2.0] || row == vec![-2.0, -2.0]);
        }
    }
}
