//! Experiment orchestration: configuration, the train/test pipeline, report
//! files and the on-disk artifact cache.
//!
//! A configuration is a flat `key = value` text file. Command-line overrides
//! use the same keys. Every random draw derives from `seed` through named
//! streams, so a configuration reproduces its CSV files byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use faer::{Mat, MatRef};
use sha2::{Digest, Sha256};

use crate::data::{self, DerivativePairs, DerivativeSpec, PairPolicy, PreprocessConfig, Preprocessor, RawDataset, Standardize};
use crate::error::{Error, Result};
use crate::linalg;
use crate::noisy_linalg::NoiseConfig;
use crate::profiler::{self, CostEstimate, CostInputs, MatrixProfile, SweepAxis};
use crate::qfd::{ClusterSummary, EndToEnd, TestRecord};
use crate::qram::QramStore;
use crate::rng;
use crate::sfa::{self, Derivatives, KappaMode, Mode, QsfaConfig, QsfaModel, RatioStats, ThetaPolicy};
use crate::snapshot::{Reader, Writer};

/// Environment variable naming the MNIST directory when `data_dir` is unset.
pub const DATA_DIR_ENV: &str = "QSFA_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";
/// Version stamped into the first line of every CSV.
pub const SCHEMA_VERSION: u32 = 1;

const TEST_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Exact projections and exact distances.
    Oracle,
    /// Simulated estimation noise everywhere.
    Noisy,
    /// No slow-feature step: shot-sampled distances over centred pixels.
    Raw,
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "noisy" => Ok(Self::Noisy),
            "raw" => Ok(Self::Raw),
            _ => Err(Error::Config(format!("mode must be oracle, noisy or raw, got `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Noisy => "noisy",
            Self::Raw => "raw",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// `None` falls back to `$QSFA_DATA_DIR`, then to `data/mnist`.
    pub data_dir: Option<PathBuf>,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub pca_dim: Option<usize>,
    pub poly_degree: usize,
    pub standardize: Standardize,
    pub spectral_normalize: bool,
    pub pairs_per_class: PairPolicy,
    pub epsilon: f64,
    pub delta: f64,
    pub theta: ThetaPolicy,
    pub eta: f64,
    pub kappa: KappaMode,
    pub seed: u64,
    /// Replaces the Hoeffding shot count when set.
    pub shots: Option<usize>,
    pub majority_rounds: usize,
    pub mode: RunMode,
    pub redraw_whitening: bool,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Training rows used by `reproduce-table1` for degree-3 rows when
    /// `train_subset` is unset.
    pub deg3_train_subset: usize,
    pub output_dir: PathBuf,
    pub cache: bool,
    pub cache_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            pca_dim: Some(40),
            poly_degree: 2,
            standardize: Standardize::BeforeExpansion,
            spectral_normalize: true,
            pairs_per_class: PairPolicy::Fixed(10_000),
            epsilon: 1e-5,
            delta: 0.054,
            theta: ThetaPolicy::Auto,
            eta: 0.1,
            kappa: KappaMode::Threshold(0.995),
            seed: 0,
            shots: None,
            majority_rounds: 9,
            mode: RunMode::Noisy,
            redraw_whitening: false,
            train_subset: None,
            test_subset: None,
            deg3_train_subset: 10_000,
            output_dir: PathBuf::from("out"),
            cache: false,
            cache_dir: PathBuf::from(".qsfa-cache"),
        }
    }
}

/// Every accepted key, in the order `to_text` writes them.
pub const CONFIG_KEYS: &[&str] = &[
    "data_dir",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "pca_dim",
    "poly_degree",
    "standardize",
    "spectral_normalize",
    "pairs_per_class",
    "epsilon",
    "delta",
    "theta",
    "eta",
    "kappa",
    "seed",
    "shots",
    "majority_rounds",
    "mode",
    "redraw_whitening",
    "train_subset",
    "test_subset",
    "deg3_train_subset",
    "output_dir",
    "cache",
    "cache_dir",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "train_images" => self.train_images = v.into(),
            "train_labels" => self.train_labels = v.into(),
            "test_images" => self.test_images = v.into(),
            "test_labels" => self.test_labels = v.into(),
            "pca_dim" => self.pca_dim = parse_opt(key, v, "none")?,
            "poly_degree" => self.poly_degree = parse_num(key, v)?,
            "standardize" => self.standardize = Standardize::parse(v)?,
            "spectral_normalize" => self.spectral_normalize = parse_bool(key, v)?,
            "pairs_per_class" => self.pairs_per_class = PairPolicy::parse(v)?,
            "epsilon" => self.epsilon = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "theta" => {
                self.theta = if v == "auto" {
                    ThetaPolicy::Auto
                } else {
                    ThetaPolicy::Fixed(parse_num(key, v)?)
                }
            }
            "eta" => self.eta = parse_num(key, v)?,
            "kappa" => {
                self.kappa = if v == "full" {
                    KappaMode::Full
                } else {
                    KappaMode::Threshold(parse_num(key, v)?)
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "shots" => self.shots = parse_opt(key, v, "auto")?,
            "majority_rounds" => self.majority_rounds = parse_num(key, v)?,
            "mode" => self.mode = RunMode::parse(v)?,
            "redraw_whitening" => self.redraw_whitening = parse_bool(key, v)?,
            "train_subset" => self.train_subset = parse_opt(key, v, "all")?,
            "test_subset" => self.test_subset = parse_opt(key, v, "all")?,
            "deg3_train_subset" => self.deg3_train_subset = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "cache" => self.cache = parse_bool(key, v)?,
            "cache_dir" => self.cache_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `--key value` (or `--key=value`) pairs, then validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(a) = it.next() {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{a}`")))?;
            let (k, v) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("`--{body}` needs a value")))?;
                    (body.to_string(), v.to_string())
                }
            };
            self.set(&k.replace('-', "_"), &v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess().validate(usize::MAX)?;
        if self.mode != RunMode::Raw {
            self.qsfa_config(self.mode).validate()?;
        }
        if !(0.0..0.5).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} must lie in [0, 1/2)", self.eta)));
        }
        if self.majority_rounds == 0 || self.majority_rounds.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "majority_rounds must be odd, got {}",
                self.majority_rounds
            )));
        }
        if self.shots == Some(0) {
            return Err(Error::Config("shots must be positive".into()));
        }
        if self.train_subset == Some(0) || self.test_subset == Some(0) || self.deg3_train_subset == 0 {
            return Err(Error::Config("subset sizes must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` text, one key per line in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut m = BTreeMap::new();
        let dir = self.data_dir.as_ref().map_or(String::new(), |p| p.display().to_string());
        m.insert("data_dir", dir);
        m.insert("train_images", self.train_images.clone());
        m.insert("train_labels", self.train_labels.clone());
        m.insert("test_images", self.test_images.clone());
        m.insert("test_labels", self.test_labels.clone());
        m.insert("pca_dim", show_opt(&self.pca_dim, "none"));
        m.insert("poly_degree", self.poly_degree.to_string());
        m.insert("standardize", self.standardize.name().into());
        m.insert("spectral_normalize", self.spectral_normalize.to_string());
        m.insert("pairs_per_class", self.pairs_per_class.name());
        m.insert("epsilon", format!("{:e}", self.epsilon));
        m.insert("delta", self.delta.to_string());
        m.insert(
            "theta",
            match self.theta {
                ThetaPolicy::Auto => "auto".into(),
                ThetaPolicy::Fixed(t) => t.to_string(),
            },
        );
        m.insert("eta", self.eta.to_string());
        m.insert(
            "kappa",
            match self.kappa {
                KappaMode::Full => "full".into(),
                KappaMode::Threshold(f) => f.to_string(),
            },
        );
        m.insert("seed", self.seed.to_string());
        m.insert("shots", show_opt(&self.shots, "auto"));
        m.insert("majority_rounds", self.majority_rounds.to_string());
        m.insert("mode", self.mode.name().into());
        m.insert("redraw_whitening", self.redraw_whitening.to_string());
        m.insert("train_subset", show_opt(&self.train_subset, "all"));
        m.insert("test_subset", show_opt(&self.test_subset, "all"));
        m.insert("deg3_train_subset", self.deg3_train_subset.to_string());
        m.insert("output_dir", self.output_dir.display().to_string());
        m.insert("cache", self.cache.to_string());
        m.insert("cache_dir", self.cache_dir.display().to_string());
        CONFIG_KEYS.iter().fold(String::new(), |mut s, k| {
            let _ = writeln!(s, "{k} = {}", m[k]);
            s
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    /// Preprocessing for this configuration. Raw mode keeps centred pixels.
    pub fn preprocess(&self) -> PreprocessConfig {
        if self.mode == RunMode::Raw {
            return PreprocessConfig {
                pca_dim: None,
                poly_degree: 1,
                standardize: Standardize::CenterOnly,
                spectral_normalize: false,
            };
        }
        PreprocessConfig {
            pca_dim: self.pca_dim,
            poly_degree: self.poly_degree,
            standardize: self.standardize,
            spectral_normalize: self.spectral_normalize,
        }
    }

    pub fn derivative_spec(&self) -> DerivativeSpec {
        DerivativeSpec {
            pairs_per_class: self.pairs_per_class,
            seed: rng::derive_seed(self.seed, "pairs", &[]),
        }
    }

    /// Model settings. `mode` must not be raw.
    pub fn qsfa_config(&self, mode: RunMode) -> QsfaConfig {
        let noisy = mode == RunMode::Noisy;
        QsfaConfig {
            mode: if noisy { Mode::Noisy } else { Mode::Oracle },
            kappa_mode: self.kappa,
            theta_policy: self.theta,
            delta: self.delta,
            classes: data::MNIST_CLASSES,
            noise: NoiseConfig {
                epsilon: if noisy { self.epsilon } else { 0.0 },
                eta: if noisy { self.eta } else { 0.0 },
                seed: rng::derive_seed(self.seed, "noise", &[]),
                enabled: noisy,
            },
            redraw_whitening: self.redraw_whitening,
        }
    }

    fn classifier_seed(&self) -> u64 {
        rng::derive_seed(self.seed, "classifier", &[])
    }
}

/// Train and test images.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: RawDataset,
    pub test: RawDataset,
    /// SHA-256 of the four input files, for cache keys.
    pub digest: String,
}

fn resolve(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.exists() {
        return Ok(p);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Config(format!(
        "missing data file {} (set data_dir or ${DATA_DIR_ENV})",
        p.display()
    )))
}

impl Datasets {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.data_dir();
        let paths = [
            resolve(&dir, &cfg.train_images)?,
            resolve(&dir, &cfg.train_labels)?,
            resolve(&dir, &cfg.test_images)?,
            resolve(&dir, &cfg.test_labels)?,
        ];
        let mut h = Sha256::new();
        for p in &paths {
            h.update(fs::read(p)?);
        }
        log::info!("loading MNIST from {}", dir.display());
        Ok(Self {
            train: data::load_idx(&paths[0], &paths[1])?,
            test: data::load_idx(&paths[2], &paths[3])?,
            digest: hex(&h.finalize()),
        })
    }

    pub fn from_parts(train: RawDataset, test: RawDataset) -> Self {
        let mut h = Sha256::new();
        for d in [&train, &test] {
            for j in 0..d.images.ncols() {
                for v in d.images.col_as_slice(j) {
                    h.update(v.to_le_bytes());
                }
            }
            for &l in &d.labels {
                h.update((l as u64).to_le_bytes());
            }
        }
        Self {
            train,
            test,
            digest: hex(&h.finalize()),
        }
    }

    fn subsets(&self, cfg: &ExperimentConfig) -> (RawDataset, RawDataset) {
        let train = cfg.train_subset.map_or_else(|| self.train.clone(), |n| self.train.head(n));
        let test = cfg.test_subset.map_or_else(|| self.test.clone(), |n| self.test.head(n));
        (train, test)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Disk cache of preprocessed matrices and trained models.
struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            dir: cfg.cache.then(|| cfg.cache_dir.clone()),
        }
    }

    fn key(parts: &[&str]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p.as_bytes());
            h.update([0]);
        }
        hex(&h.finalize())[..24].to_string()
    }

    fn path(&self, kind: &str, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{kind}-{key}.bin")))
    }

    fn get<T>(&self, kind: &str, key: &str, read: impl FnOnce(BufReader<File>) -> Result<T>) -> Option<T> {
        let p = self.path(kind, key)?;
        let f = File::open(&p).ok()?;
        match read(BufReader::new(f)) {
            Ok(v) => {
                log::info!("cache hit: {}", p.display());
                Some(v)
            }
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", p.display());
                None
            }
        }
    }

    fn put(&self, kind: &str, key: &str, write: impl FnOnce(BufWriter<File>) -> Result<BufWriter<File>>) -> Result<()> {
        let Some(p) = self.path(kind, key) else {
            return Ok(());
        };
        fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
        let tmp = p.with_extension("tmp");
        write(BufWriter::new(File::create(&tmp)?))?.flush()?;
        fs::rename(&tmp, &p)?;
        Ok(())
    }
}

const MATRIX_MAGIC: &[u8; 8] = b"QSFAMAT1";

fn write_matrix(m: &Mat<f64>, out: BufWriter<File>) -> Result<BufWriter<File>> {
    let mut w = Writer::new(out);
    w.bytes(MATRIX_MAGIC)?;
    w.mat(m)?;
    w.finish()
}

fn read_matrix(input: BufReader<File>) -> Result<Mat<f64>> {
    let mut r = Reader::new(input);
    r.expect_magic(MATRIX_MAGIC)?;
    r.mat()
}

/// Everything produced on the training side.
pub struct Trained {
    pub preprocessor: Option<Preprocessor>,
    /// Preprocessed training rows.
    pub x: Mat<f64>,
    pub labels: Vec<usize>,
    pub pairs: DerivativePairs,
    pub model: QsfaModel,
    /// Preprocessed test rows when they came from the cache.
    cached_test: Option<Mat<f64>>,
}

fn preprocess_key(cfg: &ExperimentConfig, data: &Datasets) -> String {
    let p = cfg.preprocess();
    Cache::key(&[
        &data.digest,
        &show_opt(&p.pca_dim, "none"),
        &p.poly_degree.to_string(),
        p.standardize.name(),
        &p.spectral_normalize.to_string(),
        &show_opt(&cfg.train_subset, "all"),
        &show_opt(&cfg.test_subset, "all"),
    ])
}

/// Preprocesses the training rows, samples derivative pairs and trains the
/// model for `mode` (oracle or noisy).
pub fn train(cfg: &ExperimentConfig, data: &Datasets, mode: RunMode) -> Result<Trained> {
    if mode == RunMode::Raw {
        return Err(Error::Config("raw mode has no model".into()));
    }
    let (train, test) = data.subsets(cfg);
    let cache = Cache::new(cfg);
    let pkey = preprocess_key(cfg, data);
    let cached = cache
        .get("train", &pkey, read_matrix).zip(cache.get("test", &pkey, read_matrix));
    let (preprocessor, x, cached_test) = match cached {
        Some((x, t)) => (None, x, Some(t)),
        None => {
            log::info!("preprocessing {} training rows", train.len());
            let (pre, x) = Preprocessor::fit(train.images.as_ref(), &cfg.preprocess())?;
            if cache.dir.is_some() {
                cache.put("train", &pkey, |w| write_matrix(&x, w))?;
                let t = pre.transform(test.images.as_ref());
                cache.put("test", &pkey, |w| write_matrix(&t, w))?;
            }
            (Some(pre), x, None)
        }
    };
    let labels = train.labels.clone();
    let pairs = data::sample_pairs(&data::class_index(&labels, data::MNIST_CLASSES)?, &cfg.derivative_spec())?;
    let qcfg = cfg.qsfa_config(mode);
    let mkey = Cache::key(&[&pkey, &cfg.to_text(), mode.name(), "model"]);
    let model = match cache.get("model", &mkey, QsfaModel::load) {
        Some(m) => m,
        None => {
            let m = QsfaModel::train(x.as_ref(), Derivatives::Pairs(&pairs), &qcfg)?;
            cache.put("model", &mkey, |w| m.save(w))?;
            m
        }
    };
    log::info!(
        "model: d = {}, rank {}, retained {}, theta = {:.6}, outputs {}",
        model.input_dim(),
        model.x_rank,
        model.retained,
        model.theta,
        model.output_dim()
    );
    Ok(Trained {
        preprocessor,
        x,
        labels,
        pairs,
        model,
        cached_test,
    })
}

impl Trained {
    /// Feeds the preprocessed test rows to `f` in blocks, with the index of
    /// each block's first row.
    fn test_chunks<F>(&self, test: &RawDataset, f: F) -> Result<()>
    where
        F: FnMut(usize, Mat<f64>) -> Result<()>,
    {
        let mut f = f;
        match (&self.preprocessor, &self.cached_test) {
            (_, Some(t)) => {
                let mut start = 0;
                while start < t.nrows() {
                    let len = TEST_CHUNK.min(t.nrows() - start);
                    f(start, t.as_ref().subrows(start, len).to_owned())?;
                    start += len;
                }
                Ok(())
            }
            (Some(p), None) => p.transform_chunks(test.images.as_ref(), TEST_CHUNK, f),
            (None, None) => unreachable!("trained without preprocessor or cached test rows"),
        }
    }

    /// Preprocessed test rows, all at once.
    pub fn test_matrix(&self, test: &RawDataset) -> Result<Mat<f64>> {
        let mut out = Mat::zeros(test.len(), self.x.ncols());
        self.test_chunks(test, |start, m| {
            out.as_mut().subrows_mut(start, m.nrows()).copy_from(&m);
            Ok(())
        })?;
        Ok(out)
    }
}

/// Aggregate outcome of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub mode: RunMode,
    pub pca_dim: Option<usize>,
    pub poly_degree: usize,
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub correct: usize,
    pub rejects: usize,
    pub accuracy: f64,
    /// Training rows dropped because their projection failed.
    pub train_rejects: usize,
    pub theta: Option<f64>,
    pub kappa: Option<f64>,
    pub kappa_retained: Option<f64>,
    pub shots: usize,
    pub rounds: usize,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("na".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "pca_dim = {}", show_opt(&self.pca_dim, "none"));
        let _ = writeln!(s, "poly_degree = {}", self.poly_degree);
        let _ = writeln!(s, "input_dim = {}", self.input_dim);
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_test = {}", self.n_test);
        let _ = writeln!(s, "correct = {}", self.correct);
        let _ = writeln!(s, "rejects = {}", self.rejects);
        let _ = writeln!(s, "accuracy = {:.6}", self.accuracy);
        let _ = writeln!(s, "train_rejects = {}", self.train_rejects);
        let _ = writeln!(s, "theta = {}", opt(self.theta));
        let _ = writeln!(s, "kappa = {}", opt(self.kappa));
        let _ = writeln!(s, "kappa_retained = {}", opt(self.kappa_retained));
        let _ = writeln!(s, "shots = {}", self.shots);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        s
    }
}

pub struct RunOutcome {
    pub summary: RunSummary,
    /// Sorted by test id.
    pub records: Vec<TestRecord>,
}

fn classifier(cfg: &ExperimentConfig, clusters: Vec<ClusterSummary>, eta: f64, noisy_norms: bool) -> Result<EndToEnd> {
    let mut e = EndToEnd::from_clusters(clusters, eta, cfg.majority_rounds, cfg.classifier_seed(), noisy_norms)?;
    if let (Some(s), true) = (cfg.shots, eta > 0.0) {
        e.shots = s;
    }
    Ok(e)
}

fn finish(cfg: &ExperimentConfig, records: Vec<TestRecord>, mut summary: RunSummary) -> RunOutcome {
    summary.correct = records.iter().filter(|r| r.correct()).count();
    summary.rejects = records.iter().filter(|r| r.classification.predicted.is_none()).count();
    summary.n_test = records.len();
    summary.accuracy = summary.correct as f64 / records.len().max(1) as f64;
    summary.rounds = cfg.majority_rounds;
    RunOutcome { summary, records }
}

/// End-to-end train and test without writing files.
pub fn run(cfg: &ExperimentConfig, data: &Datasets) -> Result<RunOutcome> {
    cfg.validate()?;
    if cfg.mode == RunMode::Raw {
        return run_raw(cfg, data);
    }
    let (_, test) = data.subsets(cfg);
    let t = train(cfg, data, cfg.mode)?;
    let model = &t.model;
    let projections = model.project_batch(t.x.as_ref(), 0);
    let kept: Vec<usize> = (0..projections.len()).filter(|&i| projections[i].is_some()).collect();
    let train_rejects = projections.len() - kept.len();
    if train_rejects > 0 {
        log::warn!("{train_rejects} training projections failed and were left out of the store");
    }
    let c = model.output_dim();
    let y = Mat::from_fn(kept.len(), c, |r, j| projections[kept[r]].as_ref().expect("kept").y[j]);
    drop(projections);
    let labels: Vec<usize> = kept.iter().map(|&i| t.labels[i]).collect();
    let store = QramStore::build(y.as_ref(), &labels, data::MNIST_CLASSES)?;
    let noisy = cfg.mode == RunMode::Noisy;
    let eta = if noisy { cfg.eta } else { 0.0 };
    let e2e = classifier(cfg, ClusterSummary::from_store(&store), eta, noisy)?;

    log::info!("classifying {} test rows", test.len());
    let mut records = Vec::with_capacity(test.len());
    t.test_chunks(&test, |start, xt| {
        let coeffs = model.coefficients(xt.as_ref());
        let norms = model.whitened_norms(xt.as_ref());
        for i in 0..xt.nrows() {
            let id = start + i;
            let classification = if model.config.redraw_whitening && model.config.noisy() {
                e2e.classify(model, &linalg::row(xt.as_ref(), i), id as u64)?
            } else {
                e2e.classify_coefficients(model, &linalg::row(coeffs.as_ref(), i), norms[i], id as u64)?
            };
            records.push(TestRecord {
                test_id: id,
                true_label: test.labels[id],
                classification,
            });
        }
        Ok(())
    })?;
    let summary = RunSummary {
        mode: cfg.mode,
        pca_dim: cfg.pca_dim,
        poly_degree: cfg.poly_degree,
        input_dim: model.input_dim(),
        n_train: t.x.nrows(),
        n_test: 0,
        correct: 0,
        rejects: 0,
        accuracy: 0.0,
        train_rejects,
        theta: Some(model.theta),
        kappa: Some(model.kappa()),
        kappa_retained: Some(model.kappa_retained()),
        shots: e2e.shots,
        rounds: 0,
    };
    Ok(finish(cfg, records, summary))
}

fn run_raw(cfg: &ExperimentConfig, data: &Datasets) -> Result<RunOutcome> {
    let (train, test) = data.subsets(cfg);
    let (pre, x) = Preprocessor::fit(train.images.as_ref(), &cfg.preprocess())?;
    let clusters = ClusterSummary::from_rows(x.as_ref(), &train.labels, data::MNIST_CLASSES)?;
    drop(x);
    let e = classifier(cfg, clusters, cfg.eta, false)?;
    let mut records = Vec::with_capacity(test.len());
    pre.transform_chunks(test.images.as_ref(), TEST_CHUNK, |start, xt| {
        for i in 0..xt.nrows() {
            let id = start + i;
            records.push(TestRecord {
                test_id: id,
                true_label: test.labels[id],
                classification: e.classify_point(&linalg::row(xt.as_ref(), i), id as u64)?,
            });
        }
        Ok(())
    })?;
    let summary = RunSummary {
        mode: RunMode::Raw,
        pca_dim: None,
        poly_degree: 1,
        input_dim: pre.output_dim(),
        n_train: train.len(),
        n_test: 0,
        correct: 0,
        rejects: 0,
        accuracy: 0.0,
        train_rejects: 0,
        theta: None,
        kappa: None,
        kappa_retained: None,
        shots: e.shots,
        rounds: 0,
    };
    Ok(finish(cfg, records, summary))
}

fn schema_line(name: &str) -> String {
    format!("# schema: {name} v{SCHEMA_VERSION}\n")
}

/// `results.csv` contents: schema comment, header, rows sorted by test id.
pub fn results_csv(records: &[TestRecord]) -> String {
    let mut s = schema_line("results");
    s.push_str(&TestRecord::header(data::MNIST_CLASSES));
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents)?;
    Ok(p)
}

/// Runs and writes `results.csv`, `summary.txt` and `config.txt` to the
/// output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let data = Datasets::load(cfg)?;
    cmd_run_with(cfg, &data)
}

pub fn cmd_run_with(cfg: &ExperimentConfig, data: &Datasets) -> Result<RunSummary> {
    let out = run(cfg, data)?;
    write_out(&cfg.output_dir, "results.csv", &results_csv(&out.records))?;
    write_out(&cfg.output_dir, "summary.txt", &out.summary.to_text())?;
    write_out(&cfg.output_dir, "config.txt", &cfg.to_text())?;
    Ok(out.summary)
}

/// Profiles of `X` and `Ẋ` plus the cost estimate built from them.
#[derive(Clone, Debug)]
pub struct ProfileReport {
    pub axis_value: usize,
    /// Spectral scale removed by preprocessing, when known.
    pub preprocess_scale: Option<f64>,
    pub x: MatrixProfile,
    pub xdot: MatrixProfile,
    pub ratio: RatioStats,
    pub theta: f64,
    pub cost: CostEstimate,
}

impl ProfileReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (tag, p) in [("x", &self.x), ("xdot", &self.xdot)] {
            let outer = if tag == "x" { self.preprocess_scale } else { Some(1.0) };
            let _ = writeln!(s, "{tag}.frob = {:.6}", p.frob);
            let _ = writeln!(s, "{tag}.frob_sq = {:.6}", p.frob_sq());
            if let Some(o) = outer {
                let _ = writeln!(s, "{tag}.frob_unnormalized = {:.6}", p.frob * p.scale * o);
            }
            let _ = writeln!(s, "{tag}.scale = {:.6}", p.scale);
            let _ = writeln!(s, "{tag}.max_l1 = {:.6}", p.max_l1);
            let _ = writeln!(s, "{tag}.mu = {:.6}", p.mu);
            let _ = writeln!(s, "{tag}.mu_p = {}", p.mu_p.map_or("frob".to_string(), |v| format!("{v:.2}")));
            let _ = writeln!(s, "{tag}.mu_grid_step = {}", profiler::MU_GRID_STEP);
            let _ = writeln!(s, "{tag}.kappa = {:.6}", p.kappa);
            let _ = writeln!(s, "{tag}.kappa_t = {:.6}", p.kappa_t);
            let _ = writeln!(s, "{tag}.kappa_fraction = {} (by count)", p.kappa_fraction);
            let _ = writeln!(s, "{tag}.rank = {}", p.rank);
        }
        let _ = writeln!(s, "theta = {:.6}", self.theta);
        let _ = writeln!(s, "ratio.mean = {:.6}", self.ratio.mean);
        let _ = writeln!(s, "ratio.variance = {:.6}", self.ratio.variance);
        let _ = writeln!(s, "ratio.aggregate = {:.6}", self.ratio.aggregate);
        let _ = writeln!(s, "qsfa_cost = {:.6e}", self.cost.qsfa_cost);
        let _ = writeln!(s, "classifier_cost = {:.6e}", self.cost.classifier_cost);
        let _ = writeln!(s, "cost_note = order-of-magnitude model, polylog factors set to 1");
        s
    }
}

fn kappa_fraction(cfg: &ExperimentConfig) -> f64 {
    match cfg.kappa {
        KappaMode::Full => 1.0,
        KappaMode::Threshold(f) => f,
    }
}

/// Profiles the preprocessed training data of `cfg` and evaluates the cost
/// formula with the threshold of an oracle model and the test projection
/// ratio.
pub fn profile(cfg: &ExperimentConfig, data: &Datasets, axis_value: usize) -> Result<ProfileReport> {
    cfg.validate()?;
    let (_, test) = data.subsets(cfg);
    let t = train(cfg, data, RunMode::Oracle)?;
    let fraction = kappa_fraction(cfg);
    let tol = linalg::GRAM_RANK_TOL * t.model.x_sigma[0];
    let x = MatrixProfile::from_parts(&t.x.as_ref(), t.model.x_sigma.clone(), tol, fraction)?;
    let xdot = MatrixProfile::of_pairs(t.x.as_ref(), &t.pairs, fraction)?;
    let xt = t.test_matrix(&test)?;
    let ratio = sfa::projection_ratio(&t.model, xt.as_ref())?;
    let cost = profiler::estimate_cost(CostInputs {
        kappa: x.kappa_t,
        mu_x: x.mu,
        mu_xdot: xdot.mu,
        theta: t.model.theta,
        delta: cfg.delta,
        epsilon: cfg.epsilon,
        eta: cfg.eta,
        classes: data::MNIST_CLASSES,
        ratio: 1.0 / ratio.mean,
    })?;
    Ok(ProfileReport {
        axis_value,
        preprocess_scale: t.preprocessor.as_ref().map(|p| p.scale),
        x,
        xdot,
        ratio,
        theta: t.model.theta,
        cost,
    })
}

fn profile_rows(r: &ProfileReport) -> String {
    format!(
        "{}\n{}\n",
        profiler::profile_csv_row(r.axis_value, "X", &r.x),
        profiler::profile_csv_row(r.axis_value, "Xdot", &r.xdot)
    )
}

/// Writes `profile.csv`, `cost.csv` and `profile_summary.txt`.
pub fn cmd_profile(cfg: &ExperimentConfig) -> Result<ProfileReport> {
    let data = Datasets::load(cfg)?;
    cmd_profile_with(cfg, &data)
}

pub fn cmd_profile_with(cfg: &ExperimentConfig, data: &Datasets) -> Result<ProfileReport> {
    let axis_value = cfg.pca_dim.unwrap_or(data.train.images.ncols());
    let r = profile(cfg, data, axis_value)?;
    let mut p = schema_line("profile");
    p.push_str(profiler::PROFILE_CSV_HEADER);
    p.push('\n');
    p.push_str(&profile_rows(&r));
    write_out(&cfg.output_dir, "profile.csv", &p)?;
    let mut c = schema_line("cost");
    c.push_str(CostEstimate::CSV_HEADER);
    c.push('\n');
    c.push_str(&r.cost.csv_row());
    c.push('\n');
    write_out(&cfg.output_dir, "cost.csv", &c)?;
    write_out(&cfg.output_dir, "profile_summary.txt", &r.to_text())?;
    write_out(&cfg.output_dir, "config.txt", &cfg.to_text())?;
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepTarget {
    Run,
    Profile,
}

impl SweepTarget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "run" => Ok(Self::Run),
            "profile" => Ok(Self::Profile),
            _ => Err(Error::Config(format!("sweep target must be run or profile, got `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::Profile => "profile",
        }
    }
}

/// Outcome of one grid point.
#[derive(Debug)]
pub enum SweepResult {
    Run(RunSummary),
    Profile(Box<ProfileReport>),
    Failed(String),
}

pub const MERGED_RUN_HEADER: &str = "axis,axis_value,mode,pca_dim,poly_degree,input_dim,n_train,n_test,accuracy,rejects,theta";

fn point_config(cfg: &ExperimentConfig, axis: SweepAxis, value: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::N => c.train_subset = Some(value),
        SweepAxis::D => c.pca_dim = Some(value),
    }
    c.output_dir = cfg.output_dir.join(format!("{}-{}", axis.name(), value));
    c
}

/// Runs `target` at every grid value, collecting failures instead of
/// stopping. Merged CSVs carry the axis name and value.
pub fn sweep(cfg: &ExperimentConfig, data: &Datasets, target: SweepTarget, axis: SweepAxis, grid: &[usize]) -> Result<Vec<(usize, SweepResult)>> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &g in grid {
        let c = point_config(cfg, axis, g);
        log::info!("sweep {}={g}", axis.name());
        let r = c.validate().and_then(|_| match target {
            SweepTarget::Run => cmd_run_with(&c, data).map(SweepResult::Run),
            SweepTarget::Profile => profile(&c, data, g).map(|r| SweepResult::Profile(Box::new(r))),
        });
        out.push((
            g,
            r.unwrap_or_else(|e| {
                log::error!("sweep point {}={g} failed: {e}", axis.name());
                SweepResult::Failed(e.to_string())
            }),
        ));
    }
    Ok(out)
}

/// Writes the merged CSVs of a sweep and `failures.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, target: SweepTarget, axis: SweepAxis, grid: &[usize]) -> Result<Vec<(usize, SweepResult)>> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let data = Datasets::load(cfg)?;
    let results = sweep(cfg, &data, target, axis, grid)?;
    let a = axis.name();
    let mut failures = schema_line("failures");
    failures.push_str("axis,axis_value,error\n");
    match target {
        SweepTarget::Run => {
            let mut s = schema_line("results_merged");
            s.push_str(MERGED_RUN_HEADER);
            s.push('\n');
            for (g, r) in &results {
                if let SweepResult::Run(m) = r {
                    let _ = writeln!(
                        s,
                        "{a},{g},{},{},{},{},{},{},{:.6},{},{}",
                        m.mode.name(),
                        show_opt(&m.pca_dim, "none"),
                        m.poly_degree,
                        m.input_dim,
                        m.n_train,
                        m.n_test,
                        m.accuracy,
                        m.rejects,
                        m.theta.map_or(String::new(), |t| format!("{t:.6}"))
                    );
                }
            }
            write_out(&cfg.output_dir, "results_merged.csv", &s)?;
        }
        SweepTarget::Profile => {
            let mut p = schema_line("profile");
            p.push_str("axis,");
            p.push_str(profiler::PROFILE_CSV_HEADER);
            p.push('\n');
            let mut c = schema_line("cost");
            c.push_str("axis,axis_value,");
            c.push_str(CostEstimate::CSV_HEADER);
            c.push('\n');
            for (g, r) in &results {
                if let SweepResult::Profile(r) = r {
                    for line in profile_rows(r).lines() {
                        let _ = writeln!(p, "{a},{line}");
                    }
                    let _ = writeln!(c, "{a},{g},{}", r.cost.csv_row());
                }
            }
            write_out(&cfg.output_dir, "profile.csv", &p)?;
            write_out(&cfg.output_dir, "cost.csv", &c)?;
        }
    }
    for (g, r) in &results {
        if let SweepResult::Failed(e) = r {
            let _ = writeln!(failures, "{a},{g},\"{}\"", e.replace('"', "'"));
        }
    }
    write_out(&cfg.output_dir, "failures.csv", &failures)?;
    write_out(&cfg.output_dir, "config.txt", &cfg.to_text())?;
    Ok(results)
}

/// `(pca_dim, poly_degree)` of each benchmark row.
pub const TABLE1_ROWS: &[(usize, usize)] = &[(40, 2), (80, 2), (90, 2), (30, 3), (35, 3), (36, 3)];

pub const TABLE1_HEADER: &str = "pca_dim,poly_degree,input_dim,n_train,frob_x,frob_sq_x,frob_xdot,frob_sq_xdot,max_l1_x,max_l1_xdot,kappa,kappa_t,theta,accuracy_t,accuracy";

#[derive(Clone, Debug)]
pub struct Table1Row {
    pub pca_dim: usize,
    pub poly_degree: usize,
    pub n_train: usize,
    pub profile: ProfileReport,
    /// Accuracy with the thresholded condition number.
    pub accuracy_t: f64,
    /// Accuracy with the full spectrum.
    pub accuracy: f64,
}

impl Table1Row {
    pub fn csv_row(&self) -> String {
        let (x, xd) = (&self.profile.x, &self.profile.xdot);
        format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6}",
            self.pca_dim,
            self.poly_degree,
            data::expanded_dim(self.pca_dim, self.poly_degree),
            self.n_train,
            x.frob,
            x.frob_sq(),
            xd.frob,
            xd.frob_sq(),
            x.max_l1,
            xd.max_l1,
            x.kappa,
            x.kappa_t,
            self.profile.theta,
            self.accuracy_t,
            self.accuracy
        )
    }
}

/// One benchmark row: profile, then runs with the thresholded and the full
/// spectrum. Degree-3 rows use `deg3_train_subset` training rows unless
/// `train_subset` is set.
pub fn table1_row(cfg: &ExperimentConfig, data: &Datasets, pca_dim: usize, poly_degree: usize) -> Result<Table1Row> {
    let mut c = cfg.clone();
    c.pca_dim = Some(pca_dim);
    c.poly_degree = poly_degree;
    if c.mode == RunMode::Raw {
        c.mode = RunMode::Noisy;
    }
    if poly_degree == 3 && c.train_subset.is_none() {
        c.train_subset = Some(c.deg3_train_subset);
    }
    c.output_dir = cfg.output_dir.join(format!("pca{pca_dim}-deg{poly_degree}"));
    if matches!(c.kappa, KappaMode::Full) {
        c.kappa = KappaMode::Threshold(0.995);
    }
    let profile = profile(&c, data, pca_dim)?;
    let accuracy_t = cmd_run_with(&c, data)?.accuracy;
    let mut full = c.clone();
    full.kappa = KappaMode::Full;
    full.output_dir = c.output_dir.join("full");
    let run = cmd_run_with(&full, data)?;
    Ok(Table1Row {
        pca_dim,
        poly_degree,
        n_train: run.n_train,
        profile,
        accuracy_t,
        accuracy: run.accuracy,
    })
}

/// Regenerates the requested benchmark rows into `table1.csv`. Failed rows are
/// logged and listed in `failures.csv`.
pub fn cmd_reproduce_table1(cfg: &ExperimentConfig, rows: &[(usize, usize)]) -> Result<Vec<Table1Row>> {
    if rows.is_empty() {
        return Err(Error::Config("no table rows requested".into()));
    }
    let data = Datasets::load(cfg)?;
    let mut s = schema_line("table1");
    s.push_str(TABLE1_HEADER);
    s.push('\n');
    let mut failures = schema_line("failures");
    failures.push_str("pca_dim,poly_degree,error\n");
    let mut out = Vec::new();
    for &(p, d) in rows {
        log::info!("table row: pca {p}, degree {d}");
        match table1_row(cfg, &data, p, d) {
            Ok(r) => {
                s.push_str(&r.csv_row());
                s.push('\n');
                out.push(r);
            }
            Err(e) => {
                log::error!("table row pca {p} degree {d} failed: {e}");
                let _ = writeln!(failures, "{p},{d},\"{}\"", e.to_string().replace('"', "'"));
            }
        }
        write_out(&cfg.output_dir, "table1.csv", &s)?;
    }
    write_out(&cfg.output_dir, "failures.csv", &failures)?;
    write_out(&cfg.output_dir, "config.txt", &cfg.to_text())?;
    Ok(out)
}

/// Parses `40x2,80x2` into `(pca_dim, degree)` pairs.
pub fn parse_table_rows(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|t| {
            let (p, d) = t
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("table row `{t}` must look like 40x2")))?;
            Ok((parse_num("rows", p)?, parse_num("rows", d)?))
        })
        .collect()
}

/// Parses a comma-separated grid such as `1000,2000,5000`.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    s.split(',').map(|t| parse_num("grid", t.trim())).collect()
}

/// Nearest-centroid accuracy over rows already in a common space, used as a
/// classical reference for the classifier.
pub fn nearest_centroid_accuracy(train: MatRef<'_, f64>, train_labels: &[usize], test: MatRef<'_, f64>, test_labels: &[usize], classes: usize) -> Result<f64> {
    let sums = ClusterSummary::from_rows(train, train_labels, classes)?;
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .map(|c| c.sum.iter().map(|s| s / c.size as f64).collect())
        .collect();
    let mut correct = 0;
    for (i, &l) in test_labels.iter().enumerate() {
        let x = linalg::row(test, i);
        let d: Vec<f64> = centroids
            .iter()
            .map(|c| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        if crate::qfd::argmin(&d) == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_labels.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["--mode", "oracle", "--pca_dim=30", "--kappa", "full", "--shots", "50"])
            .unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(ExperimentConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse("majority_rounds = 4").is_err());
    }

    #[test]
    fn table_rows_parse() {
        assert_eq!(parse_table_rows("40x2, 36x3").unwrap(), vec![(40, 2), (36, 3)]);
        assert!(parse_grid("").is_err());
    }
}
