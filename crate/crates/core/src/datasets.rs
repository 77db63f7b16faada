//! Labeled feature matrices, file ingestion, stratified splits, and the
//! synthetic shift worlds used for desk-scale experiments.
//!
//! All generators draw the target sample from the *same* base draws as the
//! source sample (point `i` of the target is the transform of point `i` of
//! the source) unless [`ShiftConfig::target_seed`] asks for an independent
//! draw. With the identity transform the two files are therefore identical.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{read_text, write_text, Error, Result};

/// Supervision attached to one input: a class index or a real target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// A classification sample: `n × d` features plus class indices in `0..C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
    normalized: bool,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class_count", "must be positive"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if let Some((row, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(Error::Validation {
                row,
                msg: format!("label {y} is not below class count {class_count}"),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            normalized: false,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn targets(&self) -> Vec<Target> {
        self.labels.iter().map(|&y| Target::Class(y)).collect()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            normalized: self.normalized,
        }
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }
}

/// A regression sample with real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    features: Array2<f64>,
    targets: Vec<f64>,
}

impl RegressionDataset {
    pub fn new(features: Array2<f64>, targets: Vec<f64>) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: targets.len(),
            });
        }
        Ok(RegressionDataset { features, targets })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn values(&self) -> &[f64] {
        &self.targets
    }

    pub fn targets(&self) -> Vec<Target> {
        self.targets.iter().map(|&y| Target::Value(y)).collect()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

// ---------------------------------------------------------------------------
// File ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Json,
}

impl FileFormat {
    /// Guesses the format from the file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => FileFormat::Json,
            _ => FileFormat::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_count: usize,
}

/// Loads a labeled feature matrix.
///
/// CSV files carry a header row, `d` feature columns and a final label
/// column. JSON files hold `features`, `labels` and `class_count`. For CSV the
/// class count is `class_count` when given, otherwise one more than the
/// largest label.
pub fn load_features(
    path: &Path,
    format: FileFormat,
    class_count: Option<usize>,
) -> Result<Dataset> {
    let text = read_text(path)?;
    match format {
        FileFormat::Csv => parse_csv(&text, class_count),
        FileFormat::Json => parse_json(&text, class_count),
    }
}

fn parse_json(text: &str, class_count: Option<usize>) -> Result<Dataset> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "empty file".into(),
        });
    }
    let file: DatasetFile = serde_json::from_str(text)?;
    let c = class_count.unwrap_or(file.class_count);
    let d = file.features.first().map_or(0, Vec::len);
    let n = file.features.len();
    if n == 0 {
        return Err(Error::Parse {
            row: 0,
            msg: "no rows".into(),
        });
    }
    let mut flat = Vec::with_capacity(n * d);
    for (row, r) in file.features.iter().enumerate() {
        if r.len() != d {
            return Err(Error::Parse {
                row,
                msg: format!("expected {d} feature columns, found {}", r.len()),
            });
        }
        flat.extend_from_slice(r);
    }
    if file.labels.len() != n {
        return Err(Error::Parse {
            row: n.min(file.labels.len()),
            msg: format!("{} labels for {n} feature rows", file.labels.len()),
        });
    }
    let features = Array2::from_shape_vec((n, d), flat).expect("shape checked");
    Dataset::new(features, file.labels, c)
}

fn parse_csv(text: &str, class_count: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header_len = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.len(),
        _ => {
            return Err(Error::Parse {
                row: 0,
                msg: "empty file or missing header".into(),
            })
        }
    };
    if header_len < 2 {
        return Err(Error::Parse {
            row: 0,
            msg: "need at least one feature column and a label column".into(),
        });
    }
    let d = header_len - 1;
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != header_len {
            return Err(Error::Parse {
                row,
                msg: format!("expected {header_len} columns, found {}", record.len()),
            });
        }
        for field in record.iter().take(d) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("invalid number `{field}`"),
            })?;
            flat.push(v);
        }
        let label_field = &record[d];
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            row,
            msg: format!("invalid label `{label_field}`"),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "no data rows".into(),
        });
    }
    let c = class_count.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let features = Array2::from_shape_vec((labels.len(), d), flat).expect("shape checked");
    Dataset::new(features, labels, c)
}

/// Loads a regression CSV (header, feature columns, final real target column).
pub fn load_regression_csv(path: &Path) -> Result<RegressionDataset> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header_len = reader.headers().map(|h| h.len()).unwrap_or(0);
    if header_len < 2 {
        return Err(Error::Parse {
            row: 0,
            msg: "empty file or missing header".into(),
        });
    }
    let d = header_len - 1;
    let mut flat = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != header_len {
            return Err(Error::Parse {
                row,
                msg: format!("expected {header_len} columns, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("invalid number `{field}`"),
            })?;
            if j < d {
                flat.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "no data rows".into(),
        });
    }
    RegressionDataset::new(
        Array2::from_shape_vec((targets.len(), d), flat).expect("shape checked"),
        targets,
    )
}

fn header(d: usize, last: &str) -> Vec<String> {
    (0..d)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once(last.to_string()))
        .collect()
}

/// Writes a dataset in the same schema [`load_features`] reads.
pub fn save_features(ds: &Dataset, path: &Path, format: FileFormat) -> Result<()> {
    match format {
        FileFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(header(ds.dim(), "label"))?;
            for (row, &y) in ds.features.outer_iter().zip(&ds.labels) {
                let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                rec.push(y.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        FileFormat::Json => {
            let file = DatasetFile {
                features: ds.features.outer_iter().map(|r| r.to_vec()).collect(),
                labels: ds.labels.clone(),
                class_count: ds.class_count,
            };
            write_text(path, &serde_json::to_string(&file)?)?;
        }
    }
    Ok(())
}

pub fn save_regression_csv(ds: &RegressionDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(ds.features.ncols(), "y"))?;
    for (row, &y) in ds.features.outer_iter().zip(&ds.targets) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization and splitting
// ---------------------------------------------------------------------------

/// Scales every nonzero row to unit ℓ2 norm. Zero rows pass through.
pub fn normalize_rows(ds: &Dataset) -> Dataset {
    let mut features = ds.features.clone();
    for mut row in features.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    Dataset {
        features,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        normalized: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            validation_fraction: 0.15,
            stratified: true,
            seed: 0,
        }
    }
}

/// Splits into `(train, validation)`.
///
/// The validation size is `round(fraction · n)`. Under stratification it is
/// apportioned across classes by largest remainder (ties go to the lower
/// class index), so each class receives `floor` or `ceil` of its share.
/// Rows keep their original relative order inside each part.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let frac = spec.validation_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid(
            "validation_fraction",
            format!("must lie in (0, 1), got {frac}"),
        ));
    }
    let n = ds.len();
    let total = (frac * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut val_idx: Vec<usize> = Vec::with_capacity(total);

    if spec.stratified {
        let c = ds.class_count;
        if n < 2 * c {
            return Err(Error::Stratification(format!(
                "{n} rows cannot be stratified over {c} classes"
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
        for (i, &y) in ds.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        if let Some((k, members)) = by_class
            .iter()
            .enumerate()
            .find(|(_, m)| !m.is_empty() && m.len() < 2)
        {
            return Err(Error::Stratification(format!(
                "class {k} has only {} sample(s)",
                members.len()
            )));
        }
        let shares: Vec<f64> = by_class.iter().map(|m| frac * m.len() as f64).collect();
        let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| {
            let ra = shares[a] - shares[a].floor();
            let rb = shares[b] - shares[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
            if counts[k] < by_class[k].len() {
                counts[k] += 1;
            }
        }
        for (members, &count) in by_class.iter_mut().zip(&counts) {
            members.shuffle(&mut rng);
            val_idx.extend_from_slice(&members[..count]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        val_idx.extend_from_slice(&all[..total]);
    }

    let mut in_val = vec![false; n];
    for &i in &val_idx {
        in_val[i] = true;
    }
    let train_idx: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
    let val_idx: Vec<usize> = (0..n).filter(|&i| in_val[i]).collect();
    Ok((ds.select(&train_idx), ds.select(&val_idx)))
}

// ---------------------------------------------------------------------------
// Synthetic worlds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum World {
    Blobs,
    Moons,
    GaussianMean,
}

impl std::str::FromStr for World {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(World::Blobs),
            "moons" => Ok(World::Moons),
            "gaussian-mean" => Ok(World::GaussianMean),
            other => Err(Error::invalid("world", format!("unknown world `{other}`"))),
        }
    }
}

/// A translation given either as a scalar (along the first axis) or a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Translation {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Translation {
    pub fn as_vec2(&self) -> [f64; 2] {
        match self {
            Translation::Scalar(t) => [*t, 0.0],
            Translation::Vector(v) => [
                v.first().copied().unwrap_or(0.0),
                v.get(1).copied().unwrap_or(0.0),
            ],
        }
    }
}

impl Default for Translation {
    fn default() -> Self {
        Translation::Scalar(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub world: World,
    pub translation: Translation,
    pub rotation_deg: f64,
    pub warp_alpha: f64,
    pub mean_shift_mu: Vec<f64>,
    /// Label noise for `gaussian-mean`; coordinate noise for `moons`.
    pub noise_sigma: f64,
    /// Linear labeling rule for `gaussian-mean`; all ones when empty.
    pub w_star: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    /// Draws the target's base sample independently with this seed instead
    /// of pairing it with the source sample.
    pub target_seed: Option<u64>,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            world: World::Blobs,
            translation: Translation::default(),
            rotation_deg: 0.0,
            warp_alpha: 0.0,
            mean_shift_mu: vec![0.0, 0.0],
            noise_sigma: 0.1,
            w_star: Vec::new(),
            n: 1000,
            seed: 0,
            target_seed: None,
        }
    }
}

fn world_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Class means of the blobs world.
pub const BLOB_MEANS: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.0]];

/// Draws `n` blob points (labels alternate 0, 1, 0, ...).
pub fn sample_blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = world_rng(seed, 0);
    let mut flat = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        flat.push(BLOB_MEANS[y][0] + z0);
        flat.push(BLOB_MEANS[y][1] + z1);
        labels.push(y);
    }
    Dataset::new(Array2::from_shape_vec((n, 2), flat).unwrap(), labels, 2).unwrap()
}

/// Rotation by `rotation_deg` about the origin followed by translation.
pub fn rigid_transform(p: [f64; 2], rotation_deg: f64, translation: [f64; 2]) -> [f64; 2] {
    let (s, c) = rotation_deg.to_radians().sin_cos();
    [
        c * p[0] - s * p[1] + translation[0],
        s * p[0] + c * p[1] + translation[1],
    ]
}

fn map_rows(ds: &Dataset, f: impl Fn([f64; 2]) -> [f64; 2]) -> Dataset {
    let mut features = ds.features.clone();
    for mut row in features.outer_iter_mut() {
        let q = f([row[0], row[1]]);
        row[0] = q[0];
        row[1] = q[1];
    }
    Dataset {
        features,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        normalized: false,
    }
}

/// Two isotropic unit-variance blobs at `(±1, 0)`; the target is the rigid
/// rotation-then-translation of a blob draw.
pub fn make_blobs_shift(cfg: &ShiftConfig) -> Result<(Dataset, Dataset)> {
    if cfg.world != World::Blobs {
        return Err(Error::invalid(
            "world",
            "make_blobs_shift requires world = blobs",
        ));
    }
    let source = sample_blobs(cfg.n, cfg.seed);
    let base = match cfg.target_seed {
        Some(s) => sample_blobs(cfg.n, s),
        None => source.clone(),
    };
    let t = cfg.translation.as_vec2();
    let target = map_rows(&base, |p| rigid_transform(p, cfg.rotation_deg, t));
    Ok((source, target))
}

/// Two interleaving half circles (outer moon label 0, inner moon label 1)
/// with isotropic Gaussian coordinate noise.
pub fn sample_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = world_rng(seed, 0);
    let mut flat = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = t.sin_cos();
        let (x0, x1) = if y == 0 { (c, s) } else { (1.0 - c, 0.5 - s) };
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        flat.push(x0 + noise * z0);
        flat.push(x1 + noise * z1);
        labels.push(y);
    }
    Dataset::new(Array2::from_shape_vec((n, 2), flat).unwrap(), labels, 2).unwrap()
}

/// Radial twist: rotates `p` about the origin by `alpha · ‖p‖` radians.
pub fn radial_twist(p: [f64; 2], alpha: f64) -> [f64; 2] {
    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let (s, c) = (alpha * r).sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Inverse of [`radial_twist`]; rotation preserves the radius.
pub fn radial_untwist(p: [f64; 2], alpha: f64) -> [f64; 2] {
    radial_twist(p, -alpha)
}

pub fn make_moons_warp(cfg: &ShiftConfig) -> Result<(Dataset, Dataset)> {
    if cfg.world != World::Moons {
        return Err(Error::invalid(
            "world",
            "make_moons_warp requires world = moons",
        ));
    }
    if !(cfg.warp_alpha >= 0.0) {
        return Err(Error::invalid("warp_alpha", "must be non-negative"));
    }
    let source = sample_moons(cfg.n, cfg.noise_sigma, cfg.seed);
    let base = match cfg.target_seed {
        Some(s) => sample_moons(cfg.n, cfg.noise_sigma, s),
        None => source.clone(),
    };
    let alpha = cfg.warp_alpha;
    let target = if alpha == 0.0 {
        base
    } else {
        map_rows(&base, |p| radial_twist(p, alpha))
    };
    Ok((source, target))
}

fn gaussian_inputs(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = world_rng(seed, 0);
    let mut x = Array2::zeros((n, d));
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..d {
            x[[i, j]] = rng.sample(StandardNormal);
        }
        noise.push(rng.sample(StandardNormal));
    }
    (x, noise)
}

/// Source inputs `N(0, I_d)`, target inputs `N(μ, I_d)`, both labeled by
/// `y = w*ᵀx + σ·ε`. The dimension is `mean_shift_mu.len()`.
pub fn make_gaussian_mean_shift(
    cfg: &ShiftConfig,
) -> Result<(RegressionDataset, RegressionDataset)> {
    if cfg.world != World::GaussianMean {
        return Err(Error::invalid(
            "world",
            "make_gaussian_mean_shift requires world = gaussian-mean",
        ));
    }
    let d = cfg.mean_shift_mu.len();
    if d == 0 {
        return Err(Error::invalid(
            "mean_shift_mu",
            "must have at least one coordinate",
        ));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma", "must be non-negative"));
    }
    let w_star = if cfg.w_star.is_empty() {
        vec![1.0; d]
    } else {
        cfg.w_star.clone()
    };
    if w_star.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: w_star.len(),
        });
    }
    let label = |x: &Array2<f64>, noise: &[f64]| -> Vec<f64> {
        x.outer_iter()
            .zip(noise)
            .map(|(row, e)| {
                row.iter().zip(&w_star).map(|(a, b)| a * b).sum::<f64>() + cfg.noise_sigma * e
            })
            .collect()
    };
    let (xs, es) = gaussian_inputs(cfg.n, d, cfg.seed);
    let (mut xt, et) = match cfg.target_seed {
        Some(s) => gaussian_inputs(cfg.n, d, s),
        None => (xs.clone(), es.clone()),
    };
    for mut row in xt.outer_iter_mut() {
        for (v, m) in row.iter_mut().zip(&cfg.mean_shift_mu) {
            *v += m;
        }
    }
    let ys = label(&xs, &es);
    let yt = label(&xt, &et);
    Ok((
        RegressionDataset::new(xs, ys)?,
        RegressionDataset::new(xt, yt)?,
    ))
}

/// Dispatches to the classification world generator named in `cfg`.
pub fn make_classification_shift(cfg: &ShiftConfig) -> Result<(Dataset, Dataset)> {
    match cfg.world {
        World::Blobs => make_blobs_shift(cfg),
        World::Moons => make_moons_warp(cfg),
        World::GaussianMean => Err(Error::invalid(
            "world",
            "gaussian-mean is a regression world",
        )),
    }
}
