//! Distribution distance between real and synthetic feature sets:
//! Gaussian fits, the Frechet distance between them, per-class scoring,
//! and the on-disk feature format.
//!
//! The cross-term trace uses the symmetric form
//! `tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2))`,
//! which keeps the eigenproblem symmetric. Its eigenvalues are
//! non-negative in exact arithmetic; small negatives are rounding noise
//! and are clamped, while a clearly negative one triggers a single
//! regularized retry with `eps` added to both covariance diagonals. The
//! happy path never touches `eps`, so well-conditioned inputs score
//! identically whatever `eps` the caller picked.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Default diagonal regularization for the cross-term retry.
pub const COVARIANCE_EPS: f64 = 1e-6;

/// Absolute floor: a plain-product eigenvalue below this means the clamp
/// would hide real mass, so the regularized retry runs instead.
const RETRY_EIG_FLOOR: f64 = -1e-8;

/// Relative clamping threshold: negatives within this fraction of the
/// product trace are rounding noise whatever the feature scale.
const CLAMP_TRACE_RATIO: f64 = 1e-10;

/// Mean and covariance of one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and the unbiased covariance of `features` (rows are
/// samples).
pub fn fit_gaussian(features: &DMatrix<f64>) -> Result<GaussianStats> {
    let n = features.nrows();
    let d = features.ncols();
    if n < 2 {
        return Err(PipelineError::TooFewFeatureRows { rows: n });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFiniteFeature);
    }
    let mut mean = DVector::zeros(d);
    for j in 0..d {
        let mut sum = 0.0;
        for i in 0..n {
            sum += features[(i, j)];
        }
        mean[j] = sum / n as f64;
    }
    let mut centered = features.clone();
    for i in 0..n {
        for j in 0..d {
            centered[(i, j)] -= mean[j];
        }
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    symmetrize(&mut cov);
    Ok(GaussianStats { mean, cov })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

/// Symmetric PSD square root via eigendecomposition, clamping rounding
/// noise below zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
    );
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
    &scaled * eig.eigenvectors.transpose()
}

/// Outcome of one symmetric-product square root attempt.
enum CrossTerm {
    Trace(f64),
    TooNegative(f64),
}

/// `tr((a b)^(1/2))` for PSD `a`, `b`. Negatives within tolerance clamp
/// to zero; anything worse reports the offending eigenvalue.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> CrossTerm {
    let sqrt_a = psd_sqrt(a);
    let mut inner = &sqrt_a * b * &sqrt_a;
    symmetrize(&mut inner);
    let tolerance = (-RETRY_EIG_FLOOR).max(CLAMP_TRACE_RATIO * inner.trace().abs());
    let eig = inner.symmetric_eigen();
    let mut trace = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -tolerance {
            return CrossTerm::TooNegative(v);
        }
        trace += v.max(0.0).sqrt();
    }
    CrossTerm::Trace(trace)
}

/// Squared Frechet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`.
///
/// `eps` is only consulted when the plain cross term misbehaves; pass 0
/// to forbid regularization entirely.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats, eps: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PipelineError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(PipelineError::InvalidConfig {
            message: format!("regularization eps must be >= 0, got {eps}"),
        });
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);

    let trace_cross = match trace_sqrt_product(&a.cov, &b.cov) {
        CrossTerm::Trace(t) => t,
        CrossTerm::TooNegative(worst) => {
            if eps == 0.0 {
                return Err(PipelineError::CovarianceSqrtFailed {
                    min_eigenvalue: worst,
                });
            }
            let eye = DMatrix::identity(a.dim(), a.dim());
            match trace_sqrt_product(&(&a.cov + &eye * eps), &(&b.cov + &eye * eps)) {
                CrossTerm::Trace(t) => t,
                CrossTerm::TooNegative(still) => {
                    return Err(PipelineError::CovarianceSqrtFailed {
                        min_eigenvalue: still,
                    })
                }
            }
        }
    };
    let distance = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_cross;
    Ok(distance.max(0.0))
}

/// Frechet distance between the Gaussian fits of two feature sets.
pub fn feature_set_distance(
    real: &DMatrix<f64>,
    synthetic: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    if real.ncols() != synthetic.ncols() {
        return Err(PipelineError::DimensionMismatch {
            left: real.ncols(),
            right: synthetic.ncols(),
        });
    }
    frechet_distance(&fit_gaussian(real)?, &fit_gaussian(synthetic)?, eps)
}

/// One class's score and the sample counts behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFid {
    pub fid: f64,
    pub n_real: usize,
    pub n_syn: usize,
}

/// Per-class scores plus the fullest-histogram-bin summary across them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub per_class: BTreeMap<String, ClassFid>,
    pub mode_estimate: ModeEstimate,
}

impl FidReport {
    /// Scores alone, keyed by class.
    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.per_class
            .iter()
            .map(|(class, entry)| (class.clone(), entry.fid))
            .collect()
    }
}

/// Per-class distances. Real and synthetic must cover identical classes.
pub fn per_class_fid(
    real: &BTreeMap<String, DMatrix<f64>>,
    synthetic: &BTreeMap<String, DMatrix<f64>>,
    eps: f64,
) -> Result<FidReport> {
    if real.is_empty() && synthetic.is_empty() {
        return Err(PipelineError::InvalidConfig {
            message: "per-class scoring needs at least one class".into(),
        });
    }
    let real_classes: Vec<&String> = real.keys().collect();
    let syn_classes: Vec<&String> = synthetic.keys().collect();
    if real_classes != syn_classes {
        return Err(PipelineError::ClassMismatch {
            message: format!("real classes {real_classes:?}, synthetic classes {syn_classes:?}"),
        });
    }
    let mut per_class = BTreeMap::new();
    for (class, real_features) in real {
        let syn_features = &synthetic[class];
        per_class.insert(
            class.clone(),
            ClassFid {
                fid: feature_set_distance(real_features, syn_features, eps)?,
                n_real: real_features.nrows(),
                n_syn: syn_features.nrows(),
            },
        );
    }
    let scores: Vec<f64> = per_class.values().map(|e| e.fid).collect();
    let mode_estimate = fid_mode_estimate(&scores).expect("at least one class was scored");
    Ok(FidReport {
        per_class,
        mode_estimate,
    })
}

/// Per-class score difference `a - b` between two reports over the same
/// classes; the raw material for a difference histogram.
pub fn fid_delta(a: &FidReport, b: &FidReport) -> Result<BTreeMap<String, f64>> {
    let left: Vec<&String> = a.per_class.keys().collect();
    let right: Vec<&String> = b.per_class.keys().collect();
    if left != right {
        return Err(PipelineError::ClassMismatch {
            message: format!("left report covers {left:?}, right report covers {right:?}"),
        });
    }
    Ok(a.per_class
        .iter()
        .map(|(class, entry)| (class.clone(), entry.fid - b.per_class[class].fid))
        .collect())
}

/// The most populated unit-width histogram bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub bin_start: f64,
    pub center: f64,
    pub count: usize,
}

/// Histogram the values into bins `[k, k+1)` and return the fullest bin's
/// center; ties go to the smallest bin.
pub fn fid_mode_estimate(values: &[f64]) -> Option<ModeEstimate> {
    if values.is_empty() {
        return None;
    }
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values {
        *bins.entry(v.floor() as i64).or_insert(0) += 1;
    }
    let (&bin, &count) = bins.iter().max_by(|a, b| {
        a.1.cmp(b.1).then(b.0.cmp(a.0))
    })?;
    Some(ModeEstimate {
        bin_start: bin as f64,
        center: bin as f64 + 0.5,
        count,
    })
}

/// Magic bytes opening a feature file.
pub const FEATURE_MAGIC: &[u8; 4] = b"BOBF";

/// Write features as magic, u32 rows, u32 cols, then row-major f32 values,
/// all little-endian.
pub fn save_features(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(PipelineError::MalformedFeatureFile {
            path: path.into(),
            message: "refusing to write an empty feature matrix".into(),
        });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFiniteFeature);
    }
    let mut bytes =
        Vec::with_capacity(12 + features.nrows() * features.ncols() * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(features.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.ncols() as u32).to_le_bytes());
    for i in 0..features.nrows() {
        for j in 0..features.ncols() {
            bytes.extend_from_slice(&(features[(i, j)] as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn load_features(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let malformed = |message: String| PipelineError::MalformedFeatureFile {
        path: path.into(),
        message,
    };
    if bytes.len() < 12 {
        return Err(malformed("file shorter than its 12-byte header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(malformed(format!(
            "bad magic {:?}, expected {FEATURE_MAGIC:?}",
            &bytes[..4]
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(malformed(format!("degenerate shape {n}x{d}")));
    }
    let expected = 12 + n * d * 4;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "expected {expected} bytes for {n}x{d}, found {}",
            bytes.len()
        )));
    }
    let mut features = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let offset = 12 + (i * d + j) * 4;
            let value =
                f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as f64;
            if !value.is_finite() {
                return Err(PipelineError::NonFiniteFeature);
            }
            features[(i, j)] = value;
        }
    }
    Ok(features)
}

/// Sidecar index mapping class labels to feature files, one
/// tab-separated pair per line.
pub fn save_feature_index(path: &Path, index: &BTreeMap<String, PathBuf>) -> Result<()> {
    let mut out = String::new();
    for (class, file) in index {
        out.push_str(class);
        out.push('\t');
        out.push_str(&file.to_string_lossy());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

pub fn load_feature_index(path: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut index = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (class, file) = line.split_once('\t').ok_or_else(|| {
            PipelineError::MalformedFeatureFile {
                path: path.into(),
                message: format!("index line {} has no tab separator", idx + 1),
            }
        })?;
        index.insert(class.to_string(), PathBuf::from(file));
    }
    if index.is_empty() {
        return Err(PipelineError::MalformedFeatureFile {
            path: path.into(),
            message: "feature index is empty".into(),
        });
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn univariate(mean: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_vec(vec![mean]),
            cov: DMatrix::from_vec(1, 1, vec![var]),
        }
    }

    fn random_stats(seed: u64, d: usize) -> GaussianStats {
        let mut rng = SplitMix64::new(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.next_f64() * 2.0 - 1.0);
        let mut cov = &a * a.transpose();
        for i in 0..d {
            cov[(i, i)] += 0.1;
        }
        let mean = DVector::from_fn(d, |_, _| rng.next_f64() * 4.0 - 2.0);
        GaussianStats { mean, cov }
    }

    #[test]
    fn fit_matches_hand_computed_mean_and_covariance() {
        let features = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let stats = fit_gaussian(&features).unwrap();
        assert_eq!(stats.mean.as_slice(), &[0.5, 0.5]);
        assert_eq!(stats.cov[(0, 0)], 0.5);
        assert_eq!(stats.cov[(1, 1)], 0.5);
        assert_eq!(stats.cov[(0, 1)], -0.5);
        assert_eq!(stats.cov[(1, 0)], -0.5);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let one_row = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            fit_gaussian(&one_row),
            Err(PipelineError::TooFewFeatureRows { rows: 1 })
        ));
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(
            fit_gaussian(&bad),
            Err(PipelineError::NonFiniteFeature)
        ));
    }

    #[test]
    fn distance_to_self_is_zero() {
        let stats = random_stats(42, 5);
        let d = frechet_distance(&stats, &stats, COVARIANCE_EPS).unwrap();
        assert!(d < 1e-6, "self distance {d}");
    }

    #[test]
    fn univariate_closed_forms() {
        let d = frechet_distance(&univariate(0.0, 1.0), &univariate(3.0, 1.0), COVARIANCE_EPS)
            .unwrap();
        assert!((d - 9.0).abs() < 1e-6, "mean shift case: {d}");

        let d = frechet_distance(&univariate(0.0, 1.0), &univariate(0.0, 4.0), COVARIANCE_EPS)
            .unwrap();
        assert!((d - 1.0).abs() < 1e-6, "variance case: {d}");
    }

    #[test]
    fn distance_is_symmetric() {
        let a = random_stats(1, 6);
        let b = random_stats(2, 6);
        let ab = frechet_distance(&a, &b, COVARIANCE_EPS).unwrap();
        let ba = frechet_distance(&b, &a, COVARIANCE_EPS).unwrap();
        assert!((ab - ba).abs() < 1e-8, "ab={ab} ba={ba}");
        assert!(ab > 0.0);
    }

    #[test]
    fn regularization_is_inert_on_well_conditioned_inputs() {
        // The happy path never adds eps, so any eps gives the same score.
        for seed in 0..20 {
            let a = random_stats(seed * 2 + 1, 4);
            let b = random_stats(seed * 2 + 2, 4);
            let plain = frechet_distance(&a, &b, 0.0).unwrap();
            let regularized = frechet_distance(&a, &b, COVARIANCE_EPS).unwrap();
            assert_eq!(plain, regularized, "seed {seed}");
            assert!((plain - regularized).abs() < 1e-3);
        }
    }

    #[test]
    fn negative_eps_is_rejected() {
        let a = random_stats(1, 2);
        assert!(matches!(
            frechet_distance(&a, &a, -1.0),
            Err(PipelineError::InvalidConfig { .. })
        ));
        assert!(frechet_distance(&a, &a, f64::NAN).is_err());
    }

    #[test]
    fn diagonal_covariances_match_the_closed_form() {
        let a = GaussianStats {
            mean: DVector::from_vec(vec![0.0, 1.0, -1.0, 2.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0])),
        };
        let b = GaussianStats {
            mean: DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5, 1.5])),
        };
        let expected_mean: f64 = 1.0 + 0.0 + 1.0 + 4.0;
        let expected_cov: f64 = [(1.0f64, 2.0f64), (2.0, 1.0), (0.5, 0.5), (3.0, 1.5)]
            .iter()
            .map(|&(x, y): &(f64, f64)| (x.sqrt() - y.sqrt()).powi(2))
            .sum();
        let d = frechet_distance(&a, &b, COVARIANCE_EPS).unwrap();
        assert!((d - (expected_mean + expected_cov)).abs() < 1e-9, "{d}");
    }

    #[test]
    fn rank_deficient_covariances_still_work() {
        let zero = GaussianStats {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            cov: DMatrix::zeros(2, 2),
        };
        let d = frechet_distance(&zero, &zero, COVARIANCE_EPS).unwrap();
        assert_eq!(d, 0.0);

        let other = random_stats(9, 2);
        let d = frechet_distance(&zero, &other, COVARIANCE_EPS).unwrap();
        let expected = (&zero.mean - &other.mean).norm_squared() + other.cov.trace();
        assert!((d - expected).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = random_stats(1, 3);
        let b = random_stats(2, 4);
        assert!(matches!(
            frechet_distance(&a, &b, COVARIANCE_EPS),
            Err(PipelineError::DimensionMismatch { left: 3, right: 4 })
        ));
    }

    fn toy_feature_maps(
        shift: f64,
    ) -> (BTreeMap<String, DMatrix<f64>>, BTreeMap<String, DMatrix<f64>>) {
        let make = |seed: u64, offset: f64| {
            let mut rng = SplitMix64::new(seed);
            DMatrix::from_fn(20, 3, |_, _| rng.next_f64() + offset)
        };
        let mut real = BTreeMap::new();
        real.insert("a".to_string(), make(1, 0.0));
        real.insert("b".to_string(), make(2, 0.0));
        let mut syn = BTreeMap::new();
        syn.insert("a".to_string(), make(3, shift));
        syn.insert("b".to_string(), make(4, shift));
        (real, syn)
    }

    #[test]
    fn per_class_report_carries_counts_and_mode() {
        let (real, mut syn) = toy_feature_maps(0.0);
        let report = per_class_fid(&real, &syn, COVARIANCE_EPS).unwrap();
        assert_eq!(report.per_class.len(), 2);
        for entry in report.per_class.values() {
            assert!(entry.fid.is_finite() && entry.fid >= 0.0);
            assert_eq!(entry.n_real, 20);
            assert_eq!(entry.n_syn, 20);
        }
        let scores: Vec<f64> = report.scores().values().copied().collect();
        assert_eq!(report.mode_estimate, fid_mode_estimate(&scores).unwrap());

        syn.remove("b");
        assert!(matches!(
            per_class_fid(&real, &syn, COVARIANCE_EPS),
            Err(PipelineError::ClassMismatch { .. })
        ));
        assert!(per_class_fid(&BTreeMap::new(), &BTreeMap::new(), COVARIANCE_EPS).is_err());
    }

    #[test]
    fn identical_sets_score_zero_per_class() {
        let (real, _) = toy_feature_maps(0.0);
        let report = per_class_fid(&real, &real, COVARIANCE_EPS).unwrap();
        assert!(report.per_class.values().all(|e| e.fid < 1e-6));
    }

    #[test]
    fn delta_subtracts_per_class_and_checks_class_sets() {
        let (real, syn) = toy_feature_maps(2.0);
        let identical = per_class_fid(&real, &real, COVARIANCE_EPS).unwrap();
        let shifted = per_class_fid(&real, &syn, COVARIANCE_EPS).unwrap();

        let zeros = fid_delta(&shifted, &shifted).unwrap();
        assert!(zeros.values().all(|&v| v == 0.0));

        let delta = fid_delta(&identical, &shifted).unwrap();
        for (class, &d) in &delta {
            let expected = identical.per_class[class].fid - shifted.per_class[class].fid;
            assert_eq!(d, expected);
            assert!(d < 0.0, "identical-vs-shifted delta should be negative");
        }

        let mut renamed = shifted.clone();
        let entry = renamed.per_class.remove("a").unwrap();
        renamed.per_class.insert("c".to_string(), entry);
        assert!(matches!(
            fid_delta(&identical, &renamed),
            Err(PipelineError::ClassMismatch { .. })
        ));
    }

    #[test]
    fn mode_estimate_picks_the_fullest_unit_bin() {
        let mode = fid_mode_estimate(&[25.3, 26.1, 26.7, 30.2]).unwrap();
        assert_eq!(mode.bin_start, 26.0);
        assert_eq!(mode.center, 26.5);
        assert_eq!(mode.count, 2);

        let tie = fid_mode_estimate(&[2.3, 1.2]).unwrap();
        assert_eq!(tie.center, 1.5);

        assert!(fid_mode_estimate(&[]).is_none());
    }

    #[test]
    fn feature_file_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        let mut rng = SplitMix64::new(3);
        let features = DMatrix::from_fn(7, 4, |_, _| rng.next_f64());
        save_features(&path, &features).unwrap();
        let loaded = load_features(&path).unwrap();
        assert_eq!(loaded.shape(), (7, 4));
        for (a, b) in features.iter().zip(loaded.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn feature_file_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        let features = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        save_features(&path, &features).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_features(&path),
            Err(PipelineError::MalformedFeatureFile { .. })
        ));

        bytes[0] = b'B';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_features(&path),
            Err(PipelineError::MalformedFeatureFile { .. })
        ));
    }

    #[test]
    fn feature_index_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.tsv");
        let mut index = BTreeMap::new();
        index.insert("finch".to_string(), PathBuf::from("real/finch.bin"));
        index.insert("gull".to_string(), PathBuf::from("real/gull.bin"));
        save_feature_index(&path, &index).unwrap();
        assert_eq!(load_feature_index(&path).unwrap(), index);

        std::fs::write(&path, "no-tab-here\n").unwrap();
        assert!(load_feature_index(&path).is_err());
    }
}
