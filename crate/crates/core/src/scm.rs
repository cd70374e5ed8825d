//! Exact discrete causal models for validating the context policies.
//!
//! The structural model is deliberately tiny: a class variable Y with
//! prior `p_y`, a context variable Z with marginal `p_z`, and an
//! observation X drawn from `p_x_given_yz`. Y and Z are independent in
//! the model itself, so the interventional target
//! `P(X | do(Y=y)) = sum_z P(X|y,z) P(z)` is computable exactly by
//! enumeration.
//!
//! Dependence between class and context enters through a finite
//! `TrainingDraw`: a list of (id, y, z) samples standing in for a real
//! training set, which can be drawn i.i.d. (large-data regime) or
//! constructed with y and z perfectly correlated (the scarce, confounded
//! regime). `simulate_pipeline` then mirrors the generation stages: pick
//! a context from the draw under a policy, sample X from the model, and
//! compare the empirical result against the exact target. Dataset-level
//! marginalization should approach the interventional distribution even
//! on a confounded draw; class-scoped policies should not.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::rng::SplitMix64;
use crate::sampler::MarginalizationMode;

const SCM_NORMALIZATION_TOLERANCE: f64 = 1e-12;
const TV_NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Discrete structural model over (Y, Z, X). X atoms are the indices
/// `0..n_x` implied by the rows of `p_x_given_yz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScm {
    pub y_domain: Vec<String>,
    pub z_domain: Vec<String>,
    /// P(Y), indexed by y.
    pub p_y: Vec<f64>,
    /// P(Z), indexed by z. Independent of Y in the model.
    pub p_z: Vec<f64>,
    /// P(X|Y,Z), indexed [y][z][x].
    pub p_x_given_yz: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
        return Err(PipelineError::InvalidScm {
            message: format!("probability outside [0, 1] in {p:?}"),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SCM_NORMALIZATION_TOLERANCE {
        return Err(PipelineError::NotNormalized { sum });
    }
    Ok(())
}

fn check_domain(name: &str, domain: &[String]) -> Result<()> {
    if domain.is_empty() {
        return Err(PipelineError::InvalidScm {
            message: format!("{name} domain is empty"),
        });
    }
    let unique: BTreeSet<&String> = domain.iter().collect();
    if unique.len() != domain.len() {
        return Err(PipelineError::InvalidScm {
            message: format!("{name} domain has duplicate atoms"),
        });
    }
    Ok(())
}

impl DiscreteScm {
    pub fn validate(&self) -> Result<()> {
        check_domain("y", &self.y_domain)?;
        check_domain("z", &self.z_domain)?;
        let (ny, nz) = (self.y_domain.len(), self.z_domain.len());
        if self.p_y.len() != ny {
            return Err(PipelineError::InvalidScm {
                message: format!("p_y has {} entries for {ny} classes", self.p_y.len()),
            });
        }
        check_distribution(&self.p_y)?;
        if self.p_z.len() != nz {
            return Err(PipelineError::InvalidScm {
                message: format!("p_z has {} entries for {nz} contexts", self.p_z.len()),
            });
        }
        check_distribution(&self.p_z)?;
        if self.p_x_given_yz.len() != ny {
            return Err(PipelineError::InvalidScm {
                message: format!(
                    "p_x_given_yz has {} blocks for {ny} classes",
                    self.p_x_given_yz.len()
                ),
            });
        }
        let nx = self
            .p_x_given_yz
            .first()
            .and_then(|block| block.first())
            .map(|row| row.len())
            .unwrap_or(0);
        if nx == 0 {
            return Err(PipelineError::InvalidScm {
                message: "p_x_given_yz has an empty observation domain".into(),
            });
        }
        for block in &self.p_x_given_yz {
            if block.len() != nz {
                return Err(PipelineError::InvalidScm {
                    message: format!(
                        "p_x_given_yz block has {} rows for {nz} contexts",
                        block.len()
                    ),
                });
            }
            for row in block {
                if row.len() != nx {
                    return Err(PipelineError::InvalidScm {
                        message: format!(
                            "p_x_given_yz rows disagree on the observation domain ({} vs {nx})",
                            row.len()
                        ),
                    });
                }
                check_distribution(row)?;
            }
        }
        Ok(())
    }

    /// Number of X atoms.
    pub fn x_len(&self) -> usize {
        self.p_x_given_yz[0][0].len()
    }

    /// True when every configuration has positive probability.
    pub fn full_support(&self) -> bool {
        self.p_y.iter().all(|&p| p > 0.0)
            && self.p_z.iter().all(|&p| p > 0.0)
            && self
                .p_x_given_yz
                .iter()
                .flatten()
                .all(|row| row.iter().all(|&p| p > 0.0))
    }

    pub fn y_index(&self, label: &str) -> Result<usize> {
        self.y_domain
            .iter()
            .position(|v| v == label)
            .ok_or_else(|| PipelineError::UnknownScmValue {
                variable: "y",
                value: label.to_string(),
            })
    }

    /// Interventional distribution by back-door adjustment over Z:
    /// P(X | do(Y=y)) = sum_z P(X|y,z) P(z).
    pub fn exact_interventional(&self, y: usize) -> Result<Vec<f64>> {
        if y >= self.y_domain.len() {
            return Err(PipelineError::UnknownScmValue {
                variable: "y",
                value: y.to_string(),
            });
        }
        let mut out = vec![0.0; self.x_len()];
        for (z, &pz) in self.p_z.iter().enumerate() {
            for (x, &px) in self.p_x_given_yz[y][z].iter().enumerate() {
                out[x] += pz * px;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DiscreteScm> {
        let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        let scm: DiscreteScm = serde_json::from_slice(&bytes)?;
        scm.validate()?;
        Ok(scm)
    }

    /// 2x2 toy with a deterministic readout: X encodes the (y, z) pair
    /// exactly, with uniform priors on both axes. Pairing it with a
    /// class-matched draw produces the fully confounded scarce regime.
    pub fn confounded_toy() -> DiscreteScm {
        DiscreteScm {
            y_domain: vec!["y0".into(), "y1".into()],
            z_domain: vec!["z0".into(), "z1".into()],
            p_y: vec![0.5, 0.5],
            p_z: vec![0.5, 0.5],
            p_x_given_yz: vec![
                vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
            ],
        }
    }

    /// Softer 2x2 variant: X is a noisy readout of the (y, z) pair.
    pub fn noisy_toy() -> DiscreteScm {
        let noisy_row = |peak: usize| {
            let mut row = vec![0.1; 4];
            row[peak] = 0.7;
            row
        };
        DiscreteScm {
            y_domain: vec!["y0".into(), "y1".into()],
            z_domain: vec!["z0".into(), "z1".into()],
            p_y: vec![0.5, 0.5],
            p_z: vec![0.5, 0.5],
            p_x_given_yz: vec![
                vec![noisy_row(0), noisy_row(1)],
                vec![noisy_row(2), noisy_row(3)],
            ],
        }
    }

    pub fn builtin(name: &str) -> Option<DiscreteScm> {
        match name {
            "toy-confounded" => Some(Self::confounded_toy()),
            "toy-noisy" => Some(Self::noisy_toy()),
            _ => None,
        }
    }
}

/// Context-selection policy mirroring the pipeline's marginalization
/// modes inside the lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelinePolicy {
    /// Each synthetic sample reuses the contexts of its class's own
    /// training samples, cycling through them in order.
    Observational,
    /// Contexts drawn uniformly from the class's own samples.
    ClassMarginal,
    /// Contexts drawn uniformly from the whole draw, ignoring class.
    DatasetMarginal,
}

impl PipelinePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            PipelinePolicy::Observational => "observational",
            PipelinePolicy::ClassMarginal => "class_marginal",
            PipelinePolicy::DatasetMarginal => "dataset_marginal",
        }
    }

    pub const ALL: [PipelinePolicy; 3] = [
        PipelinePolicy::Observational,
        PipelinePolicy::ClassMarginal,
        PipelinePolicy::DatasetMarginal,
    ];
}

impl FromStr for PipelinePolicy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<PipelinePolicy> {
        match s {
            "observational" => Ok(PipelinePolicy::Observational),
            "class_marginal" => Ok(PipelinePolicy::ClassMarginal),
            "dataset_marginal" => Ok(PipelinePolicy::DatasetMarginal),
            other => Err(PipelineError::InvalidConfig {
                message: format!(
                    "unknown policy {other:?}; expected observational, class_marginal, or dataset_marginal"
                ),
            }),
        }
    }
}

impl From<MarginalizationMode> for PipelinePolicy {
    fn from(mode: MarginalizationMode) -> PipelinePolicy {
        match mode {
            MarginalizationMode::None => PipelinePolicy::Observational,
            MarginalizationMode::ClassLevel => PipelinePolicy::ClassMarginal,
            MarginalizationMode::DatasetLevel => PipelinePolicy::DatasetMarginal,
        }
    }
}

/// Total variation distance `0.5 * sum_i |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PipelineError::DomainMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    for dist in [p, q] {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > TV_NORMALIZATION_TOLERANCE {
            return Err(PipelineError::NotNormalized { sum });
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// One training sample: a unique id paired with its class and context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawSample {
    pub id: usize,
    pub y: usize,
    pub z: usize,
}

/// A finite training set standing in for real images: each sample is an
/// id with the class and context it exhibits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDraw {
    pub samples: Vec<DrawSample>,
}

impl TrainingDraw {
    /// Validates ids (unique, exactly 0..n-1) and index ranges.
    pub fn from_samples(samples: Vec<DrawSample>, scm: &DiscreteScm) -> Result<TrainingDraw> {
        if samples.is_empty() {
            return Err(PipelineError::InvalidDraw {
                message: "draw has no samples".into(),
            });
        }
        let mut seen = vec![false; samples.len()];
        for sample in &samples {
            if sample.id >= samples.len() || seen[sample.id] {
                return Err(PipelineError::InvalidDraw {
                    message: format!("sample ids must be unique and cover 0..{}", samples.len()),
                });
            }
            seen[sample.id] = true;
            if sample.y >= scm.y_domain.len() {
                return Err(PipelineError::InvalidDraw {
                    message: format!("sample {} names class index {}", sample.id, sample.y),
                });
            }
            if sample.z >= scm.z_domain.len() {
                return Err(PipelineError::InvalidDraw {
                    message: format!("sample {} names context index {}", sample.id, sample.z),
                });
            }
        }
        Ok(TrainingDraw { samples })
    }

    /// i.i.d. draw of `n` samples with y ~ P(Y) and z ~ P(Z)
    /// independently, the large-data regime.
    pub fn iid(scm: &DiscreteScm, n: usize, seed: u64) -> Result<TrainingDraw> {
        if n == 0 {
            return Err(PipelineError::InvalidDraw {
                message: "draw has no samples".into(),
            });
        }
        let mut rng = SplitMix64::stream(seed, &[b"draw_iid"]);
        let samples = (0..n)
            .map(|id| DrawSample {
                id,
                y: rng.next_categorical(&scm.p_y),
                z: rng.next_categorical(&scm.p_z),
            })
            .collect();
        Ok(TrainingDraw { samples })
    }

    /// Fully confounded draw: `n_per_class` samples per class, each with
    /// z equal to its class index. Requires matching domain sizes.
    pub fn class_matched(scm: &DiscreteScm, n_per_class: usize) -> Result<TrainingDraw> {
        if scm.y_domain.len() != scm.z_domain.len() {
            return Err(PipelineError::InvalidDraw {
                message: format!(
                    "class-matched draw needs equal domain sizes ({} classes, {} contexts)",
                    scm.y_domain.len(),
                    scm.z_domain.len()
                ),
            });
        }
        if n_per_class == 0 {
            return Err(PipelineError::InvalidDraw {
                message: "draw has no samples".into(),
            });
        }
        let mut samples = Vec::with_capacity(scm.y_domain.len() * n_per_class);
        for y in 0..scm.y_domain.len() {
            for _ in 0..n_per_class {
                samples.push(DrawSample {
                    id: samples.len(),
                    y,
                    z: y,
                });
            }
        }
        Ok(TrainingDraw { samples })
    }

    /// Context indices exhibited by one class, in draw order.
    pub fn class_contexts(&self, y: usize) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.y == y)
            .map(|s| s.z)
            .collect()
    }

    /// Empirical P(Z|y), over `n_z` atoms.
    pub fn class_z_distribution(&self, y: usize, n_z: usize) -> Result<Vec<f64>> {
        let contexts = self.class_contexts(y);
        if contexts.is_empty() {
            return Err(PipelineError::EmptyConditioningSet {
                message: format!("no draw samples with class index {y}"),
            });
        }
        let mut out = vec![0.0; n_z];
        for &z in &contexts {
            out[z] += 1.0;
        }
        for v in &mut out {
            *v /= contexts.len() as f64;
        }
        Ok(out)
    }

    /// Empirical P(Z) pooled over the whole draw, over `n_z` atoms.
    pub fn pooled_z_distribution(&self, n_z: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_z];
        for sample in &self.samples {
            out[sample.z] += 1.0;
        }
        for v in &mut out {
            *v /= self.samples.len() as f64;
        }
        out
    }

    /// Mean over classes of TV(P(Z|y), P(Z)) within the draw: zero when
    /// class and context are empirically independent, large when each
    /// class monopolizes its own contexts.
    pub fn spuriousness_score(&self) -> Result<f64> {
        let classes: BTreeSet<usize> = self.samples.iter().map(|s| s.y).collect();
        if classes.len() < 2 {
            return Err(PipelineError::InvalidDraw {
                message: "spuriousness needs at least two distinct classes".into(),
            });
        }
        let n_z = self.samples.iter().map(|s| s.z).max().unwrap_or(0) + 1;
        let pooled = self.pooled_z_distribution(n_z);
        let mut total = 0.0;
        for &y in &classes {
            let class_dist = self.class_z_distribution(y, n_z)?;
            total += tv_distance(&class_dist, &pooled)?;
        }
        Ok(total / classes.len() as f64)
    }
}

/// Simulate the generation pipeline for one class: re-sample contexts
/// from the draw under `policy`, sample X from the model, and return the
/// empirical distribution over X.
pub fn simulate_pipeline(
    scm: &DiscreteScm,
    draw: &TrainingDraw,
    policy: PipelinePolicy,
    y: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if y >= scm.y_domain.len() {
        return Err(PipelineError::UnknownScmValue {
            variable: "y",
            value: y.to_string(),
        });
    }
    if n_samples == 0 {
        return Err(PipelineError::InvalidDraw {
            message: "simulation needs at least one sample".into(),
        });
    }
    if draw.samples.is_empty() {
        return Err(PipelineError::EmptyConditioningSet {
            message: "draw has no samples".into(),
        });
    }
    let class_contexts = draw.class_contexts(y);
    if matches!(
        policy,
        PipelinePolicy::Observational | PipelinePolicy::ClassMarginal
    ) && class_contexts.is_empty()
    {
        return Err(PipelineError::EmptyConditioningSet {
            message: format!("no draw samples with class index {y}"),
        });
    }
    let mut rng = SplitMix64::stream(
        seed,
        &[b"sim", policy.as_str().as_bytes(), scm.y_domain[y].as_bytes()],
    );
    let mut counts = vec![0.0; scm.x_len()];
    for j in 0..n_samples {
        let z = match policy {
            PipelinePolicy::Observational => class_contexts[j % class_contexts.len()],
            PipelinePolicy::ClassMarginal => {
                class_contexts[rng.next_below(class_contexts.len() as u64) as usize]
            }
            PipelinePolicy::DatasetMarginal => {
                draw.samples[rng.next_below(draw.samples.len() as u64) as usize].z
            }
        };
        let x = rng.next_categorical(&scm.p_x_given_yz[y][z]);
        counts[x] += 1.0;
    }
    for v in &mut counts {
        *v /= n_samples as f64;
    }
    Ok(counts)
}

/// Per-class TV between the simulated distribution and the exact
/// interventional target.
pub fn interventional_gap(
    scm: &DiscreteScm,
    draw: &TrainingDraw,
    policy: PipelinePolicy,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..scm.y_domain.len())
        .map(|y| {
            let simulated = simulate_pipeline(scm, draw, policy, y, n_samples, seed)?;
            tv_distance(&simulated, &scm.exact_interventional(y)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_models_validate() {
        DiscreteScm::confounded_toy().validate().unwrap();
        DiscreteScm::noisy_toy().validate().unwrap();
        assert!(DiscreteScm::builtin("toy-confounded").is_some());
        assert!(DiscreteScm::builtin("toy-noisy").is_some());
        assert!(DiscreteScm::builtin("nope").is_none());
        assert!(!DiscreteScm::confounded_toy().full_support());
        assert!(DiscreteScm::noisy_toy().full_support());
    }

    #[test]
    fn validation_rejects_broken_models() {
        let mut scm = DiscreteScm::confounded_toy();
        scm.p_y = vec![0.6, 0.6];
        assert!(matches!(
            scm.validate(),
            Err(PipelineError::NotNormalized { .. })
        ));

        let mut scm = DiscreteScm::confounded_toy();
        scm.p_z = vec![1.0];
        assert!(matches!(scm.validate(), Err(PipelineError::InvalidScm { .. })));

        let mut scm = DiscreteScm::confounded_toy();
        scm.y_domain[1] = "y0".into();
        assert!(matches!(scm.validate(), Err(PipelineError::InvalidScm { .. })));

        let mut scm = DiscreteScm::confounded_toy();
        scm.p_y = vec![1.5, -0.5];
        assert!(matches!(scm.validate(), Err(PipelineError::InvalidScm { .. })));

        let mut scm = DiscreteScm::confounded_toy();
        scm.p_x_given_yz[1][0] = vec![0.0, 0.0, 1.0];
        assert!(matches!(scm.validate(), Err(PipelineError::InvalidScm { .. })));
    }

    #[test]
    fn interventional_matches_hand_enumeration() {
        let scm = DiscreteScm::confounded_toy();
        assert_eq!(scm.exact_interventional(0).unwrap(), vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(scm.exact_interventional(1).unwrap(), vec![0.0, 0.0, 0.5, 0.5]);
        for y in 0..2 {
            let sum: f64 = scm.exact_interventional(y).unwrap().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            scm.exact_interventional(9),
            Err(PipelineError::UnknownScmValue { .. })
        ));
    }

    #[test]
    fn singleton_context_collapses_the_adjustment() {
        let scm = DiscreteScm {
            y_domain: vec!["y0".into()],
            z_domain: vec!["only".into()],
            p_y: vec![1.0],
            p_z: vec![1.0],
            p_x_given_yz: vec![vec![vec![0.25, 0.75]]],
        };
        scm.validate().unwrap();
        assert_eq!(scm.exact_interventional(0).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn context_free_readout_is_unchanged_by_adjustment() {
        let row = vec![0.2, 0.8];
        let scm = DiscreteScm {
            y_domain: vec!["y0".into()],
            z_domain: vec!["z0".into(), "z1".into()],
            p_y: vec![1.0],
            p_z: vec![0.3, 0.7],
            p_x_given_yz: vec![vec![row.clone(), row.clone()]],
        };
        scm.validate().unwrap();
        let out = scm.exact_interventional(0).unwrap();
        for (a, b) in out.iter().zip(&row) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tv_distance_basics() {
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            tv_distance(&[1.0], &[0.5, 0.5]),
            Err(PipelineError::DomainMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(
            tv_distance(&[0.9, 0.0], &[0.5, 0.5]),
            Err(PipelineError::NotNormalized { .. })
        ));
    }

    #[test]
    fn draw_constructors_validate_and_are_deterministic() {
        let scm = DiscreteScm::confounded_toy();

        let a = TrainingDraw::iid(&scm, 100, 3).unwrap();
        let b = TrainingDraw::iid(&scm, 100, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().enumerate().all(|(i, s)| s.id == i));

        let matched = TrainingDraw::class_matched(&scm, 5).unwrap();
        assert_eq!(matched.samples.len(), 10);
        assert!(matched.samples.iter().all(|s| s.y == s.z));
        assert_eq!(matched.class_contexts(0), vec![0; 5]);

        assert!(TrainingDraw::iid(&scm, 0, 3).is_err());
        assert!(TrainingDraw::class_matched(&scm, 0).is_err());

        let dup = vec![
            DrawSample { id: 0, y: 0, z: 0 },
            DrawSample { id: 0, y: 1, z: 1 },
        ];
        assert!(matches!(
            TrainingDraw::from_samples(dup, &scm),
            Err(PipelineError::InvalidDraw { .. })
        ));
        let out_of_range = vec![DrawSample { id: 0, y: 5, z: 0 }];
        assert!(TrainingDraw::from_samples(out_of_range, &scm).is_err());
    }

    #[test]
    fn spuriousness_is_half_for_the_class_matched_toy() {
        let scm = DiscreteScm::confounded_toy();
        let draw = TrainingDraw::class_matched(&scm, 5).unwrap();
        assert_eq!(draw.spuriousness_score().unwrap(), 0.5);
        assert_eq!(draw.pooled_z_distribution(2), vec![0.5, 0.5]);

        let single = TrainingDraw::from_samples(
            vec![DrawSample { id: 0, y: 0, z: 0 }, DrawSample { id: 1, y: 0, z: 1 }],
            &scm,
        )
        .unwrap();
        assert!(matches!(
            single.spuriousness_score(),
            Err(PipelineError::InvalidDraw { .. })
        ));
    }

    #[test]
    fn spuriousness_shrinks_as_iid_draws_grow() {
        let scm = DiscreteScm::confounded_toy();
        let mean_score = |n: usize| {
            let mut total = 0.0;
            for seed in 0..20 {
                total += TrainingDraw::iid(&scm, n, seed)
                    .unwrap()
                    .spuriousness_score()
                    .unwrap();
            }
            total / 20.0
        };
        let coarse = mean_score(20);
        let fine = mean_score(1280);
        assert!(
            fine < coarse * 0.5,
            "score did not shrink: n=20 gives {coarse}, n=1280 gives {fine}"
        );
        assert!(fine < 0.05, "large-sample score should be near zero: {fine}");
    }

    #[test]
    fn observational_policy_keeps_the_spurious_readout() {
        let scm = DiscreteScm::confounded_toy();
        let draw = TrainingDraw::class_matched(&scm, 5).unwrap();
        let sim =
            simulate_pipeline(&scm, &draw, PipelinePolicy::Observational, 0, 2000, 7).unwrap();
        assert_eq!(sim, vec![1.0, 0.0, 0.0, 0.0]);
        let gaps =
            interventional_gap(&scm, &draw, PipelinePolicy::Observational, 2000, 7).unwrap();
        assert_eq!(gaps, vec![0.5, 0.5]);
    }

    #[test]
    fn class_marginal_equals_observational_on_the_confounded_draw() {
        let scm = DiscreteScm::confounded_toy();
        let draw = TrainingDraw::class_matched(&scm, 5).unwrap();
        let class_level =
            simulate_pipeline(&scm, &draw, PipelinePolicy::ClassMarginal, 0, 2000, 7).unwrap();
        let observational =
            simulate_pipeline(&scm, &draw, PipelinePolicy::Observational, 0, 2000, 7).unwrap();
        assert_eq!(class_level, observational);
    }

    #[test]
    fn dataset_policy_approaches_the_interventional_target() {
        let scm = DiscreteScm::confounded_toy();
        let draw = TrainingDraw::class_matched(&scm, 5).unwrap();
        let gaps =
            interventional_gap(&scm, &draw, PipelinePolicy::DatasetMarginal, 20_000, 7).unwrap();
        for gap in gaps {
            assert!(gap < 0.05, "gap {gap}");
        }
    }

    #[test]
    fn all_policies_agree_on_a_large_iid_draw() {
        let scm = DiscreteScm::noisy_toy();
        let draw = TrainingDraw::iid(&scm, 2000, 11).unwrap();
        for policy in PipelinePolicy::ALL {
            let gaps = interventional_gap(&scm, &draw, policy, 20_000, 11).unwrap();
            for gap in gaps {
                assert!(gap < 0.05, "{} gap {gap}", policy.as_str());
            }
        }
    }

    #[test]
    fn missing_classes_and_zero_samples_are_rejected() {
        let scm = DiscreteScm::confounded_toy();
        let draw = TrainingDraw::from_samples(
            vec![DrawSample { id: 0, y: 0, z: 0 }, DrawSample { id: 1, y: 0, z: 1 }],
            &scm,
        )
        .unwrap();
        assert!(matches!(
            simulate_pipeline(&scm, &draw, PipelinePolicy::Observational, 1, 100, 7),
            Err(PipelineError::EmptyConditioningSet { .. })
        ));
        assert!(simulate_pipeline(&scm, &draw, PipelinePolicy::DatasetMarginal, 1, 100, 7).is_ok());
        assert!(matches!(
            simulate_pipeline(&scm, &draw, PipelinePolicy::Observational, 0, 0, 7),
            Err(PipelineError::InvalidDraw { .. })
        ));
    }

    #[test]
    fn policies_parse_and_map_from_pipeline_modes() {
        for policy in PipelinePolicy::ALL {
            assert_eq!(policy.as_str().parse::<PipelinePolicy>().unwrap(), policy);
        }
        assert!("nope".parse::<PipelinePolicy>().is_err());
        assert_eq!(
            PipelinePolicy::from(MarginalizationMode::None),
            PipelinePolicy::Observational
        );
        assert_eq!(
            PipelinePolicy::from(MarginalizationMode::ClassLevel),
            PipelinePolicy::ClassMarginal
        );
        assert_eq!(
            PipelinePolicy::from(MarginalizationMode::DatasetLevel),
            PipelinePolicy::DatasetMarginal
        );
    }

    #[test]
    fn model_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scm.json");
        let scm = DiscreteScm::noisy_toy();
        scm.save(&path).unwrap();
        assert_eq!(DiscreteScm::load(&path).unwrap(), scm);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"p_z\""));
        assert!(!text.contains("x_domain"));

        std::fs::write(&path, "{}").unwrap();
        assert!(DiscreteScm::load(&path).is_err());
    }
}
