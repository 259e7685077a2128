//! Posterior-quality metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{geodesic_angle, point_prediction, pose_distance, Pose, PoseDistanceWeights};
use crate::model::{ModelError, PoseRegressor};
use crate::scenes::{oracle_modes, LabeledSample, OracleModeSet, SceneError, SceneSpec};
use crate::{math, seed};

/// Paired translation / rotation thresholds of the recall table.
pub const TABLE_THRESHOLDS: [(f64, f64); 3] = [(0.1, 10.0), (0.2, 15.0), (0.3, 20.0)];
pub const DEFAULT_GAMMA: f64 = 0.1;
/// Minimum per-mode sample fraction for a mode to count as covered.
pub const COVERAGE_FLOOR: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid threshold: {0}")]
    Threshold(String),
    #[error("no queries to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecallThreshold {
    /// Meters.
    pub translation: f64,
    /// Degrees, compared against the geodesic angle.
    pub rotation_deg: f64,
    pub gamma: f64,
}

impl RecallThreshold {
    pub fn new(translation: f64, rotation_deg: f64, gamma: f64) -> Result<Self, EvalError> {
        let th = RecallThreshold {
            translation,
            rotation_deg,
            gamma,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.translation > 0.0 && self.rotation_deg > 0.0) {
            return Err(EvalError::Threshold(format!(
                "thresholds must be positive, got {} m / {} deg",
                self.translation, self.rotation_deg
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(EvalError::Threshold(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// The three table thresholds with translation multiplied by `scale`.
    pub fn table(scale: f64, gamma: f64) -> [RecallThreshold; 3] {
        TABLE_THRESHOLDS.map(|(t, r)| RecallThreshold {
            translation: t * scale,
            rotation_deg: r,
            gamma,
        })
    }

    /// Both errors within the threshold, inclusive.
    pub fn accepts(&self, sample: &Pose, truth: &Pose) -> bool {
        translation_error(sample, truth) <= self.translation
            && geodesic_angle(&sample.rotation, &truth.rotation).to_degrees() <= self.rotation_deg
    }
}

pub fn translation_error(a: &Pose, b: &Pose) -> f64 {
    let d = [
        a.translation[0] - b.translation[0],
        a.translation[1] - b.translation[1],
        a.translation[2] - b.translation[2],
    ];
    math::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Fraction of `samples` within `th` of `target`.
pub fn fraction_within(samples: &[Pose], target: &Pose, th: &RecallThreshold) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| th.accepts(s, target)).count() as f64 / samples.len() as f64
}

/// At least a fraction `γ` of the samples lie within the threshold of the truth.
pub fn is_true_positive(samples: &[Pose], truth: &Pose, th: &RecallThreshold) -> bool {
    !samples.is_empty() && fraction_within(samples, truth, th) >= th.gamma
}

/// Share of `(samples, truth)` queries that are true positives.
pub fn recall<'a, I>(queries: I, th: &RecallThreshold) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = (&'a [Pose], &'a Pose)>,
{
    let (mut hits, mut total) = (0usize, 0usize);
    for (samples, truth) in queries {
        total += 1;
        hits += is_true_positive(samples, truth, th) as usize;
    }
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(hits as f64 / total as f64)
}

/// Median with the even-count rule: mean of the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `[min, q1, median, q3, max]` with linear interpolation between order
/// statistics.
pub fn quantile_summary(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = math::floor(pos) as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MedianErrors {
    pub translation: f64,
    pub rotation_deg: f64,
    /// Queries skipped because their rotation mean was degenerate.
    pub degenerate: usize,
}

/// Medians of the point-prediction errors across queries.
pub fn median_errors<'a, I>(queries: I) -> Result<MedianErrors, EvalError>
where
    I: IntoIterator<Item = (&'a [Pose], &'a Pose)>,
{
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    let mut degenerate = 0;
    for (samples, truth) in queries {
        match point_prediction(samples) {
            Ok(p) => {
                trans.push(translation_error(&p, truth));
                rot.push(geodesic_angle(&p.rotation, &truth.rotation).to_degrees());
            }
            Err(_) => degenerate += 1,
        }
    }
    if trans.is_empty() && degenerate == 0 {
        return Err(EvalError::Empty);
    }
    Ok(MedianErrors {
        translation: median(&trans).unwrap_or(f64::NAN),
        rotation_deg: median(&rot).unwrap_or(f64::NAN),
        degenerate,
    })
}

/// For each oracle mode, the fraction of samples within `th` of it.
pub fn mode_coverage(samples: &[Pose], modes: &OracleModeSet, th: &RecallThreshold) -> Vec<f64> {
    modes.modes.iter().map(|m| fraction_within(samples, m, th)).collect()
}

/// Fraction of samples whose nearest oracle mode (by pose distance) is each mode.
pub fn nearest_mode_mass(samples: &[Pose], modes: &OracleModeSet, w: &PoseDistanceWeights) -> Vec<f64> {
    let mut mass = alloc::vec![0.0; modes.len()];
    if samples.is_empty() || modes.is_empty() {
        return mass;
    }
    for s in samples {
        let mut best = (f64::INFINITY, 0);
        for (i, m) in modes.modes.iter().enumerate() {
            let d = pose_distance(s, m, w);
            if d < best.0 {
                best = (d, i);
            }
        }
        mass[best.1] += 1.0;
    }
    let n = samples.len() as f64;
    mass.iter_mut().for_each(|v| *v /= n);
    mass
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecallEntry {
    pub threshold: RecallThreshold,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub scene: String,
    pub queries: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub recalls: Vec<RecallEntry>,
    pub median: MedianErrors,
    /// Mean over queries of each oracle mode's coverage fraction.
    pub mode_coverage: Vec<f64>,
    /// Share of queries where every oracle mode holds at least the coverage floor.
    pub all_modes_covered: f64,
    pub timing: Option<Timing>,
}

impl EvalReport {
    /// Aligned text table with one row per threshold.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>16} {:>8} {:>8}\n",
            "scene", "threshold", "gamma", "recall"
        ));
        for e in &self.recalls {
            let th = format!("{:.3}m/{:.0}deg", e.threshold.translation, e.threshold.rotation_deg);
            out.push_str(&format!(
                "{:<16} {:>16} {:>8.3} {:>8.3}\n",
                self.scene, th, e.threshold.gamma, e.recall
            ));
        }
        out.push_str(&format!(
            "median error: {:.4} m / {:.3} deg ({} degenerate)\n",
            self.median.translation, self.median.rotation_deg, self.median.degenerate
        ));
        let cov: Vec<String> = self.mode_coverage.iter().map(|c| format!("{c:.3}")).collect();
        out.push_str(&format!(
            "mode coverage: [{}], all modes covered: {:.3}\n",
            cov.join(", "),
            self.all_modes_covered
        ));
        if let Some(t) = self.timing {
            out.push_str(&format!("latency: {:.3} ± {:.3} ms\n", t.mean_ms, t.std_ms));
        }
        out
    }
}

/// Posterior samples for every query, each drawn from its own derived seed.
pub fn sample_queries(
    model: &PoseRegressor,
    queries: &[LabeledSample],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<Pose>>, EvalError> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let s = seed::derive(seed, seed::purpose::QUERY, i as u64);
            Ok(model.predict_posterior(&q.obs, mc_samples, s)?.poses)
        })
        .collect()
}

/// Full report over a test split. Thresholds are used as given; callers scale
/// translation by the scene scale when comparing across scenes.
pub fn evaluate(
    spec: &SceneSpec,
    queries: &[LabeledSample],
    samples: &[Vec<Pose>],
    thresholds: &[RecallThreshold],
    mc_samples: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if queries.is_empty() || queries.len() != samples.len() {
        return Err(EvalError::Empty);
    }
    for th in thresholds {
        th.validate()?;
    }
    let pairs = || samples.iter().map(Vec::as_slice).zip(queries.iter().map(|q| &q.pose));
    let recalls = thresholds
        .iter()
        .map(|th| {
            Ok(RecallEntry {
                threshold: *th,
                recall: recall(pairs(), th)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let median = median_errors(pairs())?;

    let cover_th = RecallThreshold::table(spec.scale(), 1.0)[0];
    let mut coverage = alloc::vec![0.0; spec.symmetry_order as usize];
    let mut all_covered = 0usize;
    for (s, q) in pairs() {
        let modes = oracle_modes(spec, q)?;
        let c = mode_coverage(s, &modes, &cover_th);
        all_covered += c.iter().all(|&f| f >= COVERAGE_FLOOR) as usize;
        coverage.iter_mut().zip(&c).for_each(|(acc, v)| *acc += v);
    }
    let n = queries.len() as f64;
    coverage.iter_mut().for_each(|c| *c /= n);

    Ok(EvalReport {
        scene: spec.name.clone(),
        queries: queries.len(),
        mc_samples,
        seed,
        recalls,
        median,
        mode_coverage: coverage,
        all_modes_covered: all_covered as f64 / n,
        timing: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use alloc::vec;

    fn at(x: f64, yaw_deg: f64) -> Pose {
        Pose::new([x, 0.0, 0.0], Rotation::about_z(yaw_deg.to_radians()))
    }

    #[test]
    fn boundary_is_inclusive() {
        let truth = at(0.0, 0.0);
        let mut samples = vec![at(5.0, 0.0); 1000];
        samples[..100].iter_mut().for_each(|s| *s = truth);
        let th = RecallThreshold::new(0.1, 10.0, 0.1).unwrap();
        assert!(is_true_positive(&samples, &truth, &th));
        samples[0] = at(5.0, 0.0);
        assert!(!is_true_positive(&samples, &truth, &th));
        let edge = RecallThreshold::new(0.25, 10.0, 1.0).unwrap();
        assert!(is_true_positive(&[at(0.25, 0.0)], &truth, &edge));
    }

    #[test]
    fn both_components_must_pass() {
        let th = RecallThreshold::new(0.1, 10.0, 1.0).unwrap();
        let truth = at(0.0, 0.0);
        assert!(th.accepts(&at(0.05, 9.0), &truth));
        assert!(!th.accepts(&at(0.05, 11.0), &truth));
        assert!(!th.accepts(&at(0.15, 1.0), &truth));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let truth = [at(0.0, 0.0), at(0.0, 0.0), at(0.0, 0.0)];
        let preds = [vec![at(1.0, 0.0)], vec![at(2.0, 0.0)], vec![at(3.0, 0.0)]];
        let m = median_errors(preds.iter().map(Vec::as_slice).zip(truth.iter())).unwrap();
        assert_eq!(m.translation, 2.0);
        assert_eq!(m.rotation_deg, 0.0);
        assert_eq!(m.degenerate, 0);
    }

    #[test]
    fn degenerate_queries_are_counted_not_used() {
        let truth = [at(0.0, 0.0), at(0.0, 0.0)];
        let half_turn = Pose::new([0.0; 3], Rotation::about_z(core::f64::consts::PI));
        let preds = [vec![at(1.0, 0.0)], vec![at(0.0, 0.0), half_turn]];
        let m = median_errors(preds.iter().map(Vec::as_slice).zip(truth.iter())).unwrap();
        assert_eq!((m.translation, m.degenerate), (1.0, 1));
    }

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_thresholds() {
        assert!(RecallThreshold::new(0.0, 10.0, 0.1).is_err());
        assert!(RecallThreshold::new(0.1, 10.0, 1.5).is_err());
        assert!(RecallThreshold::new(0.1, 10.0, 0.0).is_err());
    }
}
