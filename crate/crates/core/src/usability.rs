//! Usability score `U = [psi, phi]` for synthetic images.
//!
//! `psi` (DPS) is computed from mid-level features only: each image is
//! reduced to the mean and standard deviation of its feature components,
//! and compared against class and leave-class-out statistics of both the
//! real and the synthetic set. `phi` (FCS) is the reciprocal KL divergence
//! between the normalized averaged high-level features of `K` real images
//! of the class and the normalized high-level features of the image.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans;
use crate::store::{EmbeddingSet, FeatureRecord};

pub const EPS_KL: f64 = 1e-10;
pub const PHI_CAP: f64 = 1e6;
const SIMPLEX_TOL: f64 = 1e-6;
const MAHALANOBIS_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Population mean and standard deviation.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }

    /// Euclidean distance in the (mean, std) plane.
    pub fn distance(&self, other: &Summary) -> f64 {
        (self.mean - other.mean).hypot(self.std - other.std)
    }
}

/// Mean and std of one feature vector's components.
pub fn image_summary(record: &FeatureRecord) -> Summary {
    Summary::of(record.vector.iter().map(|&v| f64::from(v))).expect("validated sets have dim > 0")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainStatistics {
    /// Stats of the per-image means within each class.
    pub class: BTreeMap<u32, Summary>,
    /// Stats of the per-image means of every record outside the class.
    /// Absent when no other class has records.
    pub excluding: BTreeMap<u32, Summary>,
}

impl DomainStatistics {
    fn compute(set: &EmbeddingSet) -> Self {
        let means: Vec<(u32, f64)> = set
            .records
            .iter()
            .map(|r| (r.class_id, image_summary(r).mean))
            .collect();
        let mut stats = Self::default();
        let classes: std::collections::BTreeSet<u32> = means.iter().map(|&(c, _)| c).collect();
        for &c in &classes {
            let inside = means.iter().filter(|&&(k, _)| k == c).map(|&(_, m)| m);
            stats.class.insert(c, Summary::of(inside).expect("class has members"));
            let outside = means.iter().filter(|&&(k, _)| k != c).map(|&(_, m)| m);
            if let Some(s) = Summary::of(outside) {
                stats.excluding.insert(c, s);
            }
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatistics {
    pub real: DomainStatistics,
    pub synthetic: DomainStatistics,
}

pub fn compute_class_statistics(real: &EmbeddingSet, syn: &EmbeddingSet) -> Result<ClassStatistics> {
    if real.num_classes != syn.num_classes {
        return Err(Error::Validation(format!(
            "real set has {} classes, synthetic set has {}",
            real.num_classes, syn.num_classes
        )));
    }
    if real.is_empty() || syn.is_empty() {
        return Err(Error::InsufficientData("empty embedding set".into()));
    }
    let stats = ClassStatistics {
        real: DomainStatistics::compute(real),
        synthetic: DomainStatistics::compute(syn),
    };
    if let Some(&missing) = stats
        .synthetic
        .class
        .keys()
        .find(|c| !stats.real.class.contains_key(c))
    {
        return Err(Error::MissingClass(missing));
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpsWeights {
    pub photorealism: f64,
    pub diversity: f64,
}

impl Default for DpsWeights {
    fn default() -> Self {
        Self {
            photorealism: 0.5,
            diversity: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dps {
    pub psi: f64,
    pub photorealism: f64,
    pub diversity: f64,
}

/// DPS from one image's (mean, std) summary:
///
/// ```text
/// P = 1 / (1 + d(s_i, real_c))
/// D = d(s_i, syn_c) / (1 + d(s_i, real_excluding_c))
/// psi = w_p * P + w_d * D
/// ```
pub fn dps_from_summary(summary: Summary, class_id: u32, stats: &ClassStatistics, weights: DpsWeights) -> Result<Dps> {
    let real_c = stats.real.class.get(&class_id).ok_or(Error::MissingClass(class_id))?;
    let syn_c = stats
        .synthetic
        .class
        .get(&class_id)
        .ok_or(Error::MissingClass(class_id))?;
    let real_out = stats
        .real
        .excluding
        .get(&class_id)
        .ok_or(Error::MissingClass(class_id))?;
    let photorealism = 1.0 / (1.0 + summary.distance(real_c));
    let diversity = summary.distance(syn_c) / (1.0 + summary.distance(real_out));
    Ok(Dps {
        psi: weights.photorealism * photorealism + weights.diversity * diversity,
        photorealism,
        diversity,
    })
}

pub fn dps(record: &FeatureRecord, stats: &ClassStatistics, weights: DpsWeights) -> Result<Dps> {
    dps_from_summary(image_summary(record), record.class_id, stats, weights)
}

/// Clamps negatives to zero, adds `eps` to every component, and rescales
/// onto the probability simplex.
pub fn normalize_features(v: &[f64], eps: f64) -> Vec<f64> {
    let shifted: Vec<f64> = v.iter().map(|&x| x.max(0.0) + eps).collect();
    let sum: f64 = shifted.iter().sum();
    shifted.into_iter().map(|x| x / sum).collect()
}

/// `sum p_i ln(p_i / q_i)` in nats, after smoothing both inputs with
/// [`EPS_KL`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Validation("empty distribution".into()));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || v.iter().any(|&x| x < -SIMPLEX_TOL || !x.is_finite()) {
            return Err(Error::Validation(format!("{name} is not on the simplex")));
        }
    }
    Ok(kl_smoothed(&normalize_features(p, EPS_KL), &normalize_features(q, EPS_KL)))
}

fn kl_smoothed(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcsParams {
    pub eps_kl: f64,
    pub phi_cap: f64,
}

impl Default for FcsParams {
    fn default() -> Self {
        Self {
            eps_kl: EPS_KL,
            phi_cap: PHI_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealClassPrototype {
    pub class_id: u32,
    pub k: usize,
    pub image_ids: Vec<String>,
    pub mean: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Averages `min(k, |class|)` real high-level records of `class_id`, drawn
/// without replacement by a seeded generator.
pub fn build_prototype(real: &EmbeddingSet, class_id: u32, k: usize, seed: u64, eps: f64) -> Result<RealClassPrototype> {
    if k == 0 {
        return Err(Error::Validation("K must be positive".into()));
    }
    let members: Vec<&FeatureRecord> = real.class_records(class_id).collect();
    if members.is_empty() {
        return Err(Error::MissingClass(class_id));
    }
    let take = k.min(members.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(class_id).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, members.len(), take).into_vec();
    picked.sort_unstable();
    let mut mean = vec![0.0; real.dim];
    for &i in &picked {
        for (m, &v) in mean.iter_mut().zip(&members[i].vector) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= take as f64);
    Ok(RealClassPrototype {
        class_id,
        k,
        image_ids: picked.iter().map(|&i| members[i].image_id.clone()).collect(),
        normalized: normalize_features(&mean, eps),
        mean,
    })
}

pub fn build_prototypes(real: &EmbeddingSet, k: usize, seed: u64, eps: f64) -> Result<BTreeMap<u32, RealClassPrototype>> {
    let classes: std::collections::BTreeSet<u32> = real.records.iter().map(|r| r.class_id).collect();
    classes
        .into_iter()
        .map(|c| Ok((c, build_prototype(real, c, k, seed, eps)?)))
        .collect()
}

/// `min(1 / (KL(prototype || image) + eps), cap)`.
pub fn fcs_from_vector(image: &[f64], prototype: &RealClassPrototype, params: FcsParams) -> Result<f64> {
    if image.len() != prototype.normalized.len() {
        return Err(Error::Dimension(format!(
            "image features have dimension {}, prototype {}",
            image.len(),
            prototype.normalized.len()
        )));
    }
    let q = normalize_features(image, params.eps_kl);
    let kl = kl_smoothed(&prototype.normalized, &q);
    Ok((1.0 / (kl + params.eps_kl)).min(params.phi_cap))
}

pub fn fcs(record: &FeatureRecord, prototype: &RealClassPrototype, params: FcsParams) -> Result<f64> {
    if record.class_id != prototype.class_id {
        return Err(Error::Validation(format!(
            "record class {} scored against prototype of class {}",
            record.class_id, prototype.class_id
        )));
    }
    fcs_from_vector(&record.vector_f64(), prototype, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Cosine,
    Mahalanobis,
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            "mahalanobis" => Ok(Self::Mahalanobis),
            other => Err(Error::Validation(format!("unknown distance metric {other}"))),
        }
    }
}

/// Distance from a synthetic feature vector to the mean real feature.
pub fn photorealism_distance(syn_vec: &[f64], real: &EmbeddingSet, metric: DistanceMetric) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::InsufficientData("real set is empty".into()));
    }
    if syn_vec.len() != real.dim {
        return Err(Error::Dimension(format!(
            "vector has dimension {}, real set {}",
            syn_vec.len(),
            real.dim
        )));
    }
    let rows: Vec<Vec<f64>> = real.records.iter().map(FeatureRecord::vector_f64).collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; real.dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let diff: Vec<f64> = syn_vec.iter().zip(&mean).map(|(a, b)| a - b).collect();
    match metric {
        DistanceMetric::Euclidean => Ok(diff.iter().map(|d| d * d).sum::<f64>().sqrt()),
        DistanceMetric::Cosine => {
            let dot: f64 = syn_vec.iter().zip(&mean).map(|(a, b)| a * b).sum();
            let na = syn_vec.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb = mean.iter().map(|b| b * b).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Validation("cosine distance of a zero vector".into()));
            }
            Ok((1.0 - dot / (na * nb)).max(0.0))
        }
        DistanceMetric::Mahalanobis => {
            let d = real.dim;
            let mut cov = DMatrix::<f64>::zeros(d, d);
            if rows.len() > 1 {
                let mu = DVector::from_column_slice(&mean);
                for r in &rows {
                    let dv = DVector::from_column_slice(r) - &mu;
                    cov += &dv * dv.transpose();
                }
                cov /= n - 1.0;
            }
            cov += DMatrix::identity(d, d) * MAHALANOBIS_RIDGE;
            let chol = cov
                .cholesky()
                .ok_or_else(|| Error::Validation("covariance not invertible".into()))?;
            let dv = DVector::from_column_slice(&diff);
            let solved = chol.solve(&dv);
            Ok(dv.dot(&solved).max(0.0).sqrt())
        }
    }
}

/// Maps a distance onto a higher-is-better similarity in (0, 1].
pub fn distance_to_similarity(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

/// Entropy (nats) of the cluster-occupancy histogram of a seeded k-means
/// partition of the set's embeddings.
pub fn dataset_entropy(set: &EmbeddingSet, k: usize, seed: u64) -> Result<f64> {
    let points: Vec<Vec<f64>> = set.records.iter().map(FeatureRecord::vector_f64).collect();
    vector_entropy(&points, k, seed)
}

pub fn vector_entropy(points: &[Vec<f64>], k: usize, seed: u64) -> Result<f64> {
    if k > points.len() {
        return Err(Error::Validation(format!(
            "k = {k} exceeds {} records",
            points.len()
        )));
    }
    let km = kmeans::kmeans(points, k, seed, kmeans::DEFAULT_ITERATIONS)?;
    let mut counts = vec![0usize; k];
    for &a in &km.assignments {
        counts[a] += 1;
    }
    let n = points.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

/// `alpha * photorealism + (1 - alpha) * entropy`; both inputs higher-is-better.
pub fn joint_objective(photorealism_score: f64, entropy_score: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * photorealism_score + (1.0 - alpha) * entropy_score)
}

/// The `m` highest-scoring ids, descending; ties go to the smaller id.
pub fn select_top_m(scores: &[(String, f64)], m: usize) -> Result<Vec<String>> {
    if m == 0 || m > scores.len() {
        return Err(Error::Validation(format!(
            "m must be in 1..={}, got {m}",
            scores.len()
        )));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Validation(format!("score for {id} is {s}")));
    }
    let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(sorted.into_iter().take(m).map(|(id, _)| id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsabilityScore {
    pub image_id: String,
    pub psi: f64,
    pub phi: f64,
    #[serde(rename = "P")]
    pub photorealism: f64,
    #[serde(rename = "D")]
    pub diversity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UsabilityConfig {
    pub weights: DpsWeights,
    /// Real images per class averaged into the FCS prototype.
    pub k: usize,
    pub fcs: FcsParams,
    pub seed: u64,
}

impl Default for UsabilityConfig {
    fn default() -> Self {
        Self {
            weights: DpsWeights::default(),
            k: 10,
            fcs: FcsParams::default(),
            seed: 0,
        }
    }
}

/// DPS for every synthetic record, in record order.
pub fn score_dps(real_mid: &EmbeddingSet, syn_mid: &EmbeddingSet, weights: DpsWeights) -> Result<Vec<(String, Dps)>> {
    let stats = compute_class_statistics(real_mid, syn_mid)?;
    syn_mid
        .records
        .par_iter()
        .map(|r| Ok((r.image_id.clone(), dps(r, &stats, weights)?)))
        .collect()
}

/// FCS for every synthetic record, in record order.
pub fn score_fcs(real_high: &EmbeddingSet, syn_high: &EmbeddingSet, config: &UsabilityConfig) -> Result<Vec<(String, f64)>> {
    if real_high.dim != syn_high.dim {
        return Err(Error::Dimension(format!(
            "real high-level dimension {} vs synthetic {}",
            real_high.dim, syn_high.dim
        )));
    }
    let protos = build_prototypes(real_high, config.k, config.seed, config.fcs.eps_kl)?;
    syn_high
        .records
        .par_iter()
        .map(|r| {
            let proto = protos.get(&r.class_id).ok_or(Error::MissingClass(r.class_id))?;
            Ok((r.image_id.clone(), fcs(r, proto, config.fcs)?))
        })
        .collect()
}

/// Full `U = [psi, phi]` for every synthetic image, in mid-level record order.
pub fn score_usability(
    real_mid: &EmbeddingSet,
    syn_mid: &EmbeddingSet,
    real_high: &EmbeddingSet,
    syn_high: &EmbeddingSet,
    config: &UsabilityConfig,
) -> Result<Vec<UsabilityScore>> {
    let dps_scores = score_dps(real_mid, syn_mid, config.weights)?;
    let phi: HashMap<String, f64> = score_fcs(real_high, syn_high, config)?.into_iter().collect();
    dps_scores
        .into_iter()
        .map(|(id, d)| {
            let phi = *phi.get(&id).ok_or_else(|| {
                Error::Manifest(format!("{id} has no high-level embedding"))
            })?;
            Ok(UsabilityScore {
                image_id: id,
                psi: d.psi,
                phi,
                photorealism: d.photorealism,
                diversity: d.diversity,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Domain, Extractor};
    use approx::assert_abs_diff_eq;

    fn set(domain: Domain, extractor: Extractor, classes: u32, recs: &[(u32, Vec<f32>)]) -> EmbeddingSet {
        let tag = match domain {
            Domain::Real => "r",
            Domain::Synthetic => "s",
        };
        EmbeddingSet {
            dataset_tag: tag.into(),
            domain,
            extractor,
            dim: recs[0].1.len(),
            num_classes: classes,
            records: recs
                .iter()
                .enumerate()
                .map(|(i, (c, v))| FeatureRecord {
                    image_id: format!("{tag}{i}"),
                    class_id: *c,
                    domain,
                    extractor,
                    vector: v.clone(),
                })
                .collect(),
        }
    }

    #[test]
    fn class_stats_hand_values() {
        let real = set(Domain::Real, Extractor::Midlevel, 1, &[(0, vec![0.0, 1.0])]);
        let syn = set(
            Domain::Synthetic,
            Extractor::Midlevel,
            1,
            &[(0, vec![0.1, 0.3]), (0, vec![0.3, 0.5])],
        );
        let stats = compute_class_statistics(&real, &syn).unwrap();
        let s = stats.synthetic.class[&0];
        assert_abs_diff_eq!(s.mean, 0.3, epsilon = 1e-7);
        assert_abs_diff_eq!(s.std, 0.1, epsilon = 1e-7);
        assert!(stats.synthetic.excluding.is_empty());
    }

    #[test]
    fn missing_real_class() {
        let real = set(Domain::Real, Extractor::Midlevel, 2, &[(0, vec![0.0])]);
        let syn = set(Domain::Synthetic, Extractor::Midlevel, 2, &[(1, vec![0.0])]);
        assert!(matches!(
            compute_class_statistics(&real, &syn),
            Err(Error::MissingClass(1))
        ));
    }

    #[test]
    fn dps_limits() {
        let stats = ClassStatistics {
            real: DomainStatistics {
                class: [(0, Summary { mean: 0.5, std: 0.2 })].into(),
                excluding: [(0, Summary { mean: 1.0, std: 0.1 })].into(),
            },
            synthetic: DomainStatistics {
                class: [(0, Summary { mean: 0.7, std: 0.3 })].into(),
                excluding: BTreeMap::new(),
            },
        };
        let w = DpsWeights::default();
        let at_real = dps_from_summary(Summary { mean: 0.5, std: 0.2 }, 0, &stats, w).unwrap();
        assert_eq!(at_real.photorealism, 1.0);
        let at_syn = dps_from_summary(Summary { mean: 0.7, std: 0.3 }, 0, &stats, w).unwrap();
        assert_eq!(at_syn.diversity, 0.0);
        assert!(matches!(
            dps_from_summary(Summary { mean: 0.0, std: 0.0 }, 3, &stats, w),
            Err(Error::MissingClass(3))
        ));
    }

    #[test]
    fn fcs_hand_example() {
        let proto = RealClassPrototype {
            class_id: 0,
            k: 1,
            image_ids: vec![],
            mean: vec![0.5, 0.5],
            normalized: normalize_features(&[0.5, 0.5], EPS_KL),
        };
        let phi = fcs_from_vector(&[0.25, 0.75], &proto, FcsParams::default()).unwrap();
        let kl = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert_abs_diff_eq!(kl, 0.143841036, epsilon = 1e-9);
        assert_abs_diff_eq!(phi, 1.0 / kl, epsilon = 1e-6);
        assert_eq!(
            fcs_from_vector(&[0.5, 0.5], &proto, FcsParams::default()).unwrap(),
            PHI_CAP
        );
        assert!(matches!(
            fcs_from_vector(&[1.0], &proto, FcsParams::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn prototype_uses_min_k_members() {
        let real = set(
            Domain::Real,
            Extractor::Highlevel,
            2,
            &[(0, vec![1.0, 0.0]), (0, vec![3.0, 2.0]), (1, vec![5.0, 5.0])],
        );
        let p = build_prototype(&real, 0, 5, 1, EPS_KL).unwrap();
        assert_eq!(p.image_ids.len(), 2);
        assert_eq!(p.mean, vec![2.0, 1.0]);
        assert_abs_diff_eq!(p.normalized.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let q = build_prototype(&real, 0, 1, 1, EPS_KL).unwrap();
        assert_eq!(q.image_ids.len(), 1);
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
            epsilon = 1e-8
        );
        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn photorealism_distance_cases() {
        let real = set(Domain::Real, Extractor::Midlevel, 1, &[(0, vec![1.0, 2.0]), (0, vec![3.0, 4.0])]);
        assert_eq!(
            photorealism_distance(&[2.0, 3.0], &real, DistanceMetric::Euclidean).unwrap(),
            0.0
        );
        let one = set(Domain::Real, Extractor::Midlevel, 1, &[(0, vec![1.0, 1.0])]);
        assert_abs_diff_eq!(
            photorealism_distance(&[4.0, 5.0], &one, DistanceMetric::Euclidean).unwrap(),
            5.0
        );
        assert_abs_diff_eq!(
            photorealism_distance(&[2.0, 2.0], &one, DistanceMetric::Cosine).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let m = photorealism_distance(&[2.0, 3.0], &real, DistanceMetric::Mahalanobis).unwrap();
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn joint_objective_cases() {
        assert_eq!(joint_objective(0.4, 0.8, 1.0).unwrap(), 0.4);
        assert_eq!(joint_objective(0.4, 0.8, 0.0).unwrap(), 0.8);
        assert_abs_diff_eq!(joint_objective(0.4, 0.8, 0.5).unwrap(), 0.6, epsilon = 1e-15);
        assert!(joint_objective(0.4, 0.8, 1.5).is_err());
    }

    #[test]
    fn top_m_examples() {
        let s = vec![("a".to_string(), 0.9), ("b".to_string(), 0.5), ("c".to_string(), 0.7)];
        assert_eq!(select_top_m(&s, 2).unwrap(), vec!["a", "c"]);
        let eq = vec![("z".to_string(), 1.0), ("b".to_string(), 1.0), ("m".to_string(), 1.0)];
        assert_eq!(select_top_m(&eq, 2).unwrap(), vec!["b", "m"]);
        assert!(select_top_m(&s, 4).is_err());
        assert!(select_top_m(&[("x".to_string(), f64::NAN)], 1).is_err());
    }

    #[test]
    fn entropy_trivial_cases() {
        let same = vec![vec![1.0, 1.0]; 6];
        assert_eq!(vector_entropy(&same, 1, 0).unwrap(), 0.0);
        assert!(vector_entropy(&same, 7, 0).is_err());
    }
}
