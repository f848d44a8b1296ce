//! Training losses: mean L1 feature distillation and the prototypical-network
//! cross-entropy. Only the loss values (and the ProtoNet query gradient) live
//! here; there is no training loop.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vector::{
    check_dims, cosine_distance_raw, dot, l1_distance, nonzero_norm_sq, squared_euclidean, ClassId,
    EmbeddingVector,
};

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(transparent))]
pub struct LossValue(f64);

impl LossValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `1/n Σ ‖teacher_i − student_i‖₁`.
pub fn distillation_l1(teacher: &[EmbeddingVector], student: &[EmbeddingVector]) -> Result<LossValue> {
    if teacher.len() != student.len() {
        return Err(Error::LengthMismatch {
            left: teacher.len(),
            right: student.len(),
        });
    }
    if teacher.is_empty() {
        return Err(Error::EmptyInput("distillation batch".into()));
    }
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        total += l1_distance(t, s)?;
    }
    Ok(LossValue(total / teacher.len() as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ProtoMetric {
    /// Logits are `-‖q − p‖²`.
    #[default]
    SquaredEuclidean,
    /// Logits are `-(1 − cos(q, p))`.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtoNetConfig {
    pub metric: ProtoMetric,
    /// Distances are divided by this before the softmax.
    pub temperature: f64,
}

impl Default for ProtoNetConfig {
    fn default() -> Self {
        Self {
            metric: ProtoMetric::SquaredEuclidean,
            temperature: 1.0,
        }
    }
}

struct Prepared<'a> {
    classes: Vec<ClassId>,
    protos: Vec<&'a [f64]>,
    norms: Vec<f64>,
}

fn prepare<'a>(
    prototypes: &'a BTreeMap<ClassId, EmbeddingVector>,
    cfg: &ProtoNetConfig,
) -> Result<Prepared<'a>> {
    if prototypes.len() < 2 {
        return Err(Error::EmptyInput("ProtoNet loss needs at least two class prototypes".into()));
    }
    if !(cfg.temperature.is_finite() && cfg.temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let dim = prototypes.values().next().map(EmbeddingVector::dim).unwrap_or(0);
    let mut norms = Vec::with_capacity(prototypes.len());
    for p in prototypes.values() {
        check_dims(dim, p.dim())?;
        norms.push(match cfg.metric {
            ProtoMetric::Cosine => nonzero_norm_sq(p)?,
            ProtoMetric::SquaredEuclidean => p.norm_squared(),
        });
    }
    Ok(Prepared {
        classes: prototypes.keys().copied().collect(),
        protos: prototypes.values().map(EmbeddingVector::as_slice).collect(),
        norms,
    })
}

impl Prepared<'_> {
    fn target(&self, label: ClassId) -> Result<usize> {
        self.classes
            .binary_search(&label)
            .map_err(|_| Error::UnknownClass(label))
    }

    fn distances(&self, q: &EmbeddingVector, cfg: &ProtoNetConfig) -> Result<Vec<f64>> {
        check_dims(self.protos[0].len(), q.dim())?;
        Ok(match cfg.metric {
            ProtoMetric::SquaredEuclidean => self
                .protos
                .iter()
                .map(|p| squared_euclidean(q.as_slice(), p))
                .collect(),
            ProtoMetric::Cosine => {
                let qn = nonzero_norm_sq(q)?;
                self.protos
                    .iter()
                    .zip(&self.norms)
                    .map(|(p, &pn)| cosine_distance_raw(q.as_slice(), qn, p, pn))
                    .collect()
            }
        })
    }
}

/// Softmax of `-d / temperature`, plus the stabilised log-sum-exp.
fn softmax_neg(distances: &[f64], temperature: f64) -> (Vec<f64>, f64) {
    let logits: Vec<f64> = distances.iter().map(|d| -d / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + libm::log(sum);
    (exps.into_iter().map(|e| e / sum).collect(), lse)
}

/// Mean cross-entropy of each query against softmax(−distance / T) over
/// class prototypes.
pub fn protonet_loss(
    queries: &[(EmbeddingVector, ClassId)],
    prototypes: &BTreeMap<ClassId, EmbeddingVector>,
    cfg: &ProtoNetConfig,
) -> Result<LossValue> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no ProtoNet queries".into()));
    }
    let prep = prepare(prototypes, cfg)?;
    let mut total = 0.0;
    for (q, label) in queries {
        let y = prep.target(*label)?;
        let d = prep.distances(q, cfg)?;
        let (_, lse) = softmax_neg(&d, cfg.temperature);
        total += d[y] / cfg.temperature + lse;
    }
    Ok(LossValue(total / queries.len() as f64))
}

/// Gradient of the single-query ProtoNet loss with respect to the query.
pub fn protonet_query_gradient(
    query: &EmbeddingVector,
    label: ClassId,
    prototypes: &BTreeMap<ClassId, EmbeddingVector>,
    cfg: &ProtoNetConfig,
) -> Result<Vec<f64>> {
    let prep = prepare(prototypes, cfg)?;
    let y = prep.target(label)?;
    let d = prep.distances(query, cfg)?;
    let (probs, _) = softmax_neg(&d, cfg.temperature);
    let q = query.as_slice();

    // dL/dq = (1/T) * (grad d_y - Σ_c p_c grad d_c)
    let mut grad = vec![0.0; q.len()];
    let qn2 = query.norm_squared();
    for (c, (p, &pn2)) in prep.protos.iter().zip(&prep.norms).enumerate() {
        let weight = if c == y { 1.0 - probs[c] } else { -probs[c] };
        match cfg.metric {
            ProtoMetric::SquaredEuclidean => {
                for (g, (qi, pi)) in grad.iter_mut().zip(q.iter().zip(p.iter())) {
                    *g += weight * 2.0 * (qi - pi);
                }
            }
            ProtoMetric::Cosine => {
                // d = 1 - q·p / (|q||p|)
                let qn = libm::sqrt(qn2);
                let pn = libm::sqrt(pn2);
                let qp = dot(q, p);
                for (g, (qi, pi)) in grad.iter_mut().zip(q.iter().zip(p.iter())) {
                    let dcos = pi / (qn * pn) - qp * qi / (qn2 * qn * pn);
                    *g -= weight * dcos;
                }
            }
        }
    }
    for g in &mut grad {
        *g /= cfg.temperature;
    }
    Ok(grad)
}
