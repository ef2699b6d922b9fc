//! The adaptation objectives beyond the distillation pair: reconstruction
//! entropy, temporal consistency, target entropy, cross-representation
//! prediction consistency, and source-to-target supervision, plus their
//! unweighted sum and the per-step report.
//!
//! Gradient routing is a property of how callers build the graph (which
//! inputs are parameters, constants, or detached), not of these functions;
//! the one exception is [`loss_sup`], which gradient-stops its teacher
//! internally because that is part of its definition.

use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffError, NodeId, Tape};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("temporal consistency needs at least one non-anchor frame")]
    EmptyOtherSet,
    #[error("batch mismatch: {0}")]
    BatchMismatch(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn require_same_shape(tape: &Tape, a: NodeId, b: NodeId, what: &str) -> Result<(), LossError> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(LossError::BatchMismatch(format!(
            "{what}: {:?} vs {:?}",
            tape.value(a).shape(),
            tape.value(b).shape()
        )));
    }
    Ok(())
}

/// Mean prediction entropy of the source model on anchor surrogates.
/// Callers route its gradient to the reconstruction net by forwarding the
/// source model with frozen parameters.
pub fn loss_r(tape: &mut Tape, source_logits: NodeId) -> Result<NodeId, LossError> {
    let p = tape.softmax_rows(source_logits)?;
    Ok(tape.entropy_rows(p)?)
}

/// Mean over non-anchor windows of KL(anchor predictions || window
/// predictions). Both branches stay live: the whole term belongs to the
/// source model.
pub fn loss_tc(
    tape: &mut Tape,
    anchor_logits: NodeId,
    other_logits: &[NodeId],
) -> Result<NodeId, LossError> {
    if other_logits.is_empty() {
        return Err(LossError::EmptyOtherSet);
    }
    let p = tape.softmax_rows(anchor_logits)?;
    let mut terms = Vec::with_capacity(other_logits.len());
    for &o in other_logits {
        require_same_shape(tape, anchor_logits, o, "temporal consistency")?;
        let log_q = tape.log_softmax_rows(o)?;
        terms.push(tape.kl_rows(p, log_q)?);
    }
    Ok(tape.mean_scalars(&terms)?)
}

/// Mean prediction entropy across the target models.
pub fn loss_en(tape: &mut Tape, target_logits: &[NodeId]) -> Result<NodeId, LossError> {
    if target_logits.is_empty() {
        return Err(LossError::EmptyOtherSet);
    }
    let mut terms = Vec::with_capacity(target_logits.len());
    for &l in target_logits {
        let p = tape.softmax_rows(l)?;
        terms.push(tape.entropy_rows(p)?);
    }
    Ok(tape.mean_scalars(&terms)?)
}

/// Prediction consistency across the three representations: the sum of KL
/// over all six ordered pairs of models, so the value is invariant under
/// relabeling the models.
pub fn loss_pc(tape: &mut Tape, logits: [NodeId; 3]) -> Result<NodeId, LossError> {
    require_same_shape(tape, logits[0], logits[1], "prediction consistency")?;
    require_same_shape(tape, logits[0], logits[2], "prediction consistency")?;
    let probs: Vec<NodeId> =
        logits.iter().map(|&l| tape.softmax_rows(l)).collect::<Result<_, _>>()?;
    let logs: Vec<NodeId> =
        logits.iter().map(|&l| tape.log_softmax_rows(l)).collect::<Result<_, _>>()?;
    let mut terms = Vec::with_capacity(6);
    for k in 0..3 {
        for l in 0..3 {
            if k != l {
                terms.push(tape.kl_rows(probs[k], logs[l])?);
            }
        }
    }
    Ok(tape.sum_scalars(&terms)?)
}

/// Distills the source model's anchor predictions into one target model:
/// KL(softmax(P) || softmax(target logits)) with the teacher side
/// gradient-stopped, so only the target model learns from this term.
pub fn loss_sup(
    tape: &mut Tape,
    target_logits: NodeId,
    source_logits: NodeId,
) -> Result<NodeId, LossError> {
    require_same_shape(tape, target_logits, source_logits, "supervision")?;
    let teacher_logits = tape.detach(source_logits);
    let teacher = tape.softmax_rows(teacher_logits)?;
    let student_log = tape.log_softmax_rows(target_logits)?;
    Ok(tape.kl_rows(teacher, student_log)?)
}

/// Per-term scale hooks. The shipped objective is the plain unweighted sum;
/// the weights exist for experiments and default to 1, which keeps every
/// term bit-identical to its unscaled value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub r: f64,
    pub kd: f64,
    pub tc: f64,
    pub en: f64,
    pub pc: f64,
    pub sup: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { r: 1.0, kd: 1.0, tc: 1.0, en: 1.0, pc: 1.0, sup: 1.0 }
    }
}

/// The six graph endpoints of one adaptation step. `None` means the term is
/// disabled this step and contributes nothing at all, as opposed to
/// contributing a zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub r: Option<NodeId>,
    pub kd: Option<NodeId>,
    pub tc: Option<NodeId>,
    pub en: Option<NodeId>,
    pub pc: Option<NodeId>,
    pub sup: Option<NodeId>,
}

impl LossTerms {
    fn entries(&self, w: &LossWeights) -> Vec<(Option<NodeId>, f64)> {
        vec![
            (self.r, w.r),
            (self.kd, w.kd),
            (self.tc, w.tc),
            (self.en, w.en),
            (self.pc, w.pc),
            (self.sup, w.sup),
        ]
    }
}

/// Combines the present terms into the overall training objective. With unit
/// weights this is exactly the sum of the component nodes.
pub fn loss_all(
    tape: &mut Tape,
    terms: &LossTerms,
    weights: &LossWeights,
) -> Result<NodeId, LossError> {
    let mut parts = Vec::new();
    for (term, w) in terms.entries(weights) {
        if let Some(id) = term {
            parts.push(if w == 1.0 { id } else { tape.scale(id, w) });
        }
    }
    if parts.is_empty() {
        return Err(LossError::EmptyOtherSet);
    }
    Ok(tape.sum_scalars(&parts)?)
}

/// One training step's loss values, serialized as a single JSON line.
/// Disabled terms are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    #[serde(rename = "L_R")]
    pub l_r: f64,
    #[serde(rename = "L_VKD")]
    pub l_vkd: f64,
    #[serde(rename = "L_PKD")]
    pub l_pkd: f64,
    #[serde(rename = "L_TC")]
    pub l_tc: f64,
    #[serde(rename = "L_EN")]
    pub l_en: f64,
    #[serde(rename = "L_PC")]
    pub l_pc: f64,
    #[serde(rename = "L_Sup")]
    pub l_sup: f64,
    #[serde(rename = "L_all")]
    pub l_all: f64,
}

impl LossReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
