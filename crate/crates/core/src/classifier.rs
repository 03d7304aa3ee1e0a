//! Classification heads. The two-stage head first predicts coarse polarity
//! (negative, neutral, positive), then the fine emotion class conditioned on
//! the input and the polarity distribution; a single-stage head predicts the
//! emotion directly. Both train with cross-entropy on softmax outputs.

use rand::Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::LabelScheme;
use crate::error::{Error, Result};

pub const POLARITIES: usize = 3;
const LOG_FLOOR: f64 = 1e-12;

/// One-hidden-layer perceptron with ReLU activation.
#[derive(Debug, Clone)]
pub struct PerceptronParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct PerceptronIds {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

impl PerceptronParams {
    pub fn init<R: Rng>(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let b1 = 1.0 / (d_in as f64).sqrt();
        let b2 = 1.0 / (d_hidden as f64).sqrt();
        Ok(PerceptronParams {
            w1: Tensor::uniform(vec![d_hidden, d_in], b1, rng)?.with_grad(),
            b1: Tensor::uniform(vec![d_hidden], b1, rng)?.with_grad(),
            w2: Tensor::uniform(vec![d_out, d_hidden], b2, rng)?.with_grad(),
            b2: Tensor::uniform(vec![d_out], b2, rng)?.with_grad(),
        })
    }

    pub fn d_in(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.w2.shape()[0]
    }

    pub fn register(&self, tape: &mut Tape) -> PerceptronIds {
        PerceptronIds {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

fn perceptron_logits(tape: &mut Tape, ids: &PerceptronIds, x: NodeId) -> Result<NodeId> {
    let z1 = tape.matvec(ids.w1, x)?;
    let a1 = tape.add(z1, ids.b1)?;
    let h = tape.relu(a1)?;
    let z2 = tape.matvec(ids.w2, h)?;
    tape.add(z2, ids.b2)
}

/// Softmax class distribution from a perceptron.
pub fn class_distribution(tape: &mut Tape, ids: &PerceptronIds, x: NodeId) -> Result<NodeId> {
    let logits = perceptron_logits(tape, ids, x)?;
    tape.softmax(logits)
}

/// Cross-entropy of a distribution node against a gold index, with a floor
/// inside the log to stay finite on collapsed distributions.
pub fn cross_entropy(tape: &mut Tape, dist: NodeId, target: usize) -> Result<NodeId> {
    let p = tape.pick(dist, target)?;
    let lp = tape.ln_floor(p, LOG_FLOOR)?;
    tape.affine(lp, -1.0, 0.0)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Head configuration: two-stage polarity-then-emotion, or a flat emotion
/// classifier.
#[derive(Debug, Clone)]
pub enum HeadParams {
    TwoStage {
        polarity: PerceptronParams,
        emotion: PerceptronParams,
        /// Whether the emotion stage sees the polarity distribution.
        conditioned: bool,
        /// Weight of the fine-emotion cross-entropy in the joint loss.
        alpha: f64,
    },
    Single(PerceptronParams),
}

#[derive(Debug, Clone, Copy)]
pub enum HeadIds {
    TwoStage { polarity: PerceptronIds, emotion: PerceptronIds },
    Single(PerceptronIds),
}

impl HeadParams {
    /// Two-stage head over inputs of width `d_in`. The emotion stage input
    /// widens by the polarity distribution when conditioned.
    pub fn two_stage<R: Rng>(
        d_in: usize,
        d_hidden: usize,
        n_classes: usize,
        conditioned: bool,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::invalid(format!("fine-loss weight {alpha} must be >= 0")));
        }
        let d_stage2 = if conditioned { d_in + POLARITIES } else { d_in };
        Ok(HeadParams::TwoStage {
            polarity: PerceptronParams::init(d_in, d_hidden, POLARITIES, rng)?,
            emotion: PerceptronParams::init(d_stage2, d_hidden, n_classes, rng)?,
            conditioned,
            alpha,
        })
    }

    pub fn single<R: Rng>(
        d_in: usize,
        d_hidden: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(HeadParams::Single(PerceptronParams::init(d_in, d_hidden, n_classes, rng)?))
    }

    pub fn register(&self, tape: &mut Tape) -> HeadIds {
        match self {
            HeadParams::TwoStage { polarity, emotion, .. } => HeadIds::TwoStage {
                polarity: polarity.register(tape),
                emotion: emotion.register(tape),
            },
            HeadParams::Single(p) => HeadIds::Single(p.register(tape)),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            HeadParams::TwoStage { polarity, emotion, .. } => {
                let mut v = polarity.tensors();
                v.extend(emotion.tensors());
                v
            }
            HeadParams::Single(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            HeadParams::TwoStage { polarity, emotion, .. } => {
                let mut v = polarity.tensors_mut();
                v.extend(emotion.tensors_mut());
                v
            }
            HeadParams::Single(p) => p.tensors_mut(),
        }
    }
}

/// Per-utterance output of a head: the predicted class and the loss node.
pub struct HeadOutput {
    pub loss: NodeId,
    pub predictions: Vec<usize>,
}

/// Run the head over fused utterance representations. The loss is the mean
/// over utterances; for the two-stage head each utterance contributes the
/// polarity cross-entropy plus `alpha` times the fine-emotion cross-entropy.
pub fn head_forward(
    tape: &mut Tape,
    params: &HeadParams,
    ids: &HeadIds,
    fused: &[NodeId],
    labels: &[usize],
    scheme: &LabelScheme,
) -> Result<HeadOutput> {
    if fused.is_empty() || fused.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} representations vs {} labels",
            fused.len(),
            labels.len()
        )));
    }
    let mut per_utt = Vec::with_capacity(fused.len());
    let mut predictions = Vec::with_capacity(fused.len());
    for (&x, &label) in fused.iter().zip(labels) {
        if label >= scheme.n_classes() {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        match (params, ids) {
            (
                HeadParams::TwoStage { conditioned, alpha, .. },
                HeadIds::TwoStage { polarity, emotion },
            ) => {
                let pol_dist = class_distribution(tape, polarity, x)?;
                let emo_in = if *conditioned {
                    tape.concat(&[x, pol_dist])?
                } else {
                    x
                };
                let emo_dist = class_distribution(tape, emotion, emo_in)?;
                let pol_target = scheme.polarity(label).index();
                let ce_pol = cross_entropy(tape, pol_dist, pol_target)?;
                let ce_emo = cross_entropy(tape, emo_dist, label)?;
                let ce_fine = tape.affine(ce_emo, *alpha, 0.0)?;
                per_utt.push(tape.add(ce_pol, ce_fine)?);
                predictions.push(argmax(tape.value(emo_dist).data()));
            }
            (HeadParams::Single(_), HeadIds::Single(p)) => {
                let dist = class_distribution(tape, p, x)?;
                per_utt.push(cross_entropy(tape, dist, label)?);
                predictions.push(argmax(tape.value(dist).data()));
            }
            _ => return Err(Error::invalid("head parameters and ids disagree")),
        }
    }
    let all = tape.concat(&per_utt)?;
    let loss = tape.mean(all)?;
    Ok(HeadOutput { loss, predictions })
}
