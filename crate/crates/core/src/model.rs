//! End-to-end model: modality encoders, speaker embedding, similarity graph,
//! residual propagation, contrastive objective, and classification head,
//! assembled on one tape per dialogue.

use rand::Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::classifier::{head_forward, HeadIds, HeadParams};
use crate::contrastive::{contrastive_loss, KernelConfig};
use crate::data::{Dialogue, LabelScheme, ModalityDims};
use crate::encoder::{
    birnn_encode, speaker_embed, BiRnnIds, BiRnnParams, SpeakerEmbedIds, SpeakerEmbedParams,
};
use crate::error::{Error, Result};
use crate::graph::{adjacency_on_tape, gcn_propagate, normalize_on_tape, GcnIds, GcnParams, MODALITIES};

/// Which pipeline pieces are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Drop the contrastive term; the loss is the scaled classification
    /// loss alone.
    NoContrastive,
    /// Replace the two-stage head with a flat emotion classifier.
    NoTwoStage,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContrastive => "no-gcl",
            Variant::NoTwoStage => "no-ts",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// LSTM hidden size per direction; encodings have twice this width.
    pub d_hidden: usize,
    /// Speaker embedding width.
    pub d_speaker: usize,
    /// Hidden width of the head perceptrons.
    pub head_hidden: usize,
    /// Number of propagation layers.
    pub gcn_layers: usize,
    /// Initial-feature restart strength in [0, 1].
    pub kappa: f64,
    /// Decay constant of the identity-mixing schedule.
    pub lambda_decay: f64,
    /// Cross-modal edge discount in (0, 1].
    pub omega: f64,
    /// Whether the emotion stage sees the polarity distribution.
    pub conditioned: bool,
    /// Weight of the classification loss in the total.
    pub zeta: f64,
    /// Weight of the fine-emotion term inside the classification loss.
    pub alpha: f64,
    pub kernel: KernelConfig,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_hidden == 0 || self.d_speaker == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.gcn_layers == 0 {
            return Err(Error::invalid("at least one propagation layer is required"));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::invalid(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if !self.omega.is_finite() || self.omega <= 0.0 || self.omega > 1.0 {
            return Err(Error::invalid(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        if !self.lambda_decay.is_finite() || self.lambda_decay < 0.0 {
            return Err(Error::invalid("lambda_decay must be finite and non-negative"));
        }
        if !self.zeta.is_finite() || self.zeta < 0.0 {
            return Err(Error::invalid(format!("zeta must be non-negative, got {}", self.zeta)));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if let KernelConfig::Fixed(g) = self.kernel {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid(format!("kernel bandwidth must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Width of one graph node feature: bidirectional encoding plus speaker
    /// embedding.
    pub fn d_node(&self) -> usize {
        2 * self.d_hidden + self.d_speaker
    }

    /// Width of the fused per-utterance representation fed to the head.
    pub fn d_fused(&self) -> usize {
        MODALITIES * self.d_node()
    }
}

/// All learned parameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoders: [BiRnnParams; MODALITIES],
    pub speaker: SpeakerEmbedParams,
    pub gcn: GcnParams,
    pub head: HeadParams,
}

/// Tape ids of one registration of the model.
pub struct ModelIds {
    /// Parameter leaves in the exact order of [`ModelParams::tensors`].
    pub leaves: Vec<NodeId>,
    enc: [BiRnnIds; MODALITIES],
    spk: SpeakerEmbedIds,
    gcn: GcnIds,
    head: HeadIds,
}

impl ModelParams {
    /// Initialize all parameters from one seeded generator in a fixed draw
    /// order, so a seed fully determines the starting point.
    pub fn init<R: Rng>(
        cfg: &ModelConfig,
        dims: ModalityDims,
        n_speakers: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if n_speakers == 0 || n_classes == 0 {
            return Err(Error::invalid("speakers and classes must be positive"));
        }
        let encoders = [
            BiRnnParams::init(dims.text, cfg.d_hidden, rng)?,
            BiRnnParams::init(dims.audio, cfg.d_hidden, rng)?,
            BiRnnParams::init(dims.visual, cfg.d_hidden, rng)?,
        ];
        let speaker = SpeakerEmbedParams::init(cfg.d_speaker, n_speakers, rng)?;
        let gcn = GcnParams::init(cfg.d_node(), cfg.gcn_layers, cfg.kappa, cfg.lambda_decay, rng)?;
        let head = match cfg.variant {
            Variant::NoTwoStage => {
                HeadParams::single(cfg.d_fused(), cfg.head_hidden, n_classes, rng)?
            }
            _ => HeadParams::two_stage(
                cfg.d_fused(),
                cfg.head_hidden,
                n_classes,
                cfg.conditioned,
                cfg.alpha,
                rng,
            )?,
        };
        Ok(ModelParams { encoders, speaker, gcn, head })
    }

    /// Parameter tensors in a fixed iteration order (encoders, speaker,
    /// propagation, head). Optimizer state is aligned with this order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for enc in &self.encoders {
            v.extend(enc.tensors());
        }
        v.extend(self.speaker.tensors());
        v.extend(self.gcn.tensors());
        v.extend(self.head.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        let [e0, e1, e2] = &mut self.encoders;
        v.extend(e0.tensors_mut());
        v.extend(e1.tensors_mut());
        v.extend(e2.tensors_mut());
        v.extend(self.speaker.tensors_mut());
        v.extend(self.gcn.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }

    pub fn n_tensors(&self) -> usize {
        self.tensors().len()
    }

    /// Register every parameter as a tape leaf; leaf order equals
    /// [`Self::tensors`] order.
    pub fn register(&self, tape: &mut Tape) -> ModelIds {
        let start = tape.len();
        let enc = [
            self.encoders[0].register(tape),
            self.encoders[1].register(tape),
            self.encoders[2].register(tape),
        ];
        let spk = self.speaker.register(tape);
        let gcn = self.gcn.register(tape);
        let head = self.head.register(tape);
        let end = tape.len();
        debug_assert_eq!(end - start, self.n_tensors());
        let leaves = (start..end).map(NodeId).collect();
        ModelIds { leaves, enc, spk, gcn, head }
    }
}

/// Forward results for one dialogue.
pub struct ForwardOutput {
    /// Contrastive term plus `zeta` times the classification term.
    pub total: NodeId,
    pub contrastive: NodeId,
    pub classification: NodeId,
    pub predictions: Vec<usize>,
}

/// Run the full pipeline for one dialogue on `tape`.
pub fn run_dialogue(
    tape: &mut Tape,
    params: &ModelParams,
    ids: &ModelIds,
    cfg: &ModelConfig,
    dialogue: &Dialogue,
    scheme: &LabelScheme,
) -> Result<ForwardOutput> {
    let n = dialogue.utterances.len();
    if n == 0 {
        return Err(Error::invalid(format!("dialogue {:?} has no utterances", dialogue.id)));
    }

    // utterance features enter as constant leaves
    let mut inputs: [Vec<NodeId>; MODALITIES] = [Vec::new(), Vec::new(), Vec::new()];
    for u in &dialogue.utterances {
        for (m, feats) in [&u.text, &u.audio, &u.visual].into_iter().enumerate() {
            inputs[m].push(tape.leaf(&Tensor::vector(feats.clone())?));
        }
    }

    // per-modality sequence encodings
    let mut encodings: Vec<Vec<NodeId>> = Vec::with_capacity(MODALITIES);
    for m in 0..MODALITIES {
        encodings.push(birnn_encode(tape, &params.encoders[m], &ids.enc[m], &inputs[m])?);
    }

    // one speaker vector per distinct speaker, shared across their turns
    let mut spk_cache: Vec<Option<NodeId>> = vec![None; params.speaker.n_speakers()];
    let mut node_feats = Vec::with_capacity(MODALITIES * n);
    for (i, u) in dialogue.utterances.iter().enumerate() {
        let lam = match spk_cache.get(u.speaker).copied().flatten() {
            Some(id) => id,
            None => {
                let id = speaker_embed(tape, &params.speaker, &ids.spk, u.speaker)?;
                spk_cache[u.speaker] = Some(id);
                id
            }
        };
        for m in 0..MODALITIES {
            node_feats.push(tape.concat(&[encodings[m][i], lam])?);
        }
    }

    // similarity graph, normalization, deep propagation
    let adj = adjacency_on_tape(tape, &node_feats, cfg.omega)?;
    let p_norm = normalize_on_tape(tape, adj)?;
    let h0 = tape.stack_rows(&node_feats)?;
    let h = gcn_propagate(tape, &params.gcn, &ids.gcn, p_norm, h0)?;

    let rows: Vec<NodeId> = (0..MODALITIES * n).map(|k| tape.row(h, k)).collect::<Result<_>>()?;

    // contrastive term over node rows; each node carries its utterance label
    let mmd = match cfg.variant {
        Variant::NoContrastive => tape.scalar_const(0.0)?,
        _ => {
            let node_labels: Vec<usize> = dialogue
                .utterances
                .iter()
                .flat_map(|u| std::iter::repeat_n(u.label, MODALITIES))
                .collect();
            contrastive_loss(tape, &rows, &node_labels, scheme.n_classes(), cfg.kernel)?
        }
    };

    // fused utterance representations and classification
    let fused: Vec<NodeId> = (0..n)
        .map(|i| tape.concat(&[rows[MODALITIES * i], rows[MODALITIES * i + 1], rows[MODALITIES * i + 2]]))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = dialogue.utterances.iter().map(|u| u.label).collect();
    let head_out = head_forward(tape, &params.head, &ids.head, &fused, &labels, scheme)?;

    let scaled_cls = tape.affine(head_out.loss, cfg.zeta, 0.0)?;
    let total = tape.add(mmd, scaled_cls)?;
    Ok(ForwardOutput {
        total,
        contrastive: mmd,
        classification: head_out.loss,
        predictions: head_out.predictions,
    })
}
