//! Dataset model: dialogues of tri-modal utterances with emotion labels,
//! plus label schemes mapping each fine emotion to a coarse polarity.

pub mod format;
pub mod synth;

use crate::error::{Error, Result};

/// Coarse sentiment polarity of an emotion class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

impl Polarity {
    /// Stage-one class index: negative 0, neutral 1, positive 2.
    pub fn index(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Neutral => 1,
            Polarity::Positive => 2,
        }
    }

    pub fn from_signum(s: i8) -> Result<Polarity> {
        match s {
            -1 => Ok(Polarity::Negative),
            0 => Ok(Polarity::Neutral),
            1 => Ok(Polarity::Positive),
            other => Err(Error::invalid(format!("polarity must be -1/0/+1, got {other}"))),
        }
    }
}

/// Emotion label set with a fixed order and a polarity for every class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelScheme {
    names: Vec<String>,
    polarities: Vec<Polarity>,
}

impl LabelScheme {
    /// Six-class scheme: happy, sad, neutral, angry, excited, frustrated.
    pub fn iemocap() -> LabelScheme {
        LabelScheme {
            names: ["happy", "sad", "neutral", "angry", "excited", "frustrated"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            polarities: vec![
                Polarity::Positive,
                Polarity::Negative,
                Polarity::Neutral,
                Polarity::Negative,
                Polarity::Positive,
                Polarity::Negative,
            ],
        }
    }

    /// Seven-class scheme: neutral, surprise, fear, sadness, joy, disgust,
    /// anger.
    pub fn meld() -> LabelScheme {
        LabelScheme {
            names: ["neutral", "surprise", "fear", "sadness", "joy", "disgust", "anger"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            polarities: vec![
                Polarity::Neutral,
                Polarity::Positive,
                Polarity::Negative,
                Polarity::Negative,
                Polarity::Positive,
                Polarity::Negative,
                Polarity::Negative,
            ],
        }
    }

    /// Arbitrary scheme from (name, polarity) pairs. Names must be unique,
    /// non-empty, and free of the format's delimiter characters.
    pub fn custom(classes: Vec<(String, Polarity)>) -> Result<LabelScheme> {
        if classes.is_empty() {
            return Err(Error::invalid("label scheme needs at least one class"));
        }
        let mut names = Vec::with_capacity(classes.len());
        let mut polarities = Vec::with_capacity(classes.len());
        for (name, p) in classes {
            if name.is_empty() || name.contains([',', '\t', ' ', ':']) {
                return Err(Error::invalid(format!("bad label name {name:?}")));
            }
            if names.contains(&name) {
                return Err(Error::invalid(format!("duplicate label name {name:?}")));
            }
            names.push(name);
            polarities.push(p);
        }
        Ok(LabelScheme { names, polarities })
    }

    /// Scheme from bare names, cycling polarities negative, neutral,
    /// positive by class index.
    pub fn from_names_cycling(names: &[String]) -> Result<LabelScheme> {
        let classes = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let p = match i % 3 {
                    0 => Polarity::Negative,
                    1 => Polarity::Neutral,
                    _ => Polarity::Positive,
                };
                (n.clone(), p)
            })
            .collect();
        LabelScheme::custom(classes)
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn polarity(&self, class: usize) -> Polarity {
        self.polarities[class]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

/// Feature dimensions of the three modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalityDims {
    pub text: usize,
    pub audio: usize,
    pub visual: usize,
}

impl ModalityDims {
    pub fn max(&self) -> usize {
        self.text.max(self.audio).max(self.visual)
    }
}

/// One utterance: features for each modality plus speaker and gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: usize,
    pub label: usize,
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

/// One conversation: utterances in turn order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// A collection of dialogues sharing one label scheme and feature dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scheme: LabelScheme,
    pub dims: ModalityDims,
    pub dialogues: Vec<Dialogue>,
}

impl Dataset {
    /// Validate internal consistency: non-empty dialogues, feature lengths
    /// matching the declared dims, labels within the scheme.
    pub fn validate(&self) -> Result<()> {
        if self.dialogues.is_empty() {
            return Err(Error::invalid("dataset has no dialogues"));
        }
        for d in &self.dialogues {
            if d.utterances.is_empty() {
                return Err(Error::invalid(format!("dialogue {:?} has no utterances", d.id)));
            }
            for (t, u) in d.utterances.iter().enumerate() {
                if u.text.len() != self.dims.text
                    || u.audio.len() != self.dims.audio
                    || u.visual.len() != self.dims.visual
                {
                    return Err(Error::invalid(format!(
                        "dialogue {:?} turn {t}: feature lengths ({}, {}, {}) do not match dims ({}, {}, {})",
                        d.id,
                        u.text.len(),
                        u.audio.len(),
                        u.visual.len(),
                        self.dims.text,
                        self.dims.audio,
                        self.dims.visual,
                    )));
                }
                if u.label >= self.scheme.n_classes() {
                    return Err(Error::invalid(format!(
                        "dialogue {:?} turn {t}: label {} out of range",
                        d.id, u.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of distinct speaker slots (max id + 1).
    pub fn n_speakers(&self) -> usize {
        self.dialogues
            .iter()
            .flat_map(|d| d.utterances.iter())
            .map(|u| u.speaker + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn n_utterances(&self) -> usize {
        self.dialogues.iter().map(|d| d.utterances.len()).sum()
    }

    /// New dataset holding the dialogues at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let dialogues = indices
            .iter()
            .map(|&i| {
                self.dialogues
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("dialogue index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { scheme: self.scheme.clone(), dims: self.dims, dialogues })
    }

    /// Gold labels flattened in dialogue-major, turn-minor order.
    pub fn flat_labels(&self) -> Vec<usize> {
        self.dialogues
            .iter()
            .flat_map(|d| d.utterances.iter().map(|u| u.label))
            .collect()
    }
}
