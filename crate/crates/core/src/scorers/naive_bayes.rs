use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_json, save_json, DiscriminativeScorer, ScoreError};
use crate::text::tokenize;
use crate::transcript::{split_rendered, RoleTag, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NaiveBayesParams {
    /// Add-k smoothing of the per-class feature distributions.
    pub k: f64,
    /// Weight of bag-of-words features drawn from the context; 0 ignores it.
    pub context_weight: f64,
    /// Drop the speaker's fake name so names cannot become role evidence.
    pub strip_speaker: bool,
}

impl Default for NaiveBayesParams {
    fn default() -> Self {
        Self {
            k: 1.0,
            context_weight: 0.0,
            strip_speaker: true,
        }
    }
}

/// Multinomial naive Bayes over the label "the rendered tag is right".
///
/// Message tokens are conjoined with the utterance's role tag
/// (`mafioso|kill`), and the tag itself is a feature. Without the
/// conjunction every word would appear equally often under both labels,
/// since each utterance is rendered once per assumed role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesClassifier {
    params: NaiveBayesParams,
    /// Index 0 is the false label, 1 the true label.
    class_docs: [f64; 2],
    class_mass: [f64; 2],
    counts: BTreeMap<String, [f64; 2]>,
}

fn tag_prefix(tag: RoleTag) -> &'static str {
    match tag {
        RoleTag::Mafioso => "mafioso",
        RoleTag::Bystander => "bystander",
        RoleTag::Unknown => "unknown",
    }
}

fn push_utterance(rendered: &str, strip_speaker: bool, prefix: &str, weight: f64, out: &mut Vec<(String, f64)>) {
    let parts = split_rendered(rendered);
    let tag = parts.tag.map(tag_prefix);
    let mut tokens = tokenize(parts.message);
    if !strip_speaker {
        if let Some(speaker) = parts.speaker {
            tokens.extend(tokenize(speaker));
        }
    }
    if let Some(t) = parts.tag {
        out.push((format!("{prefix}{}", t.as_str()), weight));
    }
    for tok in tokens {
        let feature = match tag {
            Some(t) => format!("{prefix}{t}|{tok}"),
            None => format!("{prefix}{tok}"),
        };
        out.push((feature, weight));
    }
}

impl NaiveBayesClassifier {
    fn features(&self, context: &[String], current: &str) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        push_utterance(current, self.params.strip_speaker, "", 1.0, &mut out);
        if self.params.context_weight > 0.0 {
            for c in context {
                push_utterance(c, self.params.strip_speaker, "ctx:", self.params.context_weight, &mut out);
            }
        }
        out
    }

    pub fn params(&self) -> NaiveBayesParams {
        self.params
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    /// Log-odds of the true label; features never seen in training are skipped.
    pub fn log_odds(&self, context: &[String], current: &str) -> f64 {
        let total_docs = self.class_docs[0] + self.class_docs[1];
        let v = self.counts.len() as f64;
        let k = self.params.k;
        let mut score = [
            (self.class_docs[0] / total_docs).ln(),
            (self.class_docs[1] / total_docs).ln(),
        ];
        for (feature, w) in self.features(context, current) {
            let Some(c) = self.counts.get(&feature) else {
                continue;
            };
            for class in 0..2 {
                score[class] += w * ((c[class] + k) / (self.class_mass[class] + k * v)).ln();
            }
        }
        score[1] - score[0]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScoreError> {
        save_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoreError> {
        load_json(path.as_ref())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DiscriminativeScorer for NaiveBayesClassifier {
    fn prob_mafia(&self, context: &[String], current: &str) -> Result<f64, ScoreError> {
        Ok(sigmoid(self.log_odds(context, current)))
    }
}

/// Fits the classifier; both labels must be present.
pub fn train_discriminative(examples: &[TrainingExample], params: NaiveBayesParams) -> Result<NaiveBayesClassifier, ScoreError> {
    if params.k <= 0.0 || !params.k.is_finite() {
        return Err(ScoreError::DegenerateCorpus(format!("smoothing k must be positive, got {}", params.k)));
    }
    let mut model = NaiveBayesClassifier {
        params,
        class_docs: [0.0; 2],
        class_mass: [0.0; 2],
        counts: BTreeMap::new(),
    };
    for e in examples {
        let class = usize::from(e.label);
        model.class_docs[class] += 1.0;
        for (feature, w) in model.features(&e.context, &e.current) {
            model.counts.entry(feature).or_insert([0.0; 2])[class] += w;
            model.class_mass[class] += w;
        }
    }
    match model.class_docs {
        [0.0, 0.0] => Err(ScoreError::DegenerateCorpus("no examples".into())),
        [0.0, _] | [_, 0.0] => Err(ScoreError::DegenerateCorpus("only one label present".into())),
        _ => Ok(model),
    }
}
