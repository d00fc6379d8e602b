use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{load_json, save_json, GenerativeScorer, ScoreError};
use crate::model::Role;
use crate::text::{tokenize, SEPARATOR};
use crate::transcript::{split_rendered, TrainingExample};

/// History padding before the first token of an utterance.
pub const BOS: &str = "<s>";
/// Stand-in for every token outside the training vocabulary.
pub const UNK: &str = "<unk>";

const UNK_ID: u32 = 0;
const BOS_ID: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgramParams {
    pub order: usize,
    /// Add-k smoothing constant.
    pub k: f64,
    /// Model the end of each utterance as a `</s>` token.
    pub append_separator: bool,
    /// Interpolation weight of a unigram model of the context messages.
    pub context_lambda: f64,
}

impl Default for NgramParams {
    fn default() -> Self {
        Self {
            order: 3,
            k: 0.1,
            append_separator: true,
            context_lambda: 0.0,
        }
    }
}

mod entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S, K, V>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        K: Serialize,
        V: Serialize,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D, K, V>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        D: Deserializer<'de>,
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

/// Counts for one role, keyed by every history length from 0 to order-1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RoleTable {
    #[serde(with = "entries")]
    next: BTreeMap<Vec<u32>, BTreeMap<u32, u64>>,
    #[serde(with = "entries")]
    totals: BTreeMap<Vec<u32>, u64>,
    utterances: u64,
}

/// Role-conditioned add-k n-gram language model over utterance bodies.
///
/// Histories never cross utterance boundaries. Both roles share one
/// vocabulary (including [`UNK`]), so their probabilities are comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NgramLm {
    params: NgramParams,
    vocab: Vec<String>,
    /// Indexed by `Role` order: mafioso, bystander.
    tables: [RoleTable; 2],
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl PartialEq for NgramLm {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.vocab == other.vocab && self.tables == other.tables
    }
}

fn role_slot(role: Role) -> usize {
    match role {
        Role::Mafioso => 0,
        Role::Bystander => 1,
    }
}

impl NgramLm {
    fn rebuild_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn params(&self) -> NgramParams {
        self.params
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Token ids of an utterance body, with the separator when modelled.
    fn encode(&self, message: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(message).iter().map(|t| self.token_id(t)).collect();
        if self.params.append_separator {
            ids.push(self.token_id(SEPARATOR));
        }
        ids
    }

    fn history(&self, prev: &[u32]) -> Vec<u32> {
        let n = self.params.order - 1;
        let mut h = vec![BOS_ID; n.saturating_sub(prev.len())];
        h.extend_from_slice(&prev[prev.len().saturating_sub(n)..]);
        h
    }

    fn table(&self, role: Role) -> Result<&RoleTable, ScoreError> {
        let t = &self.tables[role_slot(role)];
        if t.utterances == 0 {
            Err(ScoreError::UntrainedScorer(role))
        } else {
            Ok(t)
        }
    }

    /// Smoothed P(token | history) for `role`, without context interpolation.
    pub fn prob(&self, role: Role, history: &[u32], token: u32) -> Result<f64, ScoreError> {
        let t = self.table(role)?;
        let h = self.history(history);
        let c = t.next.get(&h).and_then(|m| m.get(&token)).copied().unwrap_or(0) as f64;
        let total = t.totals.get(&h).copied().unwrap_or(0) as f64;
        let k = self.params.k;
        Ok((c + k) / (total + k * self.vocab.len() as f64))
    }

    /// The full next-token distribution, indexed by token id.
    pub fn distribution(&self, role: Role, history: &[u32]) -> Result<Vec<f64>, ScoreError> {
        (0..self.vocab.len() as u32)
            .map(|w| self.prob(role, history, w))
            .collect()
    }

    fn context_unigram(&self, context: &[String]) -> Option<(HashMap<u32, f64>, f64)> {
        if self.params.context_lambda <= 0.0 {
            return None;
        }
        let mut counts = HashMap::new();
        let mut total = 0.0;
        for c in context {
            for id in self.encode(split_rendered(c).message) {
                *counts.entry(id).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        Some((counts, total))
    }

    /// Average negative log-likelihood per token, exponentiated.
    pub fn perplexity(&self, examples: &[TrainingExample]) -> Result<f64, ScoreError> {
        let mut nll = 0.0;
        let mut n = 0usize;
        for e in examples {
            nll -= self.log_prob(&e.context, &e.current, e.assumed_role)?;
            n += self.encode(split_rendered(&e.current).message).len();
        }
        Ok((nll / n.max(1) as f64).exp())
    }

    /// Draws a continuation of `prefix` for `role` until the separator or
    /// `max_tokens`. Sampling uses raw counts, backing off to shorter
    /// histories when a history was never seen; temperature 0 is argmax.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        role: Role,
        prefix: &str,
        rng: &mut R,
        max_tokens: usize,
        temperature: f64,
    ) -> Result<String, ScoreError> {
        let t = self.table(role)?;
        let mut ids: Vec<u32> = tokenize(prefix).iter().map(|w| self.token_id(w)).collect();
        let start = ids.len();
        let sep = self.index.get(SEPARATOR).copied();
        for _ in 0..max_tokens {
            let full = self.history(&ids);
            let Some(options) = (0..=full.len())
                .map(|cut| &full[cut..])
                .find_map(|h| t.next.get(h).filter(|m| !m.is_empty()))
            else {
                break;
            };
            let next = if temperature <= 0.0 {
                // Highest count, lowest id on ties.
                options
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(w, _)| *w)
                    .expect("non-empty")
            } else {
                let weights: Vec<(u32, f64)> = options
                    .iter()
                    .map(|(w, c)| (*w, (*c as f64).powf(1.0 / temperature)))
                    .collect();
                let total: f64 = weights.iter().map(|x| x.1).sum();
                let mut target = rng.gen::<f64>() * total;
                let mut pick = weights.last().expect("non-empty").0;
                for (w, x) in &weights {
                    if target < *x {
                        pick = *w;
                        break;
                    }
                    target -= x;
                }
                pick
            };
            if Some(next) == sep {
                break;
            }
            ids.push(next);
        }
        Ok(ids[start..]
            .iter()
            .map(|i| self.vocab[*i as usize].as_str())
            .collect::<Vec<_>>()
            .join(" "))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScoreError> {
        save_json(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoreError> {
        let mut lm: Self = load_json(path.as_ref())?;
        lm.rebuild_index();
        Ok(lm)
    }
}

impl GenerativeScorer for NgramLm {
    fn log_prob(&self, context: &[String], current: &str, role: Role) -> Result<f64, ScoreError> {
        self.table(role)?;
        let ids = self.encode(split_rendered(current).message);
        let ctx = self.context_unigram(context);
        let lambda = self.params.context_lambda;
        let v = self.vocab.len() as f64;
        let mut total = 0.0;
        for (i, &w) in ids.iter().enumerate() {
            let mut p = self.prob(role, &ids[..i], w)?;
            if let Some((counts, n)) = &ctx {
                let pc = (counts.get(&w).copied().unwrap_or(0.0) + self.params.k) / (n + self.params.k * v);
                p = (1.0 - lambda) * p + lambda * pc;
            }
            total += p.ln();
        }
        Ok(total)
    }
}

/// Fits one model per role from examples labelled by `assumed_role`.
pub fn train_generative(examples: &[TrainingExample], params: NgramParams) -> Result<NgramLm, ScoreError> {
    if params.order == 0 {
        return Err(ScoreError::DegenerateCorpus("order must be at least 1".into()));
    }
    if params.k <= 0.0 || !params.k.is_finite() {
        return Err(ScoreError::DegenerateCorpus(format!("smoothing k must be positive, got {}", params.k)));
    }
    if !(0.0..=1.0).contains(&params.context_lambda) {
        return Err(ScoreError::DegenerateCorpus("context_lambda must lie in [0, 1]".into()));
    }
    for role in Role::ALL {
        if !examples.iter().any(|e| e.assumed_role == role) {
            return Err(ScoreError::DegenerateCorpus(format!("no {role} examples")));
        }
    }

    let tokenized: Vec<(Role, Vec<String>)> = examples
        .iter()
        .map(|e| (e.assumed_role, tokenize(split_rendered(&e.current).message)))
        .collect();
    let mut vocab = vec![UNK.to_owned()];
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for (_, toks) in &tokenized {
        for t in toks {
            seen.insert(t.as_str(), ());
        }
    }
    if params.append_separator {
        seen.insert(SEPARATOR, ());
    }
    seen.remove(UNK);
    vocab.extend(seen.keys().map(|s| (*s).to_owned()));

    let mut lm = NgramLm {
        params,
        vocab,
        tables: Default::default(),
        index: HashMap::new(),
    };
    lm.rebuild_index();

    for (role, toks) in &tokenized {
        let mut ids: Vec<u32> = toks.iter().map(|t| lm.token_id(t)).collect();
        if params.append_separator {
            ids.push(lm.token_id(SEPARATOR));
        }
        let slot = role_slot(*role);
        let mut updates = Vec::new();
        for (i, &w) in ids.iter().enumerate() {
            let full = lm.history(&ids[..i]);
            for cut in 0..=full.len() {
                updates.push((full[cut..].to_vec(), w));
            }
        }
        let table = &mut lm.tables[slot];
        table.utterances += 1;
        for (h, w) in updates {
            *table.next.entry(h.clone()).or_default().entry(w).or_insert(0) += 1;
            *table.totals.entry(h).or_insert(0) += 1;
        }
    }
    Ok(lm)
}
