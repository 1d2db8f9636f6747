//! Deterministic stand-in backends for running the pipeline without trained
//! weights. Output depends only on the seed, the input's content key and the
//! bias profile (plus call order, for scripted profiles).

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::preprocess::{ContentKey, PreprocessedTensor};
use super::{BackendDescriptor, BackendError, ClassifierBackend};
use crate::domain::{ClassProbabilities, WoundClass, NUM_CLASSES};
use crate::fusion::{softmax, ModelId, ModelPrediction};

/// Ground truth for synthetic corpora, keyed by content.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub items: Vec<(String, ContentKey, WoundClass)>,
}

impl LabeledCorpus {
    /// `counts[i]` items of class `i`, keyed by hashing their item ids.
    pub fn synthetic(tag: &str, counts: &[usize; NUM_CLASSES]) -> Self {
        let mut items = Vec::with_capacity(counts.iter().sum());
        for (class, &n) in WoundClass::ALL.iter().zip(counts) {
            for k in 0..n {
                let id = format!("{tag}-{}-{k:04}", class.code());
                let key = ContentKey::of_bytes(id.as_bytes());
                items.push((id, key, *class));
            }
        }
        LabeledCorpus { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum BiasProfile {
    /// Seeded random logits; no preference for any class.
    Random,
    /// One-hot on a fixed class for every input.
    AlwaysClass(WoundClass),
    /// One-hot outputs replaying the sequence in call order, cycling at the end.
    Scripted(Vec<WoundClass>),
    /// Correct on all but `round((1 − accuracy/100) · n)` items of the corpus;
    /// the missed items are chosen by seeded ranking. Inputs outside the corpus
    /// fall back to [`BiasProfile::Random`].
    TargetAccuracy {
        accuracy_pct: f64,
        corpus: Arc<LabeledCorpus>,
    },
}

/// Config-file form of the profiles that need no corpus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StubProfileSpec {
    #[default]
    Random,
    AlwaysClass {
        class: WoundClass,
    },
    Scripted {
        sequence: Vec<WoundClass>,
    },
}

impl From<StubProfileSpec> for BiasProfile {
    fn from(spec: StubProfileSpec) -> Self {
        match spec {
            StubProfileSpec::Random => BiasProfile::Random,
            StubProfileSpec::AlwaysClass { class } => BiasProfile::AlwaysClass(class),
            StubProfileSpec::Scripted { sequence } => BiasProfile::Scripted(sequence),
        }
    }
}

#[derive(Debug)]
pub struct StubBackend {
    descriptor: BackendDescriptor,
    seed: u64,
    profile: BiasProfile,
    cursor: AtomicUsize,
    /// content key → (true class, whether this backend gets it wrong)
    answers: HashMap<ContentKey, (WoundClass, bool)>,
}

fn keyed_rng(seed: u64, salt: &str, key: &ContentKey) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.as_bytes());
    h.update(key.0);
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn ranking(seed: u64, key: &ContentKey) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"miss-rank");
    h.update(seed.to_le_bytes());
    h.update(key.0);
    h.finalize().into()
}

/// Build a stub backend.
pub fn stub_backend(model_id: ModelId, seed: u64, profile: BiasProfile) -> StubBackend {
    let mut answers = HashMap::new();
    if let BiasProfile::TargetAccuracy { accuracy_pct, corpus } = &profile {
        let n = corpus.len();
        let misses = ((1.0 - accuracy_pct.clamp(0.0, 100.0) / 100.0) * n as f64).round() as usize;
        let mut order: Vec<&(String, ContentKey, WoundClass)> = corpus.items.iter().collect();
        order.sort_by_key(|(_, key, _)| ranking(seed, key));
        for (rank, (_, key, class)) in order.into_iter().enumerate() {
            answers.insert(*key, (*class, rank < misses));
        }
    }
    let concurrent = !matches!(profile, BiasProfile::Scripted(_));
    StubBackend {
        descriptor: BackendDescriptor {
            name: format!("stub:{model_id}"),
            model_id,
            provenance: format!("deterministic stub (seed {seed})"),
            input_contract: "3x224x224 f32, any normalization".into(),
            concurrent,
        },
        seed,
        profile,
        cursor: AtomicUsize::new(0),
        answers,
    }
}

impl StubBackend {
    fn random_vector(&self, key: &ContentKey) -> ModelPrediction {
        let mut rng = keyed_rng(self.seed, "random", key);
        let mut logits = [0.0; NUM_CLASSES];
        for l in &mut logits {
            *l = rng.random_range(-4.0..4.0);
        }
        ModelPrediction::from_logits(self.descriptor.model_id.clone(), logits).expect("finite logits")
    }

    fn labeled_vector(&self, key: &ContentKey, truth: WoundClass, miss: bool) -> ModelPrediction {
        let mut rng = keyed_rng(self.seed, "labeled", key);
        let mut logits = [0.0; NUM_CLASSES];
        for l in &mut logits {
            *l = rng.random_range(-1.0..1.0);
        }
        let target = if miss {
            let shift = rng.random_range(1..NUM_CLASSES);
            WoundClass::ALL[(truth.index() + shift) % NUM_CLASSES]
        } else {
            truth
        };
        logits[target.index()] += 5.0;
        ModelPrediction::from_logits(self.descriptor.model_id.clone(), logits).expect("finite logits")
    }

    /// Prediction for a content key, bypassing preprocessing. Used to produce
    /// logs for synthetic corpora without rendering images.
    pub fn predict_key(&self, key: &ContentKey) -> ModelPrediction {
        let id = self.descriptor.model_id.clone();
        match &self.profile {
            BiasProfile::Random => self.random_vector(key),
            BiasProfile::AlwaysClass(c) => ModelPrediction::from_probabilities(id, ClassProbabilities::one_hot(*c)),
            BiasProfile::Scripted(seq) => {
                if seq.is_empty() {
                    return self.random_vector(key);
                }
                let i = self.cursor.fetch_add(1, Ordering::SeqCst) % seq.len();
                ModelPrediction::from_probabilities(id, ClassProbabilities::one_hot(seq[i]))
            }
            BiasProfile::TargetAccuracy { .. } => match self.answers.get(key) {
                Some(&(truth, miss)) => self.labeled_vector(key, truth, miss),
                None => self.random_vector(key),
            },
        }
    }
}

impl ClassifierBackend for StubBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(&self, input: &PreprocessedTensor) -> Result<ModelPrediction, BackendError> {
        Ok(self.predict_key(&input.content_key()))
    }
}

/// Logits to probabilities for a fixed class with a margin, for tests that
/// want confident but not one-hot vectors.
pub fn peaked(class: WoundClass, margin: f64) -> ClassProbabilities {
    let mut logits = [0.0; NUM_CLASSES];
    logits[class.index()] = margin;
    softmax(&logits).expect("finite")
}
