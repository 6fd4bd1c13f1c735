//! A seeded toy world: vocabulary, encoder, class descriptions and image
//! features, built so that descriptions carry class-distinctive words.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt_data::{assemble_dataset, ClassRecord, GeneratedOutputs, PairSource, PromptDataset, Split};
use crate::text_encoder::{EncoderConfig, EncoderWeights, InitScales, Vocabulary};
use crate::trainer::ensemble_targets;
use crate::zeroshot_eval::{synthesize_images, ImageFeatureSet};

pub const TEMPLATE_WORDS: [&str; 3] = ["a", "photo", "of"];

pub const FILLER_WORDS: [&str; 16] = [
    "the", "is", "has", "with", "and", "often", "very", "seen", "near", "its", "usually", "small", "large", "shape",
    "color", "looks",
];

/// Sentence patterns; `N` is the class name, `A` an attribute word, `F` a filler word.
const PATTERNS: [&str; 6] = ["a N is F A", "N has A and A", "the A N looks F", "a N with A F A", "F N is A", "N F A A"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub classes: usize,
    pub base_classes: usize,
    pub novel_classes: usize,
    pub descriptions_per_class: usize,
    /// Image noise level: noise vectors have expected norm about `sigma`.
    pub sigma: f64,
    pub images_per_class: usize,
    pub encoder_seed: u64,
    /// Seed for descriptions, images and attribute embeddings.
    pub world_seed: u64,
    pub encoder: EncoderConfig,
    pub init_scales: InitScales,
    pub attributes_per_class: usize,
    /// Standard deviation of attribute embeddings around their class-name embedding.
    pub attribute_spread: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            base_classes: 10,
            novel_classes: 10,
            descriptions_per_class: 20,
            sigma: 0.3,
            images_per_class: 50,
            encoder_seed: 0,
            world_seed: 0,
            encoder: EncoderConfig::toy(),
            init_scales: InitScales::default(),
            attributes_per_class: 4,
            attribute_spread: 0.5,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid(format!("a synthetic world needs at least 2 classes, got {}", self.classes)));
        }
        if self.base_classes + self.novel_classes != self.classes {
            return Err(Error::invalid(format!(
                "base ({}) and novel ({}) class counts must sum to {}",
                self.base_classes, self.novel_classes, self.classes
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if self.descriptions_per_class == 0 || self.images_per_class == 0 || self.attributes_per_class == 0 {
            return Err(Error::invalid("descriptions, images and attributes per class must be positive"));
        }
        if !(self.attribute_spread.is_finite() && self.attribute_spread >= 0.0) {
            return Err(Error::invalid("attribute_spread must be non-negative"));
        }
        self.encoder.validate()
    }

    /// Same world with every seed derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { encoder_seed: seed, world_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1), ..self.clone() }
    }
}

pub fn class_name(k: usize) -> String {
    format!("class{k:02}")
}

pub fn attribute_word(k: usize, i: usize) -> String {
    format!("class{k:02}_trait{i}")
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub vocab: Vocabulary,
    pub weights: EncoderWeights,
    /// All classes; the first `base_classes` are base, the rest novel.
    pub dataset: PromptDataset,
    /// Images for all classes, labels are class indices.
    pub images: ImageFeatureSet,
}

impl SyntheticWorld {
    pub fn build(config: &SyntheticWorldConfig) -> Result<Self> {
        config.validate()?;
        let c = config.classes;
        let mut words: Vec<String> = TEMPLATE_WORDS.iter().chain(FILLER_WORDS.iter()).map(|w| w.to_string()).collect();
        for k in 0..c {
            words.push(class_name(k));
            for i in 0..config.attributes_per_class {
                words.push(attribute_word(k, i));
            }
        }
        let vocab = Vocabulary::from_words("synthetic", &words)?;
        let mut weights = EncoderWeights::random_with(&config.encoder, vocab.len(), config.encoder_seed, config.init_scales)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.world_seed);
        let d = config.encoder.d_model;
        let spread = config.attribute_spread * config.init_scales.token_embedding;
        for k in 0..c {
            let name_row = weights.token_embedding.row(vocab.id(&class_name(k)).expect("class word") as usize).to_vec();
            for i in 0..config.attributes_per_class {
                let id = vocab.id(&attribute_word(k, i)).expect("attribute word") as usize;
                let row = &mut weights.token_embedding.data_mut()[id * d..(id + 1) * d];
                for (r, base) in row.iter_mut().zip(&name_row) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *r = base + spread * z;
                }
            }
        }

        let classes: Vec<ClassRecord> = (0..c)
            .map(|k| ClassRecord {
                split: if k < config.base_classes { Split::Base } else { Split::Novel },
                ..ClassRecord::new(k as u32, class_name(k))
            })
            .collect();
        let per_class = (0..c)
            .map(|k| {
                let outs = (0..config.descriptions_per_class).map(|_| describe(k, config, &mut rng)).collect();
                (k as u32, outs)
            })
            .collect();
        let outputs = GeneratedOutputs {
            per_class,
            outputs_per_query: config.descriptions_per_class,
            query_count: 1,
            dropped: 0,
            source: PairSource::Synthetic,
        };
        let dataset = assemble_dataset(&classes, crate::prompt_data::DEFAULT_INPUT_TEMPLATE, outputs, "synthetic")?;

        let targets = ensemble_targets(&dataset, &vocab, &weights)?;
        let centers = crate::numerics::Tensor::from_rows(&targets.into_values().map(|t| t.into_data()).collect::<Vec<_>>())?;
        let names: Vec<String> = (0..c).map(class_name).collect();
        let image_seed = rng.random::<u64>();
        let images = synthesize_images(&centers, &names, config.images_per_class, config.sigma, image_seed)?;
        Ok(Self { config: config.clone(), vocab, weights, dataset, images })
    }

    pub fn base_ids(&self) -> Vec<u32> {
        (0..self.config.base_classes as u32).collect()
    }

    pub fn novel_ids(&self) -> Vec<u32> {
        (self.config.base_classes as u32..self.config.classes as u32).collect()
    }

    pub fn classes(&self, ids: &[u32]) -> Vec<ClassRecord> {
        ids.iter().map(|&id| self.dataset.class(id).expect("class in world").clone()).collect()
    }
}

fn describe(k: usize, config: &SyntheticWorldConfig, rng: &mut ChaCha8Rng) -> String {
    let pattern = PATTERNS.choose(rng).expect("patterns");
    pattern
        .split(' ')
        .map(|slot| match slot {
            "N" => class_name(k),
            "A" => attribute_word(k, rng.random_range(0..config.attributes_per_class)),
            "F" => FILLER_WORDS.choose(rng).expect("fillers").to_string(),
            w => w.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}
