//! Synthetic interactions and review text with planted intentions.
//!
//! Every user and item draws a mixture over `n_intents` intentions from a
//! symmetric Dirichlet. A user's interactions are sampled without
//! replacement with probability proportional to the dot product of the two
//! mixtures (plus a small floor). Each review picks one intention from its
//! author's mixture and draws most of its words from that intention's
//! vocabulary, the rest from a shared vocabulary.

use rand_distr::{Distribution, Gamma};

use crate::data::{EntityKind, Interaction, ItemId, ReviewRecord, UserId};
use crate::error::{RaiseError, Result};
use crate::numerics::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_intents: usize,
    pub reviews_per_entity: usize,
    /// Embedding width the reviews are destined for; bounds `n_intents`.
    pub dim: usize,
    pub seed: u64,
    pub interactions_per_user: usize,
    pub words_per_review: usize,
    pub intent_words: usize,
    pub common_words: usize,
    /// Probability that a review word comes from its intention's vocabulary.
    pub intent_word_share: f64,
    pub dirichlet_alpha: f64,
    pub affinity_floor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 100,
            n_items: 200,
            n_intents: 4,
            reviews_per_entity: 6,
            dim: 32,
            seed: 7,
            interactions_per_user: 12,
            words_per_review: 8,
            intent_words: 12,
            common_words: 30,
            intent_word_share: 0.75,
            dirichlet_alpha: 0.3,
            affinity_floor: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub interactions: Vec<Interaction>,
    pub reviews: Vec<ReviewRecord>,
    pub user_mixtures: Vec<Vec<f64>>,
    pub item_mixtures: Vec<Vec<f64>>,
}

fn dirichlet(rng: &mut SeededRng, k: usize, alpha: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

fn categorical(rng: &mut SeededRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.uniform() * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    // Round-off landed past the end: take the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn review_text(rng: &mut SeededRng, cfg: &SynthConfig, mixture: &[f64]) -> String {
    let intent = categorical(rng, mixture);
    let words: Vec<String> = (0..cfg.words_per_review)
        .map(|_| {
            if rng.uniform() < cfg.intent_word_share {
                format!("intent{}_{}", intent, rng.below(cfg.intent_words))
            } else {
                format!("common{}", rng.below(cfg.common_words))
            }
        })
        .collect();
    words.join(" ")
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    let counts = [
        ("n_users", cfg.n_users),
        ("n_items", cfg.n_items),
        ("n_intents", cfg.n_intents),
        ("reviews_per_entity", cfg.reviews_per_entity),
        ("dim", cfg.dim),
        ("interactions_per_user", cfg.interactions_per_user),
        ("words_per_review", cfg.words_per_review),
        ("intent_words", cfg.intent_words),
        ("common_words", cfg.common_words),
    ];
    if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
        return Err(RaiseError::Config(format!("{name} must be at least 1")));
    }
    if cfg.n_intents > cfg.dim {
        return Err(RaiseError::Config(format!(
            "n_intents ({}) must not exceed dim ({})",
            cfg.n_intents, cfg.dim
        )));
    }
    if cfg.interactions_per_user > cfg.n_items {
        return Err(RaiseError::Config("interactions_per_user exceeds n_items".into()));
    }

    let mut rng = SeededRng::new(cfg.seed);
    let user_mixtures: Vec<Vec<f64>> = (0..cfg.n_users)
        .map(|_| dirichlet(&mut rng, cfg.n_intents, cfg.dirichlet_alpha))
        .collect();
    let item_mixtures: Vec<Vec<f64>> = (0..cfg.n_items)
        .map(|_| dirichlet(&mut rng, cfg.n_intents, cfg.dirichlet_alpha))
        .collect();

    let mut interactions = Vec::with_capacity(cfg.n_users * cfg.interactions_per_user);
    let mut clock = 1_600_000_000i64;
    for (u, theta) in user_mixtures.iter().enumerate() {
        let mut weights: Vec<f64> = item_mixtures
            .iter()
            .map(|phi| theta.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() + cfg.affinity_floor)
            .collect();
        for _ in 0..cfg.interactions_per_user {
            let i = categorical(&mut rng, &weights);
            weights[i] = 0.0;
            clock += 1 + rng.below(3600) as i64;
            interactions.push(Interaction {
                user: UserId(u as u64),
                item: ItemId(i as u64),
                rating: (1 + rng.below(5)) as f64,
                timestamp: Some(clock),
            });
        }
    }

    let mut reviews = Vec::with_capacity((cfg.n_users + cfg.n_items) * cfg.reviews_per_entity);
    for (kind, mixtures) in [(EntityKind::User, &user_mixtures), (EntityKind::Item, &item_mixtures)] {
        for (id, mix) in mixtures.iter().enumerate() {
            for _ in 0..cfg.reviews_per_entity {
                reviews.push(ReviewRecord {
                    kind,
                    id: id as u64,
                    text: review_text(&mut rng, cfg, mix),
                });
            }
        }
    }

    Ok(SynthData {
        interactions,
        reviews,
        user_mixtures,
        item_mixtures,
    })
}
