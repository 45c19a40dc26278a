//! A genetic search over input tokens against an input-dependent invariant
//! feature, showing that such features can be driven to agree between
//! unrelated models.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use attnprint_core::model::ModelWeights;
use attnprint_core::rng::{purpose, Stream};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub sequence_length: usize,
    /// Per-gene substitution probability.
    pub mutation_rate: f64,
    pub elitism_count: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 64,
            generations: 100,
            sequence_length: 8,
            mutation_rate: 0.1,
            elitism_count: 2,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("GA config: {what}")));
        if self.population_size == 0 || self.sequence_length == 0 {
            return bad("population_size and sequence_length must be positive");
        }
        if !(self.mutation_rate > 0.0 && self.mutation_rate < 1.0) {
            return bad("mutation_rate must lie in (0, 1)");
        }
        if self.elitism_count == 0 || self.elitism_count > self.population_size {
            return bad("elitism_count must lie in 1..=population_size");
        }
        Ok(())
    }
}

/// `E W_Q W_Kᵀ Eᵀ` for the first layer, precomputed up to the embedding
/// lookup.
struct IcsProbe<'a> {
    embedding: &'a Array2<f64>,
    qk: Array2<f64>,
}

impl<'a> IcsProbe<'a> {
    fn new(model: &'a ModelWeights<f64>) -> Result<Self> {
        let embedding = model
            .embedding
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no embedding matrix", model.model_id)))?;
        let layer = model
            .layers
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no layers", model.model_id)))?;
        if layer.w_q.ncols() != layer.w_k.ncols() {
            return Err(Error::InvalidArgument(
                "first-layer query and key widths differ; broadcast grouped heads first".into(),
            ));
        }
        Ok(IcsProbe {
            embedding,
            qk: layer.w_q.dot(&layer.w_k.t()),
        })
    }

    fn feature(&self, tokens: &[usize]) -> Result<Array1<f64>> {
        let vocab = self.embedding.nrows();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidArgument(format!("token {bad} outside vocabulary of {vocab}")));
        }
        let e = self.embedding.select(Axis(0), tokens);
        let inv = e.dot(&self.qk).dot(&e.t());
        let flat = Array1::from_iter(inv.iter().copied());
        let norm = flat.dot(&flat).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("invariant term is identically zero".into()));
        }
        Ok(flat / norm)
    }
}

/// Unit-norm flattening of `E W_Q W_Kᵀ Eᵀ`, where `E` holds the embedding
/// rows of `tokens` and the projections come from the first layer.
pub fn toy_ics_feature(model: &ModelWeights<f64>, tokens: &[usize]) -> Result<Array1<f64>> {
    IcsProbe::new(model)?.feature(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best_tokens: Vec<usize>,
    pub best_fitness: f64,
    /// One entry per evaluated generation, starting with the random
    /// initial population.
    pub history: Vec<GenerationStats>,
}

/// Searches for a token sequence on which both models' features align.
///
/// Fitness is the cosine similarity of [`toy_ics_feature`] for the two
/// models. Each generation keeps the `elitism_count` fittest individuals and
/// fills the rest with children of size-2 tournament winners: single-point
/// crossover, then each gene replaced by a uniform token with probability
/// `mutation_rate`. Ties in fitness are broken by population index.
pub fn false_claim_ga(model_a: &ModelWeights<f64>, model_b: &ModelWeights<f64>, cfg: &GaConfig) -> Result<GaOutcome> {
    cfg.validate()?;
    let (pa, pb) = (IcsProbe::new(model_a)?, IcsProbe::new(model_b)?);
    let vocab = pa.embedding.nrows();
    if pb.embedding.nrows() != vocab {
        return Err(Error::InvalidArgument(format!(
            "vocabulary sizes differ: {vocab} vs {}",
            pb.embedding.nrows()
        )));
    }
    let fitness = |tokens: &[usize]| -> Result<f64> { Ok(pa.feature(tokens)?.dot(&pb.feature(tokens)?)) };

    let mut rng = Stream::keyed(cfg.seed, purpose::GENETIC);
    let random_token = |rng: &mut Stream| rng.below(vocab as u64) as usize;
    let mut population: Vec<Vec<usize>> = (0..cfg.population_size)
        .map(|_| (0..cfg.sequence_length).map(|_| random_token(&mut rng)).collect())
        .collect();

    let mut history = Vec::with_capacity(cfg.generations + 1);
    let mut generation = 0;
    loop {
        let scores = population.iter().map(|p| fitness(p)).collect::<Result<Vec<f64>>>()?;
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        history.push(GenerationStats {
            generation,
            best_fitness: scores[ranked[0]],
            mean_fitness: scores.iter().sum::<f64>() / scores.len() as f64,
        });
        if generation == cfg.generations {
            return Ok(GaOutcome {
                best_tokens: population[ranked[0]].clone(),
                best_fitness: scores[ranked[0]],
                history,
            });
        }

        let mut next: Vec<Vec<usize>> = ranked[..cfg.elitism_count].iter().map(|&i| population[i].clone()).collect();
        let n = population.len() as u64;
        let tournament = |rng: &mut Stream| {
            let (i, j) = (rng.below(n) as usize, rng.below(n) as usize);
            if scores[j] > scores[i] || (scores[j] == scores[i] && j < i) {
                j
            } else {
                i
            }
        };
        while next.len() < cfg.population_size {
            let a = &population[tournament(&mut rng)];
            let b = &population[tournament(&mut rng)];
            let cut = if cfg.sequence_length > 1 {
                1 + rng.below(cfg.sequence_length as u64 - 1) as usize
            } else {
                1
            };
            let mut child: Vec<usize> = a[..cut].iter().chain(&b[cut..]).copied().collect();
            for gene in &mut child {
                if rng.uniform() < cfg.mutation_rate {
                    *gene = random_token(&mut rng);
                }
            }
            next.push(child);
        }
        population = next;
        generation += 1;
    }
}

pub fn write_fitness_csv(history: &[GenerationStats], path: &Path) -> Result<()> {
    crate::write_csv(history, path)
}
