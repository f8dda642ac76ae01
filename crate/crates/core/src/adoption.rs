//! Innovator-level adoption records: how a concept moved relative to an
//! innovator between two slices, how visible that movement was from the
//! innovator's position, and whether the innovator took the concept up.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SlicedCorpus, Vocabulary};
use crate::dynembed::EmbeddingTensor;
use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, cosine_similarity, experience_vector};
use crate::par;
pub use crate::stats::{ols_fit, OlsFit};

/// In-vocabulary tokens across the creator's slice-`t` documents.
pub fn concept_usage(creator_id: &str, t: usize, corpus: &SlicedCorpus, vocab: &Vocabulary) -> BTreeSet<u32> {
    corpus
        .creator_docs_in(creator_id, t, t)
        .into_iter()
        .flat_map(|(_, d)| vocab.encode(&d.tokens).flatten().collect::<Vec<_>>())
        .collect()
}

/// `cos(experience, concept_t1) - cos(experience, concept_t)`; positive
/// when the concept moved toward the innovator.
pub fn movement_delta(experience: &[f64], concept_t: &[f64], concept_t1: &[f64]) -> Result<f64> {
    Ok(cosine_similarity(experience, concept_t1)? - cosine_similarity(experience, concept_t)?)
}

/// Cosine of the angle the concept's movement subtends at the innovator,
/// between sight lines `concept_t - experience` and
/// `concept_t1 - experience`. A concept that did not move gives 1.
pub fn visual_angle_cos(experience: &[f64], concept_t: &[f64], concept_t1: &[f64]) -> Result<f64> {
    if concept_t == concept_t1 {
        return Ok(1.0);
    }
    let a: Vec<f64> = concept_t.iter().zip(experience).map(|(c, e)| c - e).collect();
    let b: Vec<f64> = concept_t1.iter().zip(experience).map(|(c, e)| c - e).collect();
    cosine_similarity(&a, &b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptionRecord {
    pub creator_id: String,
    pub token: String,
    #[serde(skip)]
    pub token_index: u32,
    pub t: usize,
    pub delta_d: f64,
    pub theta_v_cos: f64,
    /// Raw subtended angle in radians, for inspection.
    pub theta_v: f64,
    pub adopted: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdoptionConfig {
    /// Innovators sampled per slice pair.
    pub sample_n: usize,
    /// Unused concepts nearest each innovator considered as candidates.
    pub candidates: usize,
    pub seed: u64,
    pub lookback: usize,
    /// Subtract per-creator means before fitting.
    pub demean: bool,
}

impl Default for AdoptionConfig {
    fn default() -> Self {
        AdoptionConfig {
            sample_n: 20_000,
            candidates: 500,
            seed: 0,
            lookback: 1,
            demean: false,
        }
    }
}

fn creator_records(
    creator: &str,
    t: usize,
    corpus: &SlicedCorpus,
    vocab: &Vocabulary,
    tensor: &EmbeddingTensor,
    config: &AdoptionConfig,
) -> Result<Vec<AdoptionRecord>> {
    let experience = match experience_vector(creator, t + 1, config.lookback, corpus, vocab, tensor) {
        Ok(e) => e.vector,
        Err(Error::NoPriorExperience(_)) | Err(Error::ZeroVector) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let used = concept_usage(creator, t, corpus, vocab);
    let next = concept_usage(creator, t + 1, corpus, vocab);

    let mut candidates: Vec<(f64, u32)> = (0..vocab.len() as u32)
        .filter(|i| !used.contains(i))
        .filter_map(|i| cosine_distance(&experience, tensor.row(t, i as usize)).ok().map(|d| (d, i)))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.truncate(config.candidates);

    let mut out = Vec::with_capacity(candidates.len());
    for (_, i) in candidates {
        let (c_t, c_t1) = (tensor.row(t, i as usize), tensor.row(t + 1, i as usize));
        let (Ok(delta_d), Ok(cos_v)) = (movement_delta(&experience, c_t, c_t1), visual_angle_cos(&experience, c_t, c_t1)) else {
            continue;
        };
        out.push(AdoptionRecord {
            creator_id: creator.to_string(),
            token: vocab.token(i).to_string(),
            token_index: i,
            t,
            delta_d,
            theta_v_cos: cos_v,
            theta_v: cos_v.clamp(-1.0, 1.0).acos(),
            adopted: next.contains(&i) as u8,
        });
    }
    Ok(out)
}

/// For every adjacent slice pair, sample up to `sample_n` creators active
/// in the earlier slice and emit one record per candidate concept they did
/// not use there.
pub fn build_adoption_table(corpus: &SlicedCorpus, vocab: &Vocabulary, tensor: &EmbeddingTensor, config: &AdoptionConfig) -> Result<Vec<AdoptionRecord>> {
    tensor.check_vocabulary(vocab)?;
    if corpus.len() < 2 || tensor.num_slices() < 2 {
        return Err(Error::InvalidArgument("adoption needs at least 2 slices".into()));
    }
    let mut table = Vec::new();
    let mut any_eligible = false;
    for t in 0..corpus.len() - 1 {
        let eligible: Vec<&str> = corpus
            .creators()
            .filter(|c| !corpus.creator_docs_in(c, t, t).is_empty())
            .collect();
        if eligible.is_empty() {
            continue;
        }
        any_eligible = true;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
        let take = config.sample_n.min(eligible.len());
        let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), take).into_vec();
        picked.sort_unstable();
        let chosen: Vec<&str> = picked.into_iter().map(|i| eligible[i]).collect();
        let per_creator = par::map_slice(&chosen, |c| creator_records(c, t, corpus, vocab, tensor, config));
        for recs in per_creator {
            table.extend(recs?);
        }
    }
    if !any_eligible {
        return Err(Error::NoEligibleCreators);
    }
    Ok(table)
}

/// Linear probability model of adoption on `delta_d`, `theta_v_cos` and
/// their interaction. With `demean`, variables are centred within each
/// creator and the intercept is dropped.
pub fn fit_adoption(records: &[AdoptionRecord], demean: bool) -> Result<OlsFit> {
    let mut rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| vec![r.delta_d, r.theta_v_cos, r.delta_d * r.theta_v_cos])
        .collect();
    let mut y: Vec<f64> = records.iter().map(|r| r.adopted as f64).collect();
    if demean {
        let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for (i, r) in records.iter().enumerate() {
            groups.entry(&r.creator_id).or_default().push(i);
        }
        for idx in groups.values() {
            let m = idx.len() as f64;
            let my = idx.iter().map(|&i| y[i]).sum::<f64>() / m;
            let mx: Vec<f64> = (0..3).map(|c| idx.iter().map(|&i| rows[i][c]).sum::<f64>() / m).collect();
            for &i in idx {
                y[i] -= my;
                for c in 0..3 {
                    rows[i][c] -= mx[c];
                }
            }
        }
        ols_fit(&rows, &y, &["delta_d", "theta_v_cos", "delta_d:theta_v_cos"])
    } else {
        for r in &mut rows {
            r.insert(0, 1.0);
        }
        ols_fit(&rows, &y, &["const", "delta_d", "theta_v_cos", "delta_d:theta_v_cos"])
    }
}
