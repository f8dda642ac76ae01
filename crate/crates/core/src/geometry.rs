//! Projection of documents and creators into an embedding slice, and the
//! team diversity measures computed from those positions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SlicedCorpus, Vocabulary};
use crate::dynembed::EmbeddingTensor;
use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Cosine similarity; errors on a zero-norm input. Exactly 1 for `(v, v)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    let denom = (dot(u, u) * dot(v, v)).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / denom).clamp(-1.0, 1.0))
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

fn mean_of<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, k: usize) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; k];
    let mut count = 0;
    for v in vectors {
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        count += 1;
    }
    if count > 0 {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    (sum, count)
}

/// Mean of the slice-`t` vectors of the document's in-vocabulary tokens,
/// counting repeated tokens once per occurrence.
pub fn document_vector(doc: &Document, vocab: &Vocabulary, tensor: &EmbeddingTensor, t: usize) -> Result<Vec<f64>> {
    let rows = vocab.encode(&doc.tokens).flatten().map(|i| tensor.row(t, i as usize));
    let (v, count) = mean_of(rows, tensor.k());
    if count == 0 {
        return Err(Error::UnprojectableDocument(doc.doc_id.clone()));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceVector {
    pub creator_id: String,
    pub as_of: usize,
    pub lookback: usize,
    pub vector: Vec<f64>,
    pub n_docs: usize,
}

/// Equal-weight mean of the creator's prior document vectors, each
/// projected in the slice it was published in.
pub fn experience_vector(
    creator_id: &str,
    as_of: usize,
    lookback: usize,
    corpus: &SlicedCorpus,
    vocab: &Vocabulary,
    tensor: &EmbeddingTensor,
) -> Result<ExperienceVector> {
    let docs: Vec<Vec<f64>> = corpus
        .creator_history(creator_id, as_of, lookback)
        .into_iter()
        .filter_map(|(t, d)| document_vector(d, vocab, tensor, t).ok())
        .collect();
    let (vector, n_docs) = mean_of(docs.iter().map(Vec::as_slice), tensor.k());
    if n_docs == 0 {
        return Err(Error::NoPriorExperience(creator_id.to_string()));
    }
    if is_zero(&vector) || vector.iter().any(|x| !x.is_finite()) {
        return Err(Error::ZeroVector);
    }
    Ok(ExperienceVector {
        creator_id: creator_id.to_string(),
        as_of,
        lookback,
        vector,
        n_docs,
    })
}

/// `task - experience`. A zero result is reported as [`Error::ZeroVector`].
pub fn perspective_vector(task: &[f64], experience: &[f64]) -> Result<Vec<f64>> {
    if task.len() != experience.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", task.len(), experience.len())));
    }
    let v: Vec<f64> = task.iter().zip(experience).map(|(a, b)| a - b).collect();
    if is_zero(&v) {
        return Err(Error::ZeroVector);
    }
    Ok(v)
}

/// Pairwise cosine distances over `i < j`, sorted ascending so that any
/// reduction over them is independent of member order.
fn sorted_pair_distances<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let n = vectors.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(cosine_distance(vectors[i].as_ref(), vectors[j].as_ref())?);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

fn mean_pairwise<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::TeamTooSmall {
            needed: 2,
            got: vectors.len(),
        });
    }
    let d = sorted_pair_distances(vectors)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Mean cosine distance over all member pairs.
pub fn background_diversity<V: AsRef<[f64]>>(members: &[V]) -> Result<f64> {
    mean_pairwise(members)
}

pub fn perspective_vectors<V: AsRef<[f64]>>(task: &[f64], members: &[V]) -> Result<Vec<Vec<f64>>> {
    members.iter().map(|m| perspective_vector(task, m.as_ref())).collect()
}

/// Background diversity of the perspective vectors `task - V_i`.
pub fn perspective_diversity<V: AsRef<[f64]>>(task: &[f64], members: &[V]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::TeamTooSmall {
            needed: 2,
            got: members.len(),
        });
    }
    mean_pairwise(&perspective_vectors(task, members)?)
}

/// Mean over pairs of the angle `arccos(1 - d)`.
pub fn mean_pair_angle<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64> {
    let mut angles: Vec<f64> = sorted_pair_distances(vectors)?
        .into_iter()
        .map(|d| (1.0 - d).clamp(-1.0, 1.0).acos())
        .collect();
    if angles.is_empty() {
        return Err(Error::TeamTooSmall {
            needed: 2,
            got: vectors.len(),
        });
    }
    angles.sort_by(f64::total_cmp);
    Ok(angles.iter().sum::<f64>() / angles.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mbd: f64,
    pub mpd: f64,
}

fn without<V: Clone>(items: &[V], skip: usize) -> Vec<V> {
    items
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, v)| v.clone())
        .collect()
}

fn marginal_from_full<V: AsRef<[f64]> + Clone>(task: &[f64], members: &[V], focal: usize, bd: f64, pd: f64) -> Result<Marginal> {
    if bd == 0.0 || pd == 0.0 {
        return Err(Error::DegenerateTeam);
    }
    let rest = without(members, focal);
    let bd_rest = background_diversity(&rest)?;
    let pd_rest = perspective_diversity(task, &rest)?;
    Ok(Marginal {
        mbd: (bd - bd_rest) / bd,
        mpd: (pd - pd_rest) / pd,
    })
}

/// Proportional drop in BD and PD when member `focal` is removed.
pub fn marginal_contributions<V: AsRef<[f64]> + Clone>(task: &[f64], members: &[V], focal: usize) -> Result<Marginal> {
    if members.len() < 3 {
        return Err(Error::TeamTooSmall {
            needed: 3,
            got: members.len(),
        });
    }
    if focal >= members.len() {
        return Err(Error::InvalidArgument(format!("focal index {focal} out of range")));
    }
    let bd = background_diversity(members)?;
    let pd = perspective_diversity(task, members)?;
    marginal_from_full(task, members, focal, bd, pd)
}

/// Cosine distance between the mean member position and the task.
pub fn centroid_task_distance<V: AsRef<[f64]>>(task: &[f64], members: &[V]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::TeamTooSmall { needed: 1, got: 0 });
    }
    let (centroid, _) = mean_of(members.iter().map(AsRef::as_ref), task.len());
    cosine_distance(&centroid, task)
}

/// Mean decrease, from `before` to `after`, of each member's cosine
/// distance to the task. Positive when members converge on the task.
pub fn experience_convergence<V: AsRef<[f64]>>(before: &[V], after: &[V], task: &[f64]) -> Result<f64> {
    if before.len() != after.len() {
        return Err(Error::InvalidArgument(format!(
            "{} members at t but {} at t+1",
            before.len(),
            after.len()
        )));
    }
    if before.is_empty() {
        return Err(Error::TeamTooSmall { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for (b, a) in before.iter().zip(after) {
        total += cosine_distance(b.as_ref(), task)? - cosine_distance(a.as_ref(), task)?;
    }
    Ok(total / before.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamRecord {
    pub doc_id: String,
    pub slice: usize,
    pub task: Vec<f64>,
    /// Members with prior history.
    pub members: Vec<ExperienceVector>,
    /// Experience at the following slice, aligned with `members`, when
    /// every member has one.
    pub members_next: Option<Vec<Vec<f64>>>,
    pub prop_new_members: f64,
    pub prev_collaboration: f64,
    pub outcome: Option<f64>,
}

impl TeamRecord {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::TeamTooSmall {
                needed: 2,
                got: self.members.len(),
            });
        }
        if is_zero(&self.task) {
            return Err(Error::ZeroVector);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberMarginal {
    pub doc_id: String,
    pub creator_id: String,
    pub mbd: Option<f64>,
    pub mpd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub doc_id: String,
    pub t: usize,
    pub n_members: usize,
    #[serde(rename = "BD")]
    pub bd: f64,
    #[serde(rename = "PD")]
    pub pd: Option<f64>,
    pub theta_b_bar: f64,
    pub theta_p_bar: Option<f64>,
    pub mean_experience: f64,
    pub prop_new_members: f64,
    pub prev_collaboration: f64,
    pub centroid_task_distance: Option<f64>,
    pub experience_convergence: Option<f64>,
    pub outcome: Option<f64>,
    pub integration: Option<f64>,
    pub speculation: Option<f64>,
    #[serde(skip)]
    pub members: Vec<MemberMarginal>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub marginals: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { marginals: true }
    }
}

/// All team-level measures. Members are processed in creator-id order, so
/// the report does not depend on the order they were listed in.
///
/// PD is absent when some member's experience coincides with the task;
/// MBD/MPD are absent for teams of fewer than three or with zero diversity.
pub fn team_report(team: &TeamRecord, options: ReportOptions) -> Result<DiversityReport> {
    team.validate()?;
    let mut order: Vec<usize> = (0..team.members.len()).collect();
    order.sort_by(|&a, &b| team.members[a].creator_id.cmp(&team.members[b].creator_id));
    let vectors: Vec<&[f64]> = order.iter().map(|&i| team.members[i].vector.as_slice()).collect();
    let task = team.task.as_slice();

    let bd = background_diversity(&vectors)?;
    let theta_b_bar = mean_pair_angle(&vectors)?;
    let perspectives = perspective_vectors(task, &vectors).ok();
    let pd = match &perspectives {
        Some(p) => Some(mean_pairwise(p)?),
        None => None,
    };
    let theta_p_bar = match &perspectives {
        Some(p) => Some(mean_pair_angle(p)?),
        None => None,
    };

    let members = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let m = match pd {
                Some(pd) if options.marginals && vectors.len() >= 3 => {
                    marginal_from_full(task, &vectors, pos, bd, pd).ok()
                }
                _ => None,
            };
            MemberMarginal {
                doc_id: team.doc_id.clone(),
                creator_id: team.members[i].creator_id.clone(),
                mbd: m.map(|m| m.mbd),
                mpd: m.map(|m| m.mpd),
            }
        })
        .collect();

    let experience_convergence = match &team.members_next {
        Some(next) if next.len() == team.members.len() => {
            let after: Vec<&[f64]> = order.iter().map(|&i| next[i].as_slice()).collect();
            experience_convergence(&vectors, &after, task).ok()
        }
        _ => None,
    };

    Ok(DiversityReport {
        doc_id: team.doc_id.clone(),
        t: team.slice,
        n_members: team.members.len(),
        bd,
        pd,
        theta_b_bar,
        theta_p_bar,
        mean_experience: team.members.iter().map(|m| m.n_docs).sum::<usize>() as f64 / team.members.len() as f64,
        prop_new_members: team.prop_new_members,
        prev_collaboration: team.prev_collaboration,
        centroid_task_distance: centroid_task_distance(task, &vectors).ok(),
        experience_convergence,
        outcome: team.outcome,
        integration: None,
        speculation: None,
        members,
    })
}

/// Assemble the team for project `doc` published in slice `t`: task vector
/// from the document itself, experience vectors for every creator with
/// prior history. Needs at least two historied creators.
pub fn build_team(
    doc: &Document,
    t: usize,
    corpus: &SlicedCorpus,
    vocab: &Vocabulary,
    tensor: &EmbeddingTensor,
    lookback: usize,
) -> Result<TeamRecord> {
    let task = document_vector(doc, vocab, tensor, t)?;
    let mut creators: Vec<&str> = doc.creator_ids.iter().map(String::as_str).collect();
    creators.sort_unstable();
    creators.dedup();
    let mut members = Vec::new();
    let mut new_members = 0;
    for c in &creators {
        match experience_vector(c, t, lookback, corpus, vocab, tensor) {
            Ok(v) => members.push(v),
            Err(Error::NoPriorExperience(_)) | Err(Error::ZeroVector) => new_members += 1,
            Err(e) => return Err(e),
        }
    }
    if members.len() < 2 {
        return Err(Error::TeamTooSmall {
            needed: 2,
            got: members.len(),
        });
    }

    let histories: Vec<HashSet<&str>> = members
        .iter()
        .map(|m| {
            corpus
                .creator_history(&m.creator_id, t, lookback)
                .into_iter()
                .map(|(_, d)| d.doc_id.as_str())
                .collect()
        })
        .collect();
    let mut pairs = 0usize;
    let mut shared = 0usize;
    for i in 0..histories.len() {
        for j in i + 1..histories.len() {
            pairs += 1;
            if !histories[i].is_disjoint(&histories[j]) {
                shared += 1;
            }
        }
    }

    let members_next = (t + 1 < corpus.len())
        .then(|| {
            members
                .iter()
                .map(|m| experience_vector(&m.creator_id, t + 1, lookback, corpus, vocab, tensor).map(|v| v.vector))
                .collect::<Result<Vec<_>>>()
                .ok()
        })
        .flatten();

    Ok(TeamRecord {
        doc_id: doc.doc_id.clone(),
        slice: t,
        task,
        members,
        members_next,
        prop_new_members: new_members as f64 / creators.len() as f64,
        prev_collaboration: shared as f64 / pairs as f64,
        outcome: doc.outcome,
    })
}
