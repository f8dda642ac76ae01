//! Validation of the dynamic space: focal sampling, density-peak
//! clustering of local concepts, concept in-flow between adjacent slices,
//! and innovation counts around each focal point.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SlicedCorpus, Split, Vocabulary};
use crate::dynembed::EmbeddingTensor;
use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, cosine_similarity, document_vector};
use crate::par;
pub use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Uniform over the axis-aligned bounding box of the word vectors.
    #[default]
    BoundingBox,
    /// Uniform over the word vectors themselves.
    WordPositions,
}

/// `m` focal points for slice `t`, deterministic given `seed`.
pub fn sample_focal_points(tensor: &EmbeddingTensor, t: usize, m: usize, seed: u64, mode: SamplingMode) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one focal point".into()));
    }
    let (n, k) = (tensor.n(), tensor.k());
    if n == 0 || t >= tensor.num_slices() {
        return Err(Error::EmptySlice);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SamplingMode::BoundingBox => {
            let mut lo = vec![f64::INFINITY; k];
            let mut hi = vec![f64::NEG_INFINITY; k];
            for i in 0..n {
                for (d, &x) in tensor.row(t, i).iter().enumerate() {
                    lo[d] = lo[d].min(x);
                    hi[d] = hi[d].max(x);
                }
            }
            Ok((0..m)
                .map(|_| {
                    (0..k)
                        .map(|d| if lo[d] < hi[d] { rng.random_range(lo[d]..=hi[d]) } else { lo[d] })
                        .collect()
                })
                .collect())
        }
        SamplingMode::WordPositions => Ok((0..m).map(|_| tensor.row(t, rng.random_range(0..n)).to_vec()).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            // Zero vectors are treated as maximally distant.
            Metric::Cosine => cosine_distance(a, b).unwrap_or(2.0).max(0.0),
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityPeakParams {
    pub metric: Metric,
    /// Kernel bandwidth as a percentile of all pairwise distances.
    pub bandwidth_percentile: f64,
}

impl Default for DensityPeakParams {
    fn default() -> Self {
        DensityPeakParams {
            metric: Metric::Cosine,
            bandwidth_percentile: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// Point index of the peak of each label.
    pub peaks: Vec<usize>,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
}

impl ClusterAssignment {
    pub fn num_clusters(&self) -> usize {
        self.peaks.len()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.peaks.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Nearest-rank percentile of `values` (which get reordered): the
/// `ceil(p/100 * len)`-th smallest, at least the smallest.
fn percentile_rank(values: &mut [f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * values.len() as f64).ceil().max(1.0) as usize;
    let idx = rank.min(values.len()) - 1;
    *values.select_nth_unstable_by(idx, f64::total_cmp).1
}

fn sum_sorted(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Density-peak clustering: Gaussian-kernel density `rho`, distance
/// `delta` to the nearest denser point, peaks at the largest gap of the
/// descending `rho * delta` sequence, every other point following its
/// nearest denser neighbour.
///
/// Reductions sum sorted terms and density ties are broken by coordinates,
/// so the partition does not depend on input order.
pub fn density_peak_cluster<V: AsRef<[f64]> + Sync>(vectors: &[V], params: &DensityPeakParams) -> Result<ClusterAssignment> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let dist: Vec<f64> = {
        let rows = par::map_range(n, |i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { params.metric.distance(vectors[i].as_ref(), vectors[j].as_ref()) })
                .collect::<Vec<f64>>()
        });
        rows.concat()
    };
    let d = |i: usize, j: usize| dist[i * n + j];

    let mut pairwise: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d(i, j)).collect();
    let max_dist = pairwise.iter().copied().fold(0.0, f64::max);
    if n == 1 || max_dist == 0.0 {
        return Ok(ClusterAssignment {
            labels: vec![0; n],
            peaks: vec![0],
            rho: vec![(n - 1) as f64; n],
            delta: vec![0.0; n],
        });
    }
    let mut bandwidth = percentile_rank(&mut pairwise, params.bandwidth_percentile);
    if bandwidth <= 0.0 {
        bandwidth = pairwise.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    }

    let rho: Vec<f64> = par::map_range(n, |i| {
        sum_sorted(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let r = d(i, j) / bandwidth;
                    (-r * r).exp()
                })
                .collect(),
        )
    });

    let coords_cmp = |a: usize, b: usize| -> Ordering {
        for (x, y) in vectors[a].as_ref().iter().zip(vectors[b].as_ref()) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then_with(|| coords_cmp(a, b)).then(a.cmp(&b)));

    let mut delta = vec![0.0; n];
    let mut parent = vec![usize::MAX; n];
    let top = order[0];
    delta[top] = (0..n).map(|j| d(top, j)).fold(0.0, f64::max);
    for r in 1..n {
        let i = order[r];
        let mut best = f64::INFINITY;
        let mut best_j = order[0];
        for &j in &order[..r] {
            let dij = d(i, j);
            if dij < best {
                best = dij;
                best_j = j;
            }
        }
        delta[i] = best;
        parent[i] = best_j;
    }

    let gamma: Vec<f64> = (0..n).map(|i| rho[i] * delta[i]).collect();
    let rank_of = {
        let mut r = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    let mut by_gamma: Vec<usize> = (0..n).collect();
    by_gamma.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(rank_of[a].cmp(&rank_of[b])));
    let mut cut = 1;
    let mut widest = f64::NEG_INFINITY;
    for w in 0..n - 1 {
        let gap = gamma[by_gamma[w]] - gamma[by_gamma[w + 1]];
        if gap > widest {
            widest = gap;
            cut = w + 1;
        }
    }
    let mut is_peak = vec![false; n];
    for &i in &by_gamma[..cut] {
        is_peak[i] = true;
    }
    is_peak[top] = true;

    let mut labels = vec![usize::MAX; n];
    let mut peaks = Vec::new();
    for &i in &order {
        if is_peak[i] {
            labels[i] = peaks.len();
            peaks.push(i);
        } else {
            labels[i] = labels[parent[i]];
        }
    }
    Ok(ClusterAssignment {
        labels,
        peaks,
        rho,
        delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InFlowParams {
    /// Percentage of word vectors nearest the focal point to cluster.
    pub t1_percentile: f64,
    pub min_cluster_input: usize,
    pub clustering: DensityPeakParams,
}

impl Default for InFlowParams {
    fn default() -> Self {
        InFlowParams {
            t1_percentile: 30.0,
            min_cluster_input: 10,
            clustering: DensityPeakParams::default(),
        }
    }
}

/// Word indices of the nearest `floor(t1/100 * n)` words to `focal` in
/// slice `t` by cosine distance.
pub fn nearest_words(focal: &[f64], tensor: &EmbeddingTensor, t: usize, t1_percentile: f64) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..tensor.n())
        .filter_map(|i| cosine_distance(focal, tensor.row(t, i)).ok().map(|d| (d, i)))
        .collect();
    let take = ((t1_percentile / 100.0) * scored.len() as f64).floor() as usize;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(take);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Density-peak clusters of the focal point's neighbourhood at slice `t`,
/// as groups of word indices.
pub fn local_clusters(focal: &[f64], tensor: &EmbeddingTensor, t: usize, params: &InFlowParams) -> Result<Vec<Vec<usize>>> {
    let words = nearest_words(focal, tensor, t, params.t1_percentile);
    if words.len() < params.min_cluster_input.max(1) {
        return Err(Error::TooFewPoints {
            needed: params.min_cluster_input.max(1),
            got: words.len(),
        });
    }
    let vectors: Vec<&[f64]> = words.iter().map(|&i| tensor.row(t, i)).collect();
    let assignment = density_peak_cluster(&vectors, &params.clustering)?;
    Ok(assignment
        .members()
        .into_iter()
        .map(|group| group.into_iter().map(|p| words[p]).collect())
        .collect())
}

fn centroid(tensor: &EmbeddingTensor, t: usize, words: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; tensor.k()];
    for &w in words {
        c.iter_mut().zip(tensor.row(t, w)).for_each(|(s, x)| *s += x);
    }
    c.iter_mut().for_each(|s| *s /= words.len() as f64);
    c
}

/// Mean over clusters of `cos(centroid_to, focal) - cos(centroid_from,
/// focal)`, with cluster membership held fixed.
pub fn cluster_in_flow(focal: &[f64], tensor: &EmbeddingTensor, clusters: &[Vec<usize>], from: usize, to: usize) -> Result<f64> {
    if clusters.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for words in clusters {
        let before = cosine_similarity(&centroid(tensor, from, words), focal)?;
        let after = cosine_similarity(&centroid(tensor, to, words), focal)?;
        total += after - before;
    }
    Ok(total / clusters.len() as f64)
}

/// Concept in-flow around `focal` from slice `t` to `t + 1`.
pub fn in_flow(focal: &[f64], tensor: &EmbeddingTensor, t: usize, params: &InFlowParams) -> Result<f64> {
    if t + 1 >= tensor.num_slices() {
        return Err(Error::InvalidArgument(format!("slice {} has no successor", t)));
    }
    let clusters = local_clusters(focal, tensor, t, params)?;
    cluster_in_flow(focal, tensor, &clusters, t, t + 1)
}

/// Distance radius containing the closest `t2` percent of all
/// focal-to-document distances; `-inf` when that share rounds down to no
/// pair at all.
pub fn innovation_radius<F: AsRef<[f64]> + Sync, D: AsRef<[f64]> + Sync>(focals: &[F], docs: &[D], t2_percentile: f64) -> f64 {
    let mut all: Vec<f64> = par::map_slice(focals, |f| {
        docs.iter()
            .filter_map(|d| cosine_distance(f.as_ref(), d.as_ref()).ok())
            .collect::<Vec<f64>>()
    })
    .concat();
    let take = ((t2_percentile / 100.0) * all.len() as f64).floor() as usize;
    if take == 0 {
        return f64::NEG_INFINITY;
    }
    let idx = take.min(all.len()) - 1;
    *all.select_nth_unstable_by(idx, f64::total_cmp).1
}

/// Number of documents within cosine distance `radius` of `focal`.
pub fn innovation_count<D: AsRef<[f64]>>(focal: &[f64], docs: &[D], radius: f64) -> usize {
    docs.iter()
        .filter(|d| cosine_distance(focal, d.as_ref()).is_ok_and(|dist| dist <= radius))
        .count()
}

/// Per-focal innovation counts with a radius shared by all focal points.
pub fn innovation_counts<F: AsRef<[f64]> + Sync, D: AsRef<[f64]> + Sync>(focals: &[F], docs: &[D], t2_percentile: f64) -> Result<Vec<usize>> {
    if docs.is_empty() {
        return Err(Error::NoProjectDocs);
    }
    let radius = innovation_radius(focals, docs, t2_percentile);
    Ok(par::map_slice(focals, |f| innovation_count(f.as_ref(), docs, radius)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Pool every adjacent slice pair.
    #[default]
    AllPairs,
    /// Only the last two slices.
    FinalPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub m: usize,
    pub t1_percentiles: Vec<f64>,
    pub t2_percentiles: Vec<f64>,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub pairs: PairMode,
    pub min_cluster_input: usize,
    pub clustering: DensityPeakParams,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            m: 5000,
            t1_percentiles: vec![30.0],
            t2_percentiles: vec![12.0],
            seed: 0,
            sampling: SamplingMode::BoundingBox,
            pairs: PairMode::AllPairs,
            min_cluster_input: 10,
            clustering: DensityPeakParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub slice_pair: [usize; 2],
    pub focal_id: usize,
    pub t1: f64,
    pub t2: f64,
    pub in_flow: f64,
    pub innovation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub t1: f64,
    pub t2: f64,
    /// Absent when either series is constant.
    pub pearson_r: Option<f64>,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowTable {
    pub rows: Vec<FlowRow>,
    pub summaries: Vec<FlowSummary>,
    /// Focal points dropped for having too few neighbouring words.
    pub skipped_points: usize,
}

/// Flow table from an embedding tensor and, per slice, the vectors of the
/// innovations published in it.
pub fn flow_table<D: AsRef<[f64]> + Sync>(tensor: &EmbeddingTensor, docs_by_slice: &[Vec<D>], config: &FlowConfig) -> Result<FlowTable> {
    let slices = tensor.num_slices();
    if slices < 2 {
        return Err(Error::InvalidArgument("flow validation needs at least 2 slices".into()));
    }
    if docs_by_slice.len() != slices {
        return Err(Error::ShapeMismatch(format!("{} document groups for {slices} slices", docs_by_slice.len())));
    }
    let pairs: Vec<usize> = match config.pairs {
        PairMode::AllPairs => (0..slices - 1).collect(),
        PairMode::FinalPair => vec![slices - 2],
    };
    let mut table = FlowTable::default();
    for &t in &pairs {
        let docs = &docs_by_slice[t + 1];
        if docs.is_empty() {
            log::warn!("slice {} has no project documents; pair skipped", t + 1);
            continue;
        }
        let focals = sample_focal_points(tensor, t, config.m, config.seed.wrapping_add(t as u64), config.sampling)?;
        for &t1 in &config.t1_percentiles {
            let params = InFlowParams {
                t1_percentile: t1,
                min_cluster_input: config.min_cluster_input,
                clustering: config.clustering,
            };
            let flows = par::map_slice(&focals, |f| in_flow(f, tensor, t, &params));
            let mut kept: Vec<(usize, f64)> = Vec::with_capacity(flows.len());
            for (i, r) in flows.into_iter().enumerate() {
                match r {
                    Ok(v) => kept.push((i, v)),
                    Err(Error::TooFewPoints { .. }) | Err(Error::ZeroVector) => {}
                    Err(e) => return Err(e),
                }
            }
            table.skipped_points += focals.len() - kept.len();
            let kept_focals: Vec<&[f64]> = kept.iter().map(|&(i, _)| focals[i].as_slice()).collect();
            for &t2 in &config.t2_percentiles {
                let counts = innovation_counts(&kept_focals, docs, t2)?;
                for ((i, v), c) in kept.iter().zip(counts) {
                    table.rows.push(FlowRow {
                        slice_pair: [t, t + 1],
                        focal_id: *i,
                        t1,
                        t2,
                        in_flow: *v,
                        innovation_count: c,
                    });
                }
            }
        }
    }
    for &t1 in &config.t1_percentiles {
        for &t2 in &config.t2_percentiles {
            let (x, y): (Vec<f64>, Vec<f64>) = table
                .rows
                .iter()
                .filter(|r| r.t1 == t1 && r.t2 == t2)
                .map(|r| (r.in_flow, r.innovation_count as f64))
                .unzip();
            table.summaries.push(FlowSummary {
                t1,
                t2,
                pearson_r: pearson(&x, &y).ok(),
                n_points: x.len(),
            });
        }
    }
    Ok(table)
}

/// Project every slice's project documents into that slice and build the
/// flow table.
pub fn flow_validation(corpus: &SlicedCorpus, vocab: &Vocabulary, tensor: &EmbeddingTensor, config: &FlowConfig) -> Result<FlowTable> {
    tensor.check_vocabulary(vocab)?;
    let docs_by_slice: Vec<Vec<Vec<f64>>> = corpus
        .slices
        .iter()
        .map(|s| {
            s.documents
                .iter()
                .filter(|d| d.split == Split::Project)
                .filter_map(|d| document_vector(d, vocab, tensor, s.index).ok())
                .collect()
        })
        .collect();
    if docs_by_slice.iter().skip(1).all(Vec::is_empty) {
        return Err(Error::NoProjectDocs);
    }
    flow_table(tensor, &docs_by_slice, config)
}
