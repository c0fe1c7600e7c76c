//! Causal temporal reduction: a strictly causal, single-pass reduction of
//! each frame's `N` tokens down to exactly `frame_budget` tokens.
//!
//! Decisions use only the current and previous frame. Per-position cosine
//! similarity splits tokens into a static set (unchanged content) and a
//! dynamic set (new content); the budget is split proportionally between
//! them. Dynamic tokens are picked by saliency, static tokens are merged by
//! density-peaks clustering, and the two paths always sum to exactly the
//! budget, so downstream storage sees a fixed-size group per frame.
//!
//! The only state carried between frames is the previous frame's feature
//! matrix, so memory stays at one frame regardless of stream length and the
//! output is invariant to how a driver batches frames.

use crate::core::{
    cosine_similarity, validate_frame, FrameTokens, Matrix, RetainedGroup, StreamConfig,
    TokenOrigin,
};
use crate::error::{Error, Result};
use crate::par;

/// Carry-over between frames: at most one frame of features.
#[derive(Debug, Clone, Default)]
pub struct CtrState {
    prev: Option<Matrix>,
}

impl CtrState {
    pub fn new() -> Self {
        Self { prev: None }
    }

    pub fn previous_features(&self) -> Option<&Matrix> {
        self.prev.as_ref()
    }
}

/// Static/dynamic split of one frame's token indices.
///
/// `static_set` holds indices whose similarity to the same position in the
/// previous frame strictly exceeds the threshold; `dynamic_set` holds the
/// rest. Both are sorted ascending and together cover `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub static_set: Vec<usize>,
    pub dynamic_set: Vec<usize>,
    pub similarities: Vec<f32>,
}

/// How the per-frame budget is split between the two paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetSplit {
    /// Merged tokens produced from the static set.
    pub static_budget: usize,
    /// Tokens picked from the dynamic set.
    pub dynamic_budget: usize,
}

/// One merged cluster of static tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCluster {
    /// Token index of the density peak anchoring this cluster.
    pub center: usize,
    /// All member token indices, ascending; every static token lands in
    /// exactly one cluster.
    pub members: Vec<usize>,
    /// Arithmetic mean of the member feature vectors.
    pub merged: Vec<f32>,
}

/// Counts reported alongside a reduced frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReduceStats {
    pub static_count: usize,
    pub dynamic_count: usize,
    pub static_budget: usize,
    pub dynamic_budget: usize,
}

/// Classify each token as static or dynamic by per-position cosine
/// similarity to the previous frame. Strictly greater than `threshold`
/// means static; equality stays dynamic.
pub fn partition_tokens(curr: &FrameTokens, prev: &Matrix, threshold: f32) -> Result<Partition> {
    if prev.rows() != curr.features.rows() || prev.cols() != curr.features.cols() {
        return Err(Error::ShapeMismatch {
            what: "previous frame features",
            expected: curr.features.rows() * curr.features.cols(),
            got: prev.rows() * prev.cols(),
        });
    }
    let n = curr.features.rows();
    let similarities: Vec<f32> =
        par::map_range(n, |i| cosine_similarity(curr.features.row(i), prev.row(i)));
    let mut static_set = Vec::new();
    let mut dynamic_set = Vec::new();
    for (i, &s) in similarities.iter().enumerate() {
        if s > threshold {
            static_set.push(i);
        } else {
            dynamic_set.push(i);
        }
    }
    Ok(Partition {
        static_set,
        dynamic_set,
        similarities,
    })
}

/// Split the frame budget proportionally to the observed static fraction:
/// `static_budget = floor(budget * |static| / N)`, remainder to dynamic.
///
/// Integer arithmetic throughout; with `budget <= N` both halves always fit
/// inside their sets.
pub fn allocate_budget(partition: &Partition, frame_budget: usize) -> BudgetSplit {
    let s = partition.static_set.len();
    let n = s + partition.dynamic_set.len();
    debug_assert!(n > 0 && frame_budget <= n);
    let static_budget = frame_budget * s / n;
    let split = BudgetSplit {
        static_budget,
        dynamic_budget: frame_budget - static_budget,
    };
    debug_assert!(split.static_budget <= s);
    debug_assert!(split.dynamic_budget <= partition.dynamic_set.len());
    split
}

/// Pick the `budget` highest-saliency tokens from the dynamic set.
///
/// Ties go to the lower token index; the result is sorted by token index.
pub fn select_dynamic(
    frame: &FrameTokens,
    dynamic_set: &[usize],
    budget: usize,
) -> Result<Vec<(usize, Vec<f32>)>> {
    if budget > dynamic_set.len() {
        return Err(Error::BudgetExceedsSet {
            budget,
            available: dynamic_set.len(),
        });
    }
    let mut ranked: Vec<usize> = dynamic_set.to_vec();
    ranked.sort_by(|&a, &b| {
        frame.saliency[b]
            .partial_cmp(&frame.saliency[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut picked = ranked[..budget].to_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| (i, frame.features.row(i).to_vec()))
        .collect())
}

/// Consolidate the static set into `budget` merged tokens via density-peaks
/// clustering on cosine distance.
///
/// The recipe, pinned for determinism:
/// - distance `d_ij = 1 - cosine(i, j)`, kernel cutoff = median pairwise
///   distance (clamped away from zero);
/// - local density `rho_i = sum_j exp(-(d_ij / cutoff)^2)`;
/// - points ranked by density, ties toward the lower token index;
///   separation `delta_i` = distance to the nearest point ranked denser
///   (the top-ranked point takes its maximum distance instead);
/// - centers = `budget` largest `rho * delta`, ties toward the lower token
///   index;
/// - every non-center token joins its nearest center (ties toward the lower
///   center index); a center anchors its own cluster, so clusters are never
///   empty.
///
/// Clusters come back ordered by center token index.
#[allow(clippy::needless_range_loop)]
pub fn merge_static(
    frame: &FrameTokens,
    static_set: &[usize],
    budget: usize,
) -> Result<Vec<StaticCluster>> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    let m = static_set.len();
    if m == 0 {
        return Err(Error::EmptyStaticSet { requested: budget });
    }
    if budget > m {
        return Err(Error::BudgetExceedsSet {
            budget,
            available: m,
        });
    }

    let dist: Vec<Vec<f64>> = par::map_range(m, |i| {
        let a = frame.features.row(static_set[i]);
        (0..m)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    1.0 - cosine_similarity(a, frame.features.row(static_set[j])) as f64
                }
            })
            .collect()
    });

    let mut pairs: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push(dist[i][j]);
        }
    }
    let cutoff = median(&mut pairs).max(1e-12);

    let density: Vec<f64> = par::map_range(m, |i| {
        let mut rho = 0.0;
        for (j, row) in dist[i].iter().enumerate() {
            if j != i {
                let r = row / cutoff;
                rho += (-r * r).exp();
            }
        }
        rho
    });

    let mut by_density: Vec<usize> = (0..m).collect();
    by_density.sort_by(|&a, &b| {
        density[b]
            .partial_cmp(&density[a])
            .unwrap()
            .then(static_set[a].cmp(&static_set[b]))
    });
    let mut separation = vec![0.0f64; m];
    for (rank, &p) in by_density.iter().enumerate() {
        separation[p] = if rank == 0 {
            (0..m).map(|j| dist[p][j]).fold(0.0, f64::max)
        } else {
            by_density[..rank]
                .iter()
                .map(|&q| dist[p][q])
                .fold(f64::INFINITY, f64::min)
        };
    }

    let score: Vec<f64> = (0..m).map(|p| density[p] * separation[p]).collect();
    let mut by_score: Vec<usize> = (0..m).collect();
    by_score.sort_by(|&a, &b| {
        score[b]
            .partial_cmp(&score[a])
            .unwrap()
            .then(static_set[a].cmp(&static_set[b]))
    });
    let mut centers = by_score[..budget].to_vec();
    centers.sort_unstable();

    let assigned: Vec<usize> = par::map_range(m, |p| {
        if let Some(own) = centers.iter().position(|&c| c == p) {
            return own;
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (ci, &c) in centers.iter().enumerate() {
            if dist[p][c] < best_dist {
                best_dist = dist[p][c];
                best = ci;
            }
        }
        best
    });

    let dim = frame.features.cols();
    let mut clusters: Vec<StaticCluster> = centers
        .iter()
        .map(|&c| StaticCluster {
            center: static_set[c],
            members: Vec::new(),
            merged: Vec::new(),
        })
        .collect();
    for (p, &ci) in assigned.iter().enumerate() {
        clusters[ci].members.push(static_set[p]);
    }
    for cluster in &mut clusters {
        let mut acc = vec![0.0f64; dim];
        for &tok in &cluster.members {
            for (k, v) in frame.features.row(tok).iter().enumerate() {
                acc[k] += *v as f64;
            }
        }
        let count = cluster.members.len() as f64;
        cluster.merged = acc.iter().map(|s| (s / count) as f32).collect();
    }
    Ok(clusters)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Reduce one frame to exactly `frame_budget` tokens and advance the state.
///
/// The first frame of a stream has no predecessor: every token counts as
/// dynamic and the top-budget tokens by saliency are selected. Afterwards
/// the partition/allocate/select/merge path runs. Output ordering is fixed:
/// dynamic picks by ascending source index, then merged clusters by
/// ascending center index.
pub fn reduce_frame(
    frame: &FrameTokens,
    state: CtrState,
    cfg: &StreamConfig,
) -> Result<(RetainedGroup, CtrState)> {
    reduce_frame_with_stats(frame, state, cfg).map(|(group, state, _)| (group, state))
}

/// [`reduce_frame`] plus the partition/budget counts, for reporting.
pub fn reduce_frame_with_stats(
    frame: &FrameTokens,
    state: CtrState,
    cfg: &StreamConfig,
) -> Result<(RetainedGroup, CtrState, ReduceStats)> {
    validate_frame(frame, cfg)?;
    let n = cfg.tokens_per_frame;
    let budget = cfg.frame_budget;

    let (picks, clusters, stats) = match &state.prev {
        None => {
            let all: Vec<usize> = (0..n).collect();
            let picks = select_dynamic(frame, &all, budget)?;
            let stats = ReduceStats {
                static_count: 0,
                dynamic_count: n,
                static_budget: 0,
                dynamic_budget: budget,
            };
            (picks, Vec::new(), stats)
        }
        Some(prev) => {
            let partition = partition_tokens(frame, prev, cfg.similarity_threshold)?;
            let split = allocate_budget(&partition, budget);
            let picks = select_dynamic(frame, &partition.dynamic_set, split.dynamic_budget)?;
            let clusters = if split.static_budget > 0 {
                merge_static(frame, &partition.static_set, split.static_budget)?
            } else {
                Vec::new()
            };
            let stats = ReduceStats {
                static_count: partition.static_set.len(),
                dynamic_count: partition.dynamic_set.len(),
                static_budget: split.static_budget,
                dynamic_budget: split.dynamic_budget,
            };
            (picks, clusters, stats)
        }
    };

    let dim = cfg.feature_dim;
    let mut data = Vec::with_capacity(budget * dim);
    let mut origins = Vec::with_capacity(budget);
    for (idx, token) in &picks {
        data.extend_from_slice(token);
        origins.push(TokenOrigin::SelectedDynamic(*idx));
    }
    for cluster in &clusters {
        data.extend_from_slice(&cluster.merged);
        origins.push(TokenOrigin::MergedStatic(cluster.members.clone()));
    }
    debug_assert_eq!(origins.len(), budget);
    let group = RetainedGroup {
        frame_index: frame.frame_index,
        tokens: Matrix::new(budget, dim, data)?,
        origins,
    };
    let next = CtrState {
        prev: Some(frame.features.clone()),
    };
    Ok((group, next, stats))
}

/// Built-in saliency generator for streams that don't carry scores:
/// column mean of the row-softmax of `F F^T / sqrt(d)`, computed in row
/// chunks so peak extra memory is `O(chunk * N)`, then min-max normalized
/// to `[0, 1]`.
///
/// Rows are accumulated in ascending order no matter the chunk size, so the
/// result is identical for every chunk size. A degenerate spread
/// (max == min) normalizes to all 0.5, which makes downstream top-k fall
/// back to index order.
pub fn compute_saliency_chunked(features: &Matrix, chunk: usize) -> Vec<f32> {
    let n = features.rows();
    if n == 0 {
        return Vec::new();
    }
    let chunk = chunk.max(1);
    let scale = 1.0 / (features.cols() as f64).sqrt();
    let mut column_sum = vec![0.0f64; n];
    let mut start = 0;
    while start < n {
        let rows = chunk.min(n - start);
        let block: Vec<Vec<f64>> = par::map_range(rows, |r| attention_row(features, start + r, scale));
        for row in &block {
            for (j, v) in row.iter().enumerate() {
                column_sum[j] += v;
            }
        }
        start += rows;
    }
    let means: Vec<f64> = column_sum.iter().map(|s| s / n as f64).collect();
    normalize_unit_range(&means)
}

fn attention_row(features: &Matrix, i: usize, scale: f64) -> Vec<f64> {
    let n = features.rows();
    let query = features.row(i);
    let mut scores: Vec<f64> = (0..n)
        .map(|j| dot64(query, features.row(j)) * scale)
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
    scores
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum()
}

fn normalize_unit_range(values: &[f64]) -> Vec<f32> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values
            .iter()
            .map(|v| ((v - min) / (max - min)) as f32)
            .collect()
    } else {
        vec![0.5; values.len()]
    }
}
