//! Brute-force scalar oracles, reimplemented straight-line with no helpers
//! shared with the production modules. Used by differential tests only —
//! if these and the real implementations ever drift, the tests say so.

use crate::core::{FrameTokens, Matrix, RetainedGroup, StreamConfig, TokenOrigin};
use crate::oqm::MemoryStore;

/// Scalar reimplementation of the whole per-frame reduction: partition,
/// proportional budget, saliency selection, density-peaks merge. Identical
/// contract and pinned conventions as the production path.
pub fn oracle_ctr(frame: &FrameTokens, prev: Option<&Matrix>, cfg: &StreamConfig) -> RetainedGroup {
    let n = cfg.tokens_per_frame;
    let d = cfg.feature_dim;
    let budget = cfg.frame_budget;
    assert_eq!(frame.features.rows(), n);
    assert_eq!(frame.features.cols(), d);

    let (static_set, dynamic_set): (Vec<usize>, Vec<usize>) = match prev {
        None => (Vec::new(), (0..n).collect()),
        Some(prev) => {
            let mut st = Vec::new();
            let mut dy = Vec::new();
            for i in 0..n {
                if scalar_cosine(frame.features.row(i), prev.row(i)) > cfg.similarity_threshold {
                    st.push(i);
                } else {
                    dy.push(i);
                }
            }
            (st, dy)
        }
    };

    let static_budget = if prev.is_none() {
        0
    } else {
        budget * static_set.len() / n
    };
    let dynamic_budget = budget - static_budget;

    // dynamic picks: repeatedly take the best remaining (saliency, -index)
    let mut remaining: Vec<usize> = dynamic_set.clone();
    let mut picked: Vec<usize> = Vec::with_capacity(dynamic_budget);
    for _ in 0..dynamic_budget {
        let mut best = 0;
        for (pos, &cand) in remaining.iter().enumerate() {
            let better = frame.saliency[cand] > frame.saliency[remaining[best]]
                || (frame.saliency[cand] == frame.saliency[remaining[best]]
                    && cand < remaining[best]);
            if better {
                best = pos;
            }
        }
        picked.push(remaining.remove(best));
    }
    picked.sort_unstable();

    let clusters = if static_budget > 0 {
        scalar_density_peaks(frame, &static_set, static_budget)
    } else {
        Vec::new()
    };

    let mut data = Vec::with_capacity(budget * d);
    let mut origins = Vec::with_capacity(budget);
    for &i in &picked {
        data.extend_from_slice(frame.features.row(i));
        origins.push(TokenOrigin::SelectedDynamic(i));
    }
    for (members, merged) in &clusters {
        data.extend_from_slice(merged);
        origins.push(TokenOrigin::MergedStatic(members.clone()));
    }
    RetainedGroup {
        frame_index: frame.frame_index,
        tokens: Matrix::new(budget, d, data).expect("oracle output shape"),
        origins,
    }
}

/// Full-scan retrieval: score every rep key, stable-sort descending, take
/// the top `k`. Ties resolve to the earlier frame via sort stability.
pub fn oracle_retrieval(store: &MemoryStore, query: &[f32], k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f32)> = store
        .groups()
        .iter()
        .enumerate()
        .map(|(i, g)| (i, scalar_cosine(query, &g.rep_key)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored.truncate(k.min(store.len()));
    scored.into_iter().map(|(i, _)| i).collect()
}

fn scalar_cosine(a: &[f32], b: &[f32]) -> f32 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    let na = na.sqrt();
    let nb = nb.sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0) as f32
}

/// Exhaustive-assignment density peaks on cosine distance: gaussian density
/// with median cutoff, separation against the nearest denser point (density
/// ties rank the lower token index as denser), centers by density times
/// separation, members assigned to the nearest center with the center
/// itself always anchoring its own cluster.
#[allow(clippy::needless_range_loop)]
fn scalar_density_peaks(
    frame: &FrameTokens,
    static_set: &[usize],
    budget: usize,
) -> Vec<(Vec<usize>, Vec<f32>)> {
    let m = static_set.len();
    assert!(budget >= 1 && budget <= m);

    let mut dist = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                dist[i][j] = 1.0
                    - scalar_cosine(
                        frame.features.row(static_set[i]),
                        frame.features.row(static_set[j]),
                    ) as f64;
            }
        }
    }

    let mut pairs = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push(dist[i][j]);
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cutoff = if pairs.is_empty() {
        0.0
    } else if pairs.len() % 2 == 1 {
        pairs[pairs.len() / 2]
    } else {
        0.5 * (pairs[pairs.len() / 2 - 1] + pairs[pairs.len() / 2])
    };
    let cutoff = if cutoff < 1e-12 { 1e-12 } else { cutoff };

    let mut density = vec![0.0f64; m];
    for i in 0..m {
        for j in 0..m {
            if j != i {
                let r = dist[i][j] / cutoff;
                density[i] += (-r * r).exp();
            }
        }
    }

    // denser-than relation: higher density, or equal density at lower index
    let denser = |a: usize, b: usize| {
        density[a] > density[b] || (density[a] == density[b] && static_set[a] < static_set[b])
    };
    let mut separation = vec![0.0f64; m];
    for p in 0..m {
        let mut nearest = f64::INFINITY;
        let mut any_denser = false;
        for q in 0..m {
            if q != p && denser(q, p) {
                any_denser = true;
                if dist[p][q] < nearest {
                    nearest = dist[p][q];
                }
            }
        }
        separation[p] = if any_denser {
            nearest
        } else {
            let mut max = 0.0;
            for j in 0..m {
                if dist[p][j] > max {
                    max = dist[p][j];
                }
            }
            max
        };
    }

    let mut candidates: Vec<usize> = (0..m).collect();
    candidates.sort_by(|&a, &b| {
        let ga = density[a] * separation[a];
        let gb = density[b] * separation[b];
        gb.partial_cmp(&ga)
            .unwrap()
            .then(static_set[a].cmp(&static_set[b]))
    });
    let mut centers = candidates[..budget].to_vec();
    centers.sort_unstable();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); budget];
    for p in 0..m {
        let slot = if let Some(own) = centers.iter().position(|&c| c == p) {
            own
        } else {
            let mut best = 0;
            for ci in 1..budget {
                if dist[p][centers[ci]] < dist[p][centers[best]] {
                    best = ci;
                }
            }
            best
        };
        members[slot].push(static_set[p]);
    }

    let d = frame.features.cols();
    members
        .into_iter()
        .map(|group| {
            let mut acc = vec![0.0f64; d];
            for &tok in &group {
                for k in 0..d {
                    acc[k] += frame.features.get(tok, k) as f64;
                }
            }
            let merged: Vec<f32> = acc
                .iter()
                .map(|s| (s / group.len() as f64) as f32)
                .collect();
            (group, merged)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctr::{reduce_frame, CtrState};
    use crate::harness::{generate_stream, SaliencyMode, SyntheticStreamSpec};

    #[test]
    fn oracle_agrees_on_constant_pair() {
        let cfg = StreamConfig {
            tokens_per_frame: 10,
            feature_dim: 6,
            frame_budget: 4,
            retrieval_top_k: 1,
            ..StreamConfig::default()
        };
        let spec = SyntheticStreamSpec {
            seed: 5,
            tokens_per_frame: 10,
            feature_dim: 6,
            frames: 2,
            static_fraction: 1.0,
            drift_amplitude: 0.0,
            dynamic_resample_rate: 0.0,
            saliency_mode: SaliencyMode::UniformRandom,
        };
        let frames = generate_stream(&spec);
        let (_, state) = reduce_frame(&frames[0], CtrState::new(), &cfg).unwrap();
        let (group, _) = reduce_frame(&frames[1], state, &cfg).unwrap();
        let expected = oracle_ctr(&frames[1], Some(&frames[0].features), &cfg);
        assert_eq!(group, expected);
    }

    #[test]
    fn oracle_agrees_on_mixed_stream() {
        // 60/40 static split at N=10, G=5 -> 3 merged + 2 selected
        let cfg = StreamConfig {
            tokens_per_frame: 10,
            feature_dim: 8,
            frame_budget: 5,
            retrieval_top_k: 1,
            ..StreamConfig::default()
        };
        let spec = SyntheticStreamSpec {
            seed: 61,
            tokens_per_frame: 10,
            feature_dim: 8,
            frames: 6,
            static_fraction: 0.6,
            drift_amplitude: 1e-3,
            dynamic_resample_rate: 1.0,
            saliency_mode: SaliencyMode::PeakedOnDynamic,
        };
        let frames = generate_stream(&spec);
        let mut state = CtrState::new();
        for (t, frame) in frames.iter().enumerate() {
            let prev = if t == 0 {
                None
            } else {
                Some(&frames[t - 1].features)
            };
            let expected = oracle_ctr(frame, prev, &cfg);
            let (group, next) = reduce_frame(frame, state, &cfg).unwrap();
            if t >= 1 {
                let merged = group
                    .origins
                    .iter()
                    .filter(|o| matches!(o, TokenOrigin::MergedStatic(_)))
                    .count();
                assert_eq!(merged, 3, "frame {t}");
            }
            assert_eq!(group, expected, "frame {t}");
            state = next;
        }
    }
}
