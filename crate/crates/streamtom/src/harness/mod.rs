//! Verification bed: synthetic stream generation, brute-force oracles, and
//! run metric collection.
//!
//! Streams are drawn on the unit sphere so cosine thresholds have
//! predictable geometry: designated static tokens drift by a small
//! perturbation each frame, dynamic tokens are redrawn fresh. The same
//! spec always reproduces the same bytes.

pub mod oracle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::accounting;
use crate::core::{FrameTokens, Matrix};
use crate::error::Result;
use crate::pipeline::{KvProjector, Pipeline};

/// How per-token saliency scores are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyMode {
    /// Uniform in [0, 1) for every token.
    UniformRandom,
    /// Dynamic tokens draw from [0.5, 1), static tokens from [0, 0.5).
    PeakedOnDynamic,
}

/// Recipe for a reproducible synthetic stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStreamSpec {
    pub seed: u64,
    pub tokens_per_frame: usize,
    pub feature_dim: usize,
    pub frames: usize,
    /// Fraction of token positions designated static (fixed across frames).
    pub static_fraction: f64,
    /// Per-frame perturbation scale for static tokens; 0 copies them
    /// verbatim.
    pub drift_amplitude: f64,
    /// Probability a dynamic token is redrawn each frame; tokens that are
    /// not redrawn keep their previous value verbatim.
    pub dynamic_resample_rate: f64,
    pub saliency_mode: SaliencyMode,
}

impl SyntheticStreamSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens_per_frame == 0 || self.feature_dim == 0 {
            return Err("tokens_per_frame and feature_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.static_fraction) {
            return Err(format!(
                "static_fraction must lie in [0, 1], got {}",
                self.static_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.dynamic_resample_rate) {
            return Err(format!(
                "dynamic_resample_rate must lie in [0, 1], got {}",
                self.dynamic_resample_rate
            ));
        }
        if !(self.drift_amplitude.is_finite() && self.drift_amplitude >= 0.0) {
            return Err(format!(
                "drift_amplitude must be non-negative, got {}",
                self.drift_amplitude
            ));
        }
        Ok(())
    }
}

/// Generate a stream deterministically from `spec`.
///
/// Draw order is fixed (token features in index order, then saliency), so
/// a spec always maps to the same bytes.
pub fn generate_stream(spec: &SyntheticStreamSpec) -> Vec<FrameTokens> {
    spec.validate().expect("invalid stream spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.tokens_per_frame;
    let d = spec.feature_dim;

    let static_count = (spec.static_fraction * n as f64).floor() as usize;
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut rng);
    let mut is_static = vec![false; n];
    for &p in &positions[..static_count.min(n)] {
        is_static[p] = true;
    }

    let mut frames = Vec::with_capacity(spec.frames);
    let mut prev_rows: Vec<Vec<f32>> = Vec::new();
    for t in 0..spec.frames {
        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
        for i in 0..n {
            let row = if t == 0 {
                unit_vector(&mut rng, d)
            } else if is_static[i] {
                drift(&prev_rows[i], spec.drift_amplitude, &mut rng, d)
            } else if rng.gen::<f64>() < spec.dynamic_resample_rate {
                unit_vector(&mut rng, d)
            } else {
                prev_rows[i].clone()
            };
            rows.push(row);
        }
        let saliency: Vec<f32> = (0..n)
            .map(|i| {
                let u: f32 = rng.gen::<f32>();
                match spec.saliency_mode {
                    SaliencyMode::UniformRandom => u,
                    SaliencyMode::PeakedOnDynamic => {
                        if is_static[i] {
                            0.5 * u
                        } else {
                            0.5 + 0.5 * u
                        }
                    }
                }
            })
            .collect();
        let features = Matrix::from_rows(&rows).expect("generator rows are rectangular");
        frames.push(FrameTokens::new(t as u64, features, saliency));
        prev_rows = rows;
    }
    frames
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

fn drift(base: &[f32], amplitude: f64, rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    if amplitude == 0.0 {
        return base.to_vec();
    }
    let noise = unit_vector(rng, d);
    let blended: Vec<f64> = base
        .iter()
        .zip(noise.iter())
        .map(|(b, g)| *b as f64 + amplitude * *g as f64)
        .collect();
    let norm: f64 = blended.iter().map(|x| x * x).sum::<f64>().sqrt();
    blended.iter().map(|x| (x / norm) as f32).collect()
}

/// One metrics row; frame rows fill the structural columns, query rows
/// fill the recall column.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub kind: RowKind,
    pub index: u64,
    pub static_count: Option<usize>,
    pub dynamic_count: Option<usize>,
    pub static_budget: Option<usize>,
    pub dynamic_budget: Option<usize>,
    /// Cumulative store ledger bytes after this event.
    pub stored_bytes: u64,
    pub roundtrip_max_err: Option<f32>,
    pub retrieval_recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Frame,
    Query,
}

pub const METRICS_CSV_HEADER: &str =
    "kind,index,static_count,dynamic_count,static_budget,dynamic_budget,stored_bytes,roundtrip_max_err,retrieval_recall";

/// Render rows as CSV with the fixed header. Floats use fixed scientific /
/// fixed-point formats so output bytes are reproducible.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let kind = match row.kind {
            RowKind::Frame => "frame",
            RowKind::Query => "query",
        };
        let opt = |v: &Option<usize>| v.map_or(String::new(), |x| x.to_string());
        let err = row
            .roundtrip_max_err
            .map_or(String::new(), |e| format!("{e:.6e}"));
        let recall = row
            .retrieval_recall
            .map_or(String::new(), |r| format!("{r:.4}"));
        out.push_str(&format!(
            "{kind},{},{},{},{},{},{},{err},{recall}\n",
            row.index,
            opt(&row.static_count),
            opt(&row.dynamic_count),
            opt(&row.static_budget),
            opt(&row.dynamic_budget),
            row.stored_bytes,
        ));
    }
    out
}

/// How measured store bytes decompose against the analytic model.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerReconciliation {
    /// Packed key+value code bytes per group predicted from bit arithmetic.
    pub code_bytes_per_group: u64,
    /// Scale/offset/rep-key bytes per group.
    pub overhead_bytes_per_group: u64,
    /// Observed ledger delta per appended group.
    pub measured_bytes_per_group: u64,
    pub prefix_bytes: u64,
    /// Overhead share of each stored group.
    pub overhead_fraction: f64,
}

/// Rows plus reconciliation for one full run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub reconciliation: LedgerReconciliation,
}

/// Drive `frames` (and then `queries`) through the pipeline, producing one
/// row per frame and one per query, with recall measured against the
/// full-scan retrieval oracle.
pub fn collect_run_metrics(
    pipeline: &mut Pipeline,
    projector: &KvProjector,
    frames: &[FrameTokens],
    queries: &[Vec<f32>],
) -> Result<RunMetrics> {
    let mut rows = Vec::with_capacity(frames.len() + queries.len());
    for frame in frames {
        let report = pipeline.ingest_frame(frame, projector)?;
        rows.push(MetricsRow {
            kind: RowKind::Frame,
            index: report.frame_index,
            static_count: Some(report.static_count),
            dynamic_count: Some(report.dynamic_count),
            static_budget: Some(report.static_budget),
            dynamic_budget: Some(report.dynamic_budget),
            stored_bytes: pipeline.store().ledger_bytes(),
            roundtrip_max_err: Some(report.roundtrip_max_err),
            retrieval_recall: None,
        });
    }
    for (qi, query) in queries.iter().enumerate() {
        let (_, report) = pipeline.answer_query(query)?;
        let expected = oracle::oracle_retrieval(
            pipeline.store(),
            query,
            pipeline.config().retrieval_top_k,
        );
        let hits = report
            .retrieved
            .iter()
            .filter(|i| expected.contains(i))
            .count();
        rows.push(MetricsRow {
            kind: RowKind::Query,
            index: qi as u64,
            static_count: None,
            dynamic_count: None,
            static_budget: None,
            dynamic_budget: None,
            stored_bytes: pipeline.store().ledger_bytes(),
            roundtrip_max_err: None,
            retrieval_recall: Some(hits as f64 / expected.len().max(1) as f64),
        });
    }

    let store = pipeline.store();
    let code_bytes_per_group = accounting::packed_kv_code_bytes(
        store.heads() as u64,
        store.frame_budget() as u64,
        store.head_dim() as u64,
        store.bits() as u64,
    );
    let overhead_bytes_per_group =
        accounting::group_overhead_bytes(store.heads() as u64, store.head_dim() as u64);
    let prefix_bytes = store.prefix().ledger_bytes();
    let measured_bytes_per_group = if store.is_empty() {
        0
    } else {
        (store.ledger_bytes() - prefix_bytes) / store.len() as u64
    };
    let reconciliation = LedgerReconciliation {
        code_bytes_per_group,
        overhead_bytes_per_group,
        measured_bytes_per_group,
        prefix_bytes,
        overhead_fraction: overhead_bytes_per_group as f64
            / (code_bytes_per_group + overhead_bytes_per_group) as f64,
    };
    Ok(RunMetrics {
        rows,
        reconciliation,
    })
}
