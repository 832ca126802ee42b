//! Ensemble clustering: many FCM runs with a randomly drawn cluster count,
//! combined by evidence accumulation.
//!
//! Each run contributes its hard labels to a co-association matrix (fraction
//! of runs in which two samples share a cluster). The consensus partition is
//! an average-linkage dendrogram on `1 − C`, cut where the number of clusters
//! survives the widest range of thresholds.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fcm::{fcm_run, FcmParams, FcmResult};
use crate::linkage::{average_linkage, condensed_index, labels_after};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

const K_STREAM: u64 = 0x6B5F_6472_6177_0001;
const FCM_STREAM: u64 = 0x6663_6D5F_7275_6E02;

/// Default cap on the stacked-view cluster count.
pub const DEFAULT_STACKED_CAP: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleParams {
    pub runs: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub accumulation: Accumulation,
}

/// How runs vote in the co-association matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accumulation {
    /// `1` when the hard labels agree.
    #[default]
    Hard,
    /// `Σ_i μ_ip μ_iq`.
    Fuzzy,
}

impl EnsembleParams {
    pub fn new(runs: usize, k_min: usize, k_max: usize, seed: u64) -> Self {
        Self {
            runs,
            k_min,
            k_max,
            seed,
            accumulation: Accumulation::Hard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Param("ensemble needs at least one run".into()));
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(Error::Param(format!(
                "invalid k range [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }
}

/// Cluster count of run `run_index`, uniform over `k_min..=k_max`.
pub fn draw_k(p: &EnsembleParams, run_index: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed ^ K_STREAM, run_index as u64));
    rng.random_range(p.k_min..=p.k_max)
}

/// Seed of the FCM run `run_index`.
pub fn run_seed(p: &EnsembleParams, run_index: usize) -> u64 {
    derive_seed(p.seed ^ FCM_STREAM, run_index as u64)
}

/// k range for the stacked view: `[max(N_opt, N_SAR), N_opt·N_SAR]`, the
/// upper end capped at `cap` and both ends at least 2.
pub fn stacked_k_bounds(n_opt: usize, n_sar: usize, cap: usize) -> (usize, usize) {
    let cap = cap.max(2);
    let lo = n_opt.max(n_sar).max(2).min(cap);
    let hi = n_opt.saturating_mul(n_sar).min(cap).max(lo);
    (lo, hi)
}

/// Symmetric co-association matrix, stored as its strict upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAssociation {
    n: usize,
    runs: usize,
    votes: Vec<f64>,
}

impl CoAssociation {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            runs: 0,
            votes: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        if p == q {
            return 1.0;
        }
        let (i, j) = if p < q { (p, q) } else { (q, p) };
        self.votes[condensed_index(self.n, i, j)] / self.runs as f64
    }

    /// Adds one hard labelling.
    pub fn add_labels(&mut self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.n {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                self.n
            )));
        }
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        for m in &members {
            for (a, &p) in m.iter().enumerate() {
                for &q in &m[a + 1..] {
                    self.votes[condensed_index(self.n, p, q)] += 1.0;
                }
            }
        }
        self.runs += 1;
        Ok(())
    }

    /// Adds one fuzzy partition as `Σ_i μ_ip μ_iq`.
    pub fn add_memberships<T: Scalar>(&mut self, u: ArrayView2<'_, T>) -> Result<()> {
        if u.ncols() != self.n {
            return Err(Error::Shape(format!(
                "{} membership columns for {} samples",
                u.ncols(),
                self.n
            )));
        }
        let cols: Vec<Vec<f64>> = (0..self.n)
            .map(|j| u.column(j).iter().map(|v| v.as_f64()).collect())
            .collect();
        let mut idx = 0;
        for p in 0..self.n {
            for q in p + 1..self.n {
                self.votes[idx] += cols[p].iter().zip(&cols[q]).map(|(a, b)| a * b).sum::<f64>();
                idx += 1;
            }
        }
        self.runs += 1;
        Ok(())
    }

    /// Condensed dissimilarity `1 − C`.
    pub fn dissimilarity(&self) -> Vec<f64> {
        let r = self.runs.max(1) as f64;
        self.votes.iter().map(|v| (1.0 - v / r).max(0.0)).collect()
    }
}

/// Co-association of a list of hard labellings.
pub fn accumulate(runs: &[Vec<usize>]) -> Result<CoAssociation> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Param("no clustering runs to accumulate".into()))?;
    let mut c = CoAssociation::empty(first.len());
    for labels in runs {
        c.add_labels(labels)?;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusPartition {
    /// Contiguous cluster ids in order of first appearance.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Cluster count drawn for each run (empty when built from a matrix).
    pub draws: Vec<usize>,
    /// Runs that saw all-identical data.
    pub degenerate_runs: usize,
}

impl ConsensusPartition {
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let labels = relabel(&labels);
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        Self {
            labels,
            k,
            draws: Vec::new(),
            degenerate_runs: 0,
        }
    }
}

/// Renumbers labels contiguously by first appearance.
pub fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Average-linkage consensus with the maximum-lifetime cut.
///
/// With merge heights `h_1 ≤ … ≤ h_{N−1}` on dissimilarities in `[0, 1]`,
/// `k` clusters live over `[h_{N−k}, h_{N−k+1})`, taking `h_0 = 0` and
/// `h_N = 1`. The longest-lived `k` wins, ties going to the larger `k`. A cut
/// that leaves only singletons is replaced by a single cluster.
pub fn consensus(c: &CoAssociation) -> ConsensusPartition {
    let n = c.len();
    if n <= 1 {
        return ConsensusPartition::from_labels(vec![0; n]);
    }
    let merges = average_linkage(n, c.dissimilarity());
    let heights: Vec<f64> = merges.iter().map(|m| m.height).collect();
    // breakpoints 0, h_1..h_{N-1}, 1; lifetime of k = N - i is b[i+1] - b[i]
    let mut best_i = 0;
    let mut best_life = f64::NEG_INFINITY;
    for i in 0..n {
        let lo = if i == 0 { 0.0 } else { heights[i - 1] };
        let hi = if i == n - 1 { 1.0 } else { heights[i] };
        let life = hi - lo;
        if life > best_life {
            best_life = life;
            best_i = i;
        }
    }
    let applied = if best_i == 0 { n - 1 } else { best_i };
    ConsensusPartition::from_labels(labels_after(n, &merges, applied))
}

/// Outcome of [`run_ensemble`].
#[derive(Debug, Clone)]
pub struct EnsembleResult<T> {
    pub consensus: ConsensusPartition,
    pub runs: Vec<FcmResult<T>>,
}

/// Draws `k`, runs FCM, accumulates and extracts the consensus.
///
/// `template` supplies everything but `k` and `seed`. Runs execute in
/// parallel; the result does not depend on scheduling.
pub fn run_ensemble<T: Scalar>(
    x: ArrayView2<'_, T>,
    p: &EnsembleParams,
    template: &FcmParams<T>,
) -> Result<EnsembleResult<T>> {
    p.validate()?;
    if x.nrows() < p.k_max {
        return Err(Error::Data(format!(
            "{} samples for k_max = {}",
            x.nrows(),
            p.k_max
        )));
    }
    let runs = (0..p.runs)
        .into_par_iter()
        .map(|r| {
            let mut fp = template.clone();
            fp.k = draw_k(p, r);
            fp.seed = run_seed(p, r);
            fcm_run(x, &fp)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut c = CoAssociation::empty(x.nrows());
    for r in &runs {
        match p.accumulation {
            Accumulation::Hard => c.add_labels(&r.labels)?,
            Accumulation::Fuzzy => c.add_memberships(r.memberships.view())?,
        }
    }
    let mut consensus = consensus(&c);
    consensus.draws = runs.iter().map(|r| r.memberships.clusters()).collect();
    consensus.degenerate_runs = runs.iter().filter(|r| r.degenerate).count();
    Ok(EnsembleResult { consensus, runs })
}
