//! Tournament-agnostic baselines on the aggregated counts: a single BTL
//! skill vector fitted by maximum likelihood, and a mixture of BTL models
//! fitted by EM.
//!
//! In the mixture every individual game draws its own latent component, so
//! the likelihood of the aggregated data is
//! `sum_{i != j} b_ij log(sum_k pi_k p_k(i beats j))`.

use log::warn;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComparisonTensor;
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCounts {
    /// `counts[[i, j]]` = total wins of `i` over `j` across tournaments.
    pub counts: Array2<u32>,
    pub players: Vec<String>,
}

impl AggregatedCounts {
    pub fn new(counts: Array2<u32>, players: Vec<String>) -> Result<Self> {
        let (n, n2) = counts.dim();
        if n != n2 || players.len() != n {
            return Err(Error::Shape(format!("{n}x{n2} counts with {} player labels", players.len())));
        }
        if (0..n).any(|i| counts[[i, i]] != 0) {
            return Err(Error::Shape("aggregated counts must have a zero diagonal".into()));
        }
        Ok(Self { counts, players })
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    /// `(winner, loser, wins)` for every directed outcome with `wins > 0`, row-major.
    fn outcomes(&self) -> Vec<(usize, usize, f64)> {
        self.counts.indexed_iter().filter(|(_, &b)| b > 0).map(|((i, j), &b)| (i, j, f64::from(b))).collect()
    }

    /// Connected components of the undirected "have met" graph, as player indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_players();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for ((i, j), &b) in self.counts.indexed_iter() {
            if b > 0 {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let r = root(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(i);
        }
        groups
    }
}

/// Sums the per-tournament counts.
pub fn aggregate(data: &ComparisonTensor) -> AggregatedCounts {
    let n = data.num_players();
    let counts = data.counts().sum_axis(ndarray::Axis(0));
    debug_assert_eq!(counts.dim(), (n, n));
    AggregatedCounts { counts, players: data.players().to_vec() }
}

fn win_prob(si: f64, sj: f64) -> f64 {
    let s = si + sj;
    if s > 0.0 {
        si / s
    } else {
        0.5
    }
}

/// Log-likelihood of the aggregated data under a single skill vector.
pub fn btl_log_likelihood(agg: &AggregatedCounts, skills: &[f64]) -> f64 {
    agg.outcomes().into_iter().map(|(i, j, b)| b * win_prob(skills[i], skills[j]).ln()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtlFit {
    /// Normalized to sum to one.
    pub skills: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One MM step of the weighted BTL likelihood. `games[[i, j]]` is symmetric.
fn btl_mm_step(wins: &[f64], games: &Array2<f64>, skills: &[f64]) -> Vec<f64> {
    let n = skills.len();
    let mut next = skills.to_vec();
    for i in 0..n {
        let mut den = 0.0;
        for j in 0..n {
            let g = games[[i, j]];
            if g > 0.0 {
                den += g / (skills[i] + skills[j]);
            }
        }
        if den > 0.0 && den.is_finite() {
            next[i] = wins[i] / den;
        }
    }
    let total: f64 = next.iter().sum();
    if total > 0.0 {
        next.iter_mut().for_each(|s| *s /= total);
    }
    next
}

fn max_abs_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Maximum-likelihood BTL skills via the standard MM iteration, starting
/// from uniform skills and stopping when no skill moves by `tolerance`.
pub fn btl_mle(agg: &AggregatedCounts, tolerance: f64, max_iterations: usize) -> Result<BtlFit> {
    let n = agg.num_players();
    if n == 0 {
        return Err(Error::Shape("no players".into()));
    }
    let comps = agg.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected {
            components: comps.iter().map(|c| c.iter().map(|&i| agg.players[i].clone()).collect()).collect(),
        });
    }
    let wins: Vec<f64> = (0..n).map(|i| agg.counts.row(i).iter().map(|&b| f64::from(b)).sum()).collect();
    for (i, &w) in wins.iter().enumerate() {
        if w == 0.0 && n > 1 {
            warn!("player {} never won; their BTL skill is zero", agg.players[i]);
        }
    }
    let games = Array2::from_shape_fn((n, n), |(i, j)| f64::from(agg.counts[[i, j]] + agg.counts[[j, i]]));
    let mut skills = vec![1.0 / n as f64; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        let next = btl_mm_step(&wins, &games, &skills);
        iterations += 1;
        let change = max_abs_change(&next, &skills);
        skills = next;
        if change < tolerance {
            converged = true;
            break;
        }
    }
    Ok(BtlFit { log_likelihood: btl_log_likelihood(agg, &skills), skills, iterations, converged })
}

/// Weight below which a component is considered collapsed and frozen.
pub const COLLAPSE_WEIGHT: f64 = 1e-10;
/// A component is flagged degenerate when one player holds this share of its mass.
pub const DEGENERATE_SHARE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureBtlModel {
    /// One skill vector per component, each summing to one.
    pub components: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood at the start and after every EM iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components whose weight fell below [`COLLAPSE_WEIGHT`].
    pub collapsed: Vec<usize>,
    /// Components dominated by a single player.
    pub degenerate: Vec<usize>,
}

impl MixtureBtlModel {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    /// Win probability of `i` over `j` under the mixture.
    pub fn win_prob(&self, i: usize, j: usize) -> f64 {
        self.components.iter().zip(&self.weights).map(|(c, &pi)| pi * win_prob(c[i], c[j])).sum()
    }
}

/// Log-likelihood of the aggregated data under a mixture.
pub fn mixture_log_likelihood(agg: &AggregatedCounts, components: &[Vec<f64>], weights: &[f64]) -> f64 {
    agg.outcomes()
        .into_iter()
        .map(|(i, j, b)| {
            let p: f64 = components.iter().zip(weights).map(|(c, &pi)| pi * win_prob(c[i], c[j])).sum();
            b * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub num_components: usize,
    pub num_restarts: usize,
    pub seed: u64,
    /// Stop once the log-likelihood changes by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// MM steps per component in each M-step.
    pub inner_iterations: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            num_components: 2,
            num_restarts: 100,
            seed: 0,
            tolerance: 1e-8,
            max_iterations: 5000,
            inner_iterations: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub best: MixtureBtlModel,
    pub best_index: usize,
    /// Every restart, in restart order.
    pub runs: Vec<MixtureBtlModel>,
}

impl MixtureFit {
    pub fn all_log_likelihoods(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.log_likelihood).collect()
    }
}

pub fn mixture_btl_em(
    agg: &AggregatedCounts,
    num_components: usize,
    num_restarts: usize,
    seed: u64,
    tolerance: f64,
) -> Result<MixtureFit> {
    let config = EmConfig { num_components, num_restarts, seed, tolerance, ..EmConfig::default() };
    mixture_btl_em_with(agg, &config, Execution::default())
}

pub fn mixture_btl_em_with(agg: &AggregatedCounts, config: &EmConfig, execution: Execution) -> Result<MixtureFit> {
    if config.num_components == 0 || config.num_restarts == 0 {
        return Err(Error::InvalidConfig("need at least one component and one restart".into()));
    }
    if !(config.tolerance > 0.0) {
        return Err(Error::InvalidConfig("EM tolerance must be positive".into()));
    }
    let base = btl_mle(agg, 1e-13, 100_000)?;
    if config.num_components == 1 {
        let model = MixtureBtlModel {
            components: vec![base.skills.clone()],
            weights: vec![1.0],
            log_likelihood: base.log_likelihood,
            trace: vec![base.log_likelihood],
            iterations: 0,
            converged: base.converged,
            collapsed: Vec::new(),
            degenerate: degenerate_components(std::slice::from_ref(&base.skills)),
        };
        return Ok(MixtureFit { best: model.clone(), best_index: 0, runs: vec![model; config.num_restarts] });
    }
    let runs = map_indexed(config.num_restarts, execution, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ r as u64);
        let (components, weights) = initial_mixture(&base.skills, config.num_components, &mut rng);
        run_em(agg, components, weights, config)
    });
    let best_index =
        runs.iter()
            .enumerate()
            .fold(0, |best, (r, m)| if m.log_likelihood > runs[best].log_likelihood { r } else { best });
    Ok(MixtureFit { best: runs[best_index].clone(), best_index, runs })
}

/// Perturbed copies of the BTL fit (log-normal factors) and Dirichlet(1, ..., 1) weights.
fn initial_mixture(base: &[f64], k: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let components = (0..k)
        .map(|_| {
            let mut c: Vec<f64> = base
                .iter()
                .map(|&s| {
                    let z: f64 = StandardNormal.sample(rng);
                    s * z.exp()
                })
                .collect();
            normalize(&mut c);
            c
        })
        .collect();
    let mut weights: Vec<f64> = (0..k)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e.max(f64::MIN_POSITIVE)
        })
        .collect();
    normalize(&mut weights);
    (components, weights)
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

fn degenerate_components(components: &[Vec<f64>]) -> Vec<usize> {
    components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.len() > 1 && c.iter().cloned().fold(0.0, f64::max) >= DEGENERATE_SHARE)
        .map(|(k, _)| k)
        .collect()
}

fn run_em(
    agg: &AggregatedCounts,
    mut components: Vec<Vec<f64>>,
    mut weights: Vec<f64>,
    config: &EmConfig,
) -> MixtureBtlModel {
    let n = agg.num_players();
    let k = weights.len();
    let outcomes = agg.outcomes();
    let total: f64 = outcomes.iter().map(|o| o.2).sum();
    let mut ll = mixture_log_likelihood(agg, &components, &weights);
    let mut trace = vec![ll];
    let mut collapsed = vec![false; k];
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = vec![0.0; k];

    while iterations < config.max_iterations {
        iterations += 1;
        // E-step: responsibilities per directed outcome, accumulated as
        // weighted wins and weighted games for each component.
        let mut wins = vec![vec![0.0; n]; k];
        let mut games = vec![Array2::<f64>::zeros((n, n)); k];
        let mut mass = vec![0.0; k];
        for &(i, j, b) in &outcomes {
            let mut norm = 0.0;
            for c in 0..k {
                resp[c] = weights[c] * win_prob(components[c][i], components[c][j]);
                norm += resp[c];
            }
            for c in 0..k {
                let r = if norm > 0.0 { b * resp[c] / norm } else { 0.0 };
                wins[c][i] += r;
                games[c][[i, j]] += r;
                games[c][[j, i]] += r;
                mass[c] += r;
            }
        }
        // M-step
        for c in 0..k {
            weights[c] = mass[c] / total;
            if weights[c] < COLLAPSE_WEIGHT {
                if !collapsed[c] {
                    warn!("mixture component {c} collapsed (weight {:e}); freezing it", weights[c]);
                    collapsed[c] = true;
                }
                continue;
            }
            for _ in 0..config.inner_iterations {
                components[c] = btl_mm_step(&wins[c], &games[c], &components[c]);
            }
        }
        let next = mixture_log_likelihood(agg, &components, &weights);
        trace.push(next);
        let change = (next - ll).abs();
        ll = next;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    MixtureBtlModel {
        degenerate: degenerate_components(&components),
        components,
        weights,
        log_likelihood: ll,
        trace,
        iterations,
        converged,
        collapsed: collapsed.iter().enumerate().filter_map(|(c, &x)| x.then_some(c)).collect(),
    }
}

/// Largest parameter difference between two mixtures after the best
/// matching of their components (max over skills and weights).
pub fn mixture_distance(a: &MixtureBtlModel, b: &MixtureBtlModel) -> f64 {
    let k = a.num_components();
    assert_eq!(k, b.num_components(), "mixtures must have the same number of components");
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    loop {
        let d = (0..k)
            .map(|c| {
                let (x, y) = (&a.components[c], &b.components[perm[c]]);
                max_abs_change(x, y).max((a.weights[c] - b.weights[perm[c]]).abs())
            })
            .fold(0.0, f64::max);
        best = best.min(d);
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    /// Restarts within `window` of the best log-likelihood.
    pub near_optimal: usize,
    pub window: f64,
    /// Largest pairwise [`mixture_distance`] among them.
    pub max_distance: f64,
    /// Spread of all final log-likelihoods.
    pub min_log_likelihood: f64,
    pub max_log_likelihood: f64,
}

pub fn dispersion(fit: &MixtureFit, window: f64) -> DispersionReport {
    let best = fit.best.log_likelihood;
    let near: Vec<&MixtureBtlModel> = fit.runs.iter().filter(|r| r.log_likelihood >= best - window).collect();
    let mut max_distance = 0.0_f64;
    for (x, a) in near.iter().enumerate() {
        for b in &near[x + 1..] {
            max_distance = max_distance.max(mixture_distance(a, b));
        }
    }
    let lls = fit.all_log_likelihoods();
    DispersionReport {
        near_optimal: near.len(),
        window,
        max_distance,
        min_log_likelihood: lls.iter().cloned().fold(f64::INFINITY, f64::min),
        max_log_likelihood: lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn agg(counts: Array2<u32>) -> AggregatedCounts {
        let n = counts.nrows();
        AggregatedCounts::new(counts, (0..n).map(|i| format!("P{i}")).collect()).unwrap()
    }

    #[test]
    fn aggregate_sums_tournaments() {
        let mut c = Array3::zeros((2, 2, 2));
        c[[0, 0, 1]] = 2;
        c[[1, 0, 1]] = 3;
        c[[1, 1, 0]] = 1;
        let t = ComparisonTensor::from_counts(c).unwrap();
        let a = aggregate(&t);
        assert_eq!(a.counts, array![[0, 5], [1, 0]]);

        let mut c = Array3::zeros((1, 2, 2));
        c[[0, 0, 1]] = 4;
        let t = ComparisonTensor::from_counts(c.clone()).unwrap();
        assert_eq!(aggregate(&t).counts, c.index_axis(ndarray::Axis(0), 0).to_owned());
    }

    #[test]
    fn two_player_closed_form() {
        let fit = btl_mle(&agg(array![[0, 3], [1, 0]]), 1e-12, 10_000).unwrap();
        assert!((fit.skills[0] - 0.75).abs() < 1e-9);
        assert!((fit.skills[1] - 0.25).abs() < 1e-9);
        let expected = 3.0 * 0.75f64.ln() + 0.25f64.ln();
        assert!((fit.log_likelihood - expected).abs() < 1e-9);
    }

    #[test]
    fn symmetric_cycle_is_uniform() {
        let fit = btl_mle(&agg(array![[0, 1, 1], [1, 0, 1], [1, 1, 0]]), 1e-12, 10_000).unwrap();
        for s in fit.skills {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = btl_mle(&agg(array![[0, 1, 0, 0], [2, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]), 1e-9, 100).unwrap_err();
        match err {
            Error::Disconnected { components } => {
                assert_eq!(components, vec![vec!["P0", "P1"], vec!["P2", "P3"]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn winless_player_gets_zero_skill() {
        let fit = btl_mle(&agg(array![[0, 2, 1], [1, 0, 3], [0, 0, 0]]), 1e-12, 10_000).unwrap();
        assert_eq!(fit.skills[2], 0.0);
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn mle_is_stationary() {
        let a = agg(array![[0, 4, 2, 1], [3, 0, 5, 2], [1, 2, 0, 6], [2, 1, 3, 0]]);
        let fit = btl_mle(&a, 1e-14, 100_000).unwrap();
        let s = &fit.skills;
        for i in 0..4 {
            let wins: f64 = (0..4).map(|j| f64::from(a.counts[[i, j]])).sum();
            let g: f64 = wins / s[i]
                - (0..4)
                    .filter(|&j| j != i)
                    .map(|j| f64::from(a.counts[[i, j]] + a.counts[[j, i]]) / (s[i] + s[j]))
                    .sum::<f64>();
            // gradient in the normalized coordinates, scaled by the skill
            assert!((g * s[i]).abs() < 1e-6, "player {i}: {g}");
        }
    }

    #[test]
    fn single_component_mixture_is_btl() {
        let a = agg(array![[0, 4, 2], [3, 0, 5], [1, 2, 0]]);
        let btl = btl_mle(&a, 1e-13, 100_000).unwrap();
        let mix = mixture_btl_em(&a, 1, 3, 5, 1e-8).unwrap();
        assert_eq!(mix.runs.len(), 3);
        for (x, y) in mix.best.components[0].iter().zip(&btl.skills) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!((mix.best.log_likelihood - btl.log_likelihood).abs() < 1e-8);
    }

    #[test]
    fn em_trace_is_monotone_and_weights_sum_to_one() {
        let a = agg(array![[0, 7, 2, 9, 1], [3, 0, 8, 2, 6], [9, 1, 0, 4, 4], [2, 7, 5, 0, 3], [8, 2, 6, 1, 0]]);
        let fit = mixture_btl_em(&a, 2, 8, 3, 1e-10).unwrap();
        for run in &fit.runs {
            assert!((run.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for w in run.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
            }
            for c in &run.components {
                assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(fit.runs.iter().all(|r| r.log_likelihood <= fit.best.log_likelihood));
        let d = dispersion(&fit, 1.0);
        assert!(d.near_optimal >= 1);
        assert!(d.max_log_likelihood == fit.best.log_likelihood);
    }

    #[test]
    fn em_is_deterministic_across_execution_modes() {
        let a = agg(array![[0, 7, 2, 9], [3, 0, 8, 2], [9, 1, 0, 4], [2, 7, 5, 0]]);
        let cfg = EmConfig { num_restarts: 6, seed: 9, ..EmConfig::default() };
        let s = mixture_btl_em_with(&a, &cfg, Execution::Sequential).unwrap();
        let p = mixture_btl_em_with(&a, &cfg, Execution::Parallel).unwrap();
        assert_eq!(s.all_log_likelihoods(), p.all_log_likelihoods());
        assert_eq!(s.best, p.best);
    }

    #[test]
    fn permutation_invariant_distance() {
        let m = |c: Vec<Vec<f64>>, w: Vec<f64>| MixtureBtlModel {
            components: c,
            weights: w,
            log_likelihood: 0.0,
            trace: vec![],
            iterations: 0,
            converged: true,
            collapsed: vec![],
            degenerate: vec![],
        };
        let a = m(vec![vec![0.2, 0.8], vec![0.6, 0.4]], vec![0.3, 0.7]);
        let b = m(vec![vec![0.6, 0.4], vec![0.2, 0.8]], vec![0.7, 0.3]);
        assert_eq!(mixture_distance(&a, &b), 0.0);
    }
}
