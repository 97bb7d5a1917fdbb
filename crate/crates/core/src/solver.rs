//! Majorization-minimization for the BTL-NMF objective.
//!
//! One iteration updates `W` with `H` held fixed, then `H` with the fresh `W`,
//! truncates negative `H` entries to zero, and renormalizes. Every step is
//! non-increasing in `f_eps`, including the truncation and the rescaling.

use log::warn;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{stationarity_residual, DEFAULT_POSITIVITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::{
    check_factor_dims, effective_skills, lambda_matrix, neg_log_likelihood, ComparisonTensor, FactorPair, FitResult,
    Normalization, SolverConfig, MONOTONE_SLACK,
};
use crate::parallel::{map_indexed, Execution};

/// Multiplicative update of `W` with `H` fixed.
///
/// Rows of tournaments without any recorded match are returned unchanged.
pub fn update_w(data: &ComparisonTensor, factors: &FactorPair, epsilon: f64) -> Result<Array2<f64>> {
    check_factor_dims(data, factors)?;
    let (w, h) = (factors.w(), factors.h());
    let k = factors.rank();
    let a = effective_skills(w, h, epsilon);
    let mut out = w.clone();
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for t in 0..data.num_tournaments() {
        let pairs = data.pairs(t);
        if pairs.is_empty() {
            continue;
        }
        num.fill(0.0);
        den.fill(0.0);
        for pair in pairs {
            for (win, lose, b) in pair.directed() {
                let b = f64::from(b);
                let own = b / a[[t, win]];
                let both = b / (a[[t, win]] + a[[t, lose]]);
                for f in 0..k {
                    num[f] += own * w[[t, f]] * (h[[f, win]] + epsilon);
                    den[f] += both * (h[[f, win]] + h[[f, lose]] + 2.0 * epsilon);
                }
            }
        }
        for f in 0..k {
            let v = num[f] / den[f];
            if !(den[f] > 0.0) || !v.is_finite() {
                return Err(Error::DegenerateW { tournament: t, factor: f });
            }
            out[[t, f]] = v;
        }
    }
    Ok(out)
}

/// Multiplicative update of `H` against the freshly updated `w_next`, before
/// truncation. Entries may be negative because of the `- eps` shift.
///
/// Columns of players that never played are set to zero.
pub fn update_h_raw(
    data: &ComparisonTensor,
    w_next: &Array2<f64>,
    factors: &FactorPair,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_factor_dims(data, factors)?;
    if w_next.dim() != factors.w().dim() {
        return Err(Error::Shape(format!("updated W is {:?}, expected {:?}", w_next.dim(), factors.w().dim())));
    }
    let h = factors.h();
    let (k, n) = h.dim();
    let a = effective_skills(w_next, h, epsilon);
    let mut num = Array2::<f64>::zeros((k, n));
    let mut den = Array2::<f64>::zeros((k, n));
    let mut active = vec![false; n];
    for t in 0..data.num_tournaments() {
        for pair in data.pairs(t) {
            let (i, j) = (pair.i, pair.j);
            active[i] = true;
            active[j] = true;
            let (ai, aj) = (a[[t, i]], a[[t, j]]);
            let games = f64::from(pair.games()) / (ai + aj);
            let wins_i = f64::from(pair.ij) / ai;
            let wins_j = f64::from(pair.ji) / aj;
            for f in 0..k {
                let wt = w_next[[t, f]];
                den[[f, i]] += games * wt;
                den[[f, j]] += games * wt;
                if pair.ij > 0 {
                    num[[f, i]] += wins_i * wt * (h[[f, i]] + epsilon);
                }
                if pair.ji > 0 {
                    num[[f, j]] += wins_j * wt * (h[[f, j]] + epsilon);
                }
            }
        }
    }
    let mut out = Array2::zeros((k, n));
    for f in 0..k {
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let v = num[[f, i]] / den[[f, i]];
            if !(den[[f, i]] > 0.0) || !v.is_finite() {
                return Err(Error::DegenerateH { factor: f, player: i });
            }
            out[[f, i]] = v - epsilon;
        }
    }
    Ok(out)
}

/// [`update_h_raw`] followed by truncation of negative entries to zero.
///
/// An entry that is already negative (normalization can leave entries in
/// `[-eps, 0)`) is truncated at its current value instead, so the step never
/// moves off the point the majorizer was built at in the uphill direction.
/// For nonnegative `H` this is plain truncation at zero.
pub fn update_h(
    data: &ComparisonTensor,
    w_next: &Array2<f64>,
    factors: &FactorPair,
    epsilon: f64,
) -> Result<Array2<f64>> {
    let mut h = update_h_raw(data, w_next, factors, epsilon)?;
    h.zip_mut_with(factors.h(), |v, &prev| *v = v.max(prev.min(0.0)));
    Ok(h)
}

/// Scales rows of `W` to sum to one and rescales `H` so that `H + eps` keeps
/// every win probability. The returned `H` may hold entries in `[-eps, 0)`.
pub fn normalize_row(factors: &FactorPair, epsilon: f64) -> Result<FactorPair> {
    let (w, h) = (factors.w(), factors.h());
    let (k, n) = h.dim();
    let mut w_out = w.clone();
    for (t, mut row) in w_out.rows_mut().into_iter().enumerate() {
        let r: f64 = row.sum();
        if !(r > 0.0) {
            return Err(Error::ZeroRowSum { tournament: t });
        }
        row.mapv_inplace(|v| v / r);
    }
    let kn_eps = (k * n) as f64 * epsilon;
    let alpha = (h.sum() + kn_eps) / (1.0 + kn_eps);
    let h_out = h.mapv(|v| (v + (1.0 - alpha) * epsilon) / alpha);
    FactorPair::from_parts(w_out, h_out)
}

/// Scales columns of `W` to sum to one and `H` to grand sum one, keeping
/// every win probability. The returned `H` may hold entries in `[-eps, 0)`.
pub fn normalize_column(factors: &FactorPair, epsilon: f64) -> Result<FactorPair> {
    let (w, h) = (factors.w(), factors.h());
    let (k, n) = h.dim();
    let mut w_out = w.clone();
    let mut h_hat = h.clone();
    for f in 0..k {
        let c: f64 = w.column(f).sum();
        if !(c > 0.0) {
            return Err(Error::ZeroColumnSum { factor: f });
        }
        w_out.column_mut(f).mapv_inplace(|v| v / c);
        h_hat.row_mut(f).mapv_inplace(|v| v * c + epsilon * (c - 1.0));
    }
    let kn_eps = (k * n) as f64 * epsilon;
    let beta = (h_hat.sum() + kn_eps) / (1.0 + kn_eps);
    let h_out = h_hat.mapv(|v| (v + (1.0 - beta) * epsilon) / beta);
    FactorPair::from_parts(w_out, h_out)
}

/// Draws `W` and `H` with i.i.d. entries uniform on `(0, 1]`, `W` first, row-major.
pub fn random_init(num_tournaments: usize, num_players: usize, rank: usize, seed: u64) -> FactorPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_| 1.0 - rng.random::<f64>();
    let w = Array2::from_shape_fn((num_tournaments, rank), &mut draw);
    let h = Array2::from_shape_fn((rank, num_players), &mut draw);
    FactorPair::from_parts(w, h).expect("shapes agree by construction")
}

/// Snapshot after an iteration (or the initial point, with `iteration == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub factors: FactorPair,
    pub objective: f64,
    pub iteration: usize,
    /// Largest entrywise change of `W` and `H` over the last iteration.
    pub max_abs_change: f64,
}

/// Steps through the iterations one at a time.
#[derive(Debug)]
pub struct MmSolver<'a> {
    data: &'a ComparisonTensor,
    config: SolverConfig,
    state: IterationState,
}

impl<'a> MmSolver<'a> {
    pub fn new(data: &'a ComparisonTensor, config: SolverConfig, init: Option<FactorPair>) -> Result<Self> {
        let (m, n) = (data.num_tournaments(), data.num_players());
        config.validate(m, n)?;
        let factors = match init {
            Some(f) => {
                if f.rank() != config.rank {
                    return Err(Error::Shape(format!(
                        "initial factors have rank {}, config asks for {}",
                        f.rank(),
                        config.rank
                    )));
                }
                check_factor_dims(data, &f)?;
                if !f.is_strictly_positive() {
                    return Err(Error::InvalidConfig("initial factors must be strictly positive".into()));
                }
                f
            }
            None => random_init(m, n, config.rank, config.seed),
        };
        let objective = neg_log_likelihood(data, &factors, config.epsilon)?;
        Ok(Self {
            data,
            config,
            state: IterationState { factors, objective, iteration: 0, max_abs_change: f64::INFINITY },
        })
    }

    pub fn state(&self) -> &IterationState {
        &self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn into_state(self) -> IterationState {
        self.state
    }

    pub fn step(&mut self) -> Result<&IterationState> {
        let eps = self.config.epsilon;
        let current = &self.state.factors;
        let w_next = update_w(self.data, current, eps)?;
        let h_next = update_h(self.data, &w_next, current, eps)?;
        let updated = FactorPair::from_parts(w_next, h_next)?;
        let next = match self.config.normalization {
            Normalization::Row => normalize_row(&updated, eps)?,
            Normalization::Column => normalize_column(&updated, eps)?,
            Normalization::None => updated,
        };
        let objective = neg_log_likelihood(self.data, &next, eps)?;
        let iteration = self.state.iteration + 1;
        if self.config.strict_monotone && objective > self.state.objective + MONOTONE_SLACK {
            return Err(Error::MonotonicityViolation { iteration, previous: self.state.objective, current: objective });
        }
        let max_abs_change = next.max_abs_diff(current);
        self.state = IterationState { factors: next, objective, iteration, max_abs_change };
        Ok(&self.state)
    }
}

fn warn_unidentifiable(data: &ComparisonTensor) {
    for t in data.empty_tournaments() {
        warn!("tournament {} has no recorded matches; its row of W is frozen", data.tournaments()[t]);
    }
    for i in data.inactive_players() {
        warn!("player {} has no recorded matches; their column of H is fixed at zero", data.players()[i]);
    }
}

/// Runs the iteration from `init` (or a seeded random start) until the
/// largest entrywise change drops below the tolerance or the iteration cap
/// is reached. Hitting the cap is reported through `converged`, not an error.
pub fn fit(data: &ComparisonTensor, config: &SolverConfig, init: Option<FactorPair>) -> Result<FitResult> {
    warn_unidentifiable(data);
    run_fit(data, config, init)
}

fn run_fit(data: &ComparisonTensor, config: &SolverConfig, init: Option<FactorPair>) -> Result<FitResult> {
    let mut solver = MmSolver::new(data, config.clone(), init)?;
    let mut trace = vec![solver.state().objective];
    let mut converged = false;
    while solver.state().iteration < config.max_iterations {
        let state = solver.step()?;
        trace.push(state.objective);
        if state.max_abs_change < config.tolerance {
            converged = true;
            break;
        }
    }
    let state = solver.into_state();
    let report = stationarity_residual(data, &state.factors, config.epsilon, DEFAULT_POSITIVITY_THRESHOLD)?;
    Ok(FitResult {
        lambda: lambda_matrix(&state.factors),
        factors: state.factors,
        objective_trace: trace,
        iterations: state.iteration,
        converged,
        stationarity_residual: report.residual,
    })
}

/// Seed used by restart `index`.
pub fn restart_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub index: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug)]
pub struct MultiRestartResult {
    pub best: FitResult,
    pub best_index: usize,
    /// Successful restarts in index order.
    pub restarts: Vec<RestartSummary>,
    /// Restarts that stopped with an error.
    pub failures: Vec<(usize, Error)>,
}

impl MultiRestartResult {
    /// Final objectives of the successful restarts, in restart order.
    pub fn all_objectives(&self) -> Vec<f64> {
        self.restarts.iter().map(|r| r.objective).collect()
    }
}

pub fn multi_restart_fit(
    data: &ComparisonTensor,
    config: &SolverConfig,
    num_restarts: usize,
) -> Result<MultiRestartResult> {
    multi_restart_fit_with(data, config, num_restarts, Execution::default())
}

/// Independent fits from seeds `seed ^ r`, `r = 0..num_restarts`; keeps the
/// lowest final objective (earliest restart on ties).
pub fn multi_restart_fit_with(
    data: &ComparisonTensor,
    config: &SolverConfig,
    num_restarts: usize,
    execution: Execution,
) -> Result<MultiRestartResult> {
    if num_restarts == 0 {
        return Err(Error::InvalidConfig("need at least one restart".into()));
    }
    config.validate(data.num_tournaments(), data.num_players())?;
    warn_unidentifiable(data);
    let outcomes = map_indexed(num_restarts, execution, |r| {
        let cfg = config.clone().with_seed(restart_seed(config.seed, r));
        run_fit(data, &cfg, None)
    });

    let mut best: Option<(usize, FitResult)> = None;
    let mut restarts = Vec::with_capacity(num_restarts);
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(result) => {
                restarts.push(RestartSummary {
                    index: r,
                    seed: restart_seed(config.seed, r),
                    objective: result.final_objective(),
                    iterations: result.iterations,
                    converged: result.converged,
                });
                let better = best.as_ref().is_none_or(|(_, b)| result.final_objective() < b.final_objective());
                if better {
                    best = Some((r, result));
                }
            }
            Err(e) => {
                warn!("restart {r} failed: {e}");
                failures.push((r, e));
            }
        }
    }
    match best {
        Some((best_index, best)) => Ok(MultiRestartResult { best, best_index, restarts, failures }),
        None => Err(failures.into_iter().next().expect("at least one restart ran").1),
    }
}
