//! Domain types and the exact objective.
//!
//! The skill of player `i` in tournament `m` is `[W (H + eps)]_{mi}`, and the
//! probability that `i` beats `j` there is the usual Bradley-Terry-Luce ratio
//! of the two skills. Everything else in the crate treats
//! [`neg_log_likelihood`] as ground truth.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a player of skill `skill_i` beats one of skill `skill_j`.
pub fn btl_win_prob(skill_i: f64, skill_j: f64) -> Result<f64> {
    let total = skill_i + skill_j;
    if !(total > 0.0) {
        return Err(Error::ZeroSkills);
    }
    Ok(skill_i / total)
}

/// Both directed counts of one unordered pair `i < j` that met at least once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCount {
    pub i: usize,
    pub j: usize,
    /// times `i` beat `j`
    pub ij: u32,
    /// times `j` beat `i`
    pub ji: u32,
}

impl PairCount {
    pub fn games(&self) -> u32 {
        self.ij + self.ji
    }

    /// Directed outcomes `(winner, loser, wins)` with `wins > 0`, `i -> j` first.
    pub fn directed(&self) -> impl Iterator<Item = (usize, usize, u32)> {
        let a = (self.ij > 0).then_some((self.i, self.j, self.ij));
        let b = (self.ji > 0).then_some((self.j, self.i, self.ji));
        a.into_iter().chain(b)
    }
}

/// Per-tournament win counts `counts[[m, i, j]]` = times `i` beat `j` in `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTensor {
    counts: Array3<u32>,
    tournaments: Vec<String>,
    players: Vec<String>,
    pairs: Vec<Vec<PairCount>>,
}

impl ComparisonTensor {
    pub fn new(counts: Array3<u32>, tournaments: Vec<String>, players: Vec<String>) -> Result<Self> {
        let (m, n, n2) = counts.dim();
        if n != n2 {
            return Err(Error::Shape(format!("count slices must be square, got {n}x{n2}")));
        }
        if m == 0 || n == 0 {
            return Err(Error::Shape("need at least one tournament and one player".into()));
        }
        if tournaments.len() != m || players.len() != n {
            return Err(Error::Shape(format!(
                "{} tournament and {} player labels for a {m}x{n}x{n} tensor",
                tournaments.len(),
                players.len()
            )));
        }
        for t in 0..m {
            for i in 0..n {
                if counts[[t, i, i]] != 0 {
                    return Err(Error::Shape(format!("non-zero diagonal count at tournament {t}, player {i}")));
                }
            }
        }
        let pairs = (0..m)
            .map(|t| {
                let mut ps = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let (ij, ji) = (counts[[t, i, j]], counts[[t, j, i]]);
                        if ij + ji > 0 {
                            ps.push(PairCount { i, j, ij, ji });
                        }
                    }
                }
                ps
            })
            .collect();
        Ok(Self { counts, tournaments, players, pairs })
    }

    /// Builds a tensor with generated labels `T1..`, `P1..`.
    pub fn from_counts(counts: Array3<u32>) -> Result<Self> {
        let (m, n, _) = counts.dim();
        let tournaments = (1..=m).map(|t| format!("T{t}")).collect();
        let players = (1..=n).map(|p| format!("P{p}")).collect();
        Self::new(counts, tournaments, players)
    }

    pub fn num_tournaments(&self) -> usize {
        self.counts.dim().0
    }

    pub fn num_players(&self) -> usize {
        self.counts.dim().1
    }

    pub fn counts(&self) -> &Array3<u32> {
        &self.counts
    }

    pub fn count(&self, tournament: usize, winner: usize, loser: usize) -> u32 {
        self.counts[[tournament, winner, loser]]
    }

    pub fn tournaments(&self) -> &[String] {
        &self.tournaments
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    /// The pair set of tournament `m`, one entry per unordered pair, `i < j`.
    pub fn pairs(&self, tournament: usize) -> &[PairCount] {
        &self.pairs[tournament]
    }

    pub fn total_games(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Tournaments whose pair set is empty.
    pub fn empty_tournaments(&self) -> Vec<usize> {
        (0..self.num_tournaments()).filter(|&t| self.pairs[t].is_empty()).collect()
    }

    /// Players that appear in no pair set.
    pub fn inactive_players(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_players()];
        for p in self.pairs.iter().flatten() {
            seen[p.i] = true;
            seen[p.j] = true;
        }
        seen.iter().enumerate().filter_map(|(i, &s)| (!s).then_some(i)).collect()
    }
}

/// Dictionary `W` (tournaments x factors) and coefficients `H` (factors x players).
///
/// `W` is nonnegative. `H` is nonnegative at initialization; the
/// normalization steps with `eps > 0` may leave entries in `[-eps, 0)`, so
/// only `H + eps` is guaranteed nonnegative on solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    w: Array2<f64>,
    h: Array2<f64>,
}

impl FactorPair {
    /// Requires finite, nonnegative entries.
    pub fn new(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        Self::with_epsilon(w, h, 0.0)
    }

    /// Like [`FactorPair::new`] but accepts `H` entries down to `-epsilon`.
    pub fn with_epsilon(w: Array2<f64>, h: Array2<f64>, epsilon: f64) -> Result<Self> {
        let pair = Self::from_parts(w, h)?;
        for (what, mat, floor) in [("W", &pair.w, 0.0), ("H", &pair.h, -epsilon)] {
            for ((r, c), &v) in mat.indexed_iter() {
                if !v.is_finite() || v < floor {
                    return Err(Error::InvalidConfig(format!(
                        "{what}[{r}][{c}] = {v} is not a finite number >= {floor}"
                    )));
                }
            }
        }
        Ok(pair)
    }

    /// Shape-checked constructor that allows negative entries.
    pub fn from_parts(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(Error::Shape(format!("W is {}x{} but H is {}x{}", w.nrows(), w.ncols(), h.nrows(), h.ncols())));
        }
        Ok(Self { w, h })
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.w, self.h)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.w.iter().chain(self.h.iter()).all(|&v| v > 0.0)
    }

    /// Largest absolute entrywise difference over both factors.
    pub fn max_abs_diff(&self, other: &FactorPair) -> f64 {
        let dw = self.w.iter().zip(other.w.iter()).map(|(a, b)| (a - b).abs());
        let dh = self.h.iter().zip(other.h.iter()).map(|(a, b)| (a - b).abs());
        dw.chain(dh).fold(0.0, f64::max)
    }

    /// Permutes the latent factors: new factor `k` is old factor `perm[k]`.
    pub fn permute_factors(&self, perm: &[usize]) -> Result<Self> {
        let k = self.rank();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        let w = Array2::from_shape_fn(self.w.dim(), |(m, c)| self.w[[m, perm[c]]]);
        let h = Array2::from_shape_fn(self.h.dim(), |(r, i)| self.h[[perm[r], i]]);
        Ok(Self { w, h })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Rows of `W` sum to one, `H` is rescaled globally.
    Row,
    /// Columns of `W` sum to one and the grand sum of `H` is one.
    #[default]
    Column,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub normalization: Normalization,
    pub seed: u64,
    /// Fail with [`Error::MonotonicityViolation`] if the objective ever rises
    /// by more than [`MONOTONE_SLACK`] between iterations.
    #[serde(default)]
    pub strict_monotone: bool,
}

/// Per-iteration slack allowed on objective increases.
pub const MONOTONE_SLACK: f64 = 1e-10;

pub const DEFAULT_EPSILON: f64 = 1e-300;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            epsilon: DEFAULT_EPSILON,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            normalization: Normalization::Column,
            seed: 0,
            strict_monotone: false,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_strict_monotone(mut self, strict: bool) -> Self {
        self.strict_monotone = strict;
        self
    }

    pub fn validate(&self, num_tournaments: usize, num_players: usize) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        let cap = num_tournaments.min(num_players);
        if self.rank == 0 || self.rank > cap {
            return Err(Error::InvalidConfig(format!("rank must lie in 1..={cap}, got {}", self.rank)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub factors: FactorPair,
    /// `W H`, cached at the end of the fit.
    pub lambda: Array2<f64>,
    /// Objective at the initial point followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity_residual: f64,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

/// Effective skills `A = W (H + eps)`.
pub fn effective_skills(w: &Array2<f64>, h: &Array2<f64>, epsilon: f64) -> Array2<f64> {
    let (m, k) = w.dim();
    let n = h.ncols();
    let mut a = Array2::zeros((m, n));
    for t in 0..m {
        for i in 0..n {
            let mut s = 0.0;
            for f in 0..k {
                s += w[[t, f]] * (h[[f, i]] + epsilon);
            }
            a[[t, i]] = s;
        }
    }
    a
}

/// The skill matrix `W H`.
pub fn lambda_matrix(factors: &FactorPair) -> Array2<f64> {
    effective_skills(factors.w(), factors.h(), 0.0)
}

fn check_dims(data: &ComparisonTensor, factors: &FactorPair) -> Result<()> {
    if factors.w().nrows() != data.num_tournaments() || factors.h().ncols() != data.num_players() {
        return Err(Error::Shape(format!(
            "factors give a {}x{} skill matrix but data is {} tournaments x {} players",
            factors.w().nrows(),
            factors.h().ncols(),
            data.num_tournaments(),
            data.num_players()
        )));
    }
    Ok(())
}

pub(crate) fn check_factor_dims(data: &ComparisonTensor, factors: &FactorPair) -> Result<()> {
    check_dims(data, factors)
}

/// Negative log-likelihood `f_eps(W, H)`; `epsilon = 0` gives the plain objective.
///
/// Terms are summed tournament by tournament, pair by pair (`i < j`), with the
/// `i -> j` outcome before `j -> i`.
pub fn neg_log_likelihood(data: &ComparisonTensor, factors: &FactorPair, epsilon: f64) -> Result<f64> {
    check_dims(data, factors)?;
    let a = effective_skills(factors.w(), factors.h(), epsilon);
    let mut total = 0.0;
    for t in 0..data.num_tournaments() {
        for pair in data.pairs(t) {
            for (win, lose, b) in pair.directed() {
                let (aw, al) = (a[[t, win]], a[[t, lose]]);
                if !(aw > 0.0) {
                    return Err(Error::LogDomain { tournament: t, winner: win, loser: lose, value: aw });
                }
                total += f64::from(b) * ((aw + al).ln() - aw.ln());
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_player(b12: u32, b21: u32) -> ComparisonTensor {
        let mut c = Array3::zeros((1, 2, 2));
        c[[0, 0, 1]] = b12;
        c[[0, 1, 0]] = b21;
        ComparisonTensor::from_counts(c).unwrap()
    }

    fn k1(h: [f64; 2]) -> FactorPair {
        FactorPair::new(array![[1.0]], array![[h[0], h[1]]]).unwrap()
    }

    #[test]
    fn win_prob_examples() {
        assert_eq!(btl_win_prob(1.0, 1.0).unwrap(), 0.5);
        assert!((btl_win_prob(2.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(btl_win_prob(0.0, 3.0).unwrap(), 0.0);
        assert!(matches!(btl_win_prob(0.0, 0.0), Err(Error::ZeroSkills)));
    }

    #[test]
    fn nll_examples() {
        let f = neg_log_likelihood(&two_player(1, 0), &k1([1.0, 1.0]), 0.0).unwrap();
        assert!((f - std::f64::consts::LN_2).abs() < 1e-15);
        // frozen from an independent term-by-term evaluation
        let f = neg_log_likelihood(&two_player(1, 0), &k1([2.0, 1.0]), 0.0).unwrap();
        assert!((f - 0.40546510810816444).abs() < 1e-14);
        let f = neg_log_likelihood(&two_player(3, 1), &k1([2.0, 1.0]), 0.0).unwrap();
        assert!((f - 2.315007612992603).abs() < 1e-14);
    }

    #[test]
    fn nll_reports_log_domain_coordinates() {
        let err = neg_log_likelihood(&two_player(0, 2), &k1([1.0, 0.0]), 0.0).unwrap_err();
        match err {
            Error::LogDomain { tournament, winner, loser, .. } => {
                assert_eq!((tournament, winner, loser), (0, 1, 0));
            }
            other => panic!("unexpected {other:?}"),
        }
        // a zero-skill loser is fine
        assert!(neg_log_likelihood(&two_player(2, 0), &k1([1.0, 0.0]), 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn nll_matches_bernoulli_form_exhaustively() {
        let grid = [0.1, 0.5, 1.0, 2.0, 7.5];
        for b12 in 0..=5u32 {
            for b21 in 0..=5u32 {
                let data = two_player(b12, b21);
                for &s1 in &grid {
                    for &s2 in &grid {
                        let p = btl_win_prob(s1, s2).unwrap();
                        let expected = -f64::from(b12) * p.ln() - f64::from(b21) * (1.0 - p).ln();
                        let f = neg_log_likelihood(&data, &k1([s1, s2]), 0.0).unwrap();
                        assert!(
                            (f - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                            "b=({b12},{b21}) s=({s1},{s2}): {f} vs {expected}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_examples() {
        let h = array![[0.3, 0.7], [0.9, 0.1]];
        let f = FactorPair::new(array![[1.0, 0.0], [0.0, 1.0]], h.clone()).unwrap();
        assert_eq!(lambda_matrix(&f), h);
        let f = FactorPair::new(array![[0.5, 0.5]], array![[0.2, 0.8], [0.6, 0.4]]).unwrap();
        let l = lambda_matrix(&f);
        assert!((l[[0, 0]] - 0.4).abs() < 1e-15 && (l[[0, 1]] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn tensor_rejects_diagonal_and_builds_pairs() {
        let mut c = Array3::zeros((1, 3, 3));
        c[[0, 1, 1]] = 1;
        assert!(ComparisonTensor::from_counts(c).is_err());

        let mut c = Array3::zeros((2, 3, 3));
        c[[0, 2, 0]] = 4;
        c[[1, 0, 1]] = 1;
        c[[1, 1, 0]] = 2;
        let t = ComparisonTensor::from_counts(c).unwrap();
        assert_eq!(t.pairs(0), &[PairCount { i: 0, j: 2, ij: 0, ji: 4 }]);
        assert_eq!(t.pairs(1), &[PairCount { i: 0, j: 1, ij: 1, ji: 2 }]);
        assert_eq!(t.inactive_players(), Vec::<usize>::new());
        let dir: Vec<_> = t.pairs(1)[0].directed().collect();
        assert_eq!(dir, vec![(0, 1, 1), (1, 0, 2)]);
    }

    #[test]
    fn config_validation() {
        let cfg = SolverConfig::default();
        assert!(cfg.validate(3, 4).is_ok());
        assert!(cfg.clone().with_rank(0).validate(3, 4).is_err());
        assert!(cfg.clone().with_rank(4).validate(3, 4).is_err());
        assert!(cfg.clone().with_epsilon(-1.0).validate(3, 4).is_err());
        assert!(cfg.clone().with_tolerance(0.0).validate(3, 4).is_err());
        assert_eq!(cfg.epsilon, 1e-300);
        assert_eq!(cfg.tolerance, 1e-6);
        assert_eq!(cfg.max_iterations, 20_000);
    }

    #[test]
    fn permute_factors_rejects_non_permutations() {
        let f = FactorPair::new(array![[1.0, 2.0]], array![[1.0], [2.0]]).unwrap();
        assert!(f.permute_factors(&[0, 0]).is_err());
        let p = f.permute_factors(&[1, 0]).unwrap();
        assert_eq!(p.w(), &array![[2.0, 1.0]]);
        assert_eq!(p.h(), &array![[2.0], [1.0]]);
    }
}
