//! Dataset ingestion, sparsity auditing, result export and synthetic data.
//!
//! Datasets are long-format CSV with the header `tournament,winner,loser,wins`.
//! An optional JSON manifest `{"players": [...], "tournaments": [...]}` pins
//! the row and column order; names not listed there are appended in
//! lexicographic order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lambda_matrix, ComparisonTensor, FactorPair, FitResult, SolverConfig};

pub const CSV_HEADER: [&str; 4] = ["tournament", "winner", "loser", "wins"];
pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub players: Vec<String>,
    #[serde(default)]
    pub tournaments: Vec<String>,
}

impl Manifest {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn of(data: &ComparisonTensor) -> Self {
        Self { players: data.players().to_vec(), tournaments: data.tournaments().to_vec() }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, manifest: Option<&Manifest>) -> Result<ComparisonTensor> {
    parse_dataset(File::open(path)?, manifest)
}

struct Row {
    line: u64,
    tournament: String,
    winner: String,
    loser: String,
    wins: u32,
}

fn universe(declared: Option<&Vec<String>>, observed: BTreeSet<String>) -> Result<Vec<String>> {
    let mut names: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for name in declared.into_iter().flatten() {
        if !seen.insert(name.clone()) {
            return Err(Error::InvalidConfig(format!("manifest lists {name:?} twice")));
        }
        names.push(name.clone());
    }
    names.extend(observed.into_iter().filter(|n| !seen.contains(n)));
    Ok(names)
}

pub fn parse_dataset<R: Read>(reader: R, manifest: Option<&Manifest>) -> Result<ComparisonTensor> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let mut rows = Vec::new();
    if let Some(header) = records.next() {
        let header = header?;
        let fields: Vec<&str> = header.iter().map(str::trim).collect();
        if fields != CSV_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {:?}, found {fields:?}", CSV_HEADER.join(",")),
            });
        }
    }
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(Error::Parse { line, message: format!("expected 4 fields, found {}", record.len()) });
        }
        let field = |i: usize| record[i].trim().to_string();
        let raw = field(3);
        let wins: i64 =
            raw.parse().map_err(|_| Error::Parse { line, message: format!("wins {raw:?} is not an integer") })?;
        if wins < 0 {
            return Err(Error::Parse { line, message: format!("negative win count {wins}") });
        }
        let wins = u32::try_from(wins)
            .map_err(|_| Error::Parse { line, message: format!("win count {wins} is too large") })?;
        let row = Row { line, tournament: field(0), winner: field(1), loser: field(2), wins };
        if row.tournament.is_empty() || row.winner.is_empty() || row.loser.is_empty() {
            return Err(Error::Parse { line, message: "empty tournament or player name".into() });
        }
        if row.winner == row.loser {
            return Err(Error::Parse {
                line,
                message: format!("{} is recorded playing against themselves", row.winner),
            });
        }
        rows.push(row);
    }

    let tournaments = universe(manifest.map(|m| &m.tournaments), rows.iter().map(|r| r.tournament.clone()).collect())?;
    let players = universe(
        manifest.map(|m| &m.players),
        rows.iter().flat_map(|r| [r.winner.clone(), r.loser.clone()]).collect(),
    )?;
    if tournaments.is_empty() || players.is_empty() {
        return Err(Error::Parse { line: 0, message: "dataset declares no tournaments or no players".into() });
    }
    let t_idx: HashMap<&str, usize> = tournaments.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let p_idx: HashMap<&str, usize> = players.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut counts = Array3::zeros((tournaments.len(), players.len(), players.len()));
    let mut seen: HashMap<(usize, usize, usize), u64> = HashMap::new();
    for row in &rows {
        let key = (t_idx[row.tournament.as_str()], p_idx[row.winner.as_str()], p_idx[row.loser.as_str()]);
        if let Some(first) = seen.insert(key, row.line) {
            return Err(Error::Parse {
                line: row.line,
                message: format!(
                    "duplicate record ({}, {}, {}), first seen on line {first}",
                    row.tournament, row.winner, row.loser
                ),
            });
        }
        counts[[key.0, key.1, key.2]] = row.wins;
    }
    ComparisonTensor::new(counts, tournaments, players)
}

/// Writes both directed rows of every pair that met, so the pair sets
/// survive a round trip even when one side never won.
pub fn write_dataset<W: Write>(data: &ComparisonTensor, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    let ps = data.players();
    for (t, name) in data.tournaments().iter().enumerate() {
        for pair in data.pairs(t) {
            for (a, b, wins) in [(pair.i, pair.j, pair.ij), (pair.j, pair.i, pair.ji)] {
                wtr.write_record([name.as_str(), ps[a].as_str(), ps[b].as_str(), &wins.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(data: &ComparisonTensor, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountShare {
    pub count: u64,
    pub percent: f64,
}

/// Every `(m, i, j)` cell falls in exactly one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub total_entries: u64,
    pub nonzero: CountShare,
    pub diagonal_zeros: CountShare,
    /// `b_ij = b_ji = 0`, `i != j`: the pair never met.
    pub missing: CountShare,
    /// `b_ij = 0` but `b_ji > 0`: they met and `i` lost every time.
    pub true_zeros: CountShare,
}

impl SparsityReport {
    pub fn rows(&self) -> [(&'static str, CountShare); 4] {
        [
            ("Non-zero", self.nonzero),
            ("Zeros on the diagonal", self.diagonal_zeros),
            ("Missing data", self.missing),
            ("True zeros", self.true_zeros),
        ]
    }
}

pub fn sparsity_report(data: &ComparisonTensor) -> SparsityReport {
    let (m, n) = (data.num_tournaments(), data.num_players());
    let (mut nonzero, mut diagonal, mut missing, mut true_zero) = (0u64, 0u64, 0u64, 0u64);
    for t in 0..m {
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    diagonal += 1;
                } else if data.count(t, i, j) > 0 {
                    nonzero += 1;
                } else if data.count(t, j, i) > 0 {
                    true_zero += 1;
                } else {
                    missing += 1;
                }
            }
        }
    }
    let total = (m * n * n) as u64;
    let share = |count: u64| CountShare { count, percent: 100.0 * count as f64 / total as f64 };
    SparsityReport {
        total_entries: total,
        nonzero: share(nonzero),
        diagonal_zeros: share(diagonal),
        missing: share(missing),
        true_zeros: share(true_zero),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    CsvBundle,
}

/// Serialized form of a fit, with labels and the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub tournaments: Vec<String>,
    pub players: Vec<String>,
    pub config: SolverConfig,
    pub w: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub stationarity_residual: f64,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(format!("ragged rows in {what}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::Shape(format!("{what}: {e}")))
}

impl ResultDocument {
    pub fn new(result: &FitResult, data: &ComparisonTensor, config: &SolverConfig) -> Self {
        Self {
            schema_version: RESULT_SCHEMA_VERSION,
            tournaments: data.tournaments().to_vec(),
            players: data.players().to_vec(),
            config: config.clone(),
            w: rows_of(result.factors.w()),
            h: rows_of(result.factors.h()),
            lambda: rows_of(&result.lambda),
            objective_trace: result.objective_trace.clone(),
            iterations: result.iterations,
            converged: result.converged,
            final_objective: result.final_objective(),
            stationarity_residual: result.stationarity_residual,
        }
    }

    pub fn factors(&self) -> Result<FactorPair> {
        FactorPair::with_epsilon(from_rows(&self.w, "W")?, from_rows(&self.h, "H")?, self.config.epsilon)
    }

    pub fn to_fit_result(&self) -> Result<FitResult> {
        let factors = self.factors()?;
        Ok(FitResult {
            lambda: from_rows(&self.lambda, "lambda")?,
            factors,
            objective_trace: self.objective_trace.clone(),
            iterations: self.iterations,
            converged: self.converged,
            stationarity_residual: self.stationarity_residual,
        })
    }
}

pub fn import_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    let doc: ResultDocument = serde_json::from_reader(File::open(path)?)?;
    if doc.schema_version != RESULT_SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!("unsupported result schema version {}", doc.schema_version)));
    }
    Ok(doc)
}

/// Renders a float so that it parses back to the same bits.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes a labelled matrix: a header row `corner,<col labels>`, then one
/// row per matrix row prefixed with its label.
pub fn write_labelled_matrix<W: Write>(
    writer: W,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    matrix: &Array2<f64>,
) -> Result<()> {
    if matrix.dim() != (row_labels.len(), col_labels.len()) {
        return Err(Error::Shape(format!(
            "{:?} matrix with {} row and {} column labels",
            matrix.dim(),
            row_labels.len(),
            col_labels.len()
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(std::iter::once(corner).chain(col_labels.iter().map(String::as_str)))?;
    for (label, row) in row_labels.iter().zip(matrix.rows()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|&v| format_float(v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn factor_labels(rank: usize) -> Vec<String> {
    (1..=rank).map(|k| format!("factor_{k}")).collect()
}

/// Writes `W.csv`, `H.csv` and `lambda.csv` into `dir`.
pub fn write_factor_csvs(dir: &Path, factors: &FactorPair, tournaments: &[String], players: &[String]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let factors_l = factor_labels(factors.rank());
    write_labelled_matrix(File::create(dir.join("W.csv"))?, "tournament", tournaments, &factors_l, factors.w())?;
    write_labelled_matrix(File::create(dir.join("H.csv"))?, "factor", &factors_l, players, factors.h())?;
    write_labelled_matrix(
        File::create(dir.join("lambda.csv"))?,
        "tournament",
        tournaments,
        players,
        &lambda_matrix(factors),
    )?;
    Ok(())
}

/// `Json` writes a single document to `path`; `CsvBundle` treats `path` as a
/// directory and writes `W.csv`, `H.csv`, `lambda.csv` and `trace.csv`.
pub fn export_result(
    result: &FitResult,
    data: &ComparisonTensor,
    config: &SolverConfig,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ExportFormat::Json => {
            let doc = ResultDocument::new(result, data, config);
            let mut file = File::create(path)?;
            serde_json::to_writer_pretty(&mut file, &doc)?;
            file.write_all(b"\n")?;
        }
        ExportFormat::CsvBundle => {
            write_factor_csvs(path, &result.factors, data.tournaments(), data.players())?;
            let mut wtr = csv::Writer::from_path(path.join("trace.csv"))?;
            wtr.write_record(["iteration", "objective"])?;
            for (l, f) in result.objective_trace.iter().enumerate() {
                wtr.write_record([l.to_string(), format_float(*f)])?;
            }
            wtr.flush()?;
        }
    }
    Ok(())
}

/// Reads a matrix written by [`write_labelled_matrix`], returning row labels,
/// column labels and values.
pub fn read_labelled_matrix<R: Read>(reader: R) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let cols: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        labels.push(record[0].to_string());
        for v in record.iter().skip(1) {
            values.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse { line, message: format!("{v:?} is not a number") })?,
            );
        }
    }
    let m = Array2::from_shape_vec((labels.len(), cols.len()), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((labels, cols, m))
}

/// Samples a dataset from planted factors.
///
/// `W*` has i.i.d. uniform `(0, 1]` entries with columns scaled to sum to
/// one, `H*` likewise with grand sum one. For every tournament and every
/// unordered pair, `games_per_pair` games are played with the BTL win
/// probability of the planted skills.
pub fn generate_synthetic(
    num_tournaments: usize,
    num_players: usize,
    rank: usize,
    games_per_pair: u32,
    seed: u64,
) -> Result<(ComparisonTensor, FactorPair)> {
    if num_tournaments == 0 || num_players < 2 {
        return Err(Error::InvalidConfig("need at least one tournament and two players".into()));
    }
    if rank == 0 || rank > num_tournaments.min(num_players) {
        return Err(Error::InvalidConfig(format!(
            "rank must lie in 1..={}, got {rank}",
            num_tournaments.min(num_players)
        )));
    }
    if games_per_pair == 0 {
        return Err(Error::InvalidConfig("games_per_pair must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::from_shape_fn((num_tournaments, rank), |_| 1.0 - rng.random::<f64>());
    let mut h = Array2::from_shape_fn((rank, num_players), |_| 1.0 - rng.random::<f64>());
    for mut col in w.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    let hs = h.sum();
    h.mapv_inplace(|v| v / hs);
    let truth = FactorPair::new(w, h)?;
    let lambda = lambda_matrix(&truth);

    let mut counts = Array3::zeros((num_tournaments, num_players, num_players));
    for t in 0..num_tournaments {
        for i in 0..num_players {
            for j in (i + 1)..num_players {
                let p = lambda[[t, i]] / (lambda[[t, i]] + lambda[[t, j]]);
                let mut wins_i = 0;
                for _ in 0..games_per_pair {
                    if rng.random::<f64>() < p {
                        wins_i += 1;
                    }
                }
                counts[[t, i, j]] = wins_i;
                counts[[t, j, i]] = games_per_pair - wins_i;
            }
        }
    }
    Ok((ComparisonTensor::from_counts(counts)?, truth))
}
