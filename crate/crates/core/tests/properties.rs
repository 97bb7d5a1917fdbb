use btlnmf::io::{parse_dataset, sparsity_report, write_dataset, Manifest};
use btlnmf::solver::{normalize_column, normalize_row, update_h, update_w};
use btlnmf::{fit, lambda_matrix, neg_log_likelihood, ComparisonTensor, FactorPair, Normalization, SolverConfig};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    data: ComparisonTensor,
    factors: FactorPair,
}

fn counts(m: usize, n: usize) -> impl Strategy<Value = Array3<u32>> {
    prop::collection::vec((0u32..4, 0u32..4, prop::bool::weighted(0.7)), m * n * n).prop_map(move |cells| {
        let mut c = Array3::zeros((m, n, n));
        for t in 0..m {
            for i in 0..n {
                for j in (i + 1)..n {
                    let (a, b, met) = cells[(t * n + i) * n + j];
                    if met {
                        c[[t, i, j]] = a;
                        c[[t, j, i]] = b;
                    }
                }
            }
        }
        c
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.05f64..1.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=4, 2usize..=6, 1usize..=3).prop_flat_map(|(m, n, k)| {
        (counts(m, n), matrix(m, k), matrix(k, n)).prop_map(|(c, w, h)| Instance {
            data: ComparisonTensor::from_counts(c).unwrap(),
            factors: FactorPair::new(w, h).unwrap(),
        })
    })
}

fn eps() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.0, 1e-6, 1e-300])
}

/// Both updates are defined when every tournament has a match and every
/// player plays somewhere.
fn well_posed(data: &ComparisonTensor) -> bool {
    data.inactive_players().is_empty()
        && (0..data.num_tournaments()).all(|t| data.pairs(t).iter().any(|p| p.games() > 0))
}

fn permute_players(inst: &Instance, perm: &[usize]) -> Instance {
    let c = inst.data.counts();
    let (m, n, _) = c.dim();
    let pc = Array3::from_shape_fn((m, n, n), |(t, i, j)| c[[t, perm[i], perm[j]]]);
    let h = inst.factors.h();
    let ph = Array2::from_shape_fn(h.dim(), |(k, i)| h[[k, perm[i]]]);
    Instance {
        data: ComparisonTensor::from_counts(pc).unwrap(),
        factors: FactorPair::new(inst.factors.w().clone(), ph).unwrap(),
    }
}

fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_trace_never_increases(inst in instance(), eps in eps(), seed in 0u64..1000, norm in 0usize..3) {
        let k = inst.factors.rank().min(inst.data.num_tournaments()).min(inst.data.num_players());
        let config = SolverConfig::default()
            .with_rank(k)
            .with_epsilon(eps)
            .with_max_iterations(300)
            .with_seed(seed)
            .with_normalization([Normalization::Column, Normalization::Row, Normalization::None][norm]);
        match fit(&inst.data, &config, None) {
            Ok(r) => {
                prop_assert!(r.iterations > 0);
                for w in r.objective_trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
                }
            }
            // eps = 0 can hit a genuine zero denominator on sparse data
            Err(e) => prop_assert!(eps == 0.0, "{e}"),
        }
    }

    #[test]
    fn normalization_keeps_objective_and_probabilities(inst in instance(), eps in eps()) {
        let base = neg_log_likelihood(&inst.data, &inst.factors, eps).unwrap();
        let a0 = btlnmf::model::effective_skills(inst.factors.w(), inst.factors.h(), eps);
        for g in [normalize_row(&inst.factors, eps).unwrap(), normalize_column(&inst.factors, eps).unwrap()] {
            let v = neg_log_likelihood(&inst.data, &g, eps).unwrap();
            prop_assert!((v - base).abs() <= 1e-10 * base.abs().max(1.0));
            let a1 = btlnmf::model::effective_skills(g.w(), g.h(), eps);
            for t in 0..a0.nrows() {
                for i in 0..a0.ncols() {
                    for j in 0..a0.ncols() {
                        let p0 = a0[[t, i]] / (a0[[t, i]] + a0[[t, j]]);
                        let p1 = a1[[t, i]] / (a1[[t, i]] + a1[[t, j]]);
                        prop_assert!((p0 - p1).abs() < 1e-12);
                    }
                }
            }
        }
        let col = normalize_column(&inst.factors, eps).unwrap();
        prop_assert!((col.h().sum() - 1.0).abs() < 1e-12);
        for c in col.w().columns() {
            prop_assert!((c.sum() - 1.0).abs() < 1e-12);
        }
        let row = normalize_row(&inst.factors, eps).unwrap();
        for r in row.w().rows() {
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn updates_commute_with_player_relabelling(inst in instance(), eps in eps(), shift in 1usize..6) {
        prop_assume!(well_posed(&inst.data));
        let n = inst.data.num_players();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let p = permute_players(&inst, &perm);
        let w = update_w(&inst.data, &inst.factors, eps).unwrap();
        let h = update_h(&inst.data, &w, &inst.factors, eps).unwrap();
        let pw = update_w(&p.data, &p.factors, eps).unwrap();
        let ph = update_h(&p.data, &pw, &p.factors, eps).unwrap();
        prop_assert!(close(&w, &pw, 1e-12));
        let h_perm = Array2::from_shape_fn(h.dim(), |(k, i)| h[[k, perm[i]]]);
        prop_assert!(close(&h_perm, &ph, 1e-12));
    }

    #[test]
    fn updates_commute_with_factor_relabelling(inst in instance(), eps in eps()) {
        prop_assume!(well_posed(&inst.data));
        let k = inst.factors.rank();
        let perm: Vec<usize> = (0..k).rev().collect();
        let pf = inst.factors.permute_factors(&perm).unwrap();
        let w = update_w(&inst.data, &inst.factors, eps).unwrap();
        let pw = update_w(&inst.data, &pf, eps).unwrap();
        let h = update_h(&inst.data, &w, &inst.factors, eps).unwrap();
        let ph = update_h(&inst.data, &pw, &pf, eps).unwrap();
        let expect = FactorPair::new(w, h).unwrap().permute_factors(&perm).unwrap();
        prop_assert!(close(expect.w(), &pw, 1e-12));
        prop_assert!(close(expect.h(), &ph, 1e-12));
    }

    #[test]
    fn rank_one_w_is_a_fixed_point(inst in instance(), eps in eps()) {
        prop_assume!(well_posed(&inst.data));
        let w = inst.factors.w().column(0).to_owned().insert_axis(ndarray::Axis(1));
        let h = inst.factors.h().row(0).to_owned().insert_axis(ndarray::Axis(0));
        let f = FactorPair::new(w.clone(), h).unwrap();
        prop_assert!(close(&update_w(&inst.data, &f, eps).unwrap(), &w, 1e-12));
    }

    #[test]
    fn sparsity_classes_partition_the_tensor(inst in instance()) {
        let r = sparsity_report(&inst.data);
        let (m, n) = (inst.data.num_tournaments() as u64, inst.data.num_players() as u64);
        prop_assert_eq!(r.total_entries, m * n * n);
        prop_assert_eq!(r.nonzero.count + r.diagonal_zeros.count + r.missing.count + r.true_zeros.count, r.total_entries);
        prop_assert_eq!(r.diagonal_zeros.count, m * n);
        let pct: f64 = r.rows().iter().map(|(_, s)| s.percent).sum();
        prop_assert!((pct - 100.0).abs() < 1e-9);
    }

    #[test]
    fn dataset_round_trips_through_csv(inst in instance()) {
        let mut buf = Vec::new();
        write_dataset(&inst.data, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice(), Some(&Manifest::of(&inst.data))).unwrap();
        prop_assert_eq!(back, inst.data);
    }

    #[test]
    fn lambda_is_w_times_h(inst in instance()) {
        let l = lambda_matrix(&inst.factors);
        prop_assert!(close(&l, &inst.factors.w().dot(inst.factors.h()), 1e-14));
    }
}
