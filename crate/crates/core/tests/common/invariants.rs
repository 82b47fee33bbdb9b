//! Module invariants as proptest runs. Each check returns `Err` with the
//! shrunk counterexample when it fails.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use tensor_factor::dgp::{factor_autocov, gen_factor_series, gen_series, DgpSpec, LoadingMode};
use tensor_factor::diagnostics::{loss_projection, loss_sine, theory_report, ReportSource};
use tensor_factor::estimators::{estimate, tipup_matrix, topup_matrix, Method, ModelSpec};
use tensor_factor::io::{read_dense, read_long_csv, write_dense, write_long_csv};
use tensor_factor::postprocess::{moving_average_series, varimax, VarimaxOptions};
use tensor_factor::ratefit::{rate_objective, RateRecord};
use tensor_factor::spectral::{
    orthonormalize, projection_distance, projection_onto, spectral_norm, top_left_singular_direct,
    top_left_singular_gram,
};
use tensor_factor::tensor::kronecker;
use tensor_factor::{Matrix, Tensor, TensorSeries};

pub const CASES: u32 = 256;

pub type Check = fn() -> Result<(), String>;

/// Every invariant, by name.
pub const ALL: &[(&str, Check)] = &[
    ("refold inverts unfold", refold_inverts_unfold),
    ("unfold of a mode product", unfold_of_mode_product),
    ("kronecker identity", kronecker_identity),
    ("outer product norm", outer_product_norm),
    ("spectral norm lower bound", spectral_norm_lower_bound),
    ("projection idempotent and symmetric", projection_idempotent),
    ("gram and direct routes agree", svd_routes_agree),
    ("oracle equivalence", oracle_equivalence),
    ("permutation equivariance", permutation_equivariance),
    ("scale equivariance", scale_equivariance),
    ("rotation invariance", rotation_invariance),
    ("dgp determinism and stream independence", dgp_determinism),
    ("factor stationarity", factor_stationarity),
    (
        "ladder via gram equals direct singular values",
        ladder_consistency,
    ),
    ("norm relations", norm_relations),
    ("autocovariance cauchy-schwarz", autocov_cauchy_schwarz),
    ("rate objective block symmetry", rate_block_symmetry),
    ("varimax keeps column space", varimax_column_space),
    (
        "moving average commutes with mode products",
        moving_average_commutes,
    ),
    ("loss bounds", loss_bounds),
    ("series round trips", series_round_trips),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn dims_strategy(max_order: usize, max_dim: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_dim, 1..=max_order)
}

fn tensor_strategy(max_order: usize, max_dim: usize) -> impl Strategy<Value = Tensor> {
    dims_strategy(max_order, max_dim).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(-10.0..10.0f64, n)
            .prop_map(move |v| Tensor::new(dims.clone(), v).unwrap())
    })
}

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn any_matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| matrix_strategy(r, c))
}

fn series_strategy(
    max_order: usize,
    max_dim: usize,
    lens: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = TensorSeries> {
    (dims_strategy(max_order, max_dim), lens).prop_flat_map(|(dims, len)| {
        let d: usize = dims.iter().product();
        prop::collection::vec(-1.0..1.0f64, d * len).prop_map(move |v| {
            TensorSeries::new(dims.clone(), Matrix::from_vec(d, len, v)).unwrap()
        })
    })
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax()
}

pub fn refold_inverts_unfold() -> Result<(), String> {
    run(CASES, tensor_strategy(4, 4), |x| {
        for k in 0..x.order() {
            let back = Tensor::refold(&x.unfold(k).unwrap(), k, x.dims()).unwrap();
            ensure(back == x, || format!("mode {k}"))?;
        }
        Ok(())
    })
}

pub fn unfold_of_mode_product() -> Result<(), String> {
    let s = tensor_strategy(4, 4).prop_flat_map(|x| {
        let order = x.order();
        (Just(x), 0..order, 1..=4usize)
    });
    let s = s.prop_flat_map(|(x, k, rows)| {
        let dk = x.dims()[k];
        (Just(x), Just(k), matrix_strategy(rows, dk))
    });
    run(CASES, s, |(x, k, a)| {
        let lhs = x.mode_product(&a, k).unwrap().unfold(k).unwrap();
        let rhs = &a * x.unfold(k).unwrap();
        ensure(max_abs(&lhs, &rhs) < 1e-12, || {
            format!("diff {}", max_abs(&lhs, &rhs))
        })
    })
}

pub fn kronecker_identity() -> Result<(), String> {
    let s = (
        prop::collection::vec(1..=3usize, 2..=3),
        prop::collection::vec(1..=3usize, 3),
    )
        .prop_flat_map(|(ranks, rows)| {
            let n: usize = ranks.iter().product();
            let mats: Vec<_> = ranks
                .iter()
                .zip(&rows)
                .map(|(&r, &d)| matrix_strategy(d, r))
                .collect();
            (prop::collection::vec(-1.0..1.0f64, n), mats, Just(ranks))
        });
    run(CASES, s, |(f, mats, ranks)| {
        let mats = &mats[..ranks.len()];
        let f = Tensor::new(ranks.clone(), f).unwrap();
        let lhs = f.multi_mode_product(mats).unwrap().vec();
        let rev: Vec<Matrix> = mats.iter().rev().cloned().collect();
        let rhs = kronecker(&rev) * f.vec();
        let diff = (lhs - rhs).amax();
        ensure(diff < 1e-10, || format!("diff {diff}"))
    })
}

pub fn outer_product_norm() -> Result<(), String> {
    run(
        CASES,
        (tensor_strategy(2, 4), tensor_strategy(2, 4)),
        |(x, y)| {
            let lhs = x.outer(&y).frobenius_norm();
            let rhs = x.frobenius_norm() * y.frobenius_norm();
            ensure((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0), || {
                format!("{lhs} vs {rhs}")
            })
        },
    )
}

pub fn spectral_norm_lower_bound() -> Result<(), String> {
    let s = any_matrix(8).prop_flat_map(|m| {
        let c = m.ncols();
        (Just(m), prop::collection::vec(-1.0..1.0f64, c))
    });
    run(CASES, s, |(m, v)| {
        let v = nalgebra::DVector::from_vec(v);
        let vn = v.norm();
        prop_assume!(vn > 1e-6);
        let ratio = (&m * &v).norm() / vn;
        let norm = spectral_norm(&m).unwrap();
        ensure(norm >= ratio * (1.0 - 1e-9) - 1e-12, || {
            format!("{norm} < {ratio}")
        })
    })
}

pub fn projection_idempotent() -> Result<(), String> {
    run(CASES, any_matrix(7), |a| {
        let p = projection_onto(&a);
        let sym = max_abs(&p, &p.transpose());
        let idem = max_abs(&(&p * &p), &p);
        ensure(sym < 1e-12 && idem < 1e-10, || {
            format!("sym {sym}, idem {idem}")
        })
    })
}

pub fn svd_routes_agree() -> Result<(), String> {
    let s = (1..=5usize, 1..=9usize).prop_flat_map(|(r, c)| (matrix_strategy(r, c), 1..=r.min(c)));
    run(CASES, s, |(m, count)| {
        let g = top_left_singular_gram(&m, count).unwrap();
        let d = top_left_singular_direct(&m, count).unwrap();
        for (a, b) in g.singular_values.iter().zip(&d.singular_values) {
            ensure((a - b).abs() < 1e-8, || format!("values {a} vs {b}"))?;
        }
        let mut full = m
            .clone()
            .svd(false, false)
            .singular_values
            .as_slice()
            .to_vec();
        full.sort_by(|a, b| b.total_cmp(a));
        let gap = full[count - 1] - full.get(count).copied().unwrap_or(0.0);
        if gap > 1e-6 && full[count - 1] > 1e-6 {
            let dist = projection_distance(
                &projection_onto(&g.left_vectors),
                &projection_onto(&d.left_vectors),
            );
            ensure(dist < 1e-6 / gap.min(1.0), || {
                format!("projection distance {dist}, gap {gap}")
            })?;
        }
        Ok(())
    })
}

pub fn oracle_equivalence() -> Result<(), String> {
    let s = (series_strategy(3, 4, 3..=10), 1..=2usize);
    run(CASES, s, |(x, h0)| {
        let h0 = h0.min(x.len() - 1);
        for k in 0..x.order() {
            let top = topup_matrix(&x, k, h0).unwrap();
            let tip = tipup_matrix(&x, k, h0).unwrap();
            let e1 = max_abs(&top, &super::topup_oracle(&x, k, h0));
            let e2 = max_abs(&tip, &super::tipup_oracle(&x, k, h0));
            ensure(e1 < 1e-10 && e2 < 1e-10, || format!("mode {k}: {e1}, {e2}"))?;
        }
        Ok(())
    })
}

fn permute_series(x: &TensorSeries, perm: &[usize]) -> TensorSeries {
    let dims = x.shape();
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let slices: Vec<Tensor> = x
        .slices()
        .map(|s| {
            Tensor::from_fn(new_dims.clone(), |idx| {
                let mut old = vec![0; idx.len()];
                for (j, &p) in perm.iter().enumerate() {
                    old[p] = idx[j];
                }
                s.get(&old)
            })
            .unwrap()
        })
        .collect();
    TensorSeries::from_slices(&slices).unwrap()
}

fn method_strategy() -> impl Strategy<Value = Method> {
    prop::sample::select(Method::ALL.to_vec())
}

/// Non-iterative methods only: the iterated methods sweep modes in a fixed
/// ascending order, so relabelling modes changes the sweep itself.
pub fn permutation_equivariance() -> Result<(), String> {
    let methods = prop::sample::select(vec![Method::Topup, Method::Tipup, Method::Up]);
    let s = (
        series_strategy(3, 4, 8..=12),
        methods,
        any::<prop::sample::Index>(),
    );
    run(CASES, s, |(x, method, pick)| {
        let order = x.order();
        let mut perm: Vec<usize> = (0..order).collect();
        perm.rotate_left(pick.index(order.max(1)));
        let spec = ModelSpec::new(vec![1; order], 1, method);
        let a = estimate(&x, &spec).unwrap();
        let b = estimate(&permute_series(&x, &perm), &spec).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            let ladder_a = &a.singular_ladders[p];
            let ladder_b = &b.singular_ladders[j];
            let gap = ladder_a[0] - ladder_a.get(1).copied().unwrap_or(0.0);
            if gap > 1e-6 * ladder_a[0].max(1e-300) {
                let dist = projection_distance(&a.projections[p], &b.projections[j]);
                ensure(dist < 1e-6, || format!("mode {p}: distance {dist}"))?;
            }
            for (u, v) in ladder_a.iter().zip(ladder_b) {
                ensure((u - v).abs() <= 1e-9 * ladder_a[0].max(1.0), || {
                    format!("ladders {u} vs {v}")
                })?;
            }
        }
        Ok(())
    })
}

pub fn scale_equivariance() -> Result<(), String> {
    let s = (
        series_strategy(3, 4, 8..=12),
        method_strategy(),
        0.01..100.0f64,
    );
    run(CASES, s, |(x, method, c)| {
        let order = x.order();
        let spec = ModelSpec::new(vec![1; order], 1, method);
        let a = estimate(&x, &spec).unwrap();
        let mut y = x.clone();
        y.scale(c);
        let b = estimate(&y, &spec).unwrap();
        if method.is_iterative()
            && (a.iterations_used >= spec.max_iter || b.iterations_used >= spec.max_iter)
        {
            // a non-converged sweep sequence amplifies rounding differences
            return Ok(());
        }
        for k in 0..order {
            let l = &a.singular_ladders[k];
            let gap = l[0] - l.get(1).copied().unwrap_or(0.0);
            if gap > 1e-6 * l[0] {
                let dist = projection_distance(&a.projections[k], &b.projections[k]);
                ensure(dist < 1e-7, || format!("mode {k}: {dist}"))?;
            }
        }
        Ok(())
    })
}

pub fn rotation_invariance() -> Result<(), String> {
    let s = (any::<u64>(), -3.0..3.0f64, method_strategy());
    run(64, s, |(seed, angle, method)| {
        let spec = DgpSpec {
            dims: vec![6, 5],
            ranks: vec![2, 1],
            lambda: 1.0,
            ar_coeffs: vec![0.7, 0.4],
            noise_offdiag: 0.0,
            noise_scale: 0.0,
            len: 40,
            seed,
            loading_mode: LoadingMode::Orthonormal,
            burn_in: 200,
        };
        let (m, truth) = gen_series(&spec).unwrap();
        let (s_, c_) = angle.sin_cos();
        let r = Matrix::from_row_slice(2, 2, &[c_, -s_, s_, c_]);
        let a1 = &truth.loadings[0] * &r;
        let f = truth.factors.mode_product(&r.transpose(), 0).unwrap();
        let m2 = f
            .multi_mode_product(&[Some(&a1), Some(&truth.loadings[1])])
            .unwrap();
        let model = ModelSpec::new(vec![2, 1], 2, method);
        let e1 = estimate(&m, &model).unwrap();
        let e2 = estimate(&m2, &model).unwrap();
        for k in 0..2 {
            let dist = projection_distance(&e1.projections[k], &e2.projections[k]);
            ensure(dist < 1e-8, || format!("mode {k}: {dist}"))?;
        }
        Ok(())
    })
}

fn small_spec(seed: u64, rho: f64) -> DgpSpec {
    DgpSpec {
        dims: vec![4, 3, 2],
        ranks: vec![2, 1, 1],
        lambda: 1.5,
        ar_coeffs: vec![0.5, -0.3],
        noise_offdiag: rho,
        noise_scale: 1.0,
        len: 16,
        seed,
        loading_mode: LoadingMode::GaussianNormalized,
        burn_in: 50,
    }
}

pub fn dgp_determinism() -> Result<(), String> {
    run(CASES, (any::<u64>(), 0.0..0.9f64), |(seed, rho)| {
        let a = gen_series(&small_spec(seed, rho)).unwrap();
        let b = gen_series(&small_spec(seed, rho)).unwrap();
        ensure(a.0 == b.0, || "series differ".into())?;
        let other = gen_series(&small_spec(seed, 0.0)).unwrap();
        ensure(other.1.factors == a.1.factors, || {
            "factors depend on rho".into()
        })?;
        ensure(other.1.loadings == a.1.loadings, || {
            "loadings depend on rho".into()
        })
    })
}

/// Sample means of AR(1) factors against 3 standard errors. At most 2% of
/// the draws may fall outside (about 0.3% are expected to).
pub fn factor_stationarity() -> Result<(), String> {
    let mut outside = 0;
    let n = CASES as u64;
    for seed in 0..n {
        let phi = [-0.8, -0.3, 0.0, 0.5, 0.9][seed as usize % 5];
        let len = 400;
        let spec = DgpSpec::rank_one(2, 2, 1.0, phi, 0.0, len, seed);
        let f = gen_factor_series(&spec).unwrap();
        let mean = f.data().mean();
        let var = 1.0 / (1.0 - phi * phi);
        let se = (var / len as f64 * (1.0 + phi) / (1.0 - phi)).sqrt();
        if mean.abs() > 3.0 * se {
            outside += 1;
        }
    }
    if outside as f64 <= 0.02 * n as f64 {
        Ok(())
    } else {
        Err(format!(
            "{outside} of {n} sample means beyond 3 standard errors"
        ))
    }
}

pub fn ladder_consistency() -> Result<(), String> {
    let s = (series_strategy(3, 4, 4..=10), 1..=2usize);
    run(CASES, s, |(x, h0)| {
        let report = theory_report(&x, &vec![1; x.order()], h0, ReportSource::Empirical).unwrap();
        for k in 0..x.order() {
            for (ladder, m) in [
                (&report.modes[k].tau, topup_matrix(&x, k, h0).unwrap()),
                (&report.modes[k].tau_star, tipup_matrix(&x, k, h0).unwrap()),
            ] {
                let mut sv = m.svd(false, false).singular_values.as_slice().to_vec();
                sv.sort_by(|a, b| b.total_cmp(a));
                for (a, b) in ladder.iter().zip(&sv) {
                    ensure((a - b).abs() < 1e-8, || format!("mode {k}: {a} vs {b}"))?;
                }
            }
        }
        Ok(())
    })
}

pub fn norm_relations() -> Result<(), String> {
    run(CASES, any::<u64>(), |seed| {
        let mut spec = small_spec(seed, 0.0);
        spec.noise_scale = 0.0;
        let (m, _) = gen_series(&spec).unwrap();
        let r_total: usize = spec.ranks.iter().product();
        let rep = theory_report(&m, &spec.ranks, 1, ReportSource::Signal).unwrap();
        for (k, mode) in rep.modes.iter().enumerate() {
            let tol = 1e-9 * mode.theta_trace.max(1.0);
            ensure(
                spec.ranks[k] as f64 * mode.theta_star_norm + tol >= mode.theta_trace,
                || format!("mode {k}: r‖Θ*‖ < tr"),
            )?;
            ensure(
                mode.theta_trace <= r_total as f64 * mode.theta_op_norm + tol,
                || format!("mode {k}: tr > r‖Θ‖"),
            )?;
        }
        Ok(())
    })
}

pub fn autocov_cauchy_schwarz() -> Result<(), String> {
    run(
        CASES,
        (any::<u64>(), -0.95..0.95f64, 2..60usize),
        |(seed, phi, len)| {
            let f = gen_factor_series(&DgpSpec::rank_one(1, 1, 1.0, phi, 0.0, len, seed)).unwrap();
            let rho = factor_autocov(f.data().as_slice(), len - 1);
            for (h, r) in rho.iter().enumerate() {
                let lhs = (1.0 - h as f64 / len as f64) * r.abs();
                ensure(lhs <= rho[0] * (1.0 + 1e-12), || {
                    format!("h = {h}: {lhs} > {}", rho[0])
                })?;
            }
            Ok(())
        },
    )
}

pub fn rate_block_symmetry() -> Result<(), String> {
    let coef = prop::array::uniform10(-2.0..2.0f64).prop_map(|mut c| {
        c[0] = c[0].exp();
        c[5] = c[5].exp();
        c
    });
    let records =
        prop::collection::vec((1..6i32, 1..6i32, -2..4i32, 3..10i32, 0.01..1.0f64), 1..30);
    run(CASES, (coef, records), |(c, recs)| {
        let recs: Vec<RateRecord> = recs
            .into_iter()
            .map(|(a, b, l, t, loss)| RateRecord {
                d1: 2f64.powi(a),
                d2: 2f64.powi(b),
                lambda: 2f64.powi(l),
                len: 2f64.powi(t),
                mean_loss: loss,
            })
            .collect();
        let mut swapped = c;
        swapped[..5].copy_from_slice(&c[5..]);
        swapped[5..].copy_from_slice(&c[..5]);
        let a = rate_objective(&c, &recs);
        let b = rate_objective(&swapped, &recs);
        ensure((a - b).abs() <= 1e-9 * a.max(1.0), || format!("{a} vs {b}"))
    })
}

pub fn varimax_column_space() -> Result<(), String> {
    let s = (2..=8usize, 1..=4usize).prop_flat_map(|(p, r)| matrix_strategy(p.max(r), r));
    run(CASES, s, |l| {
        let opts = VarimaxOptions::default();
        let res = varimax(&l, &opts).unwrap();
        let dist = projection_distance(&projection_onto(&l), &projection_onto(&res.loadings));
        ensure(dist < 1e-10, || format!("distance {dist}"))?;
        let monotone = res.criterion_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12);
        ensure(monotone, || format!("trace {:?}", res.criterion_trace))
    })
}

pub fn moving_average_commutes() -> Result<(), String> {
    let s = (series_strategy(3, 3, 2..=12), 1..=4usize).prop_flat_map(|(x, rows)| {
        let order = x.order();
        (Just(x), 0..order, Just(rows), 1..=12usize)
    });
    let s = s.prop_flat_map(|(x, k, rows, w)| {
        let dk = x.shape()[k];
        let w = w.min(x.len());
        (Just(x), Just(k), matrix_strategy(rows, dk), Just(w))
    });
    run(CASES, s, |(x, k, a, w)| {
        let lhs = moving_average_series(&x.mode_product(&a, k).unwrap(), w).unwrap();
        let rhs = moving_average_series(&x, w)
            .unwrap()
            .mode_product(&a, k)
            .unwrap();
        let diff = max_abs(lhs.data(), rhs.data());
        ensure(diff < 1e-12, || format!("diff {diff}"))
    })
}

pub fn loss_bounds() -> Result<(), String> {
    let s = (2..=8usize).prop_flat_map(|d| {
        (1..=d).prop_flat_map(move |r| (matrix_strategy(d, r), matrix_strategy(d, r)))
    });
    run(CASES, s, |(a, b)| {
        let l = loss_projection(&projection_onto(&a), &projection_onto(&b)).unwrap();
        ensure((0.0..=2.0).contains(&l), || format!("projection loss {l}"))?;
        let u = orthonormalize(&a.columns(0, 1).into_owned());
        let v = orthonormalize(&b.columns(0, 1).into_owned());
        let s = loss_sine(u.as_slice(), v.as_slice()).unwrap();
        ensure((0.0..=1.0).contains(&s), || format!("sine loss {s}"))
    })
}

pub fn series_round_trips() -> Result<(), String> {
    run(CASES, series_strategy(3, 4, 1..=6), |x| {
        let mut buf = Vec::new();
        write_dense(&mut buf, &x).unwrap();
        let back = read_dense(&buf[..]).unwrap();
        let bits = |s: &TensorSeries| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(back.shape() == x.shape() && bits(&back) == bits(&x), || {
            "dense".into()
        })?;
        let mut buf = Vec::new();
        write_long_csv(&mut buf, &x).unwrap();
        let back = read_long_csv(&buf[..]).unwrap();
        ensure(back.missing() == 0, || "mask".into())?;
        ensure(
            back.series.shape() == x.shape() && bits(&back.series) == bits(&x),
            || "csv".into(),
        )
    })
}
