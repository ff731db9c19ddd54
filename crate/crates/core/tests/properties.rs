//! Algebraic invariants on random inputs.

use approx::assert_relative_eq;
use causal_gmm::gmm::{asymptotic_variance, solve_weighted, WeightMatrix};
use causal_gmm::{
    cd_one_vs_rest, cd_two_env, encode_environments, fit, instrument_block, moment_jacobian, read_csv,
    rowwise_kronecker, sample_moment, ColumnRoles, Dataset, EnvironmentLabels, FitOptions, InstrumentColumns,
    MomentSpec, Weighting,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn vector(len: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0f64..5.0, len).prop_map(DVector::from_vec)
}

/// Labels over at most four levels with at least two present.
fn labels(n: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0u8..4, n)
        .prop_filter("needs two environments", |v| v.iter().any(|&l| l != v[0]))
        .prop_map(|v| v.into_iter().map(|l| format!("env{l}")).collect())
}

/// `(X, Y, E)` with E continuous, shapes drawn first.
fn instrument_data() -> impl Strategy<Value = Dataset> {
    (8usize..30, 1usize..4, 1usize..4).prop_flat_map(|(n, p, q)| {
        (matrix(n, p), vector(n), matrix(n, q)).prop_map(|(x, y, e)| Dataset::new(x, y, e).unwrap())
    })
}

/// Two environments of sizes `n0 != n1` with distinct exposure scales.
fn two_env_data() -> impl Strategy<Value = Dataset> {
    (5usize..20, 21usize..40, 1usize..4).prop_flat_map(|(n0, n1, p)| {
        let n = n0 + n1;
        (matrix(n, p), vector(n)).prop_map(move |(mut x, y)| {
            for i in n0..n {
                x.row_mut(i).scale_mut(2.0);
            }
            let labels = (0..n).map(|i| if i < n0 { "a" } else { "b" });
            Dataset::from_environments(x, y, EnvironmentLabels::new(labels).unwrap()).unwrap()
        })
    })
}

fn random_pd(a: &DMatrix<f64>) -> WeightMatrix {
    let k = a.nrows();
    let m = a * a.transpose() + DMatrix::identity(k, k);
    WeightMatrix::new((&m + m.transpose()) * 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoded_columns_have_zero_mean(l in (2usize..60).prop_flat_map(labels)) {
        let labels = EnvironmentLabels::new(l).unwrap();
        let e = encode_environments(&labels).unwrap();
        prop_assert_eq!(e.ncols(), labels.num_levels() - 1);
        for col in e.column_iter() {
            prop_assert!(col.sum().abs() <= 4.0 * f64::EPSILON * col.len() as f64);
        }
    }

    #[test]
    fn kronecker_rows_are_outer_products(
        (x, e) in (1usize..6, 1usize..4, 1usize..4).prop_flat_map(|(n, p, q)| (matrix(n, p), matrix(n, q)))
    ) {
        let ex = rowwise_kronecker(&e, &x).unwrap();
        let xe = rowwise_kronecker(&x, &e).unwrap();
        for i in 0..x.nrows() {
            let xi = x.row(i).transpose();
            let ei = e.row(i).transpose();
            // vec() stacks columns
            let vec_ex: Vec<f64> = (&ei * xi.transpose()).iter().copied().collect();
            let vec_xe: Vec<f64> = (&xi * ei.transpose()).iter().copied().collect();
            prop_assert_eq!(xe.row(i).iter().copied().collect::<Vec<_>>(), vec_ex);
            prop_assert_eq!(ex.row(i).iter().copied().collect::<Vec<_>>(), vec_xe);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(
        (x, y, l) in (4usize..20, 1usize..4).prop_flat_map(|(n, p)| {
            (
                prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), n * p)
                    .prop_map(move |v| DMatrix::from_vec(n, p, v)),
                prop::collection::vec(-1e300f64..1e300, n).prop_map(DVector::from_vec),
                labels(n),
            )
        })
    ) {
        let p = x.ncols();
        let data = Dataset::from_environments(x.clone(), y.clone(), EnvironmentLabels::new(l.clone()).unwrap()).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let roles = ColumnRoles {
            response: data.response_name().to_string(),
            exposures: data.exposure_names().to_vec(),
            instruments: InstrumentColumns::Environment("env".into()),
        };
        let back = read_csv(buf.as_slice(), &roles).unwrap();
        for (a, b) in back.x().iter().zip(x.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in back.y().iter().zip(y.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back.labels().unwrap().labels(), &l[..]);
        prop_assert_eq!(back.p(), p);
    }

    #[test]
    fn numeric_instruments_round_trip(data in instrument_data()) {
        let raw = data.e().clone();
        let data = Dataset::from_instruments(data.x().clone(), data.y().clone(), raw.clone()).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let roles = ColumnRoles {
            response: data.response_name().to_string(),
            exposures: data.exposure_names().to_vec(),
            instruments: InstrumentColumns::Numeric(data.instrument_names().to_vec()),
        };
        let back = read_csv(buf.as_slice(), &roles).unwrap();
        let back_raw = back.raw_instruments().unwrap();
        for (a, b) in back_raw.iter().zip(raw.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back.e(), data.e());
    }

    #[test]
    fn moments_are_affine(data in instrument_data(), seed in vector(3)) {
        let beta = DVector::from_iterator(data.p(), seed.iter().copied().cycle().take(data.p()));
        for spec in [MomentSpec::iv(), MomentSpec::gcd(), MomentSpec::hybrid(), MomentSpec::ols()] {
            let m0 = sample_moment(&spec, &data, &DVector::zeros(data.p())).unwrap();
            let mb = sample_moment(&spec, &data, &beta).unwrap();
            let expected = &m0 - moment_jacobian(&spec, &data) * &beta;
            let scale = m0.amax().max(expected.amax()).max(1.0);
            prop_assert!((mb - expected).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hybrid_is_iv_then_gcd(data in instrument_data(), b in vector(3)) {
        let beta = DVector::from_iterator(data.p(), b.iter().copied().cycle().take(data.p()));
        let iv = sample_moment(&MomentSpec::iv(), &data, &beta).unwrap();
        let gcd = sample_moment(&MomentSpec::gcd(), &data, &beta).unwrap();
        let hybrid = sample_moment(&MomentSpec::hybrid(), &data, &beta).unwrap();
        let joined: Vec<f64> = iv.iter().chain(gcd.iter()).copied().collect();
        prop_assert_eq!(hybrid.iter().copied().collect::<Vec<_>>(), joined);
    }

    #[test]
    fn gcd_moment_is_multiple_of_cd_contrast(data in two_env_data(), b in vector(3)) {
        let beta = DVector::from_iterator(data.p(), b.iter().copied().cycle().take(data.p()));
        let labels = data.labels().unwrap();
        let env_moment = |level: &str| {
            let (x, y) = data.subset_xy(&labels.rows_of(level));
            x.tr_mul(&(y - &x * &beta)) / x.nrows() as f64
        };
        let contrast = env_moment("a") - env_moment("b");
        let (na, nb, n) = (labels.count("a") as f64, labels.count("b") as f64, data.n() as f64);
        let gcd = sample_moment(&MomentSpec::gcd(), &data, &beta).unwrap();
        let expected = contrast * (na * nb / (n * n));
        prop_assert!((gcd - &expected).amax() <= 1e-12 * expected.amax().max(1.0));
    }

    #[test]
    fn just_identified_fit_ignores_weight(data in two_env_data(), a in matrix(3, 3)) {
        let g = instrument_block(&MomentSpec::gcd(), &data);
        let k = g.ncols();
        let w = random_pd(&a.view((0, 0), (k, k)).into_owned());
        let reference = fit(&MomentSpec::gcd(), &data, &FitOptions::default()).unwrap();
        let weighted = solve_weighted(&g, data.x(), data.y(), &w).unwrap();
        prop_assert!((weighted - &reference.beta_hat).amax() <= 1e-9 * reference.beta_hat.amax().max(1.0));
    }

    #[test]
    fn overidentified_fit_is_stationary(
        (x, u, e) in (30usize..60, 1usize..3).prop_flat_map(|(n, p)| (matrix(n, p), vector(n), matrix(n, p + 2)))
    ) {
        let p = x.ncols();
        let x = &x + e.columns(0, p);
        let y = &x * DVector::from_element(p, 1.5) + u;
        let data = Dataset::new(x, y, e).unwrap();
        for (spec, weighting) in [
            (MomentSpec::iv(), Weighting::TwoStep),
            (MomentSpec::iv(), Weighting::Tsls),
            (MomentSpec::hybrid(), Weighting::TwoStep),
            (MomentSpec::gcd(), Weighting::Identity),
        ] {
            let f = fit(&spec, &data, &FitOptions { weighting, level: 0.95 }).unwrap();
            let w = match &f.weight {
                causal_gmm::gmm::WeightUsed::Matrix(w) => w.matrix().clone(),
                causal_gmm::gmm::WeightUsed::JustIdentified => unreachable!(),
            };
            let g = instrument_block(&spec, &data);
            let resid = data.y() - data.x() * &f.beta_hat;
            let foc = data.x().tr_mul(&g) * &w * g.tr_mul(&resid);
            let scale = (data.x().tr_mul(&g) * &w * g.tr_mul(data.y())).amax().max(1.0);
            prop_assert!(foc.amax() <= 1e-8 * scale, "{:?}: {}", spec.family, foc.amax());
        }
    }

    #[test]
    fn sandwich_is_invariant_to_weight_scale(data in instrument_data(), a in matrix(16, 16), c in 0.01f64..100.0) {
        let spec = MomentSpec::hybrid();
        let g = instrument_block(&spec, &data);
        let k = g.ncols();
        let w = random_pd(&a.view((0, 0), (k, k)).into_owned());
        let scaled = WeightMatrix::new(w.matrix() * c).unwrap();
        let beta = DVector::from_element(data.p(), 0.5);
        let (Ok(s1), Ok(s2)) = (
            asymptotic_variance(&g, data.x(), data.y(), &beta, Some(&w)),
            asymptotic_variance(&g, data.x(), data.y(), &beta, Some(&scaled)),
        ) else {
            return Ok(());
        };
        prop_assert!((&s1 - &s2).amax() <= 1e-8 * s1.amax().max(1e-300));
    }

    #[test]
    fn fit_inference_is_well_formed(data in two_env_data()) {
        let f = fit(&MomentSpec::gcd(), &data, &FitOptions::default()).unwrap();
        prop_assert!(f.se.iter().all(|s| *s >= 0.0));
        for j in 0..data.p() {
            prop_assert!(f.ci_low[j] < f.ci_high[j] || f.diagnostics.degenerate_ci.contains(&j));
            prop_assert!((0.0..=1.0).contains(&f.p_values[j]));
        }
        prop_assert!((&f.vcov - f.vcov.transpose()).amax() <= 1e-12 * f.vcov.amax());
        let eig = f.vcov.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * eig.amax());
    }

    #[test]
    fn one_vs_rest_with_two_envs_matches_two_env_fit(data in two_env_data()) {
        let two = cd_two_env(&data, 0.95).unwrap();
        let merged = cd_one_vs_rest(&data, 0.95).unwrap();
        prop_assert_eq!(merged.per_env_estimates.len(), 2);
        for est in &merged.per_env_estimates {
            prop_assert!((est - &two.beta_hat).amax() <= 1e-10 * two.beta_hat.amax().max(1.0));
        }
        prop_assert!((&merged.beta_hat - &two.beta_hat).amax() <= 1e-10 * two.beta_hat.amax().max(1.0));
    }

    #[test]
    fn one_vs_rest_merge_rule(
        (x, y, l) in (40usize..80, 1usize..3).prop_flat_map(|(n, p)| (matrix(n, p), vector(n), Just(n)))
            .prop_flat_map(|(x, y, n)| (Just(x), Just(y), prop::collection::vec(0u8..3, n)))
    ) {
        let mut x = x;
        for (i, lab) in l.iter().enumerate() {
            x.row_mut(i).scale_mut(1.0 + f64::from(*lab));
        }
        let mut labels: Vec<String> = l.iter().map(|v| v.to_string()).collect();
        labels[0] = "0".into();
        labels[1] = "1".into();
        labels[2] = "2".into();
        let data = Dataset::from_environments(x, y, EnvironmentLabels::new(labels).unwrap()).unwrap();
        let Ok(merged) = cd_one_vs_rest(&data, 0.9) else { return Ok(()); };
        let r = merged.per_env_estimates.len();
        prop_assert_eq!(r, 3);
        let mean = merged.per_env_estimates.iter().fold(DVector::zeros(data.p()), |acc, b| acc + b) / r as f64;
        prop_assert!((&merged.beta_hat - mean).amax() <= 1e-12 * merged.beta_hat.amax().max(1.0));
        for (lo, hi) in &merged.per_env_ci {
            for j in 0..data.p() {
                prop_assert!(merged.ci_low[j] <= lo[j] && hi[j] <= merged.ci_high[j]);
            }
        }
    }
}

#[test]
fn two_env_gcd_equals_cd_scalar_oracle() {
    // p = 1: (b1 - b0) / (a1 - a0) from per-environment moments
    let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 1.0, 3.0, -2.0]);
    let y = DVector::from_vec(vec![2.0, 1.0, 0.5, 4.0, -1.0]);
    let labels = EnvironmentLabels::new(["a", "a", "b", "b", "b"]).unwrap();
    let data = Dataset::from_environments(x, y, labels).unwrap();
    let (a0, b0) = ((1.0 + 4.0) / 2.0, (2.0 + 2.0) / 2.0);
    let (a1, b1) = ((1.0 + 9.0 + 4.0) / 3.0, (0.5 + 12.0 + 2.0) / 3.0);
    let oracle = (b1 - b0) / (a1 - a0);
    let f = fit(&MomentSpec::gcd(), &data, &FitOptions::default()).unwrap();
    assert_relative_eq!(f.beta_hat[0], oracle, max_relative = 1e-12);
}
