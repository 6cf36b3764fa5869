#![allow(clippy::needless_range_loop)]

mod common;

use aggiv::estimators::fit_2sls;
use aggiv::scm::{
    aggregate_instrument_estimand, aggregate_outcome_estimand, AggregateInstrumentSpec,
    AggregateOutcomeSpec,
};
use aggiv::{AggregateIvScm, Dataset, Var};
use common::{cov_std_error, random_dims, random_scm, rng, sample_cov};
use proptest::prelude::*;
use rand::Rng;

fn var_of(label: &str) -> Var {
    match label {
        "u" => Var::Confounder,
        "a" => Var::Aggregate,
        "y" => Var::Outcome,
        l if l.starts_with('i') => Var::Instrument(l[1..].parse::<usize>().unwrap() - 1),
        l => Var::Component(l[1..].parse::<usize>().unwrap() - 1),
    }
}

#[test]
fn population_moments_match_large_samples() {
    let mut r = rng(11);
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for s in 0..20 {
        let (k, m) = random_dims(&mut r, 4, 2);
        let scm = random_scm(&mut r, k, m, false);
        let mom = scm.population_moments().unwrap();
        let data = scm.sample_observational(n, 1000 + s).unwrap();
        let labels = data.labels().to_vec();
        for (p, a) in labels.iter().enumerate() {
            for b in &labels[p..] {
                let (va, vb) = (var_of(a), var_of(b));
                let expected = mom.cov(va, vb);
                let got = sample_cov(data.column(a).unwrap(), data.column(b).unwrap());
                let se = cov_std_error(mom.var(va), mom.var(vb), expected, n);
                worst = worst.max((got - expected).abs() / se);
            }
        }
    }
    assert!(worst < 4.5, "worst standardized covariance error {worst}");
}

/// Appends sub-outcomes `Y_i = sum_j B_ji A_j + g_i U + e_i` and their `omega` aggregate.
fn with_aggregate_outcome(
    data: &Dataset,
    scm: &AggregateIvScm,
    spec: &AggregateOutcomeSpec,
    seed: u64,
) -> Dataset {
    let n = data.n_rows();
    let u = data.column("u").unwrap();
    let comps: Vec<&[f64]> = (1..=scm.k)
        .map(|j| data.column(&format!("a{j}")).unwrap())
        .collect();
    let mut y_agg = vec![0.0; n];
    for (i, &w) in spec.omega.iter().enumerate() {
        let noise = aggiv::rng::standard_normals(seed, 900 + i as u64, n);
        for t in 0..n {
            let mut v = spec.gamma_y_vec[i] * u[t] + spec.var_y_vec[i].sqrt() * noise[t];
            for j in 0..scm.k {
                v += spec.beta_matrix[j][i] * comps[j][t];
            }
            y_agg[t] += w * v;
        }
    }
    Dataset::new(
        vec!["i1".into(), "a".into(), "y_agg".into()],
        vec![
            data.column("i1").unwrap().to_vec(),
            data.column("a").unwrap().to_vec(),
            y_agg,
        ],
    )
    .unwrap()
}

#[test]
fn aggregate_outcome_estimand_matches_2sls() {
    let mut r = rng(12);
    let mut checked = 0;
    while checked < 5 {
        let k = r.random_range(1..=4);
        let scm = random_scm(&mut r, k, 1, false);
        let m_y = r.random_range(1..=3);
        let spec = AggregateOutcomeSpec {
            omega: (0..m_y).map(|_| r.random_range(-2.0..2.0)).collect(),
            beta_matrix: (0..k)
                .map(|_| (0..m_y).map(|_| r.random_range(-2.0..2.0)).collect())
                .collect(),
            gamma_y_vec: (0..m_y).map(|_| r.random_range(-1.0..1.0)).collect(),
            var_y_vec: vec![1.0; m_y],
        };
        let estimand = aggregate_outcome_estimand(&scm, &spec).unwrap();
        if estimand.abs() < 1.0 {
            continue;
        }
        let data = scm.sample_observational(400_000, 50 + checked).unwrap();
        let data = with_aggregate_outcome(&data, &scm, &spec, 77 + checked);
        let fit = fit_2sls(&data, "a", "y_agg", &["i1"]).unwrap();
        assert!(
            (fit.point_estimate - estimand).abs() <= 0.02 * estimand.abs(),
            "2SLS {} vs estimand {estimand}",
            fit.point_estimate
        );
        checked += 1;
    }
}

#[test]
fn aggregate_instrument_estimand_matches_2sls() {
    let mut r = rng(13);
    let mut checked = 0;
    while checked < 5 {
        let (k, m) = (r.random_range(1..=4), r.random_range(2..=3));
        let scm = random_scm(&mut r, k, m, false);
        let spec = AggregateInstrumentSpec {
            eta: (0..m).map(|_| r.random_range(-1.0..1.0)).collect(),
        };
        let Ok(estimand) = aggregate_instrument_estimand(&scm, &spec) else {
            continue;
        };
        if estimand.abs() < 1.0 {
            continue;
        }
        let data = scm.sample_observational(400_000, 60 + checked).unwrap();
        let n = data.n_rows();
        let combined: Vec<f64> = (0..n)
            .map(|t| {
                (0..m)
                    .map(|l| spec.eta[l] * data.column(&format!("i{}", l + 1)).unwrap()[t])
                    .sum()
            })
            .collect();
        let data = Dataset::new(
            vec!["z".into(), "a".into(), "y".into()],
            vec![
                combined,
                data.column("a").unwrap().to_vec(),
                data.column("y").unwrap().to_vec(),
            ],
        )
        .unwrap();
        let fit = fit_2sls(&data, "a", "y", &["z"]).unwrap();
        assert!(
            (fit.point_estimate - estimand).abs() <= 0.02 * estimand.abs(),
            "2SLS {} vs estimand {estimand}",
            fit.point_estimate
        );
        checked += 1;
    }
}

fn scm_strategy() -> impl Strategy<Value = AggregateIvScm> {
    (1usize..6, 1usize..4, any::<u64>())
        .prop_map(|(k, m, seed)| random_scm(&mut rng(seed), k, m, false))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimand_is_covariance_ratio(scm in scm_strategy()) {
        let mom = scm.population_moments().unwrap();
        for l in 0..scm.m {
            let inst = Var::Instrument(l);
            let ratio = mom.cov(Var::Outcome, inst) / mom.cov(Var::Aggregate, inst);
            let closed = scm.iv_estimand(l).unwrap();
            prop_assert!((closed - ratio).abs() <= 1e-12 * ratio.abs().max(1.0));
        }
    }

    #[test]
    fn proportional_models_identify_tau(mut scm in scm_strategy(), tau in -3.0f64..3.0) {
        scm.beta = scm.alpha.iter().map(|a| tau * a).collect();
        let found = scm.proportional_ratio(1e-9).unwrap().unwrap();
        prop_assert!((found - tau).abs() <= 1e-12 * tau.abs().max(1.0));
        for l in 0..scm.m {
            prop_assert!((scm.iv_estimand(l).unwrap() - tau).abs() <= 1e-12 * tau.abs().max(1.0));
        }
    }

    #[test]
    fn covariance_is_symmetric_psd(scm in scm_strategy()) {
        let mom = scm.population_moments().unwrap();
        prop_assert_eq!(&mom.cov, &mom.cov.transpose());
        let min = mom.cov.clone().symmetric_eigenvalues().min();
        let scale = mom.cov.diagonal().max();
        prop_assert!(min >= -1e-10 * scale);
    }

    #[test]
    fn rescaling_alpha_rescales_the_estimand(scm in scm_strategy(), c in 0.5f64..3.0) {
        let mut scaled = scm.clone();
        scaled.alpha.iter_mut().for_each(|a| *a *= c);
        for l in 0..scm.m {
            let base = scm.iv_estimand(l).unwrap();
            prop_assert!((scaled.iv_estimand(l).unwrap() * c - base).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }
}
