//! Distributional checks of the simulator and estimators by Monte Carlo.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use surrogate_core::asymptotics::endpoint_covariance;
use surrogate_core::experiments::{analyze_meta, run_simulation, synthetic_records, DesignName, SimulationDesign};
use surrogate_core::inference::ols_fit;
use surrogate_core::model::{derive_endpoints, scenario_table, to_joint};
use surrogate_core::sampling::{sample_arm, simulate_replicates, SeedSpec};
use surrogate_core::Execution;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn central_moment(xs: &[f64], k: i32) -> f64 {
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu).powi(k)).sum::<f64>() / xs.len() as f64
}

fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() - 1) as f64
}

fn estimates(scenario: usize, n: u64, m: u64, seed: u64, reps: usize) -> (Vec<f64>, Vec<f64>) {
    let sims = simulate_replicates(&scenario_table()[scenario], n, m, seed, reps, Execution::Parallel).unwrap();
    sims.iter().map(|t| (t.estimate.s_hat, t.estimate.m_hat)).unzip()
}

#[test]
fn late_counts_follow_binomial_marginal() {
    let params = &scenario_table()[0];
    let joint = to_joint(&params.control).unwrap();
    let (n, p) = (20_000u64, params.control.p_late);
    let draws: Vec<u64> = (0..2000).map(|i| sample_arm(&joint, n, &SeedSpec::new(11, 0, i)).late()).collect();

    let binom = Binomial::new(p, n).unwrap();
    // Ten bins of roughly equal probability from the exact quantiles.
    let mut edges = vec![0u64];
    for k in 1..10 {
        edges.push(binom.inverse_cdf(k as f64 / 10.0));
    }
    let mut stat = 0.0;
    for (i, &lo) in edges.iter().enumerate() {
        let hi = edges.get(i + 1).copied();
        let prob = match hi {
            Some(hi) => binom.cdf(hi) - if lo == 0 { 0.0 } else { binom.cdf(lo) },
            None => 1.0 - binom.cdf(lo),
        };
        let observed = draws
            .iter()
            .filter(|&&x| (lo == 0 || x > lo) && hi.is_none_or(|hi| x <= hi))
            .count() as f64;
        let expected = prob * draws.len() as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    let p_value = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat}, p {p_value}");
}

#[test]
fn estimates_are_consistent() {
    let (s, m) = estimates(0, 20_000, 20_000, 3, 2000);
    assert!(mean(&s).abs() < 0.02 && mean(&m).abs() < 0.02);

    let truth = derive_endpoints(&scenario_table()[3]).unwrap();
    let (_, m) = estimates(3, 100_000, 100_000, 4, 2000);
    assert!((mean(&m) - truth.m).abs() < 0.01, "mean M_hat {}", mean(&m));

    let rmse = |n: u64| {
        let (s, _) = estimates(2, n, n, 5, 1000);
        (s.iter().map(|x| (x - 0.125).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
    };
    let (a, b, c) = (rmse(20_000), rmse(100_000), rmse(500_000));
    assert!(a > b && b > c, "rmse {a} {b} {c}");
}

#[test]
fn estimates_are_positively_correlated_in_every_scenario() {
    for k in 0..4 {
        let (s, m) = estimates(k, 20_000, 20_000, 6 + k as u64, 2000);
        assert!(covariance(&s, &m) > 0.0, "scenario {}", k + 1);
    }
}

#[test]
fn standardized_estimates_look_normal() {
    // The ratio estimators keep a skewness of order 1/sqrt(events); at
    // n = 1e5 it is still about -0.08, so test further out.
    let n = 1_000_000u64;
    let (s, m) = estimates(0, n, n, 21, 20_000);
    let truth = derive_endpoints(&scenario_table()[0]).unwrap();
    let root = (n as f64).sqrt();
    for (xs, centre) in [(&s, truth.s), (&m, truth.m)] {
        let z: Vec<f64> = xs.iter().map(|x| root * (x - centre)).collect();
        let var = central_moment(&z, 2);
        let skew = central_moment(&z, 3) / var.powf(1.5);
        let kurt = central_moment(&z, 4) / (var * var);
        assert!(skew.abs() < 0.1, "skewness {skew}");
        assert!((kurt - 3.0).abs() < 0.3, "kurtosis {kurt}");
    }
}

#[test]
fn delta_method_variances_match_simulation() {
    let n = 100_000u64;
    let params = &scenario_table()[0];
    let cov = endpoint_covariance(params, n, n).unwrap();
    let (s, m) = estimates(0, n, n, 31, 5000);
    let n_f = n as f64;
    let emp_s = covariance(&s, &s) * n_f;
    let emp_m = covariance(&m, &m) * n_f;
    assert!(((emp_s - cov.var_s) / cov.var_s).abs() < 0.1, "varS {emp_s} vs {}", cov.var_s);
    assert!(((emp_m - cov.var_m) / cov.var_m).abs() < 0.1, "varM {emp_m} vs {}", cov.var_m);
}

#[test]
fn single_scenario_slope_tracks_covariance_ratio() {
    let n = 20_000u64;
    let params = &scenario_table()[0];
    let cov = endpoint_covariance(params, n, n).unwrap();
    let target = cov.cov_sm / cov.var_s;
    let (s, m) = estimates(0, n, n, 41, 1000);
    let pairs: Vec<(f64, f64)> = s.into_iter().zip(m).collect();
    let fit = ols_fit(&pairs, None).unwrap();
    assert!((fit.beta1_hat - target).abs() < 0.1, "slope {} vs {target}", fit.beta1_hat);
}

#[test]
fn slope_attenuates_as_scenarios_mix() {
    let c = run_simulation(&SimulationDesign::standard(DesignName::C).with_repetitions(1000), 51, Execution::Parallel).unwrap();
    let d = run_simulation(&SimulationDesign::standard(DesignName::D).with_repetitions(1000), 51, Execution::Parallel).unwrap();
    assert!(c.mean_beta1 > d.mean_beta1, "C {} D {}", c.mean_beta1, d.mean_beta1);

    for summary in [&c, &d] {
        let (ds, dm): (Vec<f64>, Vec<f64>) = summary
            .scatter
            .iter()
            .map(|p| (p.s_hat - p.truth.s, p.m_hat - p.truth.m))
            .unzip();
        assert!(covariance(&ds, &dm) > 0.0);
    }
}

#[test]
fn table_rates_are_stable_across_repetition_counts() {
    for name in [DesignName::A, DesignName::B, DesignName::C, DesignName::D] {
        let small = run_simulation(&SimulationDesign::standard(name).with_repetitions(100), 61, Execution::Parallel).unwrap();
        let large = run_simulation(&SimulationDesign::standard(name).with_repetitions(1000), 62, Execution::Parallel).unwrap();
        let p = large.rejection_rate;
        let se = (p * (1.0 - p) / small.used_repetitions as f64).sqrt().max(0.01);
        assert!(
            (small.rejection_rate - p).abs() < 3.0 * se,
            "{name}: {} vs {p}",
            small.rejection_rate
        );
    }
}

#[test]
fn practical_slope_converges_to_oracle_slope() {
    let table = scenario_table();
    let truths: Vec<(f64, f64)> = table.iter().map(|p| derive_endpoints(p).unwrap()).map(|e| (e.s, e.m)).collect();
    let oracle = ols_fit(&truths, None).unwrap().beta1_hat;

    let n = 10_000_000u64;
    let mut slopes = Vec::new();
    for rep in 0..200u64 {
        let pairs: Vec<(f64, f64)> = table
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let sim = surrogate_core::sampling::simulate_trial(p, n, n, &SeedSpec::new(71, k as u64, rep)).unwrap();
                (sim.estimate.s_hat, sim.estimate.m_hat)
            })
            .collect();
        slopes.push(ols_fit(&pairs, None).unwrap().beta1_hat);
    }
    let gap = (mean(&slopes) - oracle).abs();
    assert!(gap < 0.02, "oracle {oracle}, practical {}", mean(&slopes));
}

#[test]
fn synthetic_meta_analysis_slope_is_near_sampling_oracle() {
    let params = &scenario_table()[2];
    let n = 50_000u64;
    let records = synthetic_records(params, n, n, 4, 81).unwrap();
    let analysis = analyze_meta(&records, &[0.66], 0.10).unwrap();

    let (s, m) = estimates(2, n, n, 82, 100_000);
    let pairs: Vec<(f64, f64)> = s.into_iter().zip(m).collect();
    let oracle = ols_fit(&pairs, None).unwrap().beta1_hat;
    assert!(
        (analysis.fit.beta1_hat - oracle).abs() < 0.5,
        "analysis {} vs oracle {oracle}",
        analysis.fit.beta1_hat
    );
}
