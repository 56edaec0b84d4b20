use windemos::par::map_indexed_seq;
use windemos::predict::make_forecast;
use windemos::simulate::{simulate, SimulationSpec};
use windemos::verify::{score_case, score_cases, Forecast, VerifyOptions};

fn spec() -> SimulationSpec {
    SimulationSpec { n_stations: 6, n_days: 45, seed: 9, ..SimulationSpec::default() }
}

#[test]
fn scores_match_sequential_bitwise() {
    let spec = spec();
    let cases = simulate(&spec).unwrap().cases;
    let params = spec.truth_parameters().unwrap();
    let forecasts: Vec<Forecast> =
        cases.iter().map(|c| Forecast::Density(make_forecast(&params, &c.ensemble).unwrap())).collect();
    let obs: Vec<_> = cases.iter().map(|c| c.observation.unwrap()).collect();
    let speeds: Vec<f64> = obs.iter().map(|o| o.speed()).collect();
    let opts = VerifyOptions { es_samples: 500, ..VerifyOptions::default() };
    let (_, par, _) = score_cases(&forecasts, &obs, &speeds, &opts).unwrap();
    let seq = map_indexed_seq(&forecasts, |i, f| score_case(f, obs[i], speeds[i], i as u64, &opts).unwrap());
    assert_eq!(par.len(), seq.len());
    for (a, b) in par.iter().zip(&seq) {
        assert_eq!(a.es.to_bits(), b.es.to_bits());
        assert_eq!(a.crps.to_bits(), b.crps.to_bits());
        assert_eq!(a.rank, b.rank);
    }
}

#[cfg(feature = "parallel")]
#[test]
fn training_is_independent_of_thread_count() {
    use windemos::config::RunConfig;
    use windemos::pipeline::{fit_correlation_stage, train};

    let cases = simulate(&spec()).unwrap().cases;
    let cfg = RunConfig { n_train: Some(20), ..RunConfig::default() };
    let corr = fit_correlation_stage(&cases, None).unwrap().chosen;
    let many = train(&cases, &corr, &cfg).unwrap().params;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = pool.install(|| train(&cases, &corr, &cfg).unwrap().params);
    assert_eq!(many, one);
}
