use gspnet::analysis::jackson_mean_system_time;
use gspnet::learn::optimize_bernoulli;
use gspnet::network::NetworkSpec;
use gspnet::plq::GspParams;
use gspnet::policy::{BernoulliWeights, Policy};
use gspnet::sim::{average_system_time, run_episode, Horizon, SimConfig, SimMode};
use std::time::Instant;

fn main() {
    let spec = NetworkSpec::reference();
    let params = GspParams::new(1.224744, 1.224743).unwrap();
    let horizon = 1e6;

    for seed in [1u64, 2, 3] {
        let sim = SimConfig { horizon: Horizon::Time(horizon), seed, ..SimConfig::default() };
        let t0 = Instant::now();
        let mut line = format!("seed {seed}:");
        for policy in [
            Policy::gsp(params, spec.service_rates),
            Policy::Ssp,
            Policy::Bernoulli(BernoulliWeights::new([0.28, 0.20, 0.52]).unwrap()),
        ] {
            let data = run_episode(&spec, &policy, &sim).unwrap();
            let w = average_system_time(&data).unwrap();
            line += &format!("  {} {:.3}", policy.name(), w);
        }
        println!("{line}   ({:?})", t0.elapsed());
    }

    // Event-driven GSP for the discretization check.
    for seed in [1u64] {
        let sim = SimConfig { mode: SimMode::EventDriven, horizon: Horizon::Time(horizon), seed, ..SimConfig::default() };
        let data = run_episode(&spec, &Policy::gsp(params, spec.service_rates), &sim).unwrap();
        println!("event gsp seed {seed}: {:.3}", average_system_time(&data).unwrap());
    }

    // OB: grid search at moderate eval length, then long eval of winner vs eta*.
    let t0 = Instant::now();
    let search_sim = SimConfig { horizon: Horizon::Time(2e4), seed: 101, ..SimConfig::default() };
    let (eta, score) = optimize_bernoulli(&spec, &search_sim, 0.02).unwrap();
    println!("grid winner eta = {:?} (eval mean {:.2}) in {:?}", eta.0, score, t0.elapsed());

    let eval = SimConfig { horizon: Horizon::Time(1e6), seed: 55, ..SimConfig::default() };
    let paper_eta = BernoulliWeights::new([0.28, 0.20, 0.52]).unwrap();
    let w_win = average_system_time(&run_episode(&spec, &Policy::Bernoulli(eta), &eval).unwrap()).unwrap();
    let w_ref = average_system_time(&run_episode(&spec, &Policy::Bernoulli(paper_eta), &eval).unwrap()).unwrap();
    println!("winner {:.3} vs reference-eta {:.3}  (ratio {:.4})", w_win, w_ref, w_win / w_ref);

    let eval_event = SimConfig { mode: SimMode::EventDriven, horizon: Horizon::Time(1e6), seed: 56, ..SimConfig::default() };
    let w_fifo = average_system_time(&run_episode(&spec, &Policy::Bernoulli(paper_eta), &eval_event).unwrap()).unwrap();
    println!("event FIFO at reference eta: {:.3} vs jackson {:.3}", w_fifo, jackson_mean_system_time(&spec, &paper_eta).unwrap());
}
