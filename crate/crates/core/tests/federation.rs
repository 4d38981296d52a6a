mod common;

use fedtraffic::aggregation::{AggregatorConfig, Strategy};
use fedtraffic::dataio::WindowedDataset;
use fedtraffic::federation::{
    account_communication, fine_tune, pool, run_centralized, run_federated, run_individual, EpochBudget,
    FederatedSimulation, FederationConfig,
};
use fedtraffic::neuralnet::{evaluate_mse, init_model, Architecture, Model, ModelSpec, ParameterVector};

fn config(arch: Architecture, strategy: Strategy, rounds: usize, epochs: usize) -> FederationConfig {
    let spec = ModelSpec::new(arch, 10, 11).with_width(8);
    FederationConfig { rounds, local_epochs: epochs, ..FederationConfig::new(spec, AggregatorConfig::new(strategy)) }
}

#[test]
fn zero_rounds_return_the_initial_model() {
    let clients = common::clients(&[120, 150], 10);
    let cfg = config(Architecture::Mlp, Strategy::FedAvg, 0, 3);
    let h = run_federated(&cfg, &clients).unwrap();
    assert!(h.rounds.is_empty());
    assert_eq!(h.best_round, None);
    assert_eq!(h.best_global, init_model(&cfg.model, cfg.seed).unwrap());
}

#[test]
fn single_client_federation_matches_local_training() {
    let clients = common::clients(&[400], 10);
    let cfg = config(Architecture::Lstm, Strategy::FedAvg, 8, 1);
    let mut trajectory: Vec<ParameterVector> = Vec::new();
    let mut hook = |_: usize, p: &ParameterVector| trajectory.push(p.clone());
    let c = &clients[0];
    run_individual(&cfg.model, &c.train, &c.validation, EpochBudget::Fixed { epochs: 8 }, cfg.seed, Some(&mut hook))
        .unwrap();
    let mut sim = FederatedSimulation::new(cfg, &clients).unwrap();
    for expected in &trajectory {
        sim.step().unwrap();
        assert_eq!(sim.global(), expected);
    }
}

#[test]
fn degenerate_strategies_track_fedavg_over_a_run() {
    // Every client fits in one batch, so τ is uniform.
    let clients = common::clients(&[150, 180, 210], 10);
    let run = |s: Strategy, tweak: &dyn Fn(&mut AggregatorConfig)| {
        let mut cfg = config(Architecture::Gru, s, 5, 2);
        tweak(&mut cfg.aggregator);
        run_federated(&cfg, &clients).unwrap().final_global
    };
    let fedavg = run(Strategy::FedAvg, &|_| {});
    assert_eq!(run(Strategy::FedProx, &|a| a.mu = 0.0), fedavg);
    assert_eq!(run(Strategy::FedAvgM, &|a| a.beta = 0.0), fedavg);
    assert_eq!(run(Strategy::FedNova, &|a| a.rho = 0.0), fedavg);
    assert_ne!(run(Strategy::FedProx, &|a| a.mu = 1.0), fedavg);
}

#[test]
fn thirty_rounds_of_three_epochs() {
    let clients = common::clients(&[120, 140, 160], 10);
    let cfg = config(Architecture::Mlp, Strategy::FedAvg, 30, 3);
    let h = run_federated(&cfg, &clients).unwrap();
    assert_eq!(h.rounds.len(), 30);
    let epochs: usize = h.rounds.iter().flat_map(|r| &r.clients).filter(|c| c.sampled).count() * cfg.local_epochs;
    assert_eq!(epochs, 270);
    let best = h.best_round.unwrap();
    let min = h.rounds.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(h.rounds[best - 1].val_mse, min);
    assert!(h.rounds[..best - 1].iter().all(|r| r.val_mse > min));
}

#[test]
fn history_is_deterministic_and_ledger_consistent() {
    let clients = common::clients(&[120, 140, 160, 180, 200], 10);
    let mut cfg = config(Architecture::Cnn, Strategy::FedYogi, 4, 1);
    cfg.sampling_fraction = 0.4;
    cfg.seed = 17;
    let a = run_federated(&cfg, &clients).unwrap();
    let b = run_federated(&cfg, &clients).unwrap();
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.final_global, b.final_global);
    for r in &a.rounds {
        assert_eq!(r.sampled.len(), 2);
        let uplink: u64 = r.clients.iter().map(|c| c.uplink_bytes).sum();
        assert_eq!(uplink, r.server_received_bytes);
        assert_eq!(r.total_bytes(), 2 * a.payload_bytes * 2);
        for c in &r.clients {
            assert_eq!(c.uplink_bytes, c.downlink_bytes);
            assert_eq!(c.sampled, r.sampled.contains(&c.client_id));
            if !c.sampled {
                assert_eq!((c.local_steps, c.uplink_bytes), (0, 0));
            }
        }
    }
    let ledger = account_communication(a.payload_bytes, &a, 4).unwrap();
    assert_eq!(ledger.total_bytes(), a.rounds.iter().map(|r| r.total_bytes()).sum::<u64>());
    assert!(account_communication(a.payload_bytes, &a, 5).is_err());
    assert_eq!(account_communication(a.payload_bytes, &a, 0).unwrap().total_bytes(), 0);
}

#[test]
fn pooling_and_individual_settings() {
    let clients = common::clients(&[120, 140, 160], 10);
    let (train, _) = pool(&clients).unwrap();
    assert_eq!(train.len(), clients.iter().map(|c| c.train.len()).sum::<usize>());

    let spec = ModelSpec::new(Architecture::Mlp, 10, 11).with_width(8);
    let budget = EpochBudget::EarlyStopping { max_epochs: 6, patience: 2 };
    let one = &clients[..1];
    let central = run_centralized(&spec, one, budget, 3, None).unwrap();
    let single = run_individual(&spec, &one[0].train, &one[0].validation, budget, 3, None).unwrap();
    assert_eq!(central, single);
}

#[test]
fn individual_training_improves_validation() {
    let clients = common::clients(&[300], 10);
    let spec = ModelSpec::new(Architecture::Gru, 10, 11).with_width(12);
    let c = &clients[0];
    let model = Model::new(&spec).unwrap();
    let before = evaluate_mse(&model, &init_model(&spec, 1).unwrap(), &c.validation).unwrap().unwrap();
    let r = run_individual(&spec, &c.train, &c.validation, EpochBudget::Fixed { epochs: 20 }, 1, None).unwrap();
    assert!(*r.val_loss.last().unwrap() < before);
    let again = run_individual(&spec, &c.train, &c.validation, EpochBudget::Fixed { epochs: 20 }, 1, None).unwrap();
    assert_eq!(r, again);
}

#[test]
fn fine_tuning_adapts_to_a_shifted_client() {
    let clients = common::clients(&[200, 220, 240], 10);
    let cfg = config(Architecture::Mlp, Strategy::FedAvg, 3, 2);
    let h = run_federated(&cfg, &clients).unwrap();
    let model = Model::new(&cfg.model).unwrap();
    let target = &clients[2];
    let before = evaluate_mse(&model, &h.best_global, &target.validation).unwrap().unwrap();
    let tuned = fine_tune(&cfg.model, &h.best_global, &target.train, 10, 0).unwrap();
    let after = evaluate_mse(&model, &tuned, &target.validation).unwrap().unwrap();
    assert!(after <= before, "{before} -> {after}");
    assert_eq!(fine_tune(&cfg.model, &h.best_global, &target.train, 0, 0).unwrap(), h.best_global);
}

#[test]
fn invalid_setups_are_rejected() {
    let clients = common::clients(&[120], 10);
    let mut cfg = config(Architecture::Mlp, Strategy::FedAvg, 1, 1);
    cfg.sampling_fraction = 0.0;
    assert!(run_federated(&cfg, &clients).is_err());
    let cfg = config(Architecture::Mlp, Strategy::FedAvg, 1, 1);
    assert!(run_federated(&cfg, &[]).is_err());
    let mut dup = clients.clone();
    dup.push(clients[0].clone());
    assert!(run_federated(&cfg, &dup).is_err());
    let empty = WindowedDataset::empty(10, 11, 5);
    assert!(run_individual(&cfg.model, &empty, &empty, EpochBudget::Fixed { epochs: 1 }, 0, None).is_err());
}
