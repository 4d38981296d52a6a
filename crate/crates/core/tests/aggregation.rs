use fedtraffic::aggregation::{aggregate, weighted_delta, AggregatorConfig, ClientUpdate, ServerState, Strategy};
use fedtraffic::neuralnet::{Layout, ParameterVector};
use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

fn vector(values: Vec<f64>) -> ParameterVector {
    let mut layout = Layout::new("test");
    layout.push("w", vec![values.len()]);
    ParameterVector::new(layout, values).unwrap()
}

/// Client models around a global, with sample counts and step counts.
fn round_input(dim: usize) -> impl proptest::strategy::Strategy<Value = (Vec<f64>, Vec<(Vec<f64>, usize, usize)>)> {
    (
        prop::collection::vec(-2.0f64..2.0, dim),
        prop::collection::vec((prop::collection::vec(-2.0f64..2.0, dim), 1usize..500, 1usize..20), 1..7),
    )
}

fn updates(global: &ParameterVector, clients: &[(Vec<f64>, usize, usize)]) -> Vec<ClientUpdate> {
    clients
        .iter()
        .enumerate()
        .map(|(i, (w, n, tau))| ClientUpdate::from_local(format!("c{i}"), global, vector(w.clone()), *n, *tau).unwrap())
        .collect()
}

fn run(cfg: &AggregatorConfig, global: &ParameterVector, ups: &[ClientUpdate]) -> Vec<f64> {
    aggregate(cfg, &ServerState::for_model(global), global, ups).unwrap().0.values
}

/// Independent evaluation of one adaptive server step from zero state.
fn adaptive_oracle(strategy: Strategy, w: &[f64], dw: &[f64], eta: f64, b1: f64, b2: f64, lambda: f64) -> Vec<f64> {
    w.iter()
        .zip(dw)
        .map(|(&w, &d)| {
            let m = (1.0 - b1) * d;
            let u = match strategy {
                Strategy::FedAdagrad => d * d,
                Strategy::FedYogi => {
                    let s = if -d * d > 0.0 { 1.0 } else if -d * d < 0.0 { -1.0 } else { 0.0 };
                    -(1.0 - b2) * d * d * s
                }
                _ => (1.0 - b2) * d * d,
            };
            w + eta * m / (u.sqrt() + lambda)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_strategy_is_order_invariant((g, clients) in round_input(5), rot in 0usize..7) {
        let global = vector(g);
        let ups = updates(&global, &clients);
        let mut rotated = ups.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        for s in Strategy::ALL {
            let cfg = AggregatorConfig::new(s);
            let a = run(&cfg, &global, &ups);
            prop_assert_eq!(a.len(), global.len());
            prop_assert_eq!(a, run(&cfg, &global, &rotated), "{}", s);
        }
    }

    #[test]
    fn degenerate_configurations_reduce_to_fedavg((g, clients) in round_input(6)) {
        let global = vector(g);
        let ups = updates(&global, &clients);
        let fedavg = run(&AggregatorConfig::new(Strategy::FedAvg), &global, &ups);

        let mut m = AggregatorConfig::new(Strategy::FedAvgM);
        m.beta = 0.0;
        prop_assert_eq!(&run(&m, &global, &ups), &fedavg);

        let prox = AggregatorConfig { mu: 0.0, ..AggregatorConfig::new(Strategy::FedProx) };
        prop_assert_eq!(&run(&prox, &global, &ups), &fedavg);

        let uniform: Vec<_> = clients.iter().map(|(w, n, _)| (w.clone(), *n, 4)).collect();
        let ups_u = updates(&global, &uniform);
        let fedavg_u = run(&AggregatorConfig::new(Strategy::FedAvg), &global, &ups_u);
        prop_assert_eq!(run(&AggregatorConfig::new(Strategy::FedNova), &global, &ups_u), fedavg_u);

        let equal: Vec<_> = clients.iter().map(|(w, _, t)| (w.clone(), 32, *t)).collect();
        let ups_e = updates(&global, &equal);
        prop_assert_eq!(
            run(&AggregatorConfig::new(Strategy::SimpleAvg), &global, &ups_e),
            run(&AggregatorConfig::new(Strategy::FedAvg), &global, &ups_e)
        );
    }

    #[test]
    fn fedavg_is_the_weighted_model_average((g, clients) in round_input(4)) {
        let global = vector(g);
        let ups = updates(&global, &clients);
        let out = run(&AggregatorConfig::new(Strategy::FedAvg), &global, &ups);
        let n: usize = clients.iter().map(|c| c.1).sum();
        for j in 0..4 {
            let expect: f64 = clients.iter().map(|(w, k, _)| w[j] * *k as f64 / n as f64).sum();
            prop_assert!((out[j] - expect).abs() < 1e-12);
        }
        // η-scaled form agrees with the direct average.
        let dw = weighted_delta(&ups).unwrap();
        for j in 0..4 {
            prop_assert!((global.values[j] + dw.values[j] - out[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn median_ignores_one_extreme_client(
        models in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 3..8),
        spike in 10.0f64..1e6,
        coord in 0usize..3,
    ) {
        let global = vector(vec![0.0; 3]);
        let clients: Vec<_> = models.iter().map(|w| (w.clone(), 1, 1)).collect();
        let cfg = AggregatorConfig::new(Strategy::MedianAvg);
        let base = run(&cfg, &global, &updates(&global, &clients));
        // Push the client holding the largest value of one coordinate further
        // out; it stays extreme, so the median does not move.
        let mut corrupted = clients.clone();
        let top = (0..corrupted.len()).max_by(|&a, &b| corrupted[a].0[coord].total_cmp(&corrupted[b].0[coord])).unwrap();
        corrupted[top].0[coord] += spike;
        prop_assert_eq!(run(&cfg, &global, &updates(&global, &corrupted)), base);
    }

    #[test]
    fn adaptive_state_stays_well_formed(rounds in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..12)) {
        let mut global = vector(vec![0.0; 4]);
        let mut adam = ServerState::for_model(&global);
        let mut adagrad = ServerState::for_model(&global);
        let mut prev_u = adagrad.u.clone();
        for delta in rounds {
            let up = [ClientUpdate::from_delta("a", vector(delta), 1, 1)];
            let (g, s) = aggregate(&AggregatorConfig::new(Strategy::FedAdam), &adam, &global, &up).unwrap();
            prop_assert!(s.u.iter().all(|&u| u >= 0.0));
            adam = s;
            let (_, s) = aggregate(&AggregatorConfig::new(Strategy::FedAdagrad), &adagrad, &global, &up).unwrap();
            prop_assert!(s.u.iter().zip(&prev_u).all(|(a, b)| a >= b));
            prev_u = s.u.clone();
            adagrad = s;
            global = g;
        }
    }

    #[test]
    fn adaptive_single_step_matches_oracle(
        w in prop::collection::vec(-1.0f64..1.0, 10),
        dw in prop::collection::vec(-1.0f64..1.0, 10),
        eta in prop::sample::select(vec![1e-2, 1e-1, 1.0]),
        lambda in prop::sample::select(vec![1e-4, 1e-3, 1e-2, 1e-1]),
    ) {
        let global = vector(w.clone());
        let up = [ClientUpdate::from_delta("a", vector(dw.clone()), 3, 2)];
        for s in [Strategy::FedAdagrad, Strategy::FedYogi, Strategy::FedAdam] {
            let cfg = AggregatorConfig { eta, lambda, ..AggregatorConfig::new(s) };
            let out = run(&cfg, &global, &up);
            let expect = adaptive_oracle(s, &w, &dw, eta, cfg.beta1, cfg.beta2, lambda);
            for (a, b) in out.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-12, "{}: {} vs {}", s, a, b);
            }
        }
    }
}

#[test]
fn fedavgm_with_momentum_accumulates() {
    let global = vector(vec![0.0]);
    let cfg = AggregatorConfig { beta: 0.5, ..AggregatorConfig::new(Strategy::FedAvgM) };
    let up = [ClientUpdate::from_delta("a", vector(vec![1.0]), 1, 1)];
    let (g1, s1) = aggregate(&cfg, &ServerState::for_model(&global), &global, &up).unwrap();
    assert_eq!(g1.values, vec![1.0]);
    let up = [ClientUpdate::from_delta("a", vector(vec![1.0]), 1, 1)];
    let (g2, s2) = aggregate(&cfg, &s1, &g1, &up).unwrap();
    // u = 0.5·1 + 1 = 1.5
    assert_eq!(s2.u, vec![1.5]);
    assert_eq!(g2.values, vec![2.5]);
    assert_eq!(s2.round, 2);
}

#[test]
fn fednova_normalizes_by_step_count() {
    let global = vector(vec![0.0]);
    // τ_eff = (1·1 + 1·3)/2 = 2; update = 2·(0.5·2/1 + 0.5·6/3) = 4
    let ups = [
        ClientUpdate::from_delta("a", vector(vec![2.0]), 1, 1),
        ClientUpdate::from_delta("b", vector(vec![6.0]), 1, 3),
    ];
    assert_eq!(run(&AggregatorConfig::new(Strategy::FedNova), &global, &ups), vec![4.0]);
    // Plain FedAvg would give 4 as well here; skew the sizes to separate them.
    let ups = [
        ClientUpdate::from_delta("a", vector(vec![2.0]), 3, 1),
        ClientUpdate::from_delta("b", vector(vec![6.0]), 1, 3),
    ];
    // τ_eff = 6/4 = 1.5; update = 1.5·(0.75·2 + 0.25·2) = 3
    assert_eq!(run(&AggregatorConfig::new(Strategy::FedNova), &global, &ups), vec![3.0]);
    assert_eq!(run(&AggregatorConfig::new(Strategy::FedAvg), &global, &ups), vec![3.0]);
}
