use proptest::prelude::*;

use srs_core::agents::{dqn_target, dueling_combine, epsilon_greedy, Action, AgentDims, Features, QModel, Transition};
use srs_core::envsim::{value_iteration, Env, EnvConfig, RewardMode, TabularMdp};
use srs_core::harness::{aggregate, sample_efficiency, EvalPoint, MetricsTimeline};
use srs_core::numkit::{
    dense_forward, optimizer_step, Activation, Network, Optimizer, OptimizerConfig, ParamGrads, SeededRng,
};
use srs_core::report::{parse_spec, ResultTable, TableRow};
use srs_core::stabilize::{stabilize_batch, OracleEstimator};

fn small_net(seed: u64) -> Network {
    Network::mlp(4, &[6], Activation::Tanh, 3, Activation::Identity, &mut SeededRng::new(seed)).unwrap()
}

fn dims(state_dim: usize, num_items: usize) -> AgentDims {
    AgentDims {
        state_dim,
        item_dim: 2,
        num_items,
        action_dim: 2,
        pair_scoring: false,
    }
}

fn batch(env: &Env, seed: u64, n: usize) -> Vec<Transition> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    let mut state = env.reset(seed);
    while out.len() < n {
        let item = rng.index(env.num_items());
        let o = env.step(&state, item, RewardMode::Stochastic).unwrap();
        out.push(Transition {
            state: state.features(),
            action: Action::Item(item),
            item,
            reward: o.reward,
            next_state: o.next_state.features(),
            done: o.done,
        });
        state = if o.done { env.reset(rng.index(1 << 20) as u64) } else { o.next_state };
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_forward_is_deterministic(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 4)) {
        let net = small_net(seed);
        let (a, _) = dense_forward(&net, &x).unwrap();
        let (b, _) = dense_forward(&net.clone(), &x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_gradient_steps_change_nothing(seed in any::<u64>(), lr in 1e-5f64..1.0, adam in any::<bool>(), steps in 1usize..5) {
        let mut net = small_net(seed);
        let before = net.params().to_vec();
        let cfg = if adam { OptimizerConfig::adam(lr) } else { OptimizerConfig::sgd(lr) };
        let mut opt = Optimizer::new(cfg, &net);
        for _ in 0..steps {
            let zero = ParamGrads::zeros_like(&net);
            optimizer_step(&mut net, &zero, &mut opt).unwrap();
        }
        prop_assert_eq!(before, net.params().to_vec());
    }

    #[test]
    fn rng_streams_reproduce(seed in any::<u64>()) {
        let mut a = SeededRng::new(seed);
        let mut b = SeededRng::new(seed);
        for _ in 0..1000 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn episodes_are_bounded_and_mode_only_changes_rewards(seed in any::<u64>(), actions in prop::collection::vec(0usize..50, 40)) {
        let env = Env::new(EnvConfig::default()).unwrap();
        let mut s_det = env.reset(seed);
        let mut s_sto = env.reset(seed);
        let mut steps = 0;
        for &a in &actions {
            let d = env.step(&s_det, a, RewardMode::Deterministic).unwrap();
            let s = env.step(&s_sto, a, RewardMode::Stochastic).unwrap();
            steps += 1;
            prop_assert_eq!(d.next_state.features(), s.next_state.features());
            prop_assert_eq!(d.done, s.done);
            prop_assert_eq!(d.reward, d.true_prob);
            prop_assert!(s.reward == 0.0 || s.reward == 1.0);
            if d.done {
                prop_assert!(env.step(&d.next_state, a, RewardMode::Deterministic).is_err());
                break;
            }
            s_det = d.next_state;
            s_sto = s.next_state;
        }
        prop_assert!(steps <= EnvConfig::default().max_steps);
    }

    #[test]
    fn true_prob_is_pure(seed in any::<u64>(), item in 0usize..50) {
        let env = Env::new(EnvConfig::default()).unwrap();
        let s = env.reset(seed);
        let a = env.true_prob(&s, item).unwrap();
        let b = env.true_prob(&s.clone(), item).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn value_iteration_is_a_bellman_fixed_point(n_states in 2usize..6, n_actions in 1usize..4, gamma in 0.0f64..0.95, seed in any::<u64>()) {
        let mdp = TabularMdp::random(n_states, n_actions, gamma, seed).unwrap();
        let q = value_iteration(&mdp, 1e-8).unwrap();
        prop_assert!(mdp.bellman_residual(&q) <= 1e-8);
    }

    #[test]
    fn myopic_targets_equal_rewards(seed in any::<u64>(), double_q in any::<bool>(), dueling in any::<bool>()) {
        let env = Env::new(EnvConfig { catalog_size: 5, ..EnvConfig::default() }).unwrap();
        let b = batch(&env, seed, 12);
        let d = dims(env.state_dim(), 5);
        let mut rng = SeededRng::new(seed);
        let online = QModel::new(d, &[4], dueling, &mut rng).unwrap();
        let target = QModel::new(d, &[4], dueling, &mut rng).unwrap();
        let f = Features::raw(env.catalog());
        let y = dqn_target(&b, &target, &online, &f, 0.0, double_q).unwrap();
        let r: Vec<f64> = b.iter().map(|t| t.reward).collect();
        prop_assert_eq!(y, r);
    }

    #[test]
    fn double_q_matches_vanilla_when_networks_agree(seed in any::<u64>(), gamma in 0.0f64..0.99) {
        let env = Env::new(EnvConfig { catalog_size: 5, ..EnvConfig::default() }).unwrap();
        let b = batch(&env, seed, 12);
        let online = QModel::new(dims(env.state_dim(), 5), &[4], false, &mut SeededRng::new(seed)).unwrap();
        let f = Features::raw(env.catalog());
        let y1 = dqn_target(&b, &online, &online, &f, gamma, true).unwrap();
        let y2 = dqn_target(&b, &online, &online, &f, gamma, false).unwrap();
        prop_assert_eq!(y1, y2);
    }

    #[test]
    fn greedy_choice_is_scale_invariant(q in prop::collection::vec(-10.0f64..10.0, 1..20), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
        let a = epsilon_greedy(&q, 0.0, &mut SeededRng::new(1));
        let b = epsilon_greedy(&scaled, 0.0, &mut SeededRng::new(1));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dueling_mean_is_value(v in -10.0f64..10.0, adv in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let q = dueling_combine(v, &adv);
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        prop_assert!((mean - v).abs() < 1e-9);
    }

    #[test]
    fn stabilization_is_idempotent_and_noise_free(seed in any::<u64>()) {
        let cfg = EnvConfig::default();
        let env = Env::new(cfg.clone()).unwrap();
        let oracle = OracleEstimator::for_env(&cfg);
        let b = batch(&env, seed, 16);
        let once = stabilize_batch(&b, &oracle, env.catalog()).unwrap().into_transitions();
        let twice = stabilize_batch(&once, &oracle, env.catalog()).unwrap().into_transitions();
        prop_assert_eq!(&once, &twice);
        let mut flipped = b.clone();
        for t in &mut flipped {
            t.reward = 1.0 - t.reward;
        }
        let other = stabilize_batch(&flipped, &oracle, env.catalog()).unwrap().into_transitions();
        prop_assert_eq!(once, other);
    }

    #[test]
    fn efficiency_is_monotone_in_threshold(scores in prop::collection::vec(0.0f64..20.0, 1..40), t1 in 0.0f64..20.0, dt in 0.0f64..10.0, k in 1usize..4) {
        let tl = MetricsTimeline {
            seed: 0,
            config_digest: String::new(),
            points: scores.iter().enumerate().map(|(i, &s)| EvalPoint { episode: 10 * (i as u64 + 1), score: s }).collect(),
            diverged: None,
        };
        let rank = |e: Option<u64>| e.unwrap_or(u64::MAX);
        let lo = rank(sample_efficiency(&tl, t1, k).episodes);
        let hi = rank(sample_efficiency(&tl, t1 + dt, k).episodes);
        prop_assert!(hi >= lo);
    }

    #[test]
    fn constant_samples_have_zero_width(v in -1e6f64..1e6, n in 2usize..30) {
        let agg = aggregate(&vec![v; n]).unwrap();
        prop_assert_eq!(agg.mean, Some(v));
        prop_assert_eq!(agg.half_width, Some(0.0));
    }

    #[test]
    fn spec_round_trip(gamma in 0.0f64..0.999, seeds in prop::collection::vec(any::<u64>(), 1..5), hidden in prop::collection::vec(1usize..64, 0..3), episodes in 1u64..5000) {
        let text = serde_json::json!({
            "name": "p",
            "env": {"gamma": gamma},
            "agent": {"hidden": hidden},
            "protocol": {"episodes": episodes.max(10), "eval_period": 10},
            "variants": [{"name": "a"}, {"name": "b", "reward_source": "estimated"}],
            "seeds": seeds,
        }).to_string();
        let a = parse_spec(&text).unwrap();
        let b = parse_spec(&a.to_json()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn csv_and_json_agree(values in prop::collection::vec((-1e7f64..1e7, prop::option::of(0.0f64..1e4)), 1..8)) {
        let mut t = ResultTable::new();
        for (i, (m, hw)) in values.iter().enumerate() {
            t.push(TableRow { variant: format!("v{i}"), metric: "m".into(), mean: Some(*m), ci_half_width: *hw, n: 10, attained: 10 }).unwrap();
        }
        let back = ResultTable::from_json(&t.to_json()).unwrap();
        let csv = t.to_csv().unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        for (rec, (row, orig)) in rdr.records().zip(back.rows().iter().zip(t.rows())) {
            let rec = rec.unwrap();
            let m: f64 = rec[2].parse().unwrap();
            prop_assert!((m - row.mean.unwrap()).abs() <= 1e-9 * m.abs().max(1.0));
            prop_assert!((orig.mean.unwrap() - row.mean.unwrap()).abs() <= 1e-9 * m.abs().max(1.0));
            match row.ci_half_width {
                Some(h) => prop_assert!((rec[3].parse::<f64>().unwrap() - h).abs() <= 1e-9 * h.max(1.0)),
                None => prop_assert!(rec[3].is_empty()),
            }
        }
    }
}

#[test]
fn stochastic_reward_mean_matches_probability() {
    let env = Env::new(EnvConfig::default()).unwrap();
    let pref = env.reset(7).preference().to_vec();
    let n = 20_000u64;
    for item in [0, 13, 42] {
        let p = env.true_prob(&env.reset(7), item).unwrap();
        let total: f64 = (0..n)
            .map(|i| {
                let s = env.state_with_preference(&pref, 1000 + i).unwrap();
                env.step(&s, item, RewardMode::Stochastic).unwrap().reward
            })
            .sum();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let mean = total / n as f64;
        assert!((mean - p).abs() <= 3.0 * sigma, "item {item}: {mean} vs {p}");
    }
}
