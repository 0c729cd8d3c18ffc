//! Synthetic recommender MDP with ground-truth purchase probabilities.
//!
//! A user is a unit preference vector `u ∈ ℝᵈ`; items are fixed unit
//! embeddings. Recommending item `a` leads to a purchase with probability
//! `σ(κ·⟨u, e_a⟩ + b)`. The purchase draw happens in both reward modes and
//! drives the dynamics; the mode only decides whether the agent sees the
//! Bernoulli outcome or its probability. Purchases pull `u` toward the
//! purchased item, and a user who did not purchase may leave early.

mod tabular;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{derive_seed, dot, sigmoid, Matrix, SeededRng};

pub use tabular::{value_iteration, QTable, TabularMdp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Number of items `M`.
    pub catalog_size: usize,
    /// Affinity scale `κ`.
    pub affinity_scale: f64,
    /// Logit bias `b`.
    pub logit_bias: f64,
    /// Preference drift rate `η` toward a purchased item.
    pub drift_rate: f64,
    /// Scale of the Gaussian perturbation added to `u` every step.
    pub drift_noise: f64,
    /// Maximum episode length `T`.
    pub max_steps: usize,
    /// Probability of leaving after a step without purchase.
    pub leave_base: f64,
    /// Discount factor.
    pub gamma: f64,
    pub catalog_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            catalog_size: 50,
            affinity_scale: 4.0,
            logit_bias: -1.5,
            drift_rate: 0.3,
            drift_noise: 0.01,
            max_steps: 20,
            leave_base: 0.05,
            gamma: 0.9,
            catalog_seed: 2024,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        if self.catalog_size < 1 {
            return Err(Error::validation("catalog_size", "must be at least 1"));
        }
        if !self.affinity_scale.is_finite() {
            return Err(Error::validation("affinity_scale", "must be finite"));
        }
        if !self.logit_bias.is_finite() {
            return Err(Error::validation("logit_bias", "must be finite"));
        }
        if !(0.0..1.0).contains(&self.drift_rate) {
            return Err(Error::validation("drift_rate", "must satisfy 0 <= drift_rate < 1"));
        }
        if !(self.drift_noise >= 0.0 && self.drift_noise.is_finite()) {
            return Err(Error::validation("drift_noise", "must be finite and non-negative"));
        }
        if self.max_steps < 1 {
            return Err(Error::validation("max_steps", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.leave_base) {
            return Err(Error::validation("leave_base", "must satisfy 0 <= leave_base < 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation("gamma", "must satisfy 0 <= gamma < 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The agent observes the purchase probability itself.
    Deterministic,
    /// The agent observes the Bernoulli purchase outcome.
    Stochastic,
}

/// Observable user state plus the hidden per-episode random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    preference: Vec<f64>,
    step: usize,
    max_steps: usize,
    last_purchase: bool,
    terminal: bool,
    rng: SeededRng,
}

impl EnvState {
    pub fn preference(&self) -> &[f64] {
        &self.preference
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn last_purchase(&self) -> bool {
        self.last_purchase
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Observation vector: `u`, then `step / T`, then the last-purchase flag.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.preference.len() + 2);
        f.extend_from_slice(&self.preference);
        f.push(self.step as f64 / self.max_steps as f64);
        f.push(if self.last_purchase { 1.0 } else { 0.0 });
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
    /// Ground-truth purchase probability of the recommended item.
    pub true_prob: f64,
    pub purchased: bool,
    /// Item actually recommended.
    pub item: usize,
}

/// `σ(κ·⟨u, e⟩ + b)`; shared by the simulator and oracle estimators so both
/// produce bit-identical probabilities.
#[inline]
pub fn purchase_probability(preference: &[f64], item: &[f64], affinity_scale: f64, logit_bias: f64) -> f64 {
    sigmoid(affinity_scale * dot(preference, item) + logit_bias)
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if dot(&v, &v) > 1e-24 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    catalog: Arc<Matrix>,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.catalog_seed);
        let rows: Vec<Vec<f64>> = (0..config.catalog_size)
            .map(|_| random_unit(config.dim, &mut rng))
            .collect();
        Ok(Self {
            catalog: Arc::new(Matrix::from_rows(&rows)),
            config,
        })
    }

    /// Replaces the sampled catalog with explicit item embeddings (normalized).
    pub fn with_catalog(config: EnvConfig, items: Vec<Vec<f64>>) -> Result<Self> {
        let mut config = config;
        config.catalog_size = items.len();
        config.dim = items.first().map_or(0, |e| e.len());
        config.validate()?;
        let mut items = items;
        for e in &mut items {
            if e.len() != config.dim {
                return Err(Error::config("catalog rows must share one dimension"));
            }
            normalize(e);
        }
        Ok(Self {
            catalog: Arc::new(Matrix::from_rows(&items)),
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// `M × d` item embeddings, also used as item features.
    pub fn catalog(&self) -> &Matrix {
        &self.catalog
    }

    pub fn shared_catalog(&self) -> Arc<Matrix> {
        Arc::clone(&self.catalog)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.catalog.row(i)
    }

    pub fn num_items(&self) -> usize {
        self.config.catalog_size
    }

    pub fn state_dim(&self) -> usize {
        self.config.dim + 2
    }

    pub fn item_dim(&self) -> usize {
        self.config.dim
    }

    /// Initial state: `u` isotropic on the unit sphere, step 0, no purchase yet.
    pub fn reset(&self, episode_seed: u64) -> EnvState {
        let mut rng = SeededRng::new(episode_seed);
        let preference = random_unit(self.config.dim, &mut rng);
        EnvState {
            preference,
            step: 0,
            max_steps: self.config.max_steps,
            last_purchase: false,
            terminal: false,
            rng,
        }
    }

    /// Fresh state with a chosen preference vector (normalized).
    pub fn state_with_preference(&self, preference: &[f64], episode_seed: u64) -> Result<EnvState> {
        if preference.len() != self.config.dim {
            return Err(Error::config("preference dimension mismatch"));
        }
        let mut s = self.reset(episode_seed);
        s.preference = preference.to_vec();
        normalize(&mut s.preference);
        Ok(s)
    }

    fn check_item(&self, action: usize) -> Result<()> {
        if action >= self.config.catalog_size {
            return Err(Error::Domain(format!(
                "item {action} outside catalog of {}",
                self.config.catalog_size
            )));
        }
        Ok(())
    }

    pub fn true_prob(&self, state: &EnvState, action: usize) -> Result<f64> {
        self.check_item(action)?;
        Ok(purchase_probability(
            &state.preference,
            self.item(action),
            self.config.affinity_scale,
            self.config.logit_bias,
        ))
    }

    /// Purchase probabilities of every item for `state`.
    pub fn all_probs(&self, state: &EnvState) -> Vec<f64> {
        (0..self.num_items())
            .map(|a| {
                purchase_probability(
                    &state.preference,
                    self.item(a),
                    self.config.affinity_scale,
                    self.config.logit_bias,
                )
            })
            .collect()
    }

    pub fn step(&self, state: &EnvState, action: usize, mode: RewardMode) -> Result<StepOutcome> {
        if state.terminal {
            return Err(Error::Usage("step called on a terminal state".into()));
        }
        let p = self.true_prob(state, action)?;
        let c = &self.config;
        let mut rng = state.rng.clone();
        // fixed draw order: purchase, drift noise, leave
        let purchased = rng.uniform() < p;
        let mut next_u: Vec<f64> = state.preference.iter().map(|x| (1.0 - c.drift_rate) * x).collect();
        if purchased {
            for (u, e) in next_u.iter_mut().zip(self.item(action)) {
                *u += c.drift_rate * e;
            }
        }
        for u in next_u.iter_mut() {
            *u += c.drift_noise * rng.normal();
        }
        normalize(&mut next_u);
        let leave = rng.uniform();
        let step = state.step + 1;
        let done = step >= c.max_steps || (!purchased && leave < c.leave_base);
        let reward = match mode {
            RewardMode::Deterministic => p,
            RewardMode::Stochastic => {
                if purchased {
                    1.0
                } else {
                    0.0
                }
            }
        };
        Ok(StepOutcome {
            reward,
            next_state: EnvState {
                preference: next_u,
                step,
                max_steps: c.max_steps,
                last_purchase: purchased,
                terminal: done,
                rng,
            },
            done,
            true_prob: p,
            purchased,
            item: action,
        })
    }

    /// Item whose embedding best matches the ranking vector `w`.
    pub fn select_item(&self, w: &[f64]) -> Result<usize> {
        if w.len() != self.config.dim {
            return Err(Error::config("ranking vector dimension mismatch"));
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("ranking vector has non-finite entries".into()));
        }
        let scores: Vec<f64> = (0..self.num_items()).map(|i| dot(w, self.item(i))).collect();
        Ok(argmax(&scores))
    }

    /// Continuous-action adapter: recommends `argmax_i ⟨w, e_i⟩`.
    pub fn continuous_step(&self, state: &EnvState, w: &[f64], mode: RewardMode) -> Result<StepOutcome> {
        let item = self.select_item(w)?;
        self.step(state, item, mode)
    }

    /// Item with the highest true purchase probability (lowest index on ties).
    pub fn greedy_item(&self, state: &EnvState) -> usize {
        argmax(&self.all_probs(state))
    }

    /// Per-episode summed rewards of `policy` over `n_episodes` episodes whose
    /// seeds derive from `seed`.
    pub fn rollout<P>(&self, n_episodes: usize, seed: u64, mode: RewardMode, mut policy: P) -> Result<Vec<f64>>
    where
        P: FnMut(&EnvState) -> usize,
    {
        let mut returns = Vec::with_capacity(n_episodes);
        for ep in 0..n_episodes {
            let mut state = self.reset(derive_seed(seed, ep as u64));
            let mut total = 0.0;
            loop {
                let out = self.step(&state, policy(&state), mode)?;
                total += out.reward;
                if out.done {
                    break;
                }
                state = out.next_state;
            }
            returns.push(total);
        }
        Ok(returns)
    }

    /// Average stochastic-mode return of the policy that always recommends the
    /// item with the highest true purchase probability.
    pub fn oracle_greedy_return(&self, n_episodes: usize, seed: u64) -> Result<f64> {
        if n_episodes == 0 {
            return Err(Error::validation("n_episodes", "must be at least 1"));
        }
        let r = self.rollout(n_episodes, seed, RewardMode::Stochastic, |s| self.greedy_item(s))?;
        Ok(r.iter().sum::<f64>() / n_episodes as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn catalog_is_deterministic_and_unit_norm() {
        let a = Env::new(EnvConfig::default()).unwrap();
        let b = Env::new(EnvConfig::default()).unwrap();
        assert_eq!(a.catalog(), b.catalog());
        let small = Env::new(EnvConfig {
            dim: 2,
            catalog_size: 2,
            ..EnvConfig::default()
        })
        .unwrap();
        for i in 0..2 {
            let e = small.item(i);
            assert!((dot(e, e).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn catalog_inner_products_are_centered() {
        let env = Env::new(EnvConfig::default()).unwrap();
        let m = env.num_items();
        let mut ips = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                ips.push(dot(env.item(i), env.item(j)));
            }
        }
        // for isotropic unit vectors in d dims, <e_i, e_j> has mean 0 and variance 1/d
        let d = env.config().dim as f64;
        let mean = ips.iter().sum::<f64>() / ips.len() as f64;
        // pairs share items, so use the number of independent items as effective n
        let sigma = (1.0 / d).sqrt() / ((m / 2) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn reset_is_seeded_and_isotropic() {
        let env = Env::new(EnvConfig::default()).unwrap();
        assert_eq!(env.reset(17), env.reset(17));
        let n = 10_000;
        let d = env.config().dim;
        let mut sums = vec![0.0; d];
        for s in 0..n {
            let st = env.reset(s);
            assert_eq!(st.step_index(), 0);
            assert!(!st.is_terminal() && !st.last_purchase());
            assert!((dot(st.preference(), st.preference()) - 1.0).abs() < 1e-9);
            for (acc, u) in sums.iter_mut().zip(st.preference()) {
                *acc += u;
            }
        }
        let sigma = (1.0 / d as f64 / n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn true_prob_direct_formula() {
        let cfg = EnvConfig {
            dim: 2,
            catalog_size: 2,
            ..EnvConfig::default()
        };
        let env = Env::with_catalog(cfg.clone(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let st = env.state_with_preference(&[0.0, 1.0], 1).unwrap();
        assert!((env.true_prob(&st, 0).unwrap() - 0.18242552380635635).abs() < 1e-12);
        assert!((env.true_prob(&st, 1).unwrap() - 0.9241418199787566).abs() < 1e-12);
        assert!(matches!(env.true_prob(&st, 2), Err(Error::Domain(_))));

        let flat = Env::with_catalog(
            EnvConfig {
                affinity_scale: 0.0,
                ..cfg
            },
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let p0 = flat.true_prob(&st, 0).unwrap();
        assert_eq!(p0, flat.true_prob(&st, 1).unwrap());
        assert_eq!(p0, sigmoid(-1.5));
    }

    #[test]
    fn deterministic_reward_is_true_prob_and_modes_share_dynamics() {
        let env = Env::new(EnvConfig::default()).unwrap();
        let mut det = env.reset(3);
        let mut sto = env.reset(3);
        let mut a = 0;
        loop {
            let od = env.step(&det, a, RewardMode::Deterministic).unwrap();
            let os = env.step(&sto, a, RewardMode::Stochastic).unwrap();
            assert_eq!(od.reward, od.true_prob);
            assert_eq!(os.reward, if os.purchased { 1.0 } else { 0.0 });
            assert_eq!(od.next_state, os.next_state);
            assert_eq!(od.done, os.done);
            if od.done {
                assert!(matches!(
                    env.step(&od.next_state, 0, RewardMode::Stochastic),
                    Err(Error::Usage(_))
                ));
                break;
            }
            det = od.next_state;
            sto = os.next_state;
            a = (a + 7) % env.num_items();
        }
    }

    #[test]
    fn stochastic_purchase_frequency_matches_probability() {
        // choose u so that sigma(4 <u, e> - 1.5) = 0.3
        let cfg = EnvConfig {
            dim: 2,
            catalog_size: 1,
            ..EnvConfig::default()
        };
        let env = Env::with_catalog(cfg, vec![vec![1.0, 0.0]]).unwrap();
        let target: f64 = 0.3;
        let c = ((target / (1.0 - target)).ln() + 1.5) / 4.0;
        let u = [c, (1.0 - c * c).sqrt()];
        let n = 100_000;
        let mut hits = 0;
        for seed in 0..n {
            let st = env.state_with_preference(&u, seed).unwrap();
            let out = env.step(&st, 0, RewardMode::Stochastic).unwrap();
            assert!((out.true_prob - target).abs() < 1e-12);
            hits += out.reward as u64;
        }
        let f = hits as f64 / n as f64;
        let bound = 3.0 * (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((f - 0.3).abs() <= bound, "frequency {f}");
    }

    #[test]
    fn no_drift_no_noise_keeps_preference() {
        let cfg = EnvConfig {
            drift_rate: 0.0,
            drift_noise: 0.0,
            ..EnvConfig::default()
        };
        let env = Env::new(cfg).unwrap();
        let st = env.reset(8);
        // find a step without purchase
        for a in 0..env.num_items() {
            let out = env.step(&st, a, RewardMode::Stochastic).unwrap();
            if !out.purchased {
                for (x, y) in out.next_state.preference().iter().zip(st.preference()) {
                    assert!((x - y).abs() < 1e-12);
                }
                return;
            }
        }
        panic!("every item was purchased");
    }

    #[test]
    fn continuous_step_selects_argmax_item() {
        let cfg = EnvConfig {
            dim: 4,
            catalog_size: 4,
            ..EnvConfig::default()
        };
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let env = Env::with_catalog(cfg, eye.clone()).unwrap();
        let st = env.reset(1);
        assert_eq!(env.continuous_step(&st, &eye[3], RewardMode::Stochastic).unwrap().item, 3);
        assert_eq!(env.continuous_step(&st, &[0.0; 4], RewardMode::Stochastic).unwrap().item, 0);

        let env = Env::new(EnvConfig::default()).unwrap();
        let mut rng = SeededRng::new(77);
        for k in 0..20 {
            let st = env.reset(k);
            let w: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let scores: Vec<f64> = (0..env.num_items()).map(|i| dot(&w, env.item(i))).collect();
            let expected = env.step(&st, argmax(&scores), RewardMode::Stochastic).unwrap();
            assert_eq!(env.continuous_step(&st, &w, RewardMode::Stochastic).unwrap(), expected);
        }
    }

    #[test]
    fn episodes_never_exceed_horizon() {
        let env = Env::new(EnvConfig::default()).unwrap();
        for seed in 0..200 {
            let mut st = env.reset(seed);
            let mut len = 0;
            loop {
                let a = env.greedy_item(&st);
                let out = env.step(&st, a, RewardMode::Stochastic).unwrap();
                len += 1;
                if out.done {
                    assert!(out.next_state.is_terminal());
                    break;
                }
                st = out.next_state;
            }
            assert!(len <= env.config().max_steps);
        }
    }

    #[test]
    fn oracle_greedy_single_item_and_flat_affinity() {
        let cfg = EnvConfig {
            catalog_size: 1,
            ..EnvConfig::default()
        };
        let env = Env::new(cfg).unwrap();
        let only = env.rollout(300, 5, RewardMode::Stochastic, |_| 0).unwrap();
        let greedy = env.oracle_greedy_return(300, 5).unwrap();
        assert_eq!(greedy, only.iter().sum::<f64>() / 300.0);

        let flat = Env::new(EnvConfig {
            affinity_scale: 0.0,
            ..EnvConfig::default()
        })
        .unwrap();
        let n = 2000;
        let g = flat.rollout(n, 1, RewardMode::Stochastic, |s| flat.greedy_item(s)).unwrap();
        let mut rng = SeededRng::new(99);
        let r = flat
            .rollout(n, 2, RewardMode::Stochastic, |_| rng.index(flat.num_items()))
            .unwrap();
        let (mg, sg) = mean_sd(&g);
        let (mr, sr) = mean_sd(&r);
        let se = (sg * sg / n as f64 + sr * sr / n as f64).sqrt();
        assert!((mg - mr).abs() < 3.0 * se, "{mg} vs {mr}");
    }

    #[test]
    fn oracle_greedy_beats_random() {
        let env = Env::new(EnvConfig::default()).unwrap();
        let n = 1000;
        let g = env.rollout(n, 10, RewardMode::Stochastic, |s| env.greedy_item(s)).unwrap();
        let mut rng = SeededRng::new(3);
        let r = env
            .rollout(n, 11, RewardMode::Stochastic, |_| rng.index(env.num_items()))
            .unwrap();
        let (mg, sg) = mean_sd(&g);
        let (mr, sr) = mean_sd(&r);
        assert!(mg - 1.96 * sg / (n as f64).sqrt() > mr + 1.96 * sr / (n as f64).sqrt());
    }

    #[test]
    fn true_prob_increases_with_affinity() {
        let cfg = EnvConfig {
            dim: 2,
            catalog_size: 1,
            ..EnvConfig::default()
        };
        let env = Env::with_catalog(cfg, vec![vec![1.0, 0.0]]).unwrap();
        let mut last = -1.0;
        for k in 0..=20 {
            let theta = std::f64::consts::PI * (1.0 - k as f64 / 20.0);
            let st = env.state_with_preference(&[theta.cos(), theta.sin()], 0).unwrap();
            let p = env.true_prob(&st, 0).unwrap();
            assert!(p > last);
            assert_eq!(p, env.true_prob(&st.clone(), 0).unwrap());
            last = p;
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let err = Env::new(EnvConfig {
            gamma: 1.5,
            ..EnvConfig::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "gamma"));
    }
}
