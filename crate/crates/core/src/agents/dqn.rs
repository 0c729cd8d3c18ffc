//! Value-based agent: DQN with optional double-Q targets and dueling head.

use super::{AgentConfig, AgentDims, Features, TargetSync, Transition};
use crate::envsim::argmax;
use crate::error::{Error, Result};
use crate::numkit::{gemm_abt, Activation, Matrix, Network, Optimizer, ParamGrads, SeededRng};

/// With probability `epsilon` a uniform action, otherwise the greedy one
/// (lowest index on ties). Always consumes one uniform draw first so the
/// random stream does not depend on `epsilon`.
pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut SeededRng) -> usize {
    assert!(!q_values.is_empty(), "no actions to choose from");
    if rng.uniform() < epsilon {
        rng.index(q_values.len())
    } else {
        argmax(q_values)
    }
}

/// `q_a = v + A_a − mean(A)`.
pub fn dueling_combine(value: f64, advantages: &[f64]) -> Vec<f64> {
    assert!(!advantages.is_empty(), "dueling head needs at least one advantage");
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    advantages.iter().map(|a| value + a - mean).collect()
}

/// Gradient of a loss w.r.t. `[v, A…]` given its gradient w.r.t. the combined q-values.
fn dueling_backprop(d_q: &[f64], out: &mut [f64]) {
    let total: f64 = d_q.iter().sum();
    let mean = total / d_q.len() as f64;
    out[0] = total;
    for (o, d) in out[1..].iter_mut().zip(d_q) {
        *o = d - mean;
    }
}

/// Scores every (state, item) pair with a head over `concat(state, item)`.
///
/// The first layer is affine in the concatenation, so it splits into a state
/// part and an item part computed once each; only the remaining layers run on
/// all `B × M` pairs. Returns a `B × M` matrix.
pub(crate) fn pair_scores(head: &Network, states: &Matrix, items: &Matrix) -> Result<Matrix> {
    let (ks, ka) = (states.cols(), items.cols());
    let first = head.layers()[0];
    if first.inputs != ks + ka {
        return Err(Error::config(format!(
            "pair head expects {} inputs, got {ks} + {ka}",
            first.inputs
        )));
    }
    let h = first.outputs;
    let w = head.weights(0);
    let mut w_state = Vec::with_capacity(h * ks);
    let mut w_item = Vec::with_capacity(h * ka);
    for r in 0..h {
        let row = &w[r * (ks + ka)..(r + 1) * (ks + ka)];
        w_state.extend_from_slice(&row[..ks]);
        w_item.extend_from_slice(&row[ks..]);
    }
    let (b, m) = (states.rows(), items.rows());
    let mut pre_s = vec![0.0; b * h];
    gemm_abt(b, ks, h, states.as_slice(), &w_state, &mut pre_s);
    let mut pre_a = vec![0.0; m * h];
    gemm_abt(m, ka, h, items.as_slice(), &w_item, &mut pre_a);
    let bias = head.bias(0);
    let mut hidden = Matrix::zeros(b * m, h);
    for i in 0..b {
        let ps = &pre_s[i * h..(i + 1) * h];
        for j in 0..m {
            let pa = &pre_a[j * h..(j + 1) * h];
            let row = hidden.row_mut(i * m + j);
            for c in 0..h {
                row[c] = ps[c] + pa[c] + bias[c];
            }
            first.activation.apply_row(row);
        }
    }
    let out = head.predict_tail(1, &hidden)?;
    Ok(Matrix::from_vec(b, m, out.into_vec()))
}

/// Rows `concat(states[i], items[actions[i]])`.
pub(crate) fn pair_inputs(states: &Matrix, items: &Matrix, actions: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(states.rows(), states.cols() + items.cols());
    for (i, &a) in actions.iter().enumerate() {
        let row = out.row_mut(i);
        row[..states.cols()].copy_from_slice(states.row(i));
        row[states.cols()..].copy_from_slice(items.row(a));
    }
    out
}

/// Action-value function over a discrete catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum QModel {
    /// State in, one value per item out (`M + 1` raw outputs when dueling:
    /// the value stream first, then the advantages).
    Flat { net: Network, dueling: bool },
    /// `Q(s, a) = head(concat(s, item_a))`.
    Pair { head: Network },
}

impl QModel {
    pub fn new(dims: AgentDims, hidden: &[usize], dueling: bool, rng: &mut SeededRng) -> Result<Self> {
        if dims.pair_scoring {
            if dueling {
                return Err(Error::validation("dueling", "not available with pair-scoring heads"));
            }
            Ok(QModel::Pair {
                head: Network::mlp(
                    dims.state_dim + dims.item_dim,
                    hidden,
                    Activation::Relu,
                    1,
                    Activation::Identity,
                    rng,
                )?,
            })
        } else {
            let outputs = dims.num_items + usize::from(dueling);
            Ok(QModel::Flat {
                net: Network::mlp(dims.state_dim, hidden, Activation::Relu, outputs, Activation::Identity, rng)?,
                dueling,
            })
        }
    }

    pub fn network(&self) -> &Network {
        match self {
            QModel::Flat { net, .. } => net,
            QModel::Pair { head } => head,
        }
    }

    pub fn network_mut(&mut self) -> &mut Network {
        match self {
            QModel::Flat { net, .. } => net,
            QModel::Pair { head } => head,
        }
    }

    fn combine_row(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            QModel::Flat { dueling: true, .. } => dueling_combine(raw[0], &raw[1..]),
            _ => raw.to_vec(),
        }
    }

    /// Q-values of every item for one encoded state.
    pub fn q_values(&self, state: &[f64], items: &Matrix) -> Result<Vec<f64>> {
        match self {
            QModel::Flat { net, .. } => Ok(self.combine_row(&net.predict_one(state)?)),
            QModel::Pair { head } => Ok(pair_scores(head, &Matrix::row_vector(state), items)?.into_vec()),
        }
    }

    /// `B × M` Q-values for a batch of encoded states.
    pub fn q_values_batch(&self, states: &Matrix, items: &Matrix) -> Result<Matrix> {
        match self {
            QModel::Flat { net, dueling } => {
                let raw = net.predict(states)?;
                if !*dueling {
                    return Ok(raw);
                }
                let m = raw.cols() - 1;
                let mut q = Matrix::zeros(raw.rows(), m);
                for i in 0..raw.rows() {
                    q.row_mut(i).copy_from_slice(&self.combine_row(raw.row(i)));
                }
                Ok(q)
            }
            QModel::Pair { head } => pair_scores(head, states, items),
        }
    }

    /// Mean squared TD error `mean_i (y_i − Q(s_i, a_i))²` and its parameter gradient.
    pub fn td_loss(
        &self,
        states: &Matrix,
        actions: &[usize],
        targets: &[f64],
        items: &Matrix,
    ) -> Result<(f64, ParamGrads)> {
        let b = states.rows();
        if actions.len() != b || targets.len() != b {
            return Err(Error::config("batch fields disagree in length"));
        }
        let scale = 2.0 / b as f64;
        match self {
            QModel::Flat { net, dueling } => {
                let (raw, cache) = net.forward(states)?;
                let m = if *dueling { raw.cols() - 1 } else { raw.cols() };
                let mut d_raw = Matrix::zeros(b, raw.cols());
                let mut loss = 0.0;
                let mut d_q = vec![0.0; m];
                for i in 0..b {
                    let q = self.combine_row(raw.row(i));
                    let err = q[actions[i]] - targets[i];
                    loss += err * err;
                    if *dueling {
                        d_q.fill(0.0);
                        d_q[actions[i]] = scale * err;
                        dueling_backprop(&d_q, d_raw.row_mut(i));
                    } else {
                        d_raw.set(i, actions[i], scale * err);
                    }
                }
                let (g, _) = net.backward(&cache, &d_raw)?;
                Ok((loss / b as f64, g))
            }
            QModel::Pair { head } => {
                let x = pair_inputs(states, items, actions);
                let (q, cache) = head.forward(&x)?;
                let mut d = Matrix::zeros(b, 1);
                let mut loss = 0.0;
                for i in 0..b {
                    let err = q.get(i, 0) - targets[i];
                    loss += err * err;
                    d.set(i, 0, scale * err);
                }
                let (g, _) = head.backward(&cache, &d)?;
                Ok((loss / b as f64, g))
            }
        }
    }
}

fn stack_states<'t>(rows: impl Iterator<Item = &'t Vec<f64>>) -> Matrix {
    let rows: Vec<&Vec<f64>> = rows.collect();
    Matrix::from_rows(&rows)
}

/// TD targets. Vanilla: `r + γ·max_a' Q_target(s', a')`; double-Q:
/// `r + γ·Q_target(s', argmax_a' Q_online(s', a'))`; terminal: `r`.
pub fn dqn_target(
    batch: &[Transition],
    target: &QModel,
    online: &QModel,
    features: &Features<'_>,
    gamma: f64,
    double_q: bool,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    if live.is_empty() || gamma == 0.0 {
        return Ok(y);
    }
    let next = features.encode_states(&stack_states(live.iter().map(|&i| &batch[i].next_state)))?;
    let items = features.items();
    let q_target = target.q_values_batch(&next, items)?;
    let q_online = if double_q {
        Some(online.q_values_batch(&next, items)?)
    } else {
        None
    };
    for (row, &i) in live.iter().enumerate() {
        let tq = q_target.row(row);
        let v = match &q_online {
            Some(qo) => tq[argmax(qo.row(row))],
            None => tq.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        y[i] += gamma * v;
    }
    Ok(y)
}

/// One semi-gradient step on `mean (y − Q(s, a))²` with `y` held fixed.
/// Returns the loss before the step.
pub fn dqn_update(
    batch: &[Transition],
    online: &mut QModel,
    target: &QModel,
    features: &Features<'_>,
    gamma: f64,
    optimizer: &mut Optimizer,
    double_q: bool,
) -> Result<f64> {
    let y = dqn_target(batch, target, online, features, gamma, double_q)?;
    let states = features.encode_states(&stack_states(batch.iter().map(|t| &t.state)))?;
    let actions = batch.iter().map(Transition::item_action).collect::<Result<Vec<_>>>()?;
    let (loss, grads) = online.td_loss(&states, &actions, &y, features.items())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("dqn loss".into()));
    }
    optimizer.step(online.network_mut(), &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: QModel,
    target: QModel,
    optimizer: Optimizer,
    gamma: f64,
    double_q: bool,
    sync: TargetSync,
    updates: u64,
}

impl DqnAgent {
    pub fn new(config: &AgentConfig, dims: AgentDims, gamma: f64, rng: &mut SeededRng) -> Result<Self> {
        let online = QModel::new(dims, &config.hidden, config.dueling, rng)?;
        let optimizer = Optimizer::new(config.optimizer, online.network());
        Ok(Self {
            target: online.clone(),
            online,
            optimizer,
            gamma,
            double_q: config.double_q,
            sync: config.target_sync(),
            updates: 0,
        })
    }

    pub fn from_parts(online: QModel, optimizer: Optimizer, gamma: f64, double_q: bool, sync: TargetSync) -> Self {
        Self {
            target: online.clone(),
            online,
            optimizer,
            gamma,
            double_q,
            sync,
            updates: 0,
        }
    }

    pub fn online(&self) -> &QModel {
        &self.online
    }

    pub fn target(&self) -> &QModel {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn optimizer_mut(&mut self) -> &mut Optimizer {
        &mut self.optimizer
    }

    pub fn q_values(&self, state: &[f64], features: &Features<'_>) -> Result<Vec<f64>> {
        let s = features.encode_state(state)?;
        self.online.q_values(&s, features.items())
    }

    /// One TD update followed by the configured target synchronisation.
    pub fn update(&mut self, batch: &[Transition], features: &Features<'_>) -> Result<f64> {
        let loss = dqn_update(
            batch,
            &mut self.online,
            &self.target,
            features,
            self.gamma,
            &mut self.optimizer,
            self.double_q,
        )?;
        self.updates += 1;
        match self.sync {
            TargetSync::Hard { every } => {
                if self.updates.is_multiple_of(every) {
                    self.target = self.online.clone();
                }
            }
            TargetSync::Soft { tau } => {
                super::soft_sync(self.target.network_mut(), self.online.network(), tau)?;
            }
        }
        Ok(loss)
    }
}
