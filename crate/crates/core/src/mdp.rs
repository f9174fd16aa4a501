//! Finite discounted MDPs, policies, value tables and the exact oracles built
//! on them: policy evaluation, value iteration, discounted visitation and
//! trajectory sampling.
//!
//! State-action quantities are stored densely with the pair `(s, a)` at flat
//! index `s * num_actions + a`. Transition probabilities are stored as
//! `P[a][s][s']`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance used when validating that probability rows sum to one.
pub const PROB_TOL: f64 = 1e-12;

fn check_row(row: &[f64], what: impl Fn() -> String) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidProbability(format!("{}: entry {p}", what())));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidProbability(format!(
            "{}: sums to {total}",
            what()
        )));
    }
    Ok(())
}

/// A finite MDP with rewards in `[0, 1]` and discount factor in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// `transitions` is laid out as `P[a][s][s']`, `rewards` as `R[s][a]`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Dimension(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        if transitions.len() != num_actions * num_states * num_states {
            return Err(Error::Dimension(format!(
                "expected {} transition entries, got {}",
                num_actions * num_states * num_states,
                transitions.len()
            )));
        }
        if rewards.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "expected {} reward entries, got {}",
                num_states * num_actions,
                rewards.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount factor must lie in (0, 1), got {gamma}"
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidParameter(format!(
                "rewards must lie in [0, 1], got {r}"
            )));
        }
        for a in 0..num_actions {
            for s in 0..num_states {
                let start = (a * num_states + s) * num_states;
                check_row(&transitions[start..start + num_states], || {
                    format!("transition row (action {a}, state {s})")
                })?;
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// Probability of moving from `s` to `next` under action `a`.
    pub fn transition(&self, a: usize, s: usize, next: usize) -> f64 {
        self.transitions[(a * self.num_states + s) * self.num_states + next]
    }

    /// The distribution over next states from `(s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (a * self.num_states + s) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// Rewards as a flat state-action vector.
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Same dynamics with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transitions.clone(),
            self.rewards.clone(),
            gamma,
        )
    }
}

/// A stochastic policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Dimension("empty policy table".into()));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "expected {} policy entries, got {}",
                num_states * num_actions,
                probs.len()
            )));
        }
        for s in 0..num_states {
            check_row(&probs[s * num_actions..(s + 1) * num_actions], || {
                format!("policy row for state {s}")
            })?;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let num_states = actions.len();
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::Dimension(format!(
                    "action {a} out of range for {num_actions} actions"
                )));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Self::new(num_states, num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Fails with the first `(s, a)` that has zero probability.
    pub fn require_positive(&self) -> Result<()> {
        match self.probs.iter().position(|p| *p <= 0.0) {
            Some(i) => Err(Error::ZeroBehavior {
                state: i / self.num_actions,
                action: i % self.num_actions,
            }),
            None => Ok(()),
        }
    }

    /// Mean over states of the Shannon entropy (nats) of `pi(.|s)`.
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = (0..self.num_states)
            .map(|s| {
                self.row(s)
                    .iter()
                    .filter(|p| **p > 0.0)
                    .map(|p| -p * p.ln())
                    .sum::<f64>()
            })
            .sum();
        total / self.num_states as f64
    }

    pub(crate) fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states != mdp.num_states || self.num_actions != mdp.num_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{} but the MDP has {} states and {} actions",
                self.num_states, self.num_actions, mdp.num_states, mdp.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn from_raw(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        Self {
            num_states,
            num_actions,
            probs,
        }
    }
}

/// State-action value table `Q[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "expected {} Q entries, got {}",
                num_states * num_actions,
                values.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_norm(&self) -> f64 {
        linalg::sup_norm(&self.values)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        linalg::sup_distance(&self.values, &other.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub(crate) fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states != mdp.num_states || self.num_actions != mdp.num_actions {
            return Err(Error::Dimension(format!(
                "Q table is {}x{} but the MDP has {} states and {} actions",
                self.num_states, self.num_actions, mdp.num_states, mdp.num_actions
            )));
        }
        Ok(())
    }
}

/// State value table `V[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable {
    pub values: Vec<f64>,
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Dimension("empty distribution".into()));
        }
        check_row(&probs, || "distribution".to_string())?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    fn check_len(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.len() != mdp.num_states {
            return Err(Error::Dimension(format!(
                "distribution has {} entries but the MDP has {} states",
                self.probs.len(),
                mdp.num_states
            )));
        }
        Ok(())
    }
}

/// A sample path of state-action pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// `P_pi((s,a),(s',a')) = P_a(s,s') pi(a'|s')` over state-action pairs.
pub fn policy_transition_matrix(mdp: &TabularMdp, pi: &Policy) -> Result<DMatrix<f64>> {
    pi.check_shape(mdp)?;
    Ok(weighted_pair_matrix(mdp, |s, a| pi.prob(s, a)))
}

/// `W((s,a),(s',a')) = P_a(s,s') w(s',a')` for an arbitrary next-pair weight.
pub(crate) fn weighted_pair_matrix(
    mdp: &TabularMdp,
    weight: impl Fn(usize, usize) -> f64,
) -> DMatrix<f64> {
    let ns = mdp.num_states;
    let na = mdp.num_actions;
    let mut m = DMatrix::zeros(ns * na, ns * na);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            for next in 0..ns {
                let p = mdp.transition(a, s, next);
                if p == 0.0 {
                    continue;
                }
                for b in 0..na {
                    m[(row, next * na + b)] = p * weight(next, b);
                }
            }
        }
    }
    m
}

/// State chain `P(s,s') = sum_a pi(a|s) P_a(s,s')` induced by `pi`.
pub fn state_transition_matrix(mdp: &TabularMdp, pi: &Policy) -> Result<DMatrix<f64>> {
    pi.check_shape(mdp)?;
    let ns = mdp.num_states;
    let mut m = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..mdp.num_actions {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (next, p) in mdp.transition_row(s, a).iter().enumerate() {
                m[(s, next)] += w * p;
            }
        }
    }
    Ok(m)
}

/// `Q^pi`, the solution of `Q = R + gamma P_pi Q`.
pub fn q_function_exact(mdp: &TabularMdp, pi: &Policy) -> Result<QTable> {
    let p = policy_transition_matrix(mdp, pi)?;
    let n = mdp.num_pairs();
    let lhs = DMatrix::identity(n, n) - p.scale(mdp.gamma);
    let r = DVector::from_column_slice(&mdp.rewards);
    let q = linalg::solve(lhs.clone(), &r)?;
    let residual = (&lhs * &q - &r).amax();
    if residual > 1e-10 {
        return Err(Error::LinearSolve(format!(
            "Bellman residual {residual:e} after solve"
        )));
    }
    QTable::from_values(mdp.num_states, mdp.num_actions, q.as_slice().to_vec())
}

/// `sup |Q - R - gamma P_pi Q|`.
pub fn bellman_residual(mdp: &TabularMdp, pi: &Policy, q: &QTable) -> Result<f64> {
    let p = policy_transition_matrix(mdp, pi)?;
    let qv = q.to_vector();
    let target = DVector::from_column_slice(&mdp.rewards) + p * &qv * mdp.gamma;
    Ok((qv - target).amax())
}

/// `V(mu) = sum_s mu(s) sum_a pi(a|s) Q(s,a)` for a given Q table.
pub fn value_from_q(pi: &Policy, q: &QTable, mu: &Distribution) -> f64 {
    mu.probs
        .iter()
        .enumerate()
        .map(|(s, m)| {
            m * pi
                .row(s)
                .iter()
                .zip(q.row(s))
                .map(|(p, v)| p * v)
                .sum::<f64>()
        })
        .sum()
}

/// `V^pi(mu)`.
pub fn v_function(mdp: &TabularMdp, pi: &Policy, mu: &Distribution) -> Result<f64> {
    mu.check_len(mdp)?;
    let q = q_function_exact(mdp, pi)?;
    Ok(value_from_q(pi, &q, mu))
}

fn greedy_backup(mdp: &TabularMdp, v: &[f64], s: usize, a: usize) -> f64 {
    mdp.reward(s, a)
        + mdp.gamma
            * mdp
                .transition_row(s, a)
                .iter()
                .zip(v)
                .map(|(p, x)| p * x)
                .sum::<f64>()
}

/// Greedy deterministic policy for `V`, ties resolved toward the lowest
/// action index.
pub fn greedy_policy(mdp: &TabularMdp, v: &[f64]) -> Policy {
    let actions: Vec<usize> = (0..mdp.num_states)
        .map(|s| {
            let backups: Vec<f64> = (0..mdp.num_actions)
                .map(|a| greedy_backup(mdp, v, s, a))
                .collect();
            let best = backups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-10 * (1.0 + best.abs());
            backups
                .iter()
                .position(|q| *q >= best - tol)
                .expect("at least one action")
        })
        .collect();
    Policy::deterministic(mdp.num_actions, &actions).expect("greedy actions are in range")
}

/// Optimal values by value iteration plus the greedy policy they induce.
///
/// Iterates until the sup-norm step is at most `1e-12 (1 - gamma) / gamma`,
/// or until the step is at the floating-point resolution of `V`.
pub fn optimal_value(mdp: &TabularMdp, mu: &Distribution) -> Result<(VTable, Policy)> {
    mu.check_len(mdp)?;
    let gamma = mdp.gamma;
    let target = 1e-12 * (1.0 - gamma) / gamma;
    let mut v = vec![0.0; mdp.num_states];
    let max_iters = 100_000_usize.max((60.0 / (1.0 - gamma)) as usize * 20);
    for _ in 0..max_iters {
        let next: Vec<f64> = (0..mdp.num_states)
            .map(|s| {
                (0..mdp.num_actions)
                    .map(|a| greedy_backup(mdp, &v, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let step = linalg::sup_distance(&next, &v);
        let floor = 8.0 * f64::EPSILON * linalg::sup_norm(&next).max(1.0);
        v = next;
        if step <= target.max(floor) {
            break;
        }
    }
    let policy = greedy_policy(mdp, &v);
    Ok((VTable { values: v }, policy))
}

/// Discounted state visitation `d = (1 - gamma) (I - gamma P^T)^{-1} mu`.
pub fn discounted_visitation(
    mdp: &TabularMdp,
    pi: &Policy,
    mu: &Distribution,
) -> Result<Distribution> {
    mu.check_len(mdp)?;
    let p = state_transition_matrix(mdp, pi)?;
    let n = mdp.num_states;
    let lhs = DMatrix::identity(n, n) - p.transpose().scale(mdp.gamma);
    let rhs = DVector::from_column_slice(&mu.probs) * (1.0 - mdp.gamma);
    let d = linalg::solve(lhs, &rhs)?;
    Ok(Distribution::from_raw(
        d.iter().map(|x| x.max(0.0)).collect(),
    ))
}

/// Index drawn from `probs` by inverting the CDF at `u` in `[0, 1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the CDF short of one: take the last supported entry.
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .expect("a probability row has positive mass")
}

/// Simulates `length` state-action pairs under `pi_b` starting at `s0`.
///
/// Each step consumes exactly two uniform draws (action, then next state), so
/// a fixed seed yields the same path on every platform.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi_b: &Policy,
    length: usize,
    rng: &mut R,
    s0: usize,
) -> Result<Trajectory> {
    pi_b.check_shape(mdp)?;
    pi_b.require_positive()?;
    if s0 >= mdp.num_states {
        return Err(Error::Dimension(format!(
            "start state {s0} out of range for {} states",
            mdp.num_states
        )));
    }
    let mut steps = Vec::with_capacity(length);
    let mut s = s0;
    for _ in 0..length {
        let a = sample_index(pi_b.row(s), rng.random::<f64>());
        steps.push((s, a));
        s = sample_index(mdp.transition_row(s, a), rng.random::<f64>());
    }
    Ok(Trajectory { steps })
}
