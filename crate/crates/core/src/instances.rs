//! Built-in and randomly generated problem instances.

use rand::Rng;

use crate::mdp::{Policy, TabularMdp};

/// The 5-state, 3-action cyclic MDP used in the experiments, with its uniform
/// behavior policy.
///
/// Action 0 shifts the state forward cyclically and pays 1, action 1 stays
/// put and pays 0.5, action 2 shifts backward and pays 0. Discount is 0.9.
pub fn cyclic_five() -> (TabularMdp, Policy) {
    let ns = 5;
    let na = 3;
    let mut transitions = vec![0.0; na * ns * ns];
    for s in 0..ns {
        let targets = [(s + 1) % ns, s, (s + ns - 1) % ns];
        for (a, next) in targets.into_iter().enumerate() {
            transitions[(a * ns + s) * ns + next] = 1.0;
        }
    }
    let rewards = (0..ns).flat_map(|_| [1.0, 0.5, 0.0]).collect();
    let mdp = TabularMdp::new(ns, na, transitions, rewards, 0.9).expect("valid built-in MDP");
    (mdp, Policy::uniform(ns, na))
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    // Exponential spacings give a uniform point on the simplex; `floor` keeps
    // every entry bounded away from zero.
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw
        .iter()
        .map(|x| floor + (1.0 - floor * n as f64) * x / total)
        .collect();
    // Put the rounding residue on the largest entry so the row sums to 1.
    let residue = 1.0 - row.iter().sum::<f64>();
    let imax = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    row[imax] += residue;
    row
}

/// Dense random MDP: every transition probability is positive, so any
/// positive behavior policy induces an irreducible aperiodic chain.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> TabularMdp {
    let floor = 0.02 / num_states as f64;
    let mut transitions = Vec::with_capacity(num_actions * num_states * num_states);
    for _ in 0..num_actions * num_states {
        transitions.extend(random_simplex(rng, num_states, floor));
    }
    let rewards = (0..num_states * num_actions)
        .map(|_| rng.random::<f64>())
        .collect();
    TabularMdp::new(num_states, num_actions, transitions, rewards, gamma)
        .expect("generated MDP is valid")
}

/// Random policy whose entries are all at least `floor`.
pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    floor: f64,
) -> Policy {
    let probs = (0..num_states)
        .flat_map(|_| random_simplex(rng, num_actions, floor))
        .collect();
    Policy::new(num_states, num_actions, probs).expect("generated policy is valid")
}
