//! Q-trace: multi-step off-policy TD evaluation of a target policy from
//! behavior-policy samples, with two truncation levels on the importance
//! ratios.
//!
//! `rho_bar` caps the ratio that multiplies the bootstrapped value and
//! therefore fixes the limit point `Q^{rho_bar, pi}`; `c_bar` caps the ratios
//! in the trace product and only affects variance. The trace product for the
//! update at time `k` starts at `j = k + 1`.
//!
//! Besides the sampled algorithm this module provides exact oracles: the
//! per-window operator `T(Q, pi, x)`, its closed-form expectation `A Q + b`
//! under the stationary window distribution, the modified Bellman fixed point
//! and the truncation bias bound.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::chain::{minima_report, stationary_distribution};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{
    policy_transition_matrix, weighted_pair_matrix, Policy, QTable, TabularMdp, Trajectory,
};

/// Truncation levels with `rho_bar >= c_bar >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationLevels {
    rho_bar: f64,
    c_bar: f64,
}

impl TruncationLevels {
    pub fn new(rho_bar: f64, c_bar: f64) -> Result<Self> {
        if !(c_bar >= 1.0 && rho_bar >= c_bar && rho_bar.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "truncation levels must satisfy rho_bar >= c_bar >= 1, got rho_bar = {rho_bar}, c_bar = {c_bar}"
            )));
        }
        Ok(Self { rho_bar, c_bar })
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    pub fn c_bar(&self) -> f64 {
        self.c_bar
    }
}

/// Truncated importance ratios `rho(s,a) = min(rho_bar, pi/pi_b)` and
/// `c(s,a) = min(c_bar, pi/pi_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTables {
    num_actions: usize,
    rho: Vec<f64>,
    c: Vec<f64>,
}

impl RatioTables {
    pub fn rho(&self, s: usize, a: usize) -> f64 {
        self.rho[s * self.num_actions + a]
    }

    pub fn c(&self, s: usize, a: usize) -> f64 {
        self.c[s * self.num_actions + a]
    }
}

pub fn truncated_ratios(
    pi: &Policy,
    pi_b: &Policy,
    levels: TruncationLevels,
) -> Result<RatioTables> {
    if pi.num_states() != pi_b.num_states() || pi.num_actions() != pi_b.num_actions() {
        return Err(Error::Dimension(
            "target and behavior policies differ in shape".into(),
        ));
    }
    pi_b.require_positive()?;
    let ratios = pi.probs().iter().zip(pi_b.probs()).map(|(p, b)| p / b);
    let (rho, c) = ratios
        .map(|r| (r.min(levels.rho_bar), r.min(levels.c_bar)))
        .unzip();
    Ok(RatioTables {
        num_actions: pi.num_actions(),
        rho,
        c,
    })
}

/// Hyperparameters of one Q-trace call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTraceParams {
    /// Multi-step horizon `n >= 1`.
    pub n: usize,
    /// Number of updates `K`.
    pub iterations: usize,
    /// Constant stepsize.
    pub alpha: f64,
    pub truncation: TruncationLevels,
}

impl QTraceParams {
    pub fn new(
        n: usize,
        iterations: usize,
        alpha: f64,
        truncation: TruncationLevels,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "horizon n must be at least 1".into(),
            ));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stepsize must be positive, got {alpha}"
            )));
        }
        Ok(Self {
            n,
            iterations,
            alpha,
            truncation,
        })
    }

    /// Samples consumed by one call: `K + n`.
    pub fn samples_per_call(&self) -> usize {
        self.iterations + self.n
    }
}

/// `sum_{i<n} gamma^i (prod_{j=1..i} c(s_j,a_j)) (R(s_i,a_i) + gamma rho(s_{i+1},a_{i+1}) Q(s_{i+1},a_{i+1}) - Q(s_i,a_i))`
/// over a window of `n + 1` pairs.
fn correction(
    mdp: &TabularMdp,
    ratios: &RatioTables,
    q: &QTable,
    window: &[(usize, usize)],
) -> f64 {
    let gamma = mdp.gamma();
    let mut total = 0.0;
    let mut discount = 1.0;
    let mut trace = 1.0;
    for i in 0..window.len() - 1 {
        let (s, a) = window[i];
        let (s1, a1) = window[i + 1];
        if i > 0 {
            trace *= ratios.c(s, a);
        }
        let delta = mdp.reward(s, a) + gamma * ratios.rho(s1, a1) * q.get(s1, a1) - q.get(s, a);
        total += discount * trace * delta;
        discount *= gamma;
    }
    total
}

fn check_pair_shapes(mdp: &TabularMdp, pi: &Policy, pi_b: &Policy, q: &QTable) -> Result<()> {
    pi.check_shape(mdp)?;
    pi_b.check_shape(mdp)?;
    q.check_shape(mdp)
}

/// Runs `K` Q-trace updates along `trajectory` starting from `q0`.
///
/// Update `k` uses the window of pairs `k..=k+n` and changes only the entry
/// of the visited pair `(S_k, A_k)`, so a trajectory of `K + n` pairs is
/// enough.
pub fn qtrace_run(
    mdp: &TabularMdp,
    trajectory: &Trajectory,
    pi: &Policy,
    pi_b: &Policy,
    params: &QTraceParams,
    q0: &QTable,
) -> Result<QTable> {
    check_pair_shapes(mdp, pi, pi_b, q0)?;
    let needed = params.samples_per_call();
    if trajectory.len() < needed {
        return Err(Error::TrajectoryTooShort {
            needed,
            got: trajectory.len(),
        });
    }
    let ratios = truncated_ratios(pi, pi_b, params.truncation)?;
    let mut q = q0.clone();
    for k in 0..params.iterations {
        let window = &trajectory.steps[k..=k + params.n];
        let step = params.alpha * correction(mdp, &ratios, &q, window);
        let (s, a) = window[0];
        q.set(s, a, q.get(s, a) + step);
    }
    Ok(q)
}

/// The per-window operator `T(Q, pi, x)`: equal to `q` except at the first
/// pair of the window, which receives the multi-step correction.
pub fn noisy_operator(
    mdp: &TabularMdp,
    q: &QTable,
    pi: &Policy,
    pi_b: &Policy,
    levels: TruncationLevels,
    n: usize,
    window: &[(usize, usize)],
) -> Result<QTable> {
    check_pair_shapes(mdp, pi, pi_b, q)?;
    if window.len() != n + 1 || n == 0 {
        return Err(Error::WindowLength {
            expected: n + 1,
            got: window.len(),
        });
    }
    let ratios = truncated_ratios(pi, pi_b, levels)?;
    let mut out = q.clone();
    let (s, a) = window[0];
    out.set(s, a, q.get(s, a) + correction(mdp, &ratios, q, window));
    Ok(out)
}

/// `pi_trunc(a|s) = min(level pi_b(a|s), pi(a|s)) / mass(s)` together with
/// the per-state normaliser `mass(s) = sum_a min(level pi_b(a|s), pi(a|s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPolicy {
    pub policy: Policy,
    pub mass: Vec<f64>,
}

pub fn truncated_policy(pi: &Policy, pi_b: &Policy, level: f64) -> Result<TruncatedPolicy> {
    if pi.num_states() != pi_b.num_states() || pi.num_actions() != pi_b.num_actions() {
        return Err(Error::Dimension(
            "target and behavior policies differ in shape".into(),
        ));
    }
    let (ns, na) = (pi.num_states(), pi.num_actions());
    let mut probs = Vec::with_capacity(ns * na);
    let mut mass = Vec::with_capacity(ns);
    for s in 0..ns {
        let capped: Vec<f64> = (0..na)
            .map(|a| (level * pi_b.prob(s, a)).min(pi.prob(s, a)))
            .collect();
        let total: f64 = capped.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroBehavior {
                state: s,
                action: 0,
            });
        }
        probs.extend(capped.iter().map(|x| x / total));
        mass.push(total);
    }
    Ok(TruncatedPolicy {
        policy: Policy::from_raw(ns, na, probs),
        mass,
    })
}

/// `P_{pi_level} diag(mass)`: the truncated transition kernel scaled by the
/// per-state mass of the next state.
fn scaled_truncated_kernel(mdp: &TabularMdp, t: &TruncatedPolicy) -> Result<DMatrix<f64>> {
    let mut m = policy_transition_matrix(mdp, &t.policy)?;
    let na = mdp.num_actions();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= t.mass[j / na];
    }
    Ok(m)
}

/// `1 - M_min (1 - gamma) sum_{i<n} (gamma C_min)^i`.
///
/// `C_min` enters as `min(C_min, 1)`: the per-state trace mass never exceeds
/// one, and the two agree whenever `c_bar pi_b_min <= 1`.
pub fn contraction_factor(gamma: f64, m_min: f64, c_min: f64, n: usize) -> f64 {
    1.0 - m_min * (1.0 - gamma) * linalg::geometric_sum(gamma * c_min.min(1.0), n)
}

/// The expected operator `T_e(Q) = A Q + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedOperator {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Closed-form contraction factor from the visitation minima.
    pub gamma_c_formula: f64,
    /// `||A||_inf` computed from the matrix.
    pub a_inf_norm: f64,
    num_states: usize,
    num_actions: usize,
}

impl ExpectedOperator {
    pub fn apply(&self, q: &QTable) -> QTable {
        let v = &self.a * q.to_vector() + &self.b;
        QTable::from_values(self.num_states, self.num_actions, v.as_slice().to_vec())
            .expect("operator preserves shape")
    }

    /// Solves `Q = A Q + b`.
    pub fn fixed_point(&self) -> Result<QTable> {
        let n = self.b.len();
        let q = linalg::solve(DMatrix::identity(n, n) - &self.a, &self.b)?;
        QTable::from_values(self.num_states, self.num_actions, q.as_slice().to_vec())
    }

    /// Dense dump: one line per row of `A`, with the matching entry of `b`
    /// appended as the last column.
    pub fn to_csv(&self) -> String {
        let n = self.b.len();
        let mut out = String::new();
        for j in 0..n {
            write!(out, "a{j},").expect("writing to a String");
        }
        out.push_str("b\n");
        for i in 0..n {
            for j in 0..n {
                write!(out, "{},", self.a[(i, j)]).expect("writing to a String");
            }
            writeln!(out, "{}", self.b[i]).expect("writing to a String");
        }
        out
    }
}

/// Builds `A = I - sum_{i<n} gamma^i M (P_c C)^i (I - gamma P_rho D)` and
/// `b = sum_{i<n} gamma^i M (P_c C)^i R`, where `M = diag(mu_b(s) pi_b(a|s))`.
pub fn expected_operator(
    mdp: &TabularMdp,
    pi: &Policy,
    pi_b: &Policy,
    levels: TruncationLevels,
    n: usize,
) -> Result<ExpectedOperator> {
    pi.check_shape(mdp)?;
    pi_b.check_shape(mdp)?;
    if n == 0 {
        return Err(Error::InvalidParameter(
            "horizon n must be at least 1".into(),
        ));
    }
    let mu_b = stationary_distribution(mdp, pi_b)?;
    let minima = minima_report(mdp, pi_b, levels.c_bar)?;
    let na = mdp.num_actions();
    let dim = mdp.num_pairs();
    let gamma = mdp.gamma();

    let trace_kernel = scaled_truncated_kernel(mdp, &truncated_policy(pi, pi_b, levels.c_bar)?)?;
    let value_kernel = scaled_truncated_kernel(mdp, &truncated_policy(pi, pi_b, levels.rho_bar)?)?;
    let visit = DVector::from_fn(dim, |i, _| mu_b.probs()[i / na] * pi_b.prob(i / na, i % na));

    // weights = sum_{i<n} M (gamma P_c C)^i
    let step = trace_kernel.scale(gamma);
    let mut power = DMatrix::<f64>::identity(dim, dim);
    let mut weights = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        if i > 0 {
            power = &power * &step;
        }
        weights += &power;
    }
    for (r, mut row) in weights.row_iter_mut().enumerate() {
        row *= visit[r];
    }

    let identity = DMatrix::<f64>::identity(dim, dim);
    let a = &identity - &weights * (&identity - value_kernel.scale(gamma));
    let b = &weights * DVector::from_column_slice(mdp.rewards());
    let a_inf_norm = linalg::inf_norm(&a);
    Ok(ExpectedOperator {
        a,
        b,
        gamma_c_formula: contraction_factor(gamma, minima.m_min, minima.c_min, n),
        a_inf_norm,
        num_states: mdp.num_states(),
        num_actions: na,
    })
}

/// `Q^{rho_bar, pi}`: the solution of `Q = R + gamma P_{pi_rho} D Q`, where
/// `(P_{pi_rho} D)((s,a),(s',a')) = P_a(s,s') min(rho_bar pi_b(a'|s'), pi(a'|s'))`.
pub fn fixed_point(mdp: &TabularMdp, pi: &Policy, pi_b: &Policy, rho_bar: f64) -> Result<QTable> {
    pi.check_shape(mdp)?;
    pi_b.check_shape(mdp)?;
    let kernel = weighted_pair_matrix(mdp, |s, a| (rho_bar * pi_b.prob(s, a)).min(pi.prob(s, a)));
    let dim = mdp.num_pairs();
    let lhs = DMatrix::identity(dim, dim) - kernel.scale(mdp.gamma());
    let r = DVector::from_column_slice(mdp.rewards());
    let q = linalg::solve(lhs.clone(), &r)?;
    let residual = (&lhs * &q - &r).amax();
    if residual > 1e-10 {
        return Err(Error::LinearSolve(format!(
            "modified Bellman residual {residual:e} after solve"
        )));
    }
    QTable::from_values(mdp.num_states(), mdp.num_actions(), q.as_slice().to_vec())
}

/// `sup |Q - R - gamma P_{pi_rho} D Q|`.
pub fn modified_bellman_residual(
    mdp: &TabularMdp,
    pi: &Policy,
    pi_b: &Policy,
    rho_bar: f64,
    q: &QTable,
) -> Result<f64> {
    q.check_shape(mdp)?;
    let kernel = weighted_pair_matrix(mdp, |s, a| (rho_bar * pi_b.prob(s, a)).min(pi.prob(s, a)));
    let qv = q.to_vector();
    let target = DVector::from_column_slice(mdp.rewards()) + kernel * &qv * mdp.gamma();
    Ok((qv - target).amax())
}

/// Upper bound on `||Q^{rho_bar, pi} - Q^pi||_inf`:
/// `max_{s,a} max(pi(a|s) - rho_bar pi_b(a|s), 0) / (1 - gamma)^2`.
pub fn bias_bound(pi: &Policy, pi_b: &Policy, rho_bar: f64, gamma: f64) -> f64 {
    let worst = pi
        .probs()
        .iter()
        .zip(pi_b.probs())
        .map(|(p, b)| (p - rho_bar * b).max(0.0))
        .fold(0.0, f64::max);
    worst / (1.0 - gamma).powi(2)
}
