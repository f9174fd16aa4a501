//! Off-policy natural actor-critic: a softmax policy-gradient actor driven by
//! Q-trace estimates computed from consecutive segments of one behavior
//! trajectory.

use std::fmt::Write as _;

use rand::Rng;

use crate::chain::stationary_distribution;
use crate::error::{Error, Result};
use crate::mdp::{
    optimal_value, q_function_exact, sample_trajectory, value_from_q, Distribution, Policy, QTable,
    TabularMdp, Trajectory,
};
use crate::qtrace::{fixed_point, qtrace_run, QTraceParams};
use crate::rng::stream_rng;

/// How the critic gets its data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMode {
    /// Outer iteration `t` uses steps `t(K+n) .. (t+1)(K+n)` of one trajectory.
    #[default]
    Fresh,
    /// Every critic call reuses the same `K+n` steps.
    Reuse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacParams {
    /// Outer iterations `T`.
    pub iterations: usize,
    pub critic: QTraceParams,
    pub beta: f64,
    pub seed: u64,
    pub stream: u64,
    /// Start each critic call from the previous estimate instead of zero.
    pub warm_start: bool,
    /// First state of the behavior trajectory.
    pub s0: usize,
    /// Start distribution used to score policies.
    pub mu: Distribution,
    pub sampling: SampleMode,
    /// Initial policy; uniform when `None`.
    pub pi0: Option<Policy>,
}

impl NacParams {
    /// Warm-started, fresh-sampling parameters starting at state 0 and scored
    /// under the uniform start distribution.
    pub fn new(
        iterations: usize,
        critic: QTraceParams,
        beta: f64,
        seed: u64,
        num_states: usize,
    ) -> Result<Self> {
        let params = Self {
            iterations,
            critic,
            beta,
            seed,
            stream: 0,
            warm_start: true,
            s0: 0,
            mu: Distribution::uniform(num_states),
            sampling: SampleMode::Fresh,
            pi0: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "at least one outer iteration is required".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "actor stepsize must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Trajectory length the run draws: `T(K+n)`, or `K+n` when reusing.
    pub fn samples_needed(&self) -> usize {
        match self.sampling {
            SampleMode::Fresh => self.iterations * self.critic.samples_per_call(),
            SampleMode::Reuse => self.critic.samples_per_call(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub t: usize,
    /// `V*(mu) - V^{pi_t}(mu)`.
    pub gap: f64,
    /// `||Q_{t+1} - Q^{pi_t}||_inf`.
    pub critic_err: f64,
    /// `||Q_{t+1} - Q^{rho_bar, pi_t}||_inf`.
    pub fp_err: f64,
    /// Mean per-state entropy of `pi_t`.
    pub entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// Environment transitions drawn for the run.
    pub samples_consumed: usize,
}

pub const CSV_HEADER: &str = "t,gap,critic_err,fp_err";

impl RunRecord {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gap).collect()
    }

    /// Smallest gap over the whole trace.
    pub fn best_gap(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.gap)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn last_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }

    /// CSV with a `#schema=1` line and the `t,gap,critic_err,fp_err` columns.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = format!("#schema=1\n{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.t, r.gap, r.critic_err, r.fp_err)
                .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Output of one actor-critic run.
#[derive(Debug, Clone)]
pub struct NacRun {
    /// `pi_0 .. pi_{T-1}`, the iterates scored in the record.
    pub policies: Vec<Policy>,
    /// `pi_T`.
    pub final_policy: Policy,
    pub final_q: QTable,
    pub record: RunRecord,
}

/// `pi'(a|s) ∝ pi(a|s) exp(beta q(s,a))`, with the per-state maximum of
/// `beta q` subtracted before exponentiating.
pub fn actor_update(pi: &Policy, q: &QTable, beta: f64) -> Result<Policy> {
    if q.num_states() != pi.num_states() || q.num_actions() != pi.num_actions() {
        return Err(Error::Dimension(format!(
            "Q table is {}x{} but policy is {}x{}",
            q.num_states(),
            q.num_actions(),
            pi.num_states(),
            pi.num_actions()
        )));
    }
    if !q.is_finite() {
        return Err(Error::InvalidParameter(
            "Q table has non-finite entries".into(),
        ));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "actor stepsize must be nonnegative, got {beta}"
        )));
    }
    if beta == 0.0 {
        return Ok(pi.clone());
    }
    let na = pi.num_actions();
    let mut probs = Vec::with_capacity(pi.probs().len());
    for s in 0..pi.num_states() {
        let row = pi.row(s);
        let logits: Vec<f64> = q.row(s).iter().map(|v| beta * v).collect();
        let shift = (0..na)
            .filter(|&a| row[a] > 0.0)
            .map(|a| logits[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = (0..na)
            .map(|a| {
                if row[a] > 0.0 {
                    row[a] * (logits[a] - shift).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        probs.extend(weights.iter().map(|w| w / total));
    }
    Ok(Policy::from_raw(pi.num_states(), na, probs))
}

fn optimal_score(mdp: &TabularMdp, mu: &Distribution) -> Result<f64> {
    let (v_star, _) = optimal_value(mdp, mu)?;
    Ok(v_star
        .values
        .iter()
        .zip(mu.probs())
        .map(|(v, m)| v * m)
        .sum())
}

/// Runs the actor-critic loop for `params.iterations` outer iterations.
///
/// The behavior trajectory is drawn once, up front, from
/// `stream_rng(params.seed, params.stream)`. Gap and critic-error columns are
/// computed with exact linear solves.
pub fn nac_run(mdp: &TabularMdp, pi_b: &Policy, params: &NacParams) -> Result<NacRun> {
    params.validate()?;
    pi_b.require_positive()?;
    stationary_distribution(mdp, pi_b)?;
    let pi0 = match &params.pi0 {
        Some(p) => p.clone(),
        None => Policy::uniform(mdp.num_states(), mdp.num_actions()),
    };
    pi0.check_shape(mdp)?;
    let v_star = optimal_score(mdp, &params.mu)?;

    let mut rng = stream_rng(params.seed, params.stream);
    let trajectory = sample_trajectory(mdp, pi_b, params.samples_needed(), &mut rng, params.s0)?;
    let per_call = params.critic.samples_per_call();

    let mut pi = pi0;
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut policies = Vec::with_capacity(params.iterations);
    let mut rows = Vec::with_capacity(params.iterations);
    let mut segment = Trajectory {
        steps: Vec::with_capacity(per_call),
    };
    for t in 0..params.iterations {
        let start = match params.sampling {
            SampleMode::Fresh => t * per_call,
            SampleMode::Reuse => 0,
        };
        segment.steps.clear();
        segment
            .steps
            .extend_from_slice(&trajectory.steps[start..start + per_call]);
        let q_init = if params.warm_start {
            q
        } else {
            QTable::zeros(mdp.num_states(), mdp.num_actions())
        };
        q = qtrace_run(mdp, &segment, &pi, pi_b, &params.critic, &q_init)?;
        if !q.is_finite() {
            return Err(Error::NonFinite { t });
        }

        let q_true = q_function_exact(mdp, &pi)?;
        let q_fixed = fixed_point(mdp, &pi, pi_b, params.critic.truncation.rho_bar())?;
        rows.push(RunRow {
            t,
            gap: v_star - value_from_q(&pi, &q_true, &params.mu),
            critic_err: q.sup_distance(&q_true),
            fp_err: q.sup_distance(&q_fixed),
            entropy: pi.mean_entropy(),
        });
        let next = actor_update(&pi, &q, params.beta)?;
        policies.push(std::mem::replace(&mut pi, next));
    }
    Ok(NacRun {
        policies,
        final_policy: pi,
        final_q: q,
        record: RunRecord {
            rows,
            samples_consumed: trajectory.len(),
        },
    })
}

/// Policy-gradient iterates with the exact `Q^{pi_t}` in place of the critic.
/// Critic-error columns are zero.
pub fn exact_npg_run(
    mdp: &TabularMdp,
    mu: &Distribution,
    beta: f64,
    iterations: usize,
    pi0: &Policy,
) -> Result<(Vec<Policy>, RunRecord)> {
    pi0.check_shape(mdp)?;
    let v_star = optimal_score(mdp, mu)?;
    let mut pi = pi0.clone();
    let mut policies = Vec::with_capacity(iterations);
    let mut rows = Vec::with_capacity(iterations);
    for t in 0..iterations {
        let q = q_function_exact(mdp, &pi)?;
        rows.push(RunRow {
            t,
            gap: v_star - value_from_q(&pi, &q, mu),
            critic_err: 0.0,
            fp_err: 0.0,
            entropy: pi.mean_entropy(),
        });
        let next = actor_update(&pi, &q, beta)?;
        policies.push(std::mem::replace(&mut pi, next));
    }
    Ok((
        policies,
        RunRecord {
            rows,
            samples_consumed: 0,
        },
    ))
}

/// Index drawn uniformly from `0..T`.
pub fn uniform_iterate_select<R: Rng + ?Sized>(record: &RunRecord, rng: &mut R) -> Result<usize> {
    if record.is_empty() {
        return Err(Error::InvalidParameter("record has no iterates".into()));
    }
    Ok(rng.random_range(0..record.len()))
}
