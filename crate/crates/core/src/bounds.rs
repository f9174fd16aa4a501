//! Closed-form finite-sample bounds for the critic and for the full
//! actor-critic loop, and the stepsize condition under which the critic bound
//! holds.

use std::f64::consts::E;

use crate::chain::{minima_report, mixing_time};
use crate::error::{Error, Result};
use crate::linalg::geometric_sum;
use crate::mdp::{Policy, TabularMdp};
use crate::qtrace::{contraction_factor, TruncationLevels};

/// Constant of the critic convergence-bias term.
pub const C1: f64 = 27.0;
/// Constant of the critic variance term, `32832 e`.
pub const C2: f64 = 32832.0 * E;

/// Everything the bound evaluators need about an instance and a run
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub gamma: f64,
    pub gamma_c: f64,
    pub alpha: f64,
    pub tau_alpha: usize,
    pub n: usize,
    /// Critic iterations per outer iteration.
    pub k: usize,
    /// Outer iterations.
    pub t: usize,
    pub beta: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub s_size: usize,
    pub a_size: usize,
    pub pi_b_min: f64,
    pub m_min: f64,
}

impl BoundInputs {
    /// Derives `gamma_c`, `tau_alpha`, `M_min` and `pi_b_min` from the
    /// behavior chain of `mdp` under `pi_b`.
    #[allow(clippy::too_many_arguments)]
    pub fn for_instance(
        mdp: &TabularMdp,
        pi_b: &Policy,
        levels: TruncationLevels,
        n: usize,
        alpha: f64,
        k: usize,
        t: usize,
        beta: f64,
    ) -> Result<Self> {
        let minima = minima_report(mdp, pi_b, levels.c_bar())?;
        let tau_alpha = mixing_time(mdp, pi_b, alpha)?.tau;
        Ok(Self {
            gamma: mdp.gamma(),
            gamma_c: contraction_factor(mdp.gamma(), minima.m_min, minima.c_min, n),
            alpha,
            tau_alpha,
            n,
            k,
            t,
            beta,
            rho_bar: levels.rho_bar(),
            c_bar: levels.c_bar(),
            s_size: mdp.num_states(),
            a_size: mdp.num_actions(),
            pi_b_min: minima.pi_b_min,
            m_min: minima.m_min,
        })
    }

    /// `tau_alpha + n + 1`, the horizon after which the bounds apply.
    pub fn horizon(&self) -> usize {
        self.tau_alpha + self.n + 1
    }

    fn log_pairs(&self) -> f64 {
        ((self.s_size * self.a_size) as f64).ln()
    }

    fn f(&self) -> f64 {
        f_factor(self.c_bar, self.gamma, self.n)
    }

    fn decay(&self) -> f64 {
        1.0 - (1.0 - self.gamma_c) / 2.0 * self.alpha
    }
}

/// `f(c_bar, gamma) = sum_{i<n} (gamma c_bar)^i`, which is `n` when
/// `gamma c_bar = 1`.
pub fn f_factor(c_bar: f64, gamma: f64, n: usize) -> f64 {
    geometric_sum(gamma * c_bar, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeCheck {
    pub ok: bool,
    /// The binding upper limit on `alpha (tau_alpha + n + 1)`.
    pub threshold: f64,
    /// `alpha (tau_alpha + n + 1)` for the given inputs.
    pub lhs: f64,
}

/// Checks `alpha (tau_alpha + n + 1) <= min(1 / (12 (rho_bar+1) f),
/// (1 - gamma_c)^2 / (8208 (rho_bar+1)^2 f^2 log(|S||A|)))`.
pub fn validate_stepsize(inputs: &BoundInputs) -> StepsizeCheck {
    let f = inputs.f();
    let rho1 = inputs.rho_bar + 1.0;
    let first = 1.0 / (12.0 * rho1 * f);
    let second =
        (1.0 - inputs.gamma_c).powi(2) / (8208.0 * rho1 * rho1 * f * f * inputs.log_pairs());
    let threshold = first.min(second);
    let lhs = inputs.alpha * inputs.horizon() as f64;
    StepsizeCheck {
        ok: lhs <= threshold,
        threshold,
        lhs,
    }
}

/// Critic bound on `E ||Q_k - Q^{rho_bar, pi}||_inf^2` split into the
/// convergence bias `T1` and the variance `T2`.
pub fn critic_bound_terms(inputs: &BoundInputs, k: usize) -> Result<(f64, f64)> {
    let horizon = inputs.horizon();
    if k < horizon {
        return Err(Error::BelowHorizon { k, horizon });
    }
    let one_minus_gamma = 1.0 - inputs.gamma;
    let t1 = C1 / one_minus_gamma.powi(2) * inputs.decay().powi((k - horizon) as i32);
    let t2 = C2 * inputs.log_pairs() / ((1.0 - inputs.gamma_c).powi(2) * one_minus_gamma.powi(2))
        * (inputs.rho_bar + 1.0).powi(2)
        * inputs.f().powi(2)
        * inputs.alpha
        * horizon as f64;
    Ok((t1, t2))
}

/// The four error terms of the actor-critic bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorCriticTerms {
    /// Critic convergence bias.
    pub e1: f64,
    /// Critic variance.
    pub e2: f64,
    /// Truncation bias.
    pub e3: f64,
    /// Actor optimisation error.
    pub e4: f64,
}

impl ActorCriticTerms {
    pub fn total(&self) -> f64 {
        self.e1 + self.e2 + self.e3 + self.e4
    }
}

/// Actor error term `log(e |A|) / ((1 - gamma)^2 beta T)`.
pub fn actor_error(gamma: f64, a_size: usize, beta: f64, t: usize) -> f64 {
    (E * a_size as f64).ln() / ((1.0 - gamma).powi(2) * beta * t as f64)
}

pub fn actor_critic_terms(inputs: &BoundInputs) -> Result<ActorCriticTerms> {
    let horizon = inputs.horizon();
    if inputs.k < horizon {
        return Err(Error::BelowHorizon {
            k: inputs.k,
            horizon,
        });
    }
    let omg = 1.0 - inputs.gamma;
    let e1 = 24.0 / omg.powi(3) * inputs.decay().powf(0.5 * (inputs.k - horizon) as f64);
    let e2 = 1200.0 * inputs.log_pairs().sqrt() / (omg.powi(3) * (1.0 - inputs.gamma_c))
        * (inputs.rho_bar + 1.0)
        * inputs.f()
        * (inputs.alpha * horizon as f64).sqrt();
    let e3 = 4.0 * (1.0 - inputs.rho_bar * inputs.pi_b_min).max(0.0) / omg.powi(4);
    let e4 = actor_error(inputs.gamma, inputs.a_size, inputs.beta, inputs.t);
    Ok(ActorCriticTerms { e1, e2, e3, e4 })
}

/// Order-of-magnitude sample requirement for an `epsilon`-optimal policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleComplexity {
    pub t_req: f64,
    pub k_req: f64,
    /// Critic stepsize that meets the variance share.
    pub alpha: f64,
    pub total: f64,
}

/// Sizes `T`, `alpha` and `K` so that the actor term, the critic variance
/// term and the critic bias term are each at most `epsilon / 3`, with
/// `rho_bar = 1 / pi_b_min` so the truncation term vanishes.
///
/// The mixing time is modelled as `tau(alpha) = L (log(1/alpha) + 1)`, with
/// `L` calibrated from the `(alpha, tau_alpha)` pair in `inputs`. Constants
/// are those of the displayed bound; the result is only meaningful up to
/// logarithmic factors.
pub fn sample_complexity_estimate(epsilon: f64, inputs: &BoundInputs) -> Result<SampleComplexity> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "accuracy must be positive, got {epsilon}"
        )));
    }
    let share = epsilon / 3.0;
    let omg = 1.0 - inputs.gamma;
    let rho_bar = 1.0 / inputs.pi_b_min;
    let c_min = inputs.c_bar * inputs.pi_b_min;
    let gamma_c = contraction_factor(inputs.gamma, inputs.m_min, c_min, inputs.n);
    let f = f_factor(inputs.c_bar, inputs.gamma, inputs.n);

    let t_req = ((E * inputs.a_size as f64).ln() / (omg * omg * inputs.beta * share)).ceil();

    let mix_scale = inputs.tau_alpha as f64 / ((1.0 / inputs.alpha).ln() + 1.0);
    let tau = |a: f64| (mix_scale * ((1.0 / a).ln() + 1.0)).ceil();
    let load = |a: f64| a * (tau(a) + inputs.n as f64 + 1.0);

    let log_pairs = ((inputs.s_size * inputs.a_size) as f64).ln();
    let budget = if log_pairs > 0.0 {
        (share * omg.powi(3) * (1.0 - gamma_c) / (1200.0 * log_pairs.sqrt() * (rho_bar + 1.0) * f))
            .powi(2)
    } else {
        f64::INFINITY
    };
    let alpha = if load(1.0) <= budget {
        1.0
    } else {
        // `load` is increasing on (0, 1]; bisect on log(alpha).
        let (mut lo, mut hi) = (-700.0_f64, 0.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if load(mid.exp()) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    };

    let horizon = tau(alpha) + inputs.n as f64 + 1.0;
    let bias_scale = 24.0 / omg.powi(3);
    let k_req = if bias_scale <= share {
        horizon
    } else {
        let rate = -(-(1.0 - gamma_c) / 2.0 * alpha).ln_1p();
        (horizon + 2.0 * (bias_scale / share).ln() / rate).ceil()
    };
    Ok(SampleComplexity {
        t_req,
        k_req,
        alpha,
        total: t_req * k_req,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::cyclic_five;

    fn cyclic_inputs() -> BoundInputs {
        let (mdp, pi_b) = cyclic_five();
        let levels = TruncationLevels::new(3.0, 1.0).unwrap();
        BoundInputs::for_instance(&mdp, &pi_b, levels, 6, 0.05, 1000, 100, 0.1).unwrap()
    }

    #[test]
    fn f_factor_examples() {
        assert_eq!(f_factor(1.0 / 0.9, 0.9, 6), 6.0);
        let geometric: f64 = (0..6).map(|i| 0.9f64.powi(i)).sum();
        assert!((f_factor(1.0, 0.9, 6) - geometric).abs() < 1e-14);
        assert!((f_factor(1.0, 0.9, 6) - 4.68559).abs() < 1e-12);
        assert_eq!(f_factor(1.7, 0.3, 1), 1.0);
        assert_eq!(f_factor(1.0, 0.99, 1), 1.0);
    }

    #[test]
    fn f_factor_is_continuous_at_unit_ratio() {
        let gamma = 0.8;
        let at = f_factor(1.0 / gamma, gamma, 6);
        let below = f_factor((1.0 - 1e-9) / gamma, gamma, 6);
        let above = f_factor((1.0 + 1e-9) / gamma, gamma, 6);
        assert!((at - below).abs() < 1e-6);
        assert!((at - above).abs() < 1e-6);
    }

    #[test]
    fn stepsize_examples() {
        let mut inputs = cyclic_inputs();
        let check = validate_stepsize(&inputs);
        assert!(!check.ok, "the experiment stepsize violates the condition");
        assert!(check.lhs > check.threshold);

        // The second limit is about 1e-11 on this instance, so the vanishing
        // stepsize has to be well below that.
        let (mdp, pi_b) = cyclic_five();
        let levels = TruncationLevels::new(3.0, 1.0).unwrap();
        let tiny =
            BoundInputs::for_instance(&mdp, &pi_b, levels, 6, 1e-13, 1000, 100, 0.1).unwrap();
        assert!(validate_stepsize(&tiny).ok);
        let mut rng = crate::rng::stream_rng(3, 0);
        for _ in 0..5 {
            let mdp = crate::instances::random_mdp(&mut rng, 3, 2, 0.9);
            let pi_b = Policy::uniform(3, 2);
            let at = BoundInputs::for_instance(&mdp, &pi_b, levels, 6, 1e-13, 10, 10, 0.1).unwrap();
            assert!(validate_stepsize(&at).ok);
        }

        let base = validate_stepsize(&inputs).threshold;
        inputs.rho_bar *= 2.0;
        assert!(validate_stepsize(&inputs).threshold < base);
    }

    #[test]
    fn critic_bound_examples() {
        let inputs = cyclic_inputs();
        let h = inputs.horizon();
        let (t1, t2) = critic_bound_terms(&inputs, h).unwrap();
        assert!((t1 - 27.0 / 0.01).abs() < 1e-9);
        let mut last = t1;
        for k in [h + 1, h + 100, h + 10_000, h + 1_000_000] {
            let (t1k, t2k) = critic_bound_terms(&inputs, k).unwrap();
            assert!(t1k < last);
            assert_eq!(t2k, t2);
            last = t1k;
        }
        assert!(last < 1e-6);
        assert!(matches!(
            critic_bound_terms(&inputs, h - 1),
            Err(Error::BelowHorizon { .. })
        ));
    }

    #[test]
    fn halving_alpha_shrinks_variance_term() {
        let (mdp, pi_b) = cyclic_five();
        let levels = TruncationLevels::new(3.0, 1.0).unwrap();
        let at = |alpha| {
            let inputs =
                BoundInputs::for_instance(&mdp, &pi_b, levels, 6, alpha, 1000, 100, 0.1).unwrap();
            critic_bound_terms(&inputs, inputs.horizon()).unwrap().1
        };
        let ratio = at(0.025) / at(0.05);
        // The longer mixing time at the smaller stepsize keeps the ratio at or
        // above one half.
        assert!((0.5..0.75).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn actor_critic_examples() {
        let mut inputs = cyclic_inputs();
        let terms = actor_critic_terms(&inputs).unwrap();
        assert_eq!(
            terms.e3, 0.0,
            "rho_bar = 1 / pi_b_min removes truncation bias"
        );
        assert!(terms.e1 > 0.0 && terms.e2 > 0.0 && terms.e4 > 0.0);

        inputs.t *= 2;
        let doubled = actor_critic_terms(&inputs).unwrap();
        assert!((doubled.e4 - terms.e4 / 2.0).abs() < 1e-13);

        inputs.rho_bar = 2.5;
        let e3 = actor_critic_terms(&inputs).unwrap().e3;
        assert!((e3 - 4.0 * (1.0 - 2.5 / 3.0) / 1e-4).abs() < 1e-6);

        inputs.k = inputs.horizon() - 1;
        assert!(actor_critic_terms(&inputs).is_err());
    }

    #[test]
    fn truncation_term_matches_worst_case_bias_bound() {
        use crate::qtrace::bias_bound;
        let mut inputs = cyclic_inputs();
        inputs.rho_bar = 1.5;
        // A target concentrated on the least likely behavior action attains
        // the worst case of the per-policy bias bound.
        let pi_b = Policy::new(1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        inputs.pi_b_min = 0.2;
        let pi = Policy::deterministic(3, &[0]).unwrap();
        let bias = bias_bound(&pi, &pi_b, 1.5, inputs.gamma);
        let e3 = actor_critic_terms(&inputs).unwrap().e3;
        assert!((e3 - 4.0 * bias / (1.0 - inputs.gamma).powi(2)).abs() < 1e-9 * e3);
    }

    #[test]
    fn sample_complexity_scaling() {
        let inputs = cyclic_inputs();
        let a = sample_complexity_estimate(0.1, &inputs).unwrap();
        let b = sample_complexity_estimate(0.05, &inputs).unwrap();
        let ratio = b.total / a.total;
        assert!((8.0..12.0).contains(&ratio), "ratio = {ratio}");
        assert_eq!(a, sample_complexity_estimate(0.1, &inputs).unwrap());

        let mut closer = inputs;
        closer.gamma = 0.95;
        assert!(sample_complexity_estimate(0.1, &closer).unwrap().total > a.total);
        assert!(sample_complexity_estimate(0.0, &inputs).is_err());
    }
}
