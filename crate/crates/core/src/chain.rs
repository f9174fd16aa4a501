//! The state chain induced by the behavior policy: ergodicity checks,
//! stationary distribution, mixing time and the visitation minima that enter
//! the contraction factor.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{state_transition_matrix, Distribution, Policy, TabularMdp};

/// Step cap used by [`mixing_time`].
pub const DEFAULT_MIXING_CAP: usize = 1_000_000;

/// Total variation distance `(1/2) sum |p - q|`.
pub fn tv_distance(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(tv(p.probs(), q.probs()))
}

pub(crate) fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reachable(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    // BFS levels from `root`; `None` marks unreachable states.
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].expect("queued states have a level");
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

/// Checks that the chain with transition matrix `p` is irreducible and
/// aperiodic, judged on the support graph `p(s, s') > 0`.
///
/// The period is the gcd of `level(u) + 1 - level(v)` over all edges, where
/// `level` is the BFS depth from state 0; for an irreducible chain this equals
/// the gcd of all cycle lengths.
pub fn check_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let forward: Vec<Vec<usize>> = (0..n)
        .map(|u| (0..n).filter(|&v| p[(u, v)] > 0.0).collect())
        .collect();
    let backward: Vec<Vec<usize>> = (0..n)
        .map(|v| (0..n).filter(|&u| p[(u, v)] > 0.0).collect())
        .collect();

    let level = reachable(&forward, 0);
    if let Some(v) = level.iter().position(Option::is_none) {
        return Err(Error::Reducible {
            from: 0,
            unreachable: v,
        });
    }
    if let Some(v) = reachable(&backward, 0).iter().position(Option::is_none) {
        return Err(Error::Reducible {
            from: v,
            unreachable: 0,
        });
    }

    let mut period = 0;
    for (u, targets) in forward.iter().enumerate() {
        let lu = level[u].expect("irreducible");
        for &v in targets {
            let lv = level[v].expect("irreducible");
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    if period != 1 {
        return Err(Error::Periodic { period });
    }
    Ok(())
}

/// Stationary distribution of the state chain induced by `pi_b`.
pub fn stationary_distribution(mdp: &TabularMdp, pi_b: &Policy) -> Result<Distribution> {
    let p = state_transition_matrix(mdp, pi_b)?;
    check_ergodic(&p)?;
    stationary_of(&p)
}

pub(crate) fn stationary_of(p: &DMatrix<f64>) -> Result<Distribution> {
    let n = p.nrows();
    // (P^T - I) mu = 0 with the last equation replaced by sum(mu) = 1.
    let mut lhs = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        lhs[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let mu = linalg::solve(lhs, &rhs)?;
    let residual: f64 = (p.transpose() * &mu - &mu).iter().map(|x| x.abs()).sum();
    if residual > 1e-10 {
        return Err(Error::LinearSolve(format!(
            "stationary residual {residual:e}"
        )));
    }
    if let Some(x) = mu.iter().find(|x| **x <= 0.0) {
        return Err(Error::LinearSolve(format!(
            "non-positive stationary mass {x:e}"
        )));
    }
    Ok(Distribution::from_raw(mu.as_slice().to_vec()))
}

/// Mixing profile of the behavior chain at accuracy `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub tau: usize,
    pub alpha: f64,
    /// `max_s TV(P^k(s, .), mu_b)` for `k = 0..=tau`.
    pub max_tv_by_step: Vec<f64>,
}

impl MixingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,max_tv\n");
        for (k, tv) in self.max_tv_by_step.iter().enumerate() {
            writeln!(out, "{k},{tv}").expect("writing to a String");
        }
        out
    }
}

fn max_row_tv(pk: &DMatrix<f64>, mu: &[f64]) -> f64 {
    pk.row_iter()
        .map(|row| 0.5 * row.iter().zip(mu).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest `k` with `max_s TV(P^k(s, .), mu_b) <= alpha`, by exact matrix
/// powering, capped at [`DEFAULT_MIXING_CAP`] steps.
pub fn mixing_time(mdp: &TabularMdp, pi_b: &Policy, alpha: f64) -> Result<MixingReport> {
    mixing_time_capped(mdp, pi_b, alpha, DEFAULT_MIXING_CAP)
}

pub fn mixing_time_capped(
    mdp: &TabularMdp,
    pi_b: &Policy,
    alpha: f64,
    cap: usize,
) -> Result<MixingReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mixing accuracy must lie in (0, 1), got {alpha}"
        )));
    }
    let p = state_transition_matrix(mdp, pi_b)?;
    check_ergodic(&p)?;
    let mu = stationary_of(&p)?;
    let n = p.nrows();
    let mut pk = DMatrix::identity(n, n);
    let mut max_tv_by_step = Vec::new();
    for k in 0..=cap {
        let tv = max_row_tv(&pk, mu.probs());
        max_tv_by_step.push(tv);
        if tv <= alpha {
            return Ok(MixingReport {
                tau: k,
                alpha,
                max_tv_by_step,
            });
        }
        pk = &pk * &p;
    }
    Err(Error::NonMixing { alpha, cap })
}

/// Visitation minima of the behavior chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minima {
    /// `min_{s,a} mu_b(s) pi_b(a|s)`.
    pub m_min: f64,
    /// `c_bar * min_{s,a} pi_b(a|s)`.
    pub c_min: f64,
    pub pi_b_min: f64,
}

pub fn minima_report(mdp: &TabularMdp, pi_b: &Policy, c_bar: f64) -> Result<Minima> {
    pi_b.check_shape(mdp)?;
    pi_b.require_positive()?;
    let mu = stationary_distribution(mdp, pi_b)?;
    let m_min = (0..mdp.num_states())
        .flat_map(|s| (0..mdp.num_actions()).map(move |a| (s, a)))
        .map(|(s, a)| mu.probs()[s] * pi_b.prob(s, a))
        .fold(f64::INFINITY, f64::min);
    let pi_b_min = pi_b.min_prob();
    Ok(Minima {
        m_min,
        c_min: c_bar * pi_b_min,
        pi_b_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{cyclic_five, random_mdp, random_policy};
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn chain_mdp(rows: &[&[f64]]) -> TabularMdp {
        let n = rows.len();
        let transitions = rows.iter().flat_map(|r| r.iter().copied()).collect();
        TabularMdp::new(n, 1, transitions, vec![0.0; n], 0.9).unwrap()
    }

    fn dist(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn tv_examples() {
        let p = dist(&[0.7, 0.3]);
        let q = dist(&[0.5, 0.5]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert!((tv_distance(&p, &q).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(
            tv_distance(&Distribution::point(3, 0), &Distribution::point(3, 2)).unwrap(),
            1.0
        );
        assert!(tv_distance(&p, &Distribution::uniform(3)).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let t: f64 = v.iter().sum();
            (t > 1e-6).then(|| v.iter().map(|x| x / t).collect())
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(p in simplex(4), q in simplex(4), r in simplex(4)) {
            let (p, q, r) = (Distribution::from_raw(p), Distribution::from_raw(q), Distribution::from_raw(r));
            let pq = tv_distance(&p, &q).unwrap();
            prop_assert!((pq - tv_distance(&q, &p).unwrap()).abs() <= 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-12);
        }
    }

    #[test]
    fn stationary_examples() {
        let (mdp, pi_b) = cyclic_five();
        let mu = stationary_distribution(&mdp, &pi_b).unwrap();
        assert!(mu.probs().iter().all(|x| (x - 0.2).abs() < 1e-12));

        let one = chain_mdp(&[&[1.0]]);
        let mu = stationary_distribution(&one, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(mu.probs(), &[1.0]);

        let two = chain_mdp(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let mu = stationary_distribution(&two, &Policy::uniform(2, 1)).unwrap();
        assert!((mu.probs()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mu.probs()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_is_a_fixed_point_on_random_chains() {
        let mut rng = stream_rng(21, 0);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 5, 3, 0.9);
            let pi_b = random_policy(&mut rng, 5, 3, 0.05);
            let mu = stationary_distribution(&mdp, &pi_b).unwrap();
            let p = state_transition_matrix(&mdp, &pi_b).unwrap();
            let v = DVector::from_column_slice(mu.probs());
            let moved = p.transpose() * &v;
            assert!((moved - v).amax() < 1e-10);
        }
    }

    #[test]
    fn detects_reducible_and_periodic_chains() {
        let absorbing = chain_mdp(&[&[1.0, 0.0], &[0.5, 0.5]]);
        assert!(matches!(
            stationary_distribution(&absorbing, &Policy::uniform(2, 1)),
            Err(Error::Reducible { .. })
        ));
        let flip = chain_mdp(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(
            stationary_distribution(&flip, &Policy::uniform(2, 1)),
            Err(Error::Periodic { period: 2 })
        ));
        let cycle3 = chain_mdp(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert!(matches!(
            mixing_time(&cycle3, &Policy::uniform(3, 1), 0.1),
            Err(Error::Periodic { period: 3 })
        ));
        // Cycles of lengths 2 and 3 through state 0 make the chain aperiodic.
        let mixed = chain_mdp(&[&[0.0, 0.5, 0.5], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(stationary_distribution(&mixed, &Policy::uniform(3, 1)).is_ok());
    }

    #[test]
    fn mixing_examples() {
        let mu = [0.5, 0.3, 0.2];
        let rows: Vec<&[f64]> = vec![&mu, &mu, &mu];
        let iid = chain_mdp(&rows);
        let report = mixing_time(&iid, &Policy::uniform(3, 1), 0.5).unwrap();
        assert_eq!(report.tau, 1);

        let one = chain_mdp(&[&[1.0]]);
        assert_eq!(
            mixing_time(&one, &Policy::uniform(1, 1), 0.01).unwrap().tau,
            0
        );

        let (mdp, pi_b) = cyclic_five();
        let report = mixing_time(&mdp, &pi_b, 0.05).unwrap();
        let tau = report.tau;
        assert!(tau > 0);
        assert!(report.max_tv_by_step[tau] <= 0.05);
        assert!(report.max_tv_by_step[tau - 1] > 0.05);

        // Independent oracle: explicit powers of the 5x5 kernel.
        let p = state_transition_matrix(&mdp, &pi_b).unwrap();
        let power = |k: usize| (0..k).fold(DMatrix::identity(5, 5), |acc, _| acc * &p);
        assert!(max_row_tv(&power(tau), &[0.2; 5]) <= 0.05);
        assert!(max_row_tv(&power(tau - 1), &[0.2; 5]) > 0.05);
        assert!(report.to_csv().starts_with("k,max_tv\n0,0.8"));
    }

    #[test]
    fn mixing_cap_is_an_error() {
        let slow = chain_mdp(&[&[0.999, 0.001], &[0.001, 0.999]]);
        assert!(matches!(
            mixing_time_capped(&slow, &Policy::uniform(2, 1), 0.01, 10),
            Err(Error::NonMixing { cap: 10, .. })
        ));
    }

    #[test]
    fn mixing_time_is_monotone_in_alpha() {
        let mut rng = stream_rng(4, 0);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9);
        let pi_b = random_policy(&mut rng, 4, 2, 0.1);
        let alphas = [0.001, 0.01, 0.05, 0.1, 0.3];
        let taus: Vec<usize> = alphas
            .iter()
            .map(|a| mixing_time(&mdp, &pi_b, *a).unwrap().tau)
            .collect();
        assert!(taus.windows(2).all(|w| w[0] >= w[1]), "{taus:?}");
    }

    #[test]
    fn minima_examples() {
        let (mdp, pi_b) = cyclic_five();
        let m = minima_report(&mdp, &pi_b, 1.0).unwrap();
        assert!((m.m_min - 1.0 / 15.0).abs() < 1e-12);
        assert!((m.c_min - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.pi_b_min - 1.0 / 3.0).abs() < 1e-15);
        assert!((minima_report(&mdp, &pi_b, 2.0).unwrap().c_min - 2.0 / 3.0).abs() < 1e-15);

        let mut rng = stream_rng(8, 0);
        let mdp = random_mdp(&mut rng, 4, 3, 0.9);
        let pi_b = random_policy(&mut rng, 4, 3, 0.05);
        let mu = stationary_distribution(&mdp, &pi_b).unwrap();
        let mut brute = f64::INFINITY;
        for s in 0..4 {
            for a in 0..3 {
                brute = brute.min(mu.probs()[s] * pi_b.prob(s, a));
            }
        }
        let m = minima_report(&mdp, &pi_b, 1.0).unwrap();
        assert_eq!(m.m_min, brute);
        assert!(m.m_min > 0.0 && m.m_min < 1.0);

        let zero = Policy::deterministic(3, &[0, 0, 0, 0]).unwrap();
        assert!(matches!(
            minima_report(&mdp, &zero, 1.0),
            Err(Error::ZeroBehavior { .. })
        ));
    }
}
