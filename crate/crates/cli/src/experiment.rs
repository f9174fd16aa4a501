//! Experiment execution: seeded runs on a worker pool, per-seed and aggregate
//! CSVs, optional SVG charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use qtrace_nac::bounds::{
    actor_critic_terms, critic_bound_terms, sample_complexity_estimate, validate_stepsize,
    BoundInputs,
};
use qtrace_nac::chain::{minima_report, mixing_time, stationary_distribution};
use qtrace_nac::format::{write_policy, write_q};
use qtrace_nac::mdp::{optimal_value, q_function_exact, sample_trajectory, v_function};
use qtrace_nac::nac::{exact_npg_run, nac_run, NacRun};
use qtrace_nac::qtrace::{bias_bound, expected_operator, fixed_point, qtrace_run};
use qtrace_nac::rng::stream_rng;
use qtrace_nac::{
    Distribution, Policy, QTable, RunRecord, SampleMode, TabularMdp, Trajectory, TruncationLevels,
};

use crate::config::{ExperimentConfig, Mode};
use crate::svg::{Chart, Series};

pub const SCHEMA_LINE: &str = "#schema=1";
pub const THREADS_ENV: &str = "QTRACE_NAC_THREADS";

/// A numeric table keyed by an integer index column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub index_name: String,
    pub columns: Vec<String>,
    pub index: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SCHEMA_LINE}\n{}", self.index_name);
        for c in &self.columns {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.index.iter().zip(&self.rows) {
            write!(out, "{i}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn record_table(record: &RunRecord) -> Table {
    Table {
        index_name: "t".into(),
        columns: vec!["gap".into(), "critic_err".into(), "fp_err".into()],
        index: record.rows.iter().map(|r| r.t).collect(),
        rows: record
            .rows
            .iter()
            .map(|r| vec![r.gap, r.critic_err, r.fp_err])
            .collect(),
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; zero for a
/// single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-index mean and standard deviation of every column across `tables`,
/// as columns `{name}_mean,{name}_std`.
pub fn aggregate(tables: &[Table]) -> Table {
    let first = &tables[0];
    let rows = (0..first.rows.len())
        .map(|i| {
            (0..first.columns.len())
                .flat_map(|j| {
                    let xs: Vec<f64> = tables.iter().map(|t| t.rows[i][j]).collect();
                    let (m, s) = mean_std(&xs);
                    [m, s]
                })
                .collect()
        })
        .collect();
    Table {
        index_name: first.index_name.clone(),
        columns: first
            .columns
            .iter()
            .flat_map(|c| [format!("{c}_mean"), format!("{c}_std")])
            .collect(),
        index: first.index.clone(),
        rows,
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?)
}

/// Runs `f(i)` for every seed index on the worker pool. Results come back in
/// seed order whatever the scheduling.
fn per_seed<T: Send>(num_seeds: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    thread_pool()?.install(|| (0..num_seeds as u64).into_par_iter().map(&f).collect())
}

/// What an experiment printed and wrote.
#[derive(Debug, Default, Clone)]
pub struct Report {
    pub text: String,
    pub files: Vec<PathBuf>,
    /// Machine-readable form of the report, when the mode has one.
    pub csv: Option<String>,
}

impl Report {
    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }
}

struct Setup {
    mdp: TabularMdp,
    pi_b: Policy,
    pi0: Policy,
    levels: TruncationLevels,
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    config.validate()?;
    let mdp = config.load_mdp()?;
    let pi_b = config.pi_b.load(mdp.num_states(), mdp.num_actions())?;
    let pi0 = config.pi0.load(mdp.num_states(), mdp.num_actions())?;
    pi_b.require_positive()?;
    stationary_distribution(&mdp, &pi_b)
        .context("behavior chain must be irreducible and aperiodic")?;
    Ok(Setup {
        mdp,
        pi_b,
        pi0,
        levels: config.levels()?,
    })
}

/// Runs one experiment mode, writing its files under `config.out`.
pub fn run_experiment(mode: Mode, config: &ExperimentConfig) -> Result<Report> {
    let s = setup(config)?;
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("creating output directory {}", config.out.display()))?;
    match mode {
        Mode::Solve => solve(config, &s),
        Mode::Qtrace => qtrace(config, &s),
        Mode::Nac => nac(config, &s, SampleMode::Fresh, "nac"),
        Mode::ReuseDemo => nac(config, &s, SampleMode::Reuse, "reuse"),
        Mode::ExactNpg => exact_npg(config, &s),
        Mode::Sweep => sweep(config, &s),
        Mode::Bounds => bounds(config, &s),
    }
}

fn solve(config: &ExperimentConfig, s: &Setup) -> Result<Report> {
    let mut report = Report::default();
    let out = &config.out;
    let mdp = &s.mdp;
    let mu = Distribution::uniform(mdp.num_states());
    let mu_b = stationary_distribution(mdp, &s.pi_b)?;
    let mixing = mixing_time(mdp, &s.pi_b, config.alpha)?;
    let minima = minima_report(mdp, &s.pi_b, s.levels.c_bar())?;
    let (v_star, greedy) = optimal_value(mdp, &mu)?;
    let q_exact = q_function_exact(mdp, &s.pi0)?;
    let q_fixed = fixed_point(mdp, &s.pi0, &s.pi_b, s.levels.rho_bar())?;
    let op = expected_operator(mdp, &s.pi0, &s.pi_b, s.levels, config.n)?;

    report.line(format!(
        "states {}, actions {}, gamma {}",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.gamma()
    ));
    report.line(format!(
        "stationary behavior distribution: {:?}",
        mu_b.probs()
    ));
    report.line(format!(
        "mixing time at alpha={}: {}",
        config.alpha, mixing.tau
    ));
    report.line(format!(
        "M_min {:.6}, C_min {:.6}, pi_b_min {:.6}",
        minima.m_min, minima.c_min, minima.pi_b_min
    ));
    report.line(format!(
        "contraction factor (formula) {:.8}, ||A||_inf {:.8}",
        op.gamma_c_formula, op.a_inf_norm
    ));
    let v_star_mu: f64 = v_star
        .values
        .iter()
        .zip(mu.probs())
        .map(|(v, m)| v * m)
        .sum();
    report.line(format!("optimal value V*(mu) {v_star_mu:.10}"));
    report.line(format!(
        "target policy value V(mu) {:.10}",
        v_function(mdp, &s.pi0, &mu)?
    ));
    report.line(format!(
        "||Q^(rho,pi) - Q^pi||_inf {:.6e} (bound {:.6e})",
        q_fixed.sup_distance(&q_exact),
        bias_bound(&s.pi0, &s.pi_b, s.levels.rho_bar(), mdp.gamma())
    ));

    report.write(out, "solve_optimal_policy.txt", &write_policy(&greedy))?;
    report.write(out, "solve_q_exact.txt", &write_q(&q_exact))?;
    report.write(out, "solve_q_fixed_point.txt", &write_q(&q_fixed))?;
    report.write(
        out,
        "solve_mixing.csv",
        &format!("{SCHEMA_LINE}\n{}", mixing.to_csv()),
    )?;
    report.write(
        out,
        "solve_expected_operator.csv",
        &format!("{SCHEMA_LINE}\n{}", op.to_csv()),
    )?;
    Ok(report)
}

/// Error curve of one critic run on the fixed target `pi0`, recorded every
/// `record_every` updates.
fn qtrace_curve(config: &ExperimentConfig, s: &Setup, stream: u64) -> Result<Table> {
    let params = config.critic_params(s.levels)?;
    let mdp = &s.mdp;
    let q_true = q_function_exact(mdp, &s.pi0)?;
    let q_fixed = fixed_point(mdp, &s.pi0, &s.pi_b, s.levels.rho_bar())?;
    let mut rng = stream_rng(config.seed, stream);
    let traj = sample_trajectory(mdp, &s.pi_b, params.samples_per_call(), &mut rng, config.s0)?;

    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut index = vec![0];
    let mut rows = vec![vec![q.sup_distance(&q_true), q.sup_distance(&q_fixed)]];
    let mut done = 0;
    while done < params.iterations {
        // Updates done..done+chunk read pairs done..done+chunk+n; running them
        // on that slice is the same as running them inside one long call.
        let chunk = config.record_every.min(params.iterations - done);
        let slice = Trajectory {
            steps: traj.steps[done..done + chunk + params.n].to_vec(),
        };
        let mut p = params;
        p.iterations = chunk;
        q = qtrace_run(mdp, &slice, &s.pi0, &s.pi_b, &p, &q)?;
        done += chunk;
        index.push(done);
        rows.push(vec![q.sup_distance(&q_true), q.sup_distance(&q_fixed)]);
    }
    Ok(Table {
        index_name: "k".into(),
        columns: vec!["critic_err".into(), "fp_err".into()],
        index,
        rows,
    })
}

fn qtrace(config: &ExperimentConfig, s: &Setup) -> Result<Report> {
    let mut report = Report::default();
    let tables = per_seed(config.num_seeds, |i| qtrace_curve(config, s, i))?;
    for (i, t) in tables.iter().enumerate() {
        report.write(&config.out, &format!("qtrace_seed{i}.csv"), &t.to_csv())?;
    }
    let agg = aggregate(&tables);
    report.write(&config.out, "qtrace_aggregate.csv", &agg.to_csv())?;
    let fp = agg.column("fp_err_mean").unwrap();
    report.line(format!(
        "mean ||Q_k - Q^(rho,pi)||_inf: k=0 {:.6}, k={} {:.6} ({} seeds)",
        fp[0],
        config.critic_iters,
        fp[fp.len() - 1],
        config.num_seeds
    ));
    if config.svg {
        let mut chart = Chart::new("Q-trace error", "k", "sup-norm error").log_y(true);
        let xs: Vec<f64> = agg.index.iter().map(|&k| k as f64).collect();
        chart.push(Series::new(
            "to Q^(rho,pi)",
            xs.iter().copied().zip(fp).collect(),
        ));
        let ce = agg.column("critic_err_mean").unwrap();
        chart.push(Series::new("to Q^pi", xs.into_iter().zip(ce).collect()).dashed());
        report.write(&config.out, "qtrace.svg", &chart.render())?;
    }
    Ok(report)
}

fn nac_runs(
    config: &ExperimentConfig,
    s: &Setup,
    levels: TruncationLevels,
    sampling: SampleMode,
) -> Result<Vec<NacRun>> {
    per_seed(config.num_seeds, |i| {
        let params = config.nac_params(&s.mdp, levels, i, sampling)?;
        Ok(nac_run(&s.mdp, &s.pi_b, &params)?)
    })
}

fn gap_chart(title: &str, agg: &Table, tables: &[Table], with_critic: bool) -> Chart {
    let mut chart = Chart::new(title, "t", "value");
    for (i, t) in tables.iter().enumerate() {
        let pts = t
            .index
            .iter()
            .map(|&x| x as f64)
            .zip(t.column("gap").unwrap())
            .collect();
        chart.push(Series::new(format!("gap seed {i}"), pts));
        if with_critic {
            let pts = t
                .index
                .iter()
                .map(|&x| x as f64)
                .zip(t.column("critic_err").unwrap())
                .collect();
            chart.push(Series::new(format!("critic seed {i}"), pts).dashed());
        }
    }
    let pts = agg
        .index
        .iter()
        .map(|&x| x as f64)
        .zip(agg.column("gap_mean").unwrap())
        .collect();
    chart.push(Series::new("mean gap", pts));
    chart
}

fn nac(config: &ExperimentConfig, s: &Setup, sampling: SampleMode, prefix: &str) -> Result<Report> {
    let mut report = Report::default();
    let runs = nac_runs(config, s, s.levels, sampling)?;
    let tables: Vec<Table> = runs.iter().map(|r| record_table(&r.record)).collect();
    for (i, (run, table)) in runs.iter().zip(&tables).enumerate() {
        report.write(
            &config.out,
            &format!("{prefix}_seed{i}.csv"),
            &table.to_csv(),
        )?;
        report.write(
            &config.out,
            &format!("{prefix}_policy_seed{i}.txt"),
            &write_policy(&run.final_policy),
        )?;
    }
    let agg = aggregate(&tables);
    report.write(
        &config.out,
        &format!("{prefix}_aggregate.csv"),
        &agg.to_csv(),
    )?;
    let gaps = agg.column("gap_mean").unwrap();
    let (first, last) = (gaps[0], gaps[gaps.len() - 1]);
    report.line(format!(
        "mean gap: t=0 {first:.6}, t={} {last:.6}; samples per run {}",
        gaps.len() - 1,
        runs[0].record.samples_consumed
    ));
    if sampling == SampleMode::Reuse {
        let verdict = if last > 0.1 * first {
            "non-convergent"
        } else {
            "converged"
        };
        report.line(format!("reused critic segment: {verdict}"));
    }
    if config.svg {
        let title = match sampling {
            SampleMode::Fresh => "Actor-critic optimality gap",
            SampleMode::Reuse => "Actor-critic with a reused critic segment",
        };
        let chart = gap_chart(title, &agg, &tables, sampling == SampleMode::Reuse);
        report.write(&config.out, &format!("{prefix}.svg"), &chart.render())?;
    }
    Ok(report)
}

fn exact_npg(config: &ExperimentConfig, s: &Setup) -> Result<Report> {
    let mut report = Report::default();
    let iters = config.npg_iters.unwrap_or(config.outer_iters);
    let mu = Distribution::uniform(s.mdp.num_states());
    let (_, record) = exact_npg_run(&s.mdp, &mu, config.beta, iters, &s.pi0)?;
    let table = record_table(&record);
    report.write(&config.out, "exact_npg.csv", &table.to_csv())?;
    let bound =
        qtrace_nac::bounds::actor_error(s.mdp.gamma(), s.mdp.num_actions(), config.beta, iters);
    report.line(format!(
        "best gap over T={iters}: {:.6e}; actor bound {bound:.6e}; last gap {:.6e}",
        record.best_gap(),
        record.last_gap().unwrap_or(f64::NAN)
    ));
    if config.svg {
        let mut chart = Chart::new("Exact-critic policy gradient", "t", "gap").log_y(true);
        let pts = table
            .index
            .iter()
            .map(|&t| t as f64)
            .zip(record.gaps())
            .collect();
        chart.push(Series::new("gap", pts));
        report.write(&config.out, "exact_npg.svg", &chart.render())?;
    }
    Ok(report)
}

fn sweep(config: &ExperimentConfig, s: &Setup) -> Result<Report> {
    let mut report = Report::default();
    let mut chart = Chart::new("Truncation sweep", "t", "mean gap");
    let mut finals = Vec::new();
    report.line("rho_bar,c_bar,final_gap_mean,final_gap_std");
    for &(rho, c) in &config.sweep {
        let levels = TruncationLevels::new(rho, c)?;
        // Every setting sees the same seed indices, so differences come from
        // the truncation levels rather than the sampled paths.
        let runs = nac_runs(config, s, levels, SampleMode::Fresh)?;
        let tables: Vec<Table> = runs.iter().map(|r| record_table(&r.record)).collect();
        let tag = format!("sweep_rho{rho}_c{c}");
        for (i, t) in tables.iter().enumerate() {
            report.write(&config.out, &format!("{tag}_seed{i}.csv"), &t.to_csv())?;
        }
        let agg = aggregate(&tables);
        report.write(&config.out, &format!("{tag}_aggregate.csv"), &agg.to_csv())?;
        let last = agg.rows.len() - 1;
        let (mean, std) = (agg.rows[last][0], agg.rows[last][1]);
        report.line(format!("{rho},{c},{mean},{std}"));
        finals.push((rho, c, mean));
        let pts = agg
            .index
            .iter()
            .map(|&t| t as f64)
            .zip(agg.column("gap_mean").unwrap())
            .collect();
        chart.push(Series::new(format!("rho={rho}, c={c}"), pts));
    }
    let best = finals
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("sweep has at least one setting");
    report.line(format!(
        "lowest mean final gap: rho_bar={}, c_bar={}",
        best.0, best.1
    ));
    if config.svg {
        report.write(&config.out, "sweep.svg", &chart.render())?;
    }
    Ok(report)
}

fn bounds(config: &ExperimentConfig, s: &Setup) -> Result<Report> {
    let mut report = Report::default();
    let inputs = BoundInputs::for_instance(
        &s.mdp,
        &s.pi_b,
        s.levels,
        config.n,
        config.alpha,
        config.critic_iters,
        config.outer_iters,
        config.beta,
    )?;
    let check = validate_stepsize(&inputs);
    let mut rows: Vec<(&str, f64)> = vec![
        ("gamma_c", inputs.gamma_c),
        ("tau_alpha", inputs.tau_alpha as f64),
        ("M_min", inputs.m_min),
        ("pi_b_min", inputs.pi_b_min),
        ("stepsize_lhs", check.lhs),
        ("stepsize_threshold", check.threshold),
        ("stepsize_ok", if check.ok { 1.0 } else { 0.0 }),
    ];
    let k = config.critic_iters;
    match critic_bound_terms(&inputs, k) {
        Ok((t1, t2)) => rows.extend([("T1", t1), ("T2", t2)]),
        Err(e) => report.line(format!("critic bound not evaluated: {e}")),
    }
    match actor_critic_terms(&inputs) {
        Ok(t) => rows.extend([
            ("E1", t.e1),
            ("E2", t.e2),
            ("E3", t.e3),
            ("E4", t.e4),
            ("E_total", t.total()),
        ]),
        Err(e) => report.line(format!("actor-critic bound not evaluated: {e}")),
    }
    let est = sample_complexity_estimate(config.epsilon, &inputs)?;
    rows.extend([
        ("epsilon", config.epsilon),
        ("T_req", est.t_req),
        ("K_req", est.k_req),
        ("alpha_req", est.alpha),
        ("total_samples", est.total),
    ]);

    let mut csv = format!("{SCHEMA_LINE}\nterm,value\n");
    for (name, value) in &rows {
        writeln!(csv, "{name},{value}").unwrap();
        report.line(format!("{name:<20} {value:.6e}"));
    }
    report.line("sample-complexity figures are order-of-magnitude estimates");
    report.write(&config.out, "bounds.csv", &csv)?;
    report.csv = Some(csv);
    Ok(report)
}
