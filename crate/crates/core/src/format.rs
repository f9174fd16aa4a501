//! Line-oriented text formats for MDPs, policies and Q tables.
//!
//! ```text
//! # comment
//! states 2
//! actions 1
//! gamma 0.9
//! P 0 0 1 1.0      # P a s s' prob
//! P 0 1 0 1.0
//! R 0 0 1.0        # R s a value
//! ```
//!
//! Header keys may also be written `key=value`. Transition entries not listed
//! are zero, so every row must still sum to one. Policies are `PI s a prob`
//! lines and Q tables are `Q s a value` lines; both default missing entries to
//! zero.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mdp::{Policy, QTable, TabularMdp};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with comments removed, numbered from 1.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = body
            .split(|c: char| c.is_whitespace() || c == '=')
            .filter(|f| !f.is_empty())
            .collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

fn index(field: &str, bound: usize, what: &str, line: usize) -> Result<usize> {
    let v: usize = field
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} index `{field}`")))?;
    if v >= bound {
        return Err(parse_err(
            line,
            format!("{what} {v} out of range (< {bound})"),
        ));
    }
    Ok(v)
}

fn number(field: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| parse_err(line, format!("bad number `{field}`")))
}

fn expect_arity(fields: &[&str], n: usize, line: usize) -> Result<()> {
    if fields.len() != n {
        return Err(parse_err(
            line,
            format!(
                "`{}` takes {} fields, got {}",
                fields[0],
                n - 1,
                fields.len() - 1
            ),
        ));
    }
    Ok(())
}

pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut states = None;
    let mut actions = None;
    let mut gamma = None;
    let mut entries = Vec::new();
    for (line, fields) in content_lines(text) {
        match fields[0] {
            "states" | "actions" => {
                expect_arity(&fields, 2, line)?;
                let v: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad count `{}`", fields[1])))?;
                if fields[0] == "states" {
                    states = Some(v);
                } else {
                    actions = Some(v);
                }
            }
            "gamma" => {
                expect_arity(&fields, 2, line)?;
                gamma = Some(number(fields[1], line)?);
            }
            "P" | "R" => entries.push((line, fields)),
            other => return Err(parse_err(line, format!("unknown key `{other}`"))),
        }
    }
    let ns = states.ok_or_else(|| parse_err(0, "missing `states`"))?;
    let na = actions.ok_or_else(|| parse_err(0, "missing `actions`"))?;
    let gamma = gamma.ok_or_else(|| parse_err(0, "missing `gamma`"))?;

    let mut transitions = vec![0.0; na * ns * ns];
    let mut rewards = vec![0.0; ns * na];
    for (line, fields) in entries {
        if fields[0] == "P" {
            expect_arity(&fields, 5, line)?;
            let a = index(fields[1], na, "action", line)?;
            let s = index(fields[2], ns, "state", line)?;
            let next = index(fields[3], ns, "state", line)?;
            transitions[(a * ns + s) * ns + next] = number(fields[4], line)?;
        } else {
            expect_arity(&fields, 4, line)?;
            let s = index(fields[1], ns, "state", line)?;
            let a = index(fields[2], na, "action", line)?;
            rewards[s * na + a] = number(fields[3], line)?;
        }
    }
    TabularMdp::new(ns, na, transitions, rewards, gamma)
}

pub fn write_mdp(mdp: &TabularMdp) -> String {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut out = format!("states {ns}\nactions {na}\ngamma {}\n", mdp.gamma());
    for a in 0..na {
        for s in 0..ns {
            for next in 0..ns {
                let p = mdp.transition(a, s, next);
                if p != 0.0 {
                    writeln!(out, "P {a} {s} {next} {p}").unwrap();
                }
            }
        }
    }
    for s in 0..ns {
        for a in 0..na {
            writeln!(out, "R {s} {a} {}", mdp.reward(s, a)).unwrap();
        }
    }
    out
}

fn parse_table(text: &str, key: &str, ns: usize, na: usize) -> Result<Vec<f64>> {
    let mut values = vec![0.0; ns * na];
    for (line, fields) in content_lines(text) {
        if fields[0] != key {
            return Err(parse_err(
                line,
                format!("expected `{key}`, got `{}`", fields[0]),
            ));
        }
        expect_arity(&fields, 4, line)?;
        let s = index(fields[1], ns, "state", line)?;
        let a = index(fields[2], na, "action", line)?;
        values[s * na + a] = number(fields[3], line)?;
    }
    Ok(values)
}

fn write_table(key: &str, ns: usize, na: usize, values: &[f64]) -> String {
    let mut out = String::new();
    for s in 0..ns {
        for a in 0..na {
            writeln!(out, "{key} {s} {a} {}", values[s * na + a]).unwrap();
        }
    }
    out
}

pub fn parse_policy(text: &str, num_states: usize, num_actions: usize) -> Result<Policy> {
    Policy::new(
        num_states,
        num_actions,
        parse_table(text, "PI", num_states, num_actions)?,
    )
}

pub fn write_policy(pi: &Policy) -> String {
    write_table("PI", pi.num_states(), pi.num_actions(), pi.probs())
}

pub fn parse_q(text: &str, num_states: usize, num_actions: usize) -> Result<QTable> {
    QTable::from_values(
        num_states,
        num_actions,
        parse_table(text, "Q", num_states, num_actions)?,
    )
}

pub fn write_q(q: &QTable) -> String {
    write_table("Q", q.num_states(), q.num_actions(), q.values())
}
