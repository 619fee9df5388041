//! Text format for task automata.
//!
//! ```text
//! # comment
//! props: a b c d goal
//! states: q1 q2 q3 q4 q5
//! initial: q1
//! accepting: q5
//! default: self-loop          # optional
//! q1 --[a]--> q2
//! q1 --[b & !a]--> q3
//! ```
//!
//! Every `(mode, symbol)` pair must be matched by exactly one target. Guards on
//! the same mode may overlap only when they agree on the target. Without a
//! `default: self-loop` line, an unmatched pair is an error.

use super::guard::{parse_guard, Guard};
use super::{symbol_props, DfaError, Mode, Symbol, TaskDfa, MAX_PROPS};

struct Edge {
    line: usize,
    from: Mode,
    to: Mode,
    guard: Guard,
}

fn parse_err(line: usize, msg: impl Into<String>) -> DfaError {
    DfaError::Parse {
        line,
        msg: msg.into(),
    }
}

fn words(rest: &str) -> Vec<String> {
    rest.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses and validates an automaton from its text form.
pub fn parse_dfa(text: &str) -> Result<TaskDfa, DfaError> {
    let mut props: Option<Vec<String>> = None;
    let mut modes: Option<Vec<String>> = None;
    let mut initial: Option<(usize, String)> = None;
    let mut accepting: Option<(usize, Vec<String>)> = None;
    let mut default_self_loop = false;
    let mut raw_edges: Vec<(usize, String, String, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(pos) = line.find("--[") {
            let from = line[..pos].trim();
            let after = &line[pos + 3..];
            let close = after
                .rfind("]-->")
                .ok_or_else(|| parse_err(line_no, "expected `]-->` after guard"))?;
            let guard = &after[..close];
            let to = after[close + 4..].trim();
            if from.is_empty() || to.is_empty() || to.contains(char::is_whitespace) {
                return Err(parse_err(line_no, "malformed transition"));
            }
            raw_edges.push((line_no, from.to_string(), guard.to_string(), to.to_string()));
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| parse_err(line_no, format!("unrecognised line {line:?}")))?;
        let values = words(rest);
        match key.trim() {
            "props" => props = Some(values),
            "states" => modes = Some(values),
            "initial" => {
                if values.len() != 1 {
                    return Err(parse_err(line_no, "initial takes exactly one mode"));
                }
                initial = Some((line_no, values[0].clone()));
            }
            "accepting" => accepting = Some((line_no, values)),
            "default" => match rest.trim() {
                "self-loop" => default_self_loop = true,
                "none" => default_self_loop = false,
                other => return Err(parse_err(line_no, format!("unknown default rule {other:?}"))),
            },
            other => return Err(parse_err(line_no, format!("unknown key {other:?}"))),
        }
    }

    let mut props = props.ok_or_else(|| parse_err(0, "missing `props:` line"))?;
    let modes = modes.ok_or_else(|| parse_err(0, "missing `states:` line"))?;
    let (init_line, init_name) = initial.ok_or_else(|| parse_err(0, "missing `initial:` line"))?;
    let (acc_line, acc_names) =
        accepting.ok_or_else(|| parse_err(0, "missing `accepting:` line"))?;

    props.sort();
    let before = props.len();
    props.dedup();
    if props.len() != before {
        return Err(parse_err(0, "duplicate proposition"));
    }
    if props.len() > MAX_PROPS {
        return Err(parse_err(0, format!("at most {MAX_PROPS} propositions")));
    }
    let lookup = |line: usize, name: &str| -> Result<Mode, DfaError> {
        modes
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| parse_err(line, format!("unknown mode {name:?}")))
    };
    let init = lookup(init_line, &init_name)?;
    let acc = acc_names
        .iter()
        .map(|n| lookup(acc_line, n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut edges = Vec::with_capacity(raw_edges.len());
    for (line, from, guard, to) in raw_edges {
        let guard = parse_guard(&guard).map_err(|m| parse_err(line, m))?;
        for p in guard.props() {
            if props.binary_search_by(|q| q.as_str().cmp(p)).is_err() {
                return Err(DfaError::UnknownProp(p.to_string()));
            }
        }
        edges.push(Edge {
            line,
            from: lookup(line, &from)?,
            to: lookup(line, &to)?,
            guard,
        });
    }

    let n_sym = 1usize << props.len();
    let mut delta: Vec<Vec<Option<(Mode, usize)>>> = vec![vec![None; n_sym]; modes.len()];
    for edge in &edges {
        for sym in 0..n_sym {
            let on = |p: &str| {
                let i = props.binary_search_by(|q| q.as_str().cmp(p)).unwrap();
                sym & (1 << i) != 0
            };
            if !edge.guard.eval(&on) {
                continue;
            }
            match delta[edge.from][sym] {
                Some((t, _)) if t != edge.to => {
                    return Err(DfaError::Nondeterministic {
                        mode: modes[edge.from].clone(),
                        symbol: symbol_props(&props, Symbol(sym as u32)),
                        first: modes[t].clone(),
                        second: modes[edge.to].clone(),
                    });
                }
                _ => delta[edge.from][sym] = Some((edge.to, edge.line)),
            }
        }
    }

    let mut table = Vec::with_capacity(modes.len());
    for (q, row) in delta.into_iter().enumerate() {
        let mut out = Vec::with_capacity(n_sym);
        for (sym, cell) in row.into_iter().enumerate() {
            match cell {
                Some((t, _)) => out.push(t),
                None if default_self_loop => out.push(q),
                None => {
                    return Err(DfaError::NotTotal {
                        mode: modes[q].clone(),
                        symbol: symbol_props(&props, Symbol(sym as u32)),
                    })
                }
            }
        }
        table.push(out);
    }
    TaskDfa::from_table(props, modes, table, init, acc)
}
