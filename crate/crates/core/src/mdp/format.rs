//! Line-oriented text formats for MDPs and trajectory logs.
//!
//! MDP files:
//!
//! ```text
//! # comment
//! mdp <num_states> <num_actions> <gamma>
//! t <s> <a> <s'> <prob>
//! r <s> <a> <reward>
//! term <s>
//! ```
//!
//! Unlisted transitions have probability 0 and unlisted rewards are 0. A
//! terminal state whose rows are all empty is made absorbing. Rows must sum
//! to 1 within `1e-9`.
//!
//! Trajectory logs hold one episode per line:
//! `s0 a0 r0 s1 a1 r1 ... sT term|cut`.

use std::fmt::Write as _;

use super::{validate, MdpBuilder, TabularMdp, Trajectory, Violation, ROW_SUM_TOLERANCE};
use crate::error::{Error, Result};

/// Row-sum tolerance accepted when reading MDP files.
pub const FILE_ROW_SUM_TOLERANCE: f64 = 1e-9;

fn content(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} `{tok}`"),
    })
}

/// Parses the text MDP format.
pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut builder: Option<MdpBuilder> = None;
    let mut seen_t = std::collections::HashSet::new();
    let mut seen_r = std::collections::HashSet::new();
    let mut terminals = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = content(raw);
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let tag = toks.next().expect("non-empty line");
        let Some(b) = builder.as_mut() else {
            if tag != "mdp" {
                return Err(Error::Parse {
                    line,
                    msg: "expected `mdp <S> <A> <gamma>` header".into(),
                });
            }
            let ns: usize = parse_tok(toks.next(), line, "state count")?;
            let na: usize = parse_tok(toks.next(), line, "action count")?;
            let gamma: f64 = parse_tok(toks.next(), line, "discount")?;
            if ns == 0 || na == 0 {
                return Err(Error::Parse {
                    line,
                    msg: "state and action counts must be positive".into(),
                });
            }
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::Parse {
                    line,
                    msg: format!("discount {gamma} not in (0,1)"),
                });
            }
            builder = Some(MdpBuilder::new(ns, na, gamma));
            ensure_done(toks, line)?;
            continue;
        };
        let at = |e: Error| match e {
            Error::InvalidMdp(msg) => Error::Parse { line, msg },
            other => other,
        };
        match tag {
            "t" => {
                let s: usize = parse_tok(toks.next(), line, "state")?;
                let a: usize = parse_tok(toks.next(), line, "action")?;
                let n: usize = parse_tok(toks.next(), line, "successor")?;
                let p: f64 = parse_tok(toks.next(), line, "probability")?;
                if !seen_t.insert((s, a, n)) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate transition ({s},{a},{n})"),
                    });
                }
                b.transition(s, a, n, p).map_err(at)?;
            }
            "r" => {
                let s: usize = parse_tok(toks.next(), line, "state")?;
                let a: usize = parse_tok(toks.next(), line, "action")?;
                let r: f64 = parse_tok(toks.next(), line, "reward")?;
                if !seen_r.insert((s, a)) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("duplicate reward ({s},{a})"),
                    });
                }
                b.reward(s, a, r).map_err(at)?;
            }
            "term" => {
                let s: usize = parse_tok(toks.next(), line, "state")?;
                b.terminal(s).map_err(at)?;
                terminals.push(s);
            }
            "mdp" => {
                return Err(Error::Parse {
                    line,
                    msg: "duplicate header".into(),
                })
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record `{other}`"),
                })
            }
        }
        ensure_done(toks, line)?;
    }

    let mut b = builder.ok_or(Error::Parse {
        line: 0,
        msg: "missing `mdp` header".into(),
    })?;
    let na = b.num_actions();
    for &s in &terminals {
        if (0..na).all(|a| b.row_is_empty(s, a)) && !seen_r.iter().any(|&(rs, _)| rs == s) {
            b.absorbing(s)?;
        }
    }
    let mut mdp = b.build_unchecked();
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let sum: f64 = mdp.successors(s, a).iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > FILE_ROW_SUM_TOLERANCE {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("row ({s},{a}) sums to {sum}"),
                });
            }
        }
    }
    renormalize_loose_rows(&mut mdp);
    let report = validate(&mdp);
    if let Some(v) = report
        .violations
        .iter()
        .find(|v| !matches!(v, Violation::RowSum { .. }))
    {
        return Err(Error::Parse {
            line: 0,
            msg: v.to_string(),
        });
    }
    Ok(mdp)
}

// Rows accepted under the file tolerance but outside the in-memory one are
// rescaled; rows already within `ROW_SUM_TOLERANCE` keep their exact bits.
fn renormalize_loose_rows(mdp: &mut TabularMdp) {
    for row in mdp.transitions.iter_mut() {
        let sum: f64 = row.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            for entry in row.iter_mut() {
                entry.1 /= sum;
            }
        }
    }
}

fn ensure_done<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match toks.next() {
        Some(extra) => Err(Error::Parse {
            line,
            msg: format!("unexpected token `{extra}`"),
        }),
        None => Ok(()),
    }
}

/// Serializes `mdp`; reading the output back yields identical values.
pub fn write_mdp(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "mdp {} {} {}",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.gamma()
    )
    .unwrap();
    for s in mdp.terminal_states() {
        writeln!(out, "term {s}").unwrap();
    }
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            for &(n, p) in mdp.successors(s, a) {
                writeln!(out, "t {s} {a} {n} {p}").unwrap();
            }
        }
    }
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let r = mdp.reward(s, a);
            if r != 0.0 || r.is_sign_negative() {
                writeln!(out, "r {s} {a} {r}").unwrap();
            }
        }
    }
    out
}

/// Parses a trajectory log, one episode per non-empty line.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = content(raw);
        if body.is_empty() {
            continue;
        }
        let mut toks: Vec<&str> = body.split_whitespace().collect();
        let terminated = match toks.last().copied() {
            Some("term") => {
                toks.pop();
                true
            }
            Some("cut") => {
                toks.pop();
                false
            }
            _ => false,
        };
        if toks.len() < 4 || !(toks.len() - 1).is_multiple_of(3) {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected `s a r` triples plus a final state, got {} tokens",
                    toks.len()
                ),
            });
        }
        let mut triples = Vec::with_capacity(toks.len() / 3);
        for chunk in toks[..toks.len() - 1].chunks(3) {
            let s: usize = parse_tok(Some(chunk[0]), line, "state")?;
            let a: usize = parse_tok(Some(chunk[1]), line, "action")?;
            let r: f64 = parse_tok(Some(chunk[2]), line, "reward")?;
            triples.push((s, a, r));
        }
        let last: usize = parse_tok(toks.last().copied(), line, "final state")?;
        let traj =
            Trajectory::from_triples(&triples, last, terminated).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
        out.push(traj);
    }
    Ok(out)
}

/// Writes trajectories in the log format (the optional final action is dropped).
pub fn write_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> String {
    let mut out = String::new();
    for traj in trajectories {
        for t in 0..traj.len() {
            let (s, a) = traj.key(t);
            write!(out, "{s} {a} {} ", traj.reward(t)).unwrap();
        }
        let flag = if traj.terminated { "term" } else { "cut" };
        writeln!(out, "{} {flag}", traj.final_state()).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_STATE: &str = "\
# a tiny chain
mdp 2 2 0.9
t 0 0 1 1.0
t 0 1 0 0.25   # stay sometimes
t 0 1 1 0.75
r 0 0 -1
term 1
";

    #[test]
    fn parses_and_fills_absorbing_terminal() {
        let mdp = parse_mdp(TWO_STATE).unwrap();
        assert_eq!(mdp.num_states(), 2);
        assert_eq!(mdp.reward(0, 0), -1.0);
        assert_eq!(mdp.successors(0, 1), &[(0, 0.25), (1, 0.75)]);
        assert_eq!(mdp.successors(1, 0), &[(1, 1.0)]);
        assert!(mdp.is_terminal(1));
    }

    #[test]
    fn rejects_bad_row_sum() {
        let text = "mdp 2 1 0.9\nt 0 0 1 0.9\nterm 1\n";
        let err = parse_mdp(text).unwrap_err();
        assert!(err.to_string().contains("sums to"), "{err}");
    }

    #[test]
    fn accepts_loose_rows_and_renormalizes() {
        let text = "mdp 2 1 0.9\nt 0 0 0 0.5\nt 0 0 1 0.5000000001\nterm 1\n";
        let mdp = parse_mdp(text).unwrap();
        assert!(validate(&mdp).is_valid());
    }

    #[test]
    fn header_and_record_errors() {
        assert!(parse_mdp("t 0 0 0 1\n").is_err());
        assert!(parse_mdp("mdp 1 1 1.5\nt 0 0 0 1\n").is_err());
        assert!(parse_mdp("mdp 1 1 0.5\nt 0 0 0 1\nt 0 0 0 1\n").is_err());
        assert!(parse_mdp("mdp 1 1 0.5\nx 0\n").is_err());
        assert!(parse_mdp("mdp 1 1 0.5\nt 0 0 3 1\n").is_err());
        assert!(parse_mdp("mdp 1 1 0.5\nt 0 0 0 1 9\n").is_err());
    }

    #[test]
    fn trajectory_log_round_trip() {
        let text = "0 1 -1 2 0 -1 3 term\n# comment\n\n5 0 0.5 6 cut\n";
        let trajs = parse_trajectories(text).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].len(), 2);
        assert!(trajs[0].terminated);
        assert_eq!(trajs[0].key(1), (2, 0));
        assert_eq!(trajs[1].final_state(), 6);
        assert!(!trajs[1].terminated);
        assert_eq!(
            write_trajectories(&trajs),
            "0 1 -1 2 0 -1 3 term\n5 0 0.5 6 cut\n"
        );
    }

    #[test]
    fn malformed_log_lines() {
        assert!(parse_trajectories("0 1 term\n").is_err());
        assert!(parse_trajectories("0 1 x 2 cut\n").is_err());
    }

    proptest! {
        // Decimal literals with at most 17 significant digits come back
        // bit-for-bit after write -> parse.
        #[test]
        fn mdp_round_trip_is_exact(
            mantissas in prop::collection::vec(1u64..99_999_999_999_999_999, 4),
            exps in prop::collection::vec(-30i32..30, 4),
            split in 1u64..99_999_999_999_999_999,
        ) {
            let lit = |m: u64, e: i32| format!("{m}e{e}").parse::<f64>().unwrap();
            let p: f64 = format!("0.{:017}", split).parse().unwrap();
            let mut b = MdpBuilder::new(3, 2, lit(mantissas[0], -17).clamp(1e-6, 0.999));
            b.transition(0, 0, 1, p).unwrap();
            b.transition(0, 0, 2, 1.0 - p).unwrap();
            b.transition(0, 1, 0, 1.0).unwrap();
            b.transition(1, 0, 2, 1.0).unwrap();
            b.transition(1, 1, 0, 1.0).unwrap();
            b.reward(0, 0, lit(mantissas[1], exps[1])).unwrap();
            b.reward(0, 1, -lit(mantissas[2], exps[2])).unwrap();
            b.reward(1, 1, lit(mantissas[3], exps[3])).unwrap();
            b.absorbing(2).unwrap();
            let mdp = b.build_unchecked();
            let back = parse_mdp(&write_mdp(&mdp)).unwrap();
            prop_assert_eq!(back, mdp);
        }
    }
}
