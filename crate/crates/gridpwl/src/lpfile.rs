//! The LP text format: `Minimize`, `Subject To`, `Bounds`, `Generals`,
//! `Binaries`, `End`.
//!
//! The writer emits every variable in `Bounds`, so a file read back gives
//! the same problem (same variable order, names, rows and coefficients).
//! The reader accepts the common subset used by other solvers: `\` comments,
//! terms split over several lines, a constant in the objective, `free`,
//! `±inf`, single-sided bounds and `Maximize` (negated on read). Variables
//! never mentioned in `Bounds` get the format's default `[0, +inf)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use gridpwl_core::milp::{MilpProblem, Sense};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("missing `{0}` section")]
    MissingSection(&'static str),
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for &(j, c) in terms {
        match merged.iter_mut().find(|(k, _)| *k == j) {
            Some((_, acc)) => *acc += c,
            None => merged.push((j, c)),
        }
    }
    if merged.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (i, (j, c)) in merged.into_iter().enumerate() {
        let sign = if c.is_sign_negative() { "-" } else { "+" };
        if i == 0 && sign == "+" {
            let _ = write!(out, " {} {}", num(c), names[j]);
        } else {
            let _ = write!(out, " {sign} {} {}", num(c.abs()), names[j]);
        }
    }
}

pub fn write_lp(p: &MilpProblem) -> String {
    let names: Vec<String> = p.variables.iter().map(|v| v.name.clone()).collect();
    let mut out = String::from("Minimize\n obj:");
    write_terms(&mut out, &p.objective, &names);
    if p.objective_offset != 0.0 {
        let sign = if p.objective_offset < 0.0 { "-" } else { "+" };
        let _ = write!(out, " {sign} {}", num(p.objective_offset.abs()));
    }
    out.push_str("\nSubject To\n");
    for c in &p.constraints {
        let _ = write!(out, " {}:", c.name);
        write_terms(&mut out, &c.coefficients, &names);
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in &p.variables {
        if v.is_integer && v.lower == 0.0 && v.upper == 1.0 {
            let _ = writeln!(out, " 0 <= {} <= 1", v.name);
        } else if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", v.name, num(v.lower));
        } else if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", num(v.lower), v.name, num(v.upper));
        }
    }
    let ints: Vec<&str> = p.variables.iter().filter(|v| v.is_integer).map(|v| v.name.as_str()).collect();
    if !ints.is_empty() {
        out.push_str("Generals\n");
        for chunk in ints.chunks(8) {
            let _ = writeln!(out, " {}", chunk.join(" "));
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Generals,
    Binaries,
    End,
}

fn section_of(line: &str) -> Option<(Section, bool)> {
    let l = line.trim().to_ascii_lowercase();
    let l = l.split_whitespace().collect::<Vec<_>>().join(" ");
    Some(match l.as_str() {
        "minimize" | "minimise" | "minimum" | "min" => (Section::Objective, false),
        "maximize" | "maximise" | "maximum" | "max" => (Section::Objective, true),
        "subject to" | "such that" | "st" | "s.t." | "st." => (Section::Constraints, false),
        "bounds" | "bound" => (Section::Bounds, false),
        "generals" | "general" | "gen" | "integers" => (Section::Generals, false),
        "binaries" | "binary" | "bin" => (Section::Binaries, false),
        "end" => (Section::End, false),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(Sense),
    Plus,
    Minus,
    Colon,
}

fn parse_number(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Some(f64::INFINITY),
        _ if s.starts_with(|c: char| c.is_ascii_digit() || c == '.') => s.parse().ok(),
        _ => None,
    }
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Tok>, LpError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '+' => toks.push(Tok::Plus),
            '-' => toks.push(Tok::Minus),
            ':' => toks.push(Tok::Colon),
            '<' | '>' | '=' => {
                let mut s = String::from(c);
                if i + 1 < chars.len() && matches!(chars[i + 1], '<' | '>' | '=') {
                    s.push(chars[i + 1]);
                    i += 1;
                }
                let sense = match s.as_str() {
                    "<" | "<=" | "=<" => Sense::Le,
                    ">" | ">=" | "=>" => Sense::Ge,
                    "=" | "==" => Sense::Eq,
                    _ => {
                        return Err(LpError::Syntax {
                            line,
                            reason: format!("unknown operator `{s}`"),
                        })
                    }
                };
                toks.push(Tok::Op(sense));
            }
            _ => {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '+' | '-' | ':' | '<' | '>' | '=') {
                    // exponent sign inside a number
                    if matches!(chars[i], 'e' | 'E')
                        && chars[start].is_ascii_digit()
                        && i + 1 < chars.len()
                        && matches!(chars[i + 1], '+' | '-')
                    {
                        i += 2;
                        continue;
                    }
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                toks.push(match parse_number(&word) {
                    Some(v) => Tok::Num(v),
                    None if word.starts_with(|c: char| c.is_ascii_digit() || c == '.') => {
                        return Err(LpError::Syntax {
                            line,
                            reason: format!("bad number `{word}`"),
                        })
                    }
                    None => Tok::Name(word),
                });
                continue;
            }
        }
        i += 1;
    }
    Ok(toks)
}

struct Builder {
    p: MilpProblem,
    index: HashMap<String, usize>,
    /// Whether each variable's bounds were set explicitly.
    bounded: Vec<bool>,
}

impl Builder {
    fn var(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self.p.add_continuous(name, 0.0, f64::INFINITY);
        self.index.insert(name.to_string(), j);
        self.bounded.push(false);
        j
    }
}

/// Parses `±c name ± ...` (names may be bare); returns terms and constant.
fn linear(toks: &[Tok], b: &mut Builder, line: usize) -> Result<(Vec<(usize, f64)>, f64), LpError> {
    let err = |reason: &str| LpError::Syntax {
        line,
        reason: reason.to_string(),
    };
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        let mut saw_sign = false;
        while let Some(t @ (Tok::Plus | Tok::Minus)) = toks.get(i) {
            if *t == Tok::Minus {
                sign = -sign;
            }
            saw_sign = true;
            i += 1;
        }
        if i > 0 && !saw_sign {
            return Err(err("expected `+` or `-` between terms"));
        }
        match (toks.get(i), toks.get(i + 1)) {
            (Some(Tok::Num(c)), Some(Tok::Name(n))) => {
                let j = b.var(n);
                terms.push((j, sign * c));
                i += 2;
            }
            (Some(Tok::Num(c)), _) => {
                constant += sign * c;
                i += 1;
            }
            (Some(Tok::Name(n)), _) => {
                let j = b.var(n);
                terms.push((j, sign));
                i += 1;
            }
            _ => return Err(err("expected a term")),
        }
    }
    Ok((terms, constant))
}

fn signed_number(toks: &[Tok]) -> Option<f64> {
    match toks {
        [Tok::Num(v)] | [Tok::Plus, Tok::Num(v)] => Some(*v),
        [Tok::Minus, Tok::Num(v)] => Some(-v),
        _ => None,
    }
}

pub fn parse_lp(text: &str) -> Result<MilpProblem, LpError> {
    let mut b = Builder {
        p: MilpProblem::new(),
        index: HashMap::new(),
        bounded: Vec::new(),
    };
    let mut section = Section::None;
    let mut maximize = false;
    let mut seen_objective = false;
    // statement being accumulated: tokens and its first line
    let mut pending: Vec<Tok> = Vec::new();
    let mut pending_line = 0;
    let mut objective: Option<(Vec<Tok>, usize)> = None;
    let mut rows: Vec<(Vec<Tok>, usize)> = Vec::new();

    let flush_row = |pending: &mut Vec<Tok>, rows: &mut Vec<(Vec<Tok>, usize)>, line: usize| {
        if !pending.is_empty() {
            rows.push((std::mem::take(pending), line));
        }
    };

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('\\').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        if let Some((s, max)) = section_of(content) {
            flush_row(&mut pending, &mut rows, pending_line);
            if s == Section::Objective {
                seen_objective = true;
                maximize = max;
            } else if !seen_objective {
                return Err(LpError::Syntax {
                    line,
                    reason: "section before the objective".into(),
                });
            }
            section = s;
            continue;
        }
        let toks = tokenize(content, line)?;
        match section {
            Section::None => {
                return Err(LpError::Syntax {
                    line,
                    reason: "text before the objective section".into(),
                })
            }
            Section::End => {
                return Err(LpError::Syntax {
                    line,
                    reason: "text after `End`".into(),
                })
            }
            Section::Objective => match &mut objective {
                Some((t, _)) => t.extend(toks),
                None => objective = Some((toks, line)),
            },
            Section::Constraints => {
                // a new named row starts with `name:`
                let starts_named = matches!(toks.as_slice(), [Tok::Name(_), Tok::Colon, ..]);
                let complete = pending.iter().any(|t| matches!(t, Tok::Op(_)))
                    && !matches!(pending.last(), Some(Tok::Op(_) | Tok::Plus | Tok::Minus));
                if starts_named || complete {
                    flush_row(&mut pending, &mut rows, pending_line);
                }
                if pending.is_empty() {
                    pending_line = line;
                }
                pending.extend(toks);
            }
            Section::Bounds => parse_bound(&toks, &mut b, line)?,
            Section::Generals | Section::Binaries => {
                for t in toks {
                    let Tok::Name(n) = t else {
                        return Err(LpError::Syntax {
                            line,
                            reason: "expected variable names".into(),
                        });
                    };
                    let j = b.var(&n);
                    b.p.variables[j].is_integer = true;
                    if section == Section::Binaries {
                        b.p.variables[j].lower = 0.0;
                        b.p.variables[j].upper = 1.0;
                        b.bounded[j] = true;
                    }
                }
            }
        }
    }
    flush_row(&mut pending, &mut rows, pending_line);
    if !seen_objective {
        return Err(LpError::MissingSection("Minimize"));
    }

    // Variables named in `Bounds`, `Generals` or `Binaries` come first in
    // that order, the rest in order of first mention.
    let mut ordered = Builder {
        p: MilpProblem::new(),
        index: HashMap::new(),
        bounded: Vec::new(),
    };
    for v in &b.p.variables {
        ordered.var(&v.name);
    }
    if let Some((mut toks, line)) = objective {
        if let [Tok::Name(_), Tok::Colon, ..] = toks.as_slice() {
            toks.drain(..2);
        }
        let (terms, constant) = linear(&toks, &mut ordered, line)?;
        let s = if maximize { -1.0 } else { 1.0 };
        for (j, c) in terms {
            ordered.p.add_cost(j, s * c);
        }
        ordered.p.objective_offset = s * constant;
    }
    for (k, (mut toks, line)) in rows.into_iter().enumerate() {
        let name = match toks.as_slice() {
            [Tok::Name(n), Tok::Colon, ..] => {
                let n = n.clone();
                toks.drain(..2);
                n
            }
            _ => format!("R{}", k + 1),
        };
        let Some(op) = toks.iter().position(|t| matches!(t, Tok::Op(_))) else {
            return Err(LpError::Syntax {
                line,
                reason: format!("row `{name}` has no comparison"),
            });
        };
        let Tok::Op(sense) = toks[op] else { unreachable!() };
        let Some(rhs) = signed_number(&toks[op + 1..]) else {
            return Err(LpError::Syntax {
                line,
                reason: format!("row `{name}` needs a numeric right-hand side"),
            });
        };
        let (terms, constant) = linear(&toks[..op], &mut ordered, line)?;
        ordered.p.add_constraint(name, terms, sense, rhs - constant);
    }
    // carry over bounds and integrality
    for (j, v) in b.p.variables.iter().enumerate() {
        let k = ordered.var(&v.name);
        let w = &mut ordered.p.variables[k];
        w.is_integer = v.is_integer;
        if b.bounded[j] {
            w.lower = v.lower;
            w.upper = v.upper;
        }
    }
    Ok(ordered.p)
}

fn parse_bound(toks: &[Tok], b: &mut Builder, line: usize) -> Result<(), LpError> {
    let err = || LpError::Syntax {
        line,
        reason: "unrecognized bound".into(),
    };
    // optional leading number with sign
    let (lead, rest) = match toks {
        [Tok::Minus, Tok::Num(v), rest @ ..] => (Some(-v), rest),
        [Tok::Plus, Tok::Num(v), rest @ ..] | [Tok::Num(v), rest @ ..] => (Some(*v), rest),
        _ => (None, toks),
    };
    match (lead, rest) {
        (None, [Tok::Name(n), Tok::Name(f)]) if f.eq_ignore_ascii_case("free") => {
            let j = b.var(n);
            b.p.variables[j].lower = f64::NEG_INFINITY;
            b.p.variables[j].upper = f64::INFINITY;
            b.bounded[j] = true;
        }
        (None, [Tok::Name(n), Tok::Op(op), value @ ..]) => {
            let v = signed_number(value).ok_or_else(err)?;
            let j = b.var(n);
            let var = &mut b.p.variables[j];
            match op {
                Sense::Le => var.upper = v,
                Sense::Ge => var.lower = v,
                Sense::Eq => {
                    var.lower = v;
                    var.upper = v;
                }
            }
            b.bounded[j] = true;
        }
        (Some(lo), [Tok::Op(Sense::Le), Tok::Name(n)]) => {
            let j = b.var(n);
            b.p.variables[j].lower = lo;
            b.bounded[j] = true;
        }
        (Some(lo), [Tok::Op(Sense::Le), Tok::Name(n), Tok::Op(Sense::Le), value @ ..]) => {
            let hi = signed_number(value).ok_or_else(err)?;
            let j = b.var(n);
            b.p.variables[j].lower = lo;
            b.p.variables[j].upper = hi;
            b.bounded[j] = true;
        }
        _ => return Err(err()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridpwl_core::milp::solve_milp;
    use gridpwl_core::milp::MilpLimits;

    fn sample() -> MilpProblem {
        let mut p = MilpProblem::new();
        let x = p.add_continuous("x", 0.0, 4.0);
        let y = p.add_continuous("y[1]", f64::NEG_INFINITY, f64::INFINITY);
        let z = p.add_binary("z");
        let n = p.add_var("n", -3.0, 7.0, true);
        let f = p.add_continuous("fixed", 2.5, 2.5);
        p.add_cost(x, -1.0);
        p.add_cost(y, 1e-7);
        p.add_cost(z, 3.0);
        p.add_cost(n, 1.0);
        p.objective_offset = -12.25;
        p.add_constraint("c1", vec![(x, 1.0), (y, -2.0), (n, 1.0)], Sense::Le, 3.0);
        p.add_constraint("c2", vec![(y, 1.0), (z, 1e20), (f, 1.0)], Sense::Ge, -1.5e-9);
        p.add_constraint("c3", vec![(x, 1.0), (z, -4.0)], Sense::Eq, 0.0);
        p
    }

    #[test]
    fn round_trip_reproduces_problem() {
        let p = sample();
        let text = write_lp(&p);
        assert_eq!(parse_lp(&text).unwrap(), p);
    }

    #[test]
    fn reads_common_dialect() {
        let text = "\\ a comment\nMaximize\n obj: 2 a + 3 b\n - c + 1\nSubject To\n lim: a + b\n   <= 4\n a - c <= 2 \\ trailing\n -a + b = 1\nBounds\n a <= 10\n -inf <= c <= 5\n b >= 1\nBinaries\n d\nEnd\n";
        let p = parse_lp(text).unwrap();
        assert_eq!(p.variables.iter().map(|v| v.name.as_str()).collect::<Vec<_>>(), ["a", "c", "b", "d"]);
        assert_eq!(p.objective, vec![(0, -2.0), (2, -3.0), (1, 1.0)]);
        assert_eq!(p.objective_offset, -1.0);
        assert_eq!(p.constraints.len(), 3);
        assert_eq!(p.constraints[0].name, "lim");
        assert_eq!(p.constraints[1].name, "R2");
        assert_eq!(p.constraints[1].rhs, 2.0);
        assert_eq!((p.variables[0].lower, p.variables[0].upper), (0.0, 10.0));
        assert_eq!((p.variables[2].lower, p.variables[2].upper), (1.0, f64::INFINITY));
        assert_eq!(p.variables[1].lower, f64::NEG_INFINITY);
        assert!(p.variables[3].is_integer && p.variables[3].upper == 1.0);
        let s = solve_milp(&p, &MilpLimits::default()).unwrap();
        // a = 1.5, b = 2.5, c = -0.5 maximizes 2a + 3b - c + 1 = 12
        assert!((s.objective + 12.0).abs() < 1e-9);
    }

    #[test]
    fn errors_are_located() {
        assert_eq!(parse_lp("Subject To\n x <= 1\nEnd").unwrap_err(), LpError::Syntax {
            line: 1,
            reason: "section before the objective".into()
        });
        assert_eq!(parse_lp("\\ c\nBounds\n x free\n"), Err(LpError::Syntax {
            line: 2,
            reason: "section before the objective".into()
        }));
        assert!(matches!(parse_lp("Minimize\n x\nSubject To\n c: x + 1y <= 2\nEnd"), Err(LpError::Syntax { line: 4, .. })));
        assert!(matches!(parse_lp("Minimize\n x\nSubject To\n c: x y\nEnd"), Err(LpError::Syntax { .. })));
        assert_eq!(parse_lp("x\n").unwrap_err(), LpError::Syntax {
            line: 1,
            reason: "text before the objective section".into()
        });
        assert_eq!(parse_lp("\\ only a comment\n").unwrap_err(), LpError::MissingSection("Minimize"));
    }
}
