//! MATPOWER-style case files.
//!
//! Reads `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` and `mpc.gencost`
//! with their standard column meanings and converts everything to per-unit
//! on the system base. Out-of-service generators and branches are dropped.
//! Only polynomial cost models are accepted; quadratic terms are discarded
//! with a warning.

use std::collections::HashMap;

use gridpwl_core::{Branch, Bus, BusKind, Generator, Network, NetworkError};
use thiserror::Error;

pub const CASE14: &str = include_str!("../cases/case14.m");
pub const CASE118: &str = include_str!("../cases/case118.m");

/// Bundled case text by name (`case14`, `case118`).
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "case14" => Some(CASE14),
        "case118" => Some(CASE118),
        _ => None,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("missing section `mpc.{0}`")]
    MissingSection(&'static str),
    #[error("malformed section `mpc.{section}` (row {row}): {reason}")]
    MalformedSection {
        section: &'static str,
        row: usize,
        reason: String,
    },
    #[error("`mpc.{section}` row {row} references unknown bus {bus}")]
    UnknownBus {
        section: &'static str,
        row: usize,
        bus: i64,
    },
    #[error("branch row {row} has zero impedance")]
    ZeroImpedance { row: usize },
    #[error("no slack bus")]
    NoSlack,
    #[error(transparent)]
    Network(NetworkError),
}

#[derive(Clone, Debug)]
pub struct ParsedCase {
    /// Function name of the case file, or `case` if absent.
    pub name: String,
    pub base_mva: f64,
    pub network: Network,
    pub warnings: Vec<String>,
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| l.split('%').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn scalar(text: &str, key: &'static str) -> Result<f64, ParseError> {
    let pat = format!("mpc.{key}");
    let start = text.find(&pat).ok_or(ParseError::MissingSection(key))?;
    let rest = &text[start + pat.len()..];
    let stmt = rest.split(';').next().unwrap_or("");
    let value = stmt.trim_start().strip_prefix('=').map(str::trim);
    value
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ParseError::MalformedSection {
            section: key,
            row: 0,
            reason: format!("expected a number, found `{}`", stmt.trim()),
        })
}

fn matrix(text: &str, key: &'static str, min_cols: usize) -> Result<Vec<Vec<f64>>, ParseError> {
    let pat = format!("mpc.{key}");
    let mut search = 0;
    let start = loop {
        let pos = text[search..].find(&pat).ok_or(ParseError::MissingSection(key))? + search;
        let after = &text[pos + pat.len()..];
        // skip prefixes of longer names, e.g. `mpc.gen` inside `mpc.gencost`
        if after.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
            search = pos + pat.len();
            continue;
        }
        break pos + pat.len();
    };
    let malformed = |row, reason: String| ParseError::MalformedSection {
        section: key,
        row,
        reason,
    };
    let body = &text[start..];
    let open = body.find('[').ok_or_else(|| malformed(0, "missing `[`".into()))?;
    if !body[..open].trim().starts_with('=') {
        return Err(malformed(0, "expected `= [`".into()));
    }
    let close = body.find(']').ok_or_else(|| malformed(0, "missing `]`".into()))?;
    let mut rows = Vec::new();
    for chunk in body[open + 1..close].split([';', '\n']) {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect();
        let row = row.map_err(|e| malformed(rows.len() + 1, format!("{e} in `{chunk}`")))?;
        if row.len() < min_cols {
            return Err(malformed(
                rows.len() + 1,
                format!("expected at least {min_cols} columns, found {}", row.len()),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn case_name(text: &str) -> String {
    text.lines()
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix("function")
                .and_then(|r| r.split('=').nth(1))
                .map(|n| n.trim().to_string())
        })
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "case".to_string())
}

pub fn parse_case(text: &str) -> Result<ParsedCase, ParseError> {
    let name = case_name(text);
    let text = strip_comments(text);
    let base = scalar(&text, "baseMVA")?;
    let bus_rows = matrix(&text, "bus", 13)?;
    let gen_rows = matrix(&text, "gen", 10)?;
    let branch_rows = matrix(&text, "branch", 11)?;
    let cost_rows = matrix(&text, "gencost", 4)?;
    let mut warnings = Vec::new();

    let mut index = HashMap::new();
    for (i, r) in bus_rows.iter().enumerate() {
        if index.insert(r[0] as i64, i).is_some() {
            return Err(ParseError::MalformedSection {
                section: "bus",
                row: i + 1,
                reason: format!("duplicate bus number {}", r[0]),
            });
        }
    }
    let lookup = |section, row, id: f64| {
        index.get(&(id as i64)).copied().ok_or(ParseError::UnknownBus {
            section,
            row,
            bus: id as i64,
        })
    };

    // Voltage setpoints of regulated buses come from the first online unit.
    let mut setpoint: HashMap<usize, f64> = HashMap::new();
    let mut generators = Vec::new();
    if cost_rows.len() < gen_rows.len() {
        return Err(ParseError::MalformedSection {
            section: "gencost",
            row: cost_rows.len() + 1,
            reason: "fewer cost rows than generators".into(),
        });
    }
    for (g, r) in gen_rows.iter().enumerate() {
        let bus = lookup("gen", g + 1, r[0])?;
        if r[7] <= 0.0 {
            continue;
        }
        setpoint.entry(bus).or_insert(r[5]);
        let c = &cost_rows[g];
        let bad_cost = |reason: String| ParseError::MalformedSection {
            section: "gencost",
            row: g + 1,
            reason,
        };
        if c[0] != 2.0 {
            return Err(bad_cost(format!("cost model {} is not polynomial", c[0])));
        }
        let ncoef = c[3] as usize;
        if c.len() < 4 + ncoef {
            return Err(bad_cost(format!("expected {ncoef} coefficients")));
        }
        let coef = &c[4..4 + ncoef];
        let (lin, cst) = match ncoef {
            0 => (0.0, 0.0),
            1 => (0.0, coef[0]),
            _ => (coef[ncoef - 2], coef[ncoef - 1]),
        };
        if coef[..ncoef.saturating_sub(2)].iter().any(|&v| v != 0.0) {
            warnings.push(format!("generator {}: nonlinear cost terms dropped", g + 1));
        }
        generators.push(Generator {
            bus,
            p_min: r[9] / base,
            p_max: r[8] / base,
            q_min: r[4] / base,
            q_max: r[3] / base,
            cost_linear: lin * base,
            cost_const: cst,
        });
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (i, r) in bus_rows.iter().enumerate() {
        let kind = match r[1] as i64 {
            3 => BusKind::Slack,
            2 => BusKind::Pv,
            1 => BusKind::Pq,
            t => {
                return Err(ParseError::MalformedSection {
                    section: "bus",
                    row: i + 1,
                    reason: format!("unsupported bus type {t}"),
                })
            }
        };
        let v_set = match kind {
            BusKind::Pq => r[7],
            _ => setpoint.get(&i).copied().unwrap_or(r[7]),
        };
        buses.push(Bus {
            id: r[0] as usize,
            kind,
            v_min: r[12],
            v_max: r[11],
            p_demand: r[2] / base,
            q_demand: r[3] / base,
            g_shunt: r[4] / base,
            b_shunt: r[5] / base,
            v_setpoint: v_set,
            theta_setpoint: r[8].to_radians(),
        });
    }
    if !buses.iter().any(|b| b.kind == BusKind::Slack) {
        return Err(ParseError::NoSlack);
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (k, r) in branch_rows.iter().enumerate() {
        if r[10] <= 0.0 {
            continue;
        }
        let from = lookup("branch", k + 1, r[0])?;
        let to = lookup("branch", k + 1, r[1])?;
        let (res, x) = (r[2], r[3]);
        let d = res * res + x * x;
        if d == 0.0 {
            return Err(ParseError::ZeroImpedance { row: k + 1 });
        }
        if r[9] != 0.0 {
            return Err(ParseError::MalformedSection {
                section: "branch",
                row: k + 1,
                reason: "phase-shifting transformers are not supported".into(),
            });
        }
        branches.push(Branch {
            from,
            to,
            g: res / d,
            b: -x / d,
            g_sh: 0.0,
            b_sh: r[4] / 2.0,
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            rating: r[5] / base,
            switchable: true,
        });
    }

    let network = Network::new(buses, branches, generators).map_err(|e| match e {
        NetworkError::NoSlack => ParseError::NoSlack,
        e => ParseError::Network(e),
    })?;
    Ok(ParsedCase {
        name,
        base_mva: base,
        network,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1.02	0	0	1	1.06	0.94;
	2	1	50	10	0	0	1	1	-3	0	1	1.06	0.94;
];
mpc.gen = [
	1	0	0	100	-100	1.02	100	1	200	0;
];
mpc.branch = [
	1	2	0	0.1	0.02	120	120	120	0	0	1	-30	30;
];
mpc.gencost = [
	2	0	0	3	0.01	25	7;
];
";

    #[test]
    fn two_bus_case() {
        let c = parse_case(TWO_BUS).unwrap();
        assert_eq!(c.name, "tiny");
        let net = &c.network;
        let br = &net.branches()[0];
        assert_eq!(br.g, 0.0);
        assert!((br.b + 10.0).abs() < 1e-12);
        assert!((br.b_sh - 0.01).abs() < 1e-15);
        assert!((br.rating - 1.2).abs() < 1e-15);
        assert_eq!(net.buses()[1].p_demand, 0.5);
        assert!((net.buses()[1].theta_setpoint + 3f64.to_radians()).abs() < 1e-15);
        let g = &net.generators()[0];
        assert_eq!((g.cost_linear, g.cost_const, g.p_max), (2500.0, 7.0, 2.0));
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn distinct_errors() {
        let no_slack = TWO_BUS.replacen("1\t3\t0", "1\t1\t0", 1);
        assert_eq!(parse_case(&no_slack).unwrap_err(), ParseError::NoSlack);
        let unknown = TWO_BUS.replace("1\t2\t0\t0.1", "1\t7\t0\t0.1");
        assert!(matches!(parse_case(&unknown), Err(ParseError::UnknownBus { bus: 7, .. })));
        let zero = TWO_BUS.replace("1\t2\t0\t0.1", "1\t2\t0\t0");
        assert!(matches!(parse_case(&zero), Err(ParseError::ZeroImpedance { row: 1 })));
        let bad = TWO_BUS.replace("0.02\t120", "0.02\tabc");
        assert!(matches!(parse_case(&bad), Err(ParseError::MalformedSection { section: "branch", .. })));
        let missing = TWO_BUS.replace("mpc.gencost", "mpc.other");
        assert_eq!(parse_case(&missing).unwrap_err(), ParseError::MissingSection("gencost"));
    }

    #[test]
    fn bundled_cases_parse() {
        let c14 = parse_case(CASE14).unwrap();
        assert_eq!((c14.network.bus_count(), c14.network.branch_count()), (14, 20));
        assert_eq!(c14.name, "case14");
        let c118 = parse_case(CASE118).unwrap();
        assert_eq!((c118.network.bus_count(), c118.network.branch_count()), (118, 186));
    }
}
