//! Subset of the MATPOWER version-2 case format: `mpc.baseMVA`, `mpc.bus`,
//! `mpc.gen`, `mpc.branch` and `mpc.gencost`. Other assignments are ignored.

use std::collections::HashMap;

use super::CaseError;
use crate::netmodel::{Branch, BranchStatus, Bus, BusKind, Generator, Load, Network, NetworkData};

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

struct Matrices {
    scalars: HashMap<String, f64>,
    matrices: HashMap<String, Vec<Vec<f64>>>,
    name: String,
}

fn parse_row(matrix: &str, row: usize, text: &str) -> Result<Vec<f64>, CaseError> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v = match t {
                "Inf" | "inf" => f64::INFINITY,
                "-Inf" | "-inf" => f64::NEG_INFINITY,
                _ => t.parse::<f64>().map_err(|_| CaseError::Matpower {
                    matrix: matrix.into(),
                    row,
                    message: format!("cannot parse number {t:?}"),
                })?,
            };
            Ok(v)
        })
        .collect()
}

fn tokenize(text: &str) -> Result<Matrices, CaseError> {
    let mut out = Matrices { scalars: HashMap::new(), matrices: HashMap::new(), name: "matpower".into() };
    let mut open: Option<(String, String)> = None;
    for raw in text.lines() {
        let line = strip_comment(raw).trim();
        if let Some((_, body)) = open.as_mut() {
            if let Some(end) = line.find(']') {
                body.push_str(&line[..end]);
                body.push('\n');
                let (name, body) = open.take().unwrap();
                let mut rows = Vec::new();
                for chunk in body.split([';', '\n']) {
                    let r = rows.len() + 1;
                    let values = parse_row(&name, r, chunk)?;
                    if !values.is_empty() {
                        rows.push(values);
                    }
                }
                out.matrices.insert(name, rows);
            } else {
                body.push_str(line);
                body.push('\n');
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, n)) = rest.split_once('=') {
                out.name = n.trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else { continue };
        let Some((key, value)) = rest.split_once('=') else { continue };
        let key = key.trim().to_string();
        let value = value.trim();
        if let Some(body) = value.strip_prefix('[') {
            if let Some(end) = body.find(']') {
                let rows = body[..end]
                    .split(';')
                    .enumerate()
                    .map(|(k, c)| parse_row(&key, k + 1, c))
                    .filter(|r| !matches!(r, Ok(v) if v.is_empty()))
                    .collect::<Result<Vec<_>, _>>()?;
                out.matrices.insert(key, rows);
            } else {
                open = Some((key, format!("{body}\n")));
            }
        } else if key == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            let v = v.parse().map_err(|_| CaseError::MatpowerFile(format!("bad baseMVA {v:?}")))?;
            out.scalars.insert(key, v);
        }
    }
    if let Some((name, _)) = open {
        return Err(CaseError::MatpowerFile(format!("unterminated matrix mpc.{name}")));
    }
    Ok(out)
}

fn need<'a>(m: &'a Matrices, name: &str, min_cols: usize) -> Result<&'a [Vec<f64>], CaseError> {
    let rows = m.matrices.get(name).ok_or_else(|| CaseError::MatpowerFile(format!("missing mpc.{name}")))?;
    for (k, r) in rows.iter().enumerate() {
        if r.len() < min_cols {
            return Err(CaseError::Matpower {
                matrix: name.into(),
                row: k + 1,
                message: format!("expected at least {min_cols} columns, found {}", r.len()),
            });
        }
    }
    Ok(rows)
}

fn as_id(matrix: &str, row: usize, v: f64) -> Result<usize, CaseError> {
    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(CaseError::Matpower { matrix: matrix.into(), row, message: format!("invalid bus number {v}") })
    }
}

/// Import a MATPOWER case into a per-unit [`Network`].
///
/// Out-of-service generators are dropped together with their cost rows; branch
/// status 0 becomes an open branch. Angle-difference limits are ignored.
pub fn import_matpower(text: &str) -> Result<Network, CaseError> {
    let m = tokenize(text)?;
    let base = *m.scalars.get("baseMVA").ok_or_else(|| CaseError::MatpowerFile("missing mpc.baseMVA".into()))?;
    if !(base.is_finite() && base > 0.0) {
        return Err(CaseError::MatpowerFile(format!("invalid baseMVA {base}")));
    }
    let bus_rows = need(&m, "bus", 13)?;
    let gen_rows = need(&m, "gen", 10)?;
    let branch_rows = need(&m, "branch", 11)?;
    let cost_rows = need(&m, "gencost", 4)?;
    if cost_rows.len() < gen_rows.len() {
        return Err(CaseError::MatpowerFile(format!(
            "gencost has {} rows for {} generators",
            cost_rows.len(),
            gen_rows.len()
        )));
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut loads = Vec::new();
    for (k, r) in bus_rows.iter().enumerate() {
        let id = as_id("bus", k + 1, r[0])?;
        let kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            4 => return Err(CaseError::Unsupported(format!("isolated bus {id} (type 4)"))),
            t => return Err(CaseError::Matpower { matrix: "bus".into(), row: k + 1, message: format!("unknown bus type {t}") }),
        };
        let mut bus = Bus::new(id, kind, r[12], r[11]);
        bus.base_kv = r[9];
        bus.gs = r[4] / base;
        bus.bs = r[5] / base;
        buses.push(bus);
        if r[2] != 0.0 || r[3] != 0.0 {
            loads.push(Load { bus: id, p_d: r[2] / base, q_d: r[3] / base });
        }
    }

    let mut generators = Vec::new();
    for (k, (r, c)) in gen_rows.iter().zip(cost_rows).enumerate() {
        if r[7] <= 0.0 {
            continue;
        }
        let row = k + 1;
        if c[0] as i64 != 2 {
            return Err(CaseError::Unsupported(format!("gencost row {row}: piecewise-linear cost model")));
        }
        let n = c[3];
        if !(n >= 0.0 && n.fract() == 0.0 && n + 4.0 <= c.len() as f64) {
            return Err(CaseError::Matpower { matrix: "gencost".into(), row, message: format!("declares {n} coefficients") });
        }
        let n = n as usize;
        let coeffs = &c[4..4 + n];
        // leading zeros of higher-order terms are harmless
        let first = coeffs.iter().position(|&x| x != 0.0).unwrap_or(coeffs.len());
        if n - first > 3 {
            return Err(CaseError::Unsupported(format!("gencost row {row}: polynomial cost of degree {}", n - first - 1)));
        }
        let mut abc = [0.0; 3];
        for (j, &v) in coeffs.iter().rev().take(3).enumerate() {
            abc[2 - j] = v;
        }
        generators.push(Generator {
            bus: as_id("gen", row, r[0])?,
            p_min: r[9] / base,
            p_max: r[8] / base,
            q_min: r[4] / base,
            q_max: r[3] / base,
            cost_a: abc[0] * base * base,
            cost_b: abc[1] * base,
            cost_c: abc[2],
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (k, r) in branch_rows.iter().enumerate() {
        let row = k + 1;
        branches.push(Branch {
            from_bus: as_id("branch", row, r[0])?,
            to_bus: as_id("branch", row, r[1])?,
            r: r[2],
            x: r[3],
            b_charge: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
            rating: r[5] / base,
            status: if r[10] > 0.0 { BranchStatus::Closed } else { BranchStatus::Open },
        });
    }

    let data = NetworkData { name: m.name, base_mva: base, buses, branches, generators, dgs: vec![], loads };
    Ok(Network::new(data)?)
}
