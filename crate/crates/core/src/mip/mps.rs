//! Fixed-format MPS writer and the matching reader.
//!
//! Names that do not fit the fixed format (longer than 8 characters, containing
//! whitespace, starting with `_` or `*`, or clashing with a section keyword) are
//! replaced by `_C<hex id>` for columns and `_R<hex id>` for rows. Kept names
//! never start with `_`, so mangled names cannot collide with them. Every
//! replacement is recorded in a `* name <mangled> <original>` comment line and
//! restored by [`parse_mps`]. The objective row is always `_OBJ`.
//!
//! Numbers use the shortest representation that parses back to the same `f64`;
//! a number longer than 12 characters overflows its column, which is why the
//! reader tokenizes on whitespace instead of column positions.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Integrality, MipModel, ObjSense, RowSense, VarId};
use crate::error::{Error, Result};

const OBJ_ROW: &str = "_OBJ";
const RESERVED: [&str; 4] = ["MARKER", "RHS", "BND", "RANGES"];

fn representable(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 8
        && name.chars().all(|c| c.is_ascii_graphic())
        && !name.starts_with('_')
        && !name.starts_with('*')
        && !RESERVED.contains(&name)
}

fn fmt_num(v: f64) -> String {
    let plain = format!("{v}");
    let exp = format!("{v:e}");
    if plain.len() <= exp.len() {
        plain
    } else {
        exp
    }
}

fn data_line(out: &mut String, f1: &str, f2: &str, f3: &str, f4: &str) {
    let line = format!(" {f1:<2} {f2:<8}  {f3:<8}  {f4:<12}");
    out.push_str(line.trim_end());
    out.push('\n');
}

/// Serialize `model` as fixed-format MPS text.
pub fn export_mps(model: &MipModel) -> String {
    let col_names: Vec<String> = model
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if representable(&v.name) {
                v.name.clone()
            } else {
                format!("_C{i:x}")
            }
        })
        .collect();
    let row_names: Vec<String> = model
        .constraints()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if representable(&c.name) {
                c.name.clone()
            } else {
                format!("_R{i:x}")
            }
        })
        .collect();

    let mut out = String::new();
    out.push_str("* fixed-format MPS\n");
    if !model.name.is_empty() {
        let _ = writeln!(out, "* model-name {}", model.name);
    }
    for (v, mangled) in model.vars().iter().zip(&col_names) {
        if &v.name != mangled {
            let _ = writeln!(out, "* name {mangled} {}", v.name);
        }
    }
    for (c, mangled) in model.constraints().iter().zip(&row_names) {
        if &c.name != mangled {
            let _ = writeln!(out, "* name {mangled} {}", c.name);
        }
    }
    let name = if model.name.is_empty() || model.name.contains(char::is_whitespace) {
        "UNNAMED".to_string()
    } else {
        model.name.clone()
    };
    let _ = writeln!(out, "NAME          {name}");
    if model.objective().sense == ObjSense::Maximize {
        out.push_str("OBJSENSE\n    MAX\n");
    }

    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  {OBJ_ROW}");
    for (c, name) in model.constraints().iter().zip(&row_names) {
        let t = match c.sense {
            RowSense::Le => "L",
            RowSense::Ge => "G",
            RowSense::Eq => "E",
        };
        let _ = writeln!(out, " {t}  {name}");
    }

    // Column-major view of the rows.
    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.num_vars()];
    for (r, c) in model.constraints().iter().enumerate() {
        for &(v, a) in &c.coeffs {
            entries[v.0].push((r, a));
        }
    }
    let mut obj = vec![0.0; model.num_vars()];
    for &(v, c) in &model.objective().coeffs {
        obj[v.0] = c;
    }

    out.push_str("COLUMNS\n");
    let mut in_marker = false;
    let mut marker_count = 0usize;
    for (j, var) in model.vars().iter().enumerate() {
        let is_int = var.integrality == Integrality::Binary;
        if is_int != in_marker {
            let kind = if is_int { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(out, "    MARKER{marker_count:<4}  'MARKER'                 {kind}");
            marker_count += 1;
            in_marker = is_int;
        }
        let mut items: Vec<(&str, f64)> = Vec::new();
        if obj[j] != 0.0 || entries[j].is_empty() {
            items.push((OBJ_ROW, obj[j]));
        }
        for &(r, a) in &entries[j] {
            items.push((&row_names[r], a));
        }
        for pair in items.chunks(2) {
            let mut line = format!("    {:<8}  {:<8}  {:<12}", col_names[j], pair[0].0, fmt_num(pair[0].1));
            if let Some(&(row, a)) = pair.get(1) {
                let _ = write!(line, "   {:<8}  {}", row, fmt_num(a));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    if in_marker {
        let _ = writeln!(out, "    MARKER{marker_count:<4}  'MARKER'                 'INTEND'");
    }

    out.push_str("RHS\n");
    for (c, name) in model.constraints().iter().zip(&row_names) {
        if c.rhs != 0.0 {
            data_line(&mut out, "", "RHS", name, &fmt_num(c.rhs));
        }
    }

    out.push_str("BOUNDS\n");
    for (var, name) in model.vars().iter().zip(&col_names) {
        let (lo, hi) = (var.lo, var.hi);
        if var.integrality == Integrality::Binary {
            if lo == 0.0 && hi == 1.0 {
                data_line(&mut out, "BV", "BND", name, "");
            } else if lo == hi {
                data_line(&mut out, "FX", "BND", name, &fmt_num(lo));
            } else {
                data_line(&mut out, "LO", "BND", name, &fmt_num(lo));
                data_line(&mut out, "UP", "BND", name, &fmt_num(hi));
            }
            continue;
        }
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            data_line(&mut out, "FR", "BND", name, "");
        } else if lo == hi {
            data_line(&mut out, "FX", "BND", name, &fmt_num(lo));
        } else {
            if lo == f64::NEG_INFINITY {
                data_line(&mut out, "MI", "BND", name, "");
            } else if lo != 0.0 || hi < 0.0 {
                data_line(&mut out, "LO", "BND", name, &fmt_num(lo));
            }
            if hi.is_finite() {
                data_line(&mut out, "UP", "BND", name, &fmt_num(hi));
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Bounds,
    Done,
}

struct ColumnData {
    name: String,
    integer: bool,
    lo: f64,
    hi: f64,
    lo_set: bool,
}

/// Parse MPS text produced by [`export_mps`] (and simple hand-written files in
/// the same dialect) back into a [`MipModel`].
pub fn parse_mps(text: &str) -> Result<MipModel> {
    let mut renames: HashMap<String, String> = HashMap::new();
    let mut model_name = String::new();
    let mut sense = ObjSense::Minimize;
    let mut obj_row: Option<String> = None;
    let mut rows: Vec<(String, RowSense)> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut free_rows: Vec<String> = Vec::new();
    let mut cols: Vec<ColumnData> = Vec::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut row_coeffs: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut obj_coeffs: Vec<(usize, f64)> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut integer_mode = false;
    let mut section = Section::None;

    let err = |line: usize, message: String| Error::Mps { line, message };
    let num = |line: usize, tok: &str| -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|_| Error::Mps { line, message: format!("bad number {tok:?}") })
    };

    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        if raw.starts_with('*') {
            let mut toks = raw[1..].split_whitespace();
            match toks.next() {
                Some("name") => {
                    // The original name is everything after the mangled token.
                    let rest = raw[1..].trim_start()["name".len()..].trim_start();
                    if let Some((m, orig)) = rest.split_once(' ') {
                        renames.insert(m.to_string(), orig.to_string());
                    }
                }
                Some("model-name") => {
                    model_name = raw[1..].trim_start()["model-name".len()..].trim().to_string();
                }
                _ => {}
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') && !raw.starts_with('\t') {
            section = match toks[0] {
                "NAME" => {
                    if model_name.is_empty() {
                        model_name = toks.get(1).copied().unwrap_or("").to_string();
                    }
                    Section::None
                }
                "OBJSENSE" => {
                    if let Some(s) = toks.get(1) {
                        sense = parse_sense(s).ok_or_else(|| err(lineno, format!("bad OBJSENSE {s}")))?;
                    }
                    Section::ObjSense
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "RANGES" => return Err(err(lineno, "RANGES section is not supported".into())),
                "ENDATA" => Section::Done,
                other => return Err(err(lineno, format!("unknown section {other}"))),
            };
            continue;
        }
        match section {
            Section::ObjSense => {
                sense = parse_sense(toks[0]).ok_or_else(|| err(lineno, format!("bad OBJSENSE {}", toks[0])))?;
            }
            Section::Rows => {
                if toks.len() != 2 {
                    return Err(err(lineno, "expected row type and name".into()));
                }
                let name = toks[1].to_string();
                let s = match toks[0] {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(name);
                        } else {
                            free_rows.push(name);
                        }
                        continue;
                    }
                    "L" => RowSense::Le,
                    "G" => RowSense::Ge,
                    "E" => RowSense::Eq,
                    t => return Err(err(lineno, format!("unknown row type {t}"))),
                };
                if row_index.insert(name.clone(), rows.len()).is_some() {
                    return Err(err(lineno, format!("duplicate row {name}")));
                }
                rows.push((name, s));
                row_coeffs.push(Vec::new());
                rhs.push(0.0);
            }
            Section::Columns => {
                if toks.len() >= 3 && toks[1] == "'MARKER'" {
                    match toks[2] {
                        "'INTORG'" => integer_mode = true,
                        "'INTEND'" => integer_mode = false,
                        t => return Err(err(lineno, format!("unknown marker {t}"))),
                    }
                    continue;
                }
                if toks.len() != 3 && toks.len() != 5 {
                    return Err(err(lineno, "expected column, row, value [, row, value]".into()));
                }
                let cname = toks[0];
                let j = match col_index.get(cname) {
                    Some(&j) => j,
                    None => {
                        let j = cols.len();
                        col_index.insert(cname.to_string(), j);
                        cols.push(ColumnData {
                            name: cname.to_string(),
                            integer: integer_mode,
                            lo: 0.0,
                            hi: if integer_mode { 1.0 } else { f64::INFINITY },
                            lo_set: false,
                        });
                        j
                    }
                };
                for pair in toks[1..].chunks(2) {
                    let value = num(lineno, pair[1])?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        obj_coeffs.push((j, value));
                    } else if let Some(&r) = row_index.get(pair[0]) {
                        row_coeffs[r].push((j, value));
                    } else if !free_rows.iter().any(|f| f == pair[0]) {
                        return Err(err(lineno, format!("unknown row {}", pair[0])));
                    }
                }
            }
            Section::Rhs => {
                let body = if toks.len() % 2 == 1 { &toks[1..] } else { &toks[..] };
                for pair in body.chunks(2) {
                    if pair.len() != 2 {
                        return Err(err(lineno, "expected row, value".into()));
                    }
                    let value = num(lineno, pair[1])?;
                    if let Some(&r) = row_index.get(pair[0]) {
                        rhs[r] = value;
                    } else if Some(pair[0]) != obj_row.as_deref() {
                        return Err(err(lineno, format!("unknown row {}", pair[0])));
                    }
                }
            }
            Section::Bounds => {
                if toks.len() < 3 {
                    return Err(err(lineno, "expected bound type, set name, column".into()));
                }
                let j = *col_index
                    .get(toks[2])
                    .ok_or_else(|| err(lineno, format!("unknown column {}", toks[2])))?;
                let value = match toks.get(3) {
                    Some(t) => Some(num(lineno, t)?),
                    None => None,
                };
                let need = |v: Option<f64>| v.ok_or_else(|| err(lineno, "bound value missing".into()));
                let col = &mut cols[j];
                match toks[0] {
                    "UP" => {
                        let v = need(value)?;
                        col.hi = v;
                        if v < 0.0 && !col.lo_set && col.lo == 0.0 {
                            col.lo = f64::NEG_INFINITY;
                        }
                    }
                    "LO" => {
                        col.lo = need(value)?;
                        col.lo_set = true;
                    }
                    "FX" => {
                        let v = need(value)?;
                        col.lo = v;
                        col.hi = v;
                        col.lo_set = true;
                    }
                    "FR" => {
                        col.lo = f64::NEG_INFINITY;
                        col.hi = f64::INFINITY;
                        col.lo_set = true;
                    }
                    "MI" => {
                        col.lo = f64::NEG_INFINITY;
                        col.lo_set = true;
                    }
                    "PL" => col.hi = f64::INFINITY,
                    "BV" => {
                        col.integer = true;
                        col.lo = 0.0;
                        col.hi = 1.0;
                        col.lo_set = true;
                    }
                    t => return Err(err(lineno, format!("unsupported bound type {t}"))),
                }
            }
            Section::None | Section::Done => {
                return Err(err(lineno, "data line outside of a section".into()));
            }
        }
    }

    let restore = |n: &str| renames.get(n).cloned().unwrap_or_else(|| n.to_string());
    let mut model = MipModel::new(model_name);
    let mut ids = Vec::with_capacity(cols.len());
    for col in &cols {
        let integrality = if col.integer {
            Integrality::Binary
        } else {
            Integrality::Continuous
        };
        ids.push(model.add_variable(restore(&col.name), col.lo, col.hi, integrality)?);
    }
    for (r, (name, s)) in rows.iter().enumerate() {
        let coeffs: Vec<(VarId, f64)> = row_coeffs[r].iter().map(|&(j, a)| (ids[j], a)).collect();
        model.add_constraint(restore(name), &coeffs, *s, rhs[r])?;
    }
    let obj: Vec<(VarId, f64)> = obj_coeffs.iter().map(|&(j, c)| (ids[j], c)).collect();
    model.set_objective(sense, &obj)?;
    Ok(model)
}

fn parse_sense(tok: &str) -> Option<ObjSense> {
    match tok {
        "MAX" | "MAXIMIZE" => Some(ObjSense::Maximize),
        "MIN" | "MINIMIZE" => Some(ObjSense::Minimize),
        _ => None,
    }
}
