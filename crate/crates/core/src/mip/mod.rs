//! Solver-agnostic mixed-integer linear program representation.
//!
//! Variables and constraints get dense ids in creation order, so an identical
//! build sequence always yields identical ids. Rows are stored sparsely.

mod mps;

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mps::{export_mps, parse_mps};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrality {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub integrality: Integrality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

impl RowSense {
    fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let act = self.activity(values);
        match self.sense {
            RowSense::Le => (act - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - act).max(0.0),
            RowSense::Eq => (act - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub sense: ObjSense,
    pub coeffs: Vec<(VarId, f64)>,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            sense: ObjSense::Minimize,
            coeffs: Vec::new(),
        }
    }
}

/// Full assignment of values, indexed by [`VarId`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment(pub Vec<f64>);

impl Assignment {
    pub fn get(&self, v: VarId) -> f64 {
        self.0[v.0]
    }

    pub fn set(&mut self, v: VarId, value: f64) {
        self.0[v.0] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A violated bound, integrality requirement or row.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Bound { var: String, value: f64, lo: f64, hi: f64 },
    Integrality { var: String, value: f64 },
    Row { row: String, amount: f64 },
    Missing { expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Bound { var, value, lo, hi } => {
                write!(f, "{var} = {value} outside [{lo}, {hi}]")
            }
            Violation::Integrality { var, value } => write!(f, "{var} = {value} is not binary"),
            Violation::Row { row, amount } => write!(f, "row {row} violated by {amount:e}"),
            Violation::Missing { expected, got } => {
                write!(f, "assignment has {got} values, model has {expected} variables")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MipModel {
    pub name: String,
    vars: Vec<Variable>,
    cons: Vec<Constraint>,
    objective: Objective,
    priorities: BTreeMap<VarId, i32>,
    choice_groups: Vec<Vec<VarId>>,
    warm_start: Option<Assignment>,
    var_names: HashMap<String, VarId>,
    con_names: HashMap<String, ConId>,
}

impl MipModel {
    pub fn new(name: impl Into<String>) -> Self {
        MipModel {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        lo: f64,
        hi: f64,
        integrality: Integrality,
    ) -> Result<VarId> {
        let name = name.into();
        if self.var_names.contains_key(&name) {
            return Err(Error::Model(format!("duplicate variable name {name}")));
        }
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::Model(format!("variable {name}: invalid bounds [{lo}, {hi}]")));
        }
        if integrality == Integrality::Binary && (lo < 0.0 || hi > 1.0) {
            return Err(Error::Model(format!(
                "binary variable {name}: bounds [{lo}, {hi}] not within [0, 1]"
            )));
        }
        let id = VarId(self.vars.len());
        self.var_names.insert(name.clone(), id);
        self.vars.push(Variable {
            name,
            lo,
            hi,
            integrality,
        });
        Ok(id)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId> {
        self.add_variable(name, 0.0, 1.0, Integrality::Binary)
    }

    /// Adds a row; repeated variables are merged and zero coefficients dropped.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: &[(VarId, f64)],
        sense: RowSense,
        rhs: f64,
    ) -> Result<ConId> {
        let name = name.into();
        if self.con_names.contains_key(&name) {
            return Err(Error::Model(format!("duplicate constraint name {name}")));
        }
        if !rhs.is_finite() {
            return Err(Error::Model(format!("constraint {name}: non-finite rhs")));
        }
        let row = self.normalize(&name, coeffs)?;
        let id = ConId(self.cons.len());
        self.con_names.insert(name.clone(), id);
        self.cons.push(Constraint {
            name,
            coeffs: row,
            sense,
            rhs,
        });
        Ok(id)
    }

    fn normalize(&self, owner: &str, coeffs: &[(VarId, f64)]) -> Result<Vec<(VarId, f64)>> {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in coeffs {
            if v.0 >= self.vars.len() {
                return Err(Error::Model(format!("{owner}: unknown variable id {}", v.0)));
            }
            if !c.is_finite() {
                return Err(Error::Model(format!("{owner}: non-finite coefficient")));
            }
            *merged.entry(v).or_insert(0.0) += c;
        }
        Ok(merged.into_iter().filter(|&(_, c)| c != 0.0).collect())
    }

    /// Replaces any previously set objective.
    pub fn set_objective(&mut self, sense: ObjSense, coeffs: &[(VarId, f64)]) -> Result<()> {
        let coeffs = self.normalize("objective", coeffs)?;
        self.objective = Objective { sense, coeffs };
        Ok(())
    }

    pub fn set_var_bounds(&mut self, v: VarId, lo: f64, hi: f64) -> Result<()> {
        let var = self
            .vars
            .get_mut(v.0)
            .ok_or_else(|| Error::Model(format!("unknown variable id {}", v.0)))?;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Model(format!("variable {}: invalid bounds [{lo}, {hi}]", var.name)));
        }
        if var.integrality == Integrality::Binary && (lo < 0.0 || hi > 1.0) {
            return Err(Error::Model(format!("binary variable {}: bounds outside [0, 1]", var.name)));
        }
        var.lo = lo;
        var.hi = hi;
        Ok(())
    }

    /// Higher priority branches earlier; unset variables have priority 0.
    pub fn set_branch_priority(&mut self, v: VarId, priority: i32) {
        self.priorities.insert(v, priority);
    }

    pub fn branch_priority(&self, v: VarId) -> i32 {
        self.priorities.get(&v).copied().unwrap_or(0)
    }

    pub fn priorities(&self) -> &BTreeMap<VarId, i32> {
        &self.priorities
    }

    /// Declare binaries that sum to one (the caller adds that row), in a
    /// meaningful order. The solver may branch on the whole group by
    /// splitting it in two halves instead of fixing one member.
    pub fn add_choice_group(&mut self, members: &[VarId]) -> Result<()> {
        for &v in members {
            let var = self
                .vars
                .get(v.0)
                .ok_or_else(|| Error::Model(format!("unknown variable id {}", v.0)))?;
            if var.integrality != Integrality::Binary {
                return Err(Error::Model(format!("choice group member {} is not binary", var.name)));
            }
            if self.choice_groups.iter().any(|g| g.contains(&v)) {
                return Err(Error::Model(format!("{} already belongs to a choice group", var.name)));
            }
        }
        if members.len() >= 2 {
            self.choice_groups.push(members.to_vec());
        }
        Ok(())
    }

    pub fn choice_groups(&self) -> &[Vec<VarId>] {
        &self.choice_groups
    }

    pub fn set_warm_start(&mut self, a: Assignment) -> Result<()> {
        if a.0.len() != self.vars.len() {
            return Err(Error::Model(format!(
                "warm start has {} values for {} variables",
                a.0.len(),
                self.vars.len()
            )));
        }
        for (var, &x) in self.vars.iter().zip(&a.0) {
            if !x.is_finite() || x < var.lo - 1e-9 || x > var.hi + 1e-9 {
                return Err(Error::Model(format!(
                    "warm start value {x} for {} outside [{}, {}]",
                    var.name, var.lo, var.hi
                )));
            }
        }
        self.warm_start = Some(a);
        Ok(())
    }

    pub fn clear_warm_start(&mut self) {
        self.warm_start = None;
    }

    pub fn warm_start(&self) -> Option<&Assignment> {
        self.warm_start.as_ref()
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.var_names.get(name).copied()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.cons
    }

    pub fn constraint_by_name(&self, name: &str) -> Option<ConId> {
        self.con_names.get(name).copied()
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.cons.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.integrality == Integrality::Binary)
            .map(|(i, _)| VarId(i))
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries().count()
    }

    pub fn objective_value(&self, a: &Assignment) -> f64 {
        self.objective.coeffs.iter().map(|&(v, c)| c * a.get(v)).sum()
    }

    /// Every bound, integrality and row violation beyond `tol`.
    pub fn violations(&self, a: &Assignment, tol: f64) -> Vec<Violation> {
        if a.0.len() != self.vars.len() {
            return vec![Violation::Missing {
                expected: self.vars.len(),
                got: a.0.len(),
            }];
        }
        let mut out = Vec::new();
        for (var, &x) in self.vars.iter().zip(&a.0) {
            if !x.is_finite() || x < var.lo - tol || x > var.hi + tol {
                out.push(Violation::Bound {
                    var: var.name.clone(),
                    value: x,
                    lo: var.lo,
                    hi: var.hi,
                });
            } else if var.integrality == Integrality::Binary && (x - x.round()).abs() > tol {
                out.push(Violation::Integrality {
                    var: var.name.clone(),
                    value: x,
                });
            }
        }
        for con in &self.cons {
            let amount = con.violation(&a.0);
            if !(amount <= tol) {
                out.push(Violation::Row {
                    row: con.name.clone(),
                    amount,
                });
            }
        }
        out
    }

    pub fn check_feasible(&self, a: &Assignment, tol: f64) -> bool {
        self.violations(a, tol).is_empty()
    }

    /// Human-readable LP-style dump; not meant for interchange.
    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        let term_list = |coeffs: &[(VarId, f64)]| -> String {
            if coeffs.is_empty() {
                return "0".to_string();
            }
            let mut t = String::new();
            for (k, &(v, c)) in coeffs.iter().enumerate() {
                let name = &self.vars[v.0].name;
                if k == 0 {
                    let _ = write!(t, "{c} {name}");
                } else if c < 0.0 {
                    let _ = write!(t, " - {} {name}", -c);
                } else {
                    let _ = write!(t, " + {c} {name}");
                }
            }
            t
        };
        let _ = writeln!(s, "\\ {}", self.name);
        let _ = writeln!(
            s,
            "{}",
            match self.objective.sense {
                ObjSense::Minimize => "Minimize",
                ObjSense::Maximize => "Maximize",
            }
        );
        let _ = writeln!(s, " obj: {}", term_list(&self.objective.coeffs));
        let _ = writeln!(s, "Subject To");
        for con in &self.cons {
            let _ = writeln!(
                s,
                " {}: {} {} {}",
                con.name,
                term_list(&con.coeffs),
                con.sense.symbol(),
                con.rhs
            );
        }
        let _ = writeln!(s, "Bounds");
        for var in &self.vars {
            let _ = writeln!(s, " {} <= {} <= {}", var.lo, var.name, var.hi);
        }
        let bins: Vec<&str> = self
            .vars
            .iter()
            .filter(|v| v.integrality == Integrality::Binary)
            .map(|v| v.name.as_str())
            .collect();
        if !bins.is_empty() {
            let _ = writeln!(s, "Binaries");
            let _ = writeln!(s, " {}", bins.join(" "));
        }
        let _ = writeln!(s, "End");
        s
    }
}

impl fmt::Display for MipModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_lp_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_variable_records_integrality() {
        let mut m = MipModel::new("t");
        let b = m.add_binary("b").unwrap();
        assert_eq!(m.var(b).integrality, Integrality::Binary);
        assert_eq!((m.var(b).lo, m.var(b).hi), (0.0, 1.0));
        assert!(m.add_variable("c", 0.0, 2.0, Integrality::Binary).is_err());
    }

    #[test]
    fn unknown_variable_and_duplicate_names_rejected() {
        let mut m = MipModel::new("t");
        let x = m.add_variable("x", 0.0, 1.0, Integrality::Continuous).unwrap();
        assert!(m.add_constraint("r", &[(VarId(7), 1.0)], RowSense::Le, 1.0).is_err());
        assert!(m.add_variable("x", 0.0, 1.0, Integrality::Continuous).is_err());
        m.add_constraint("r", &[(x, 1.0)], RowSense::Le, 1.0).unwrap();
        assert!(m.add_constraint("r", &[(x, 1.0)], RowSense::Le, 1.0).is_err());
    }

    #[test]
    fn set_objective_replaces() {
        let mut m = MipModel::new("t");
        let x = m.add_variable("x", 0.0, 1.0, Integrality::Continuous).unwrap();
        let y = m.add_variable("y", 0.0, 1.0, Integrality::Continuous).unwrap();
        m.set_objective(ObjSense::Minimize, &[(x, 1.0)]).unwrap();
        m.set_objective(ObjSense::Maximize, &[(y, 2.0)]).unwrap();
        assert_eq!(m.objective().sense, ObjSense::Maximize);
        assert_eq!(m.objective().coeffs, vec![(y, 2.0)]);
    }

    #[test]
    fn duplicate_row_entries_merge() {
        let mut m = MipModel::new("t");
        let x = m.add_variable("x", 0.0, 1.0, Integrality::Continuous).unwrap();
        let y = m.add_variable("y", 0.0, 1.0, Integrality::Continuous).unwrap();
        let c = m
            .add_constraint("r", &[(x, 1.0), (y, 2.0), (x, 3.0), (y, -2.0)], RowSense::Eq, 0.0)
            .unwrap();
        assert_eq!(m.constraints()[c.0].coeffs, vec![(x, 4.0)]);
    }

    #[test]
    fn feasibility_checks() {
        let mut m = MipModel::new("contradiction");
        let x = m.add_variable("x", f64::NEG_INFINITY, f64::INFINITY, Integrality::Continuous).unwrap();
        m.add_constraint("lo", &[(x, 1.0)], RowSense::Ge, 1.0).unwrap();
        m.add_constraint("hi", &[(x, 1.0)], RowSense::Le, 0.0).unwrap();
        for v in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            assert!(!m.check_feasible(&Assignment(vec![v]), 1e-9));
        }

        assert!(MipModel::new("empty").check_feasible(&Assignment(vec![]), 1e-9));

        let mut eq = MipModel::new("eq");
        let x = eq.add_variable("x", f64::NEG_INFINITY, f64::INFINITY, Integrality::Continuous).unwrap();
        eq.add_constraint("fix", &[(x, 1.0)], RowSense::Eq, 3.0).unwrap();
        assert!(eq.check_feasible(&Assignment(vec![3.0 + 1e-12]), 1e-9));
        assert!(!eq.check_feasible(&Assignment(vec![3.1]), 1e-9));
    }

    #[test]
    fn integrality_checked_within_tolerance() {
        let mut m = MipModel::new("t");
        m.add_binary("b").unwrap();
        assert!(m.check_feasible(&Assignment(vec![1.0 - 1e-8]), 1e-6));
        assert!(!m.check_feasible(&Assignment(vec![0.5]), 1e-6));
    }

    #[test]
    fn warm_start_must_respect_bounds() {
        let mut m = MipModel::new("t");
        m.add_variable("x", 0.0, 1.0, Integrality::Continuous).unwrap();
        assert!(m.set_warm_start(Assignment(vec![2.0])).is_err());
        assert!(m.set_warm_start(Assignment(vec![0.5])).is_ok());
    }

    #[test]
    fn ids_are_deterministic() {
        let build = || {
            let mut m = MipModel::new("t");
            let a = m.add_variable("a", 0.0, 1.0, Integrality::Continuous).unwrap();
            let b = m.add_binary("b").unwrap();
            let c = m.add_constraint("r", &[(a, 1.0), (b, 1.0)], RowSense::Le, 1.0).unwrap();
            (a, b, c, m)
        };
        let (a1, b1, c1, m1) = build();
        let (a2, b2, c2, m2) = build();
        assert_eq!((a1, b1, c1), (a2, b2, c2));
        assert_eq!(m1, m2);
    }

    #[test]
    fn lp_dump_lists_rows() {
        let mut m = MipModel::new("t");
        let x = m.add_variable("x", 0.0, 10.0, Integrality::Continuous).unwrap();
        m.add_constraint("c1", &[(x, 1.0)], RowSense::Ge, 3.0).unwrap();
        m.set_objective(ObjSense::Minimize, &[(x, 1.0)]).unwrap();
        let s = m.to_lp_string();
        assert!(s.contains("c1: 1 x >= 3"));
        assert!(s.contains("Minimize"));
    }
}
