//! Satisfiability of quantifier-free linear real arithmetic.
//!
//! Formulas are atomized first: list reads, distance variables and
//! non-linear products all become real-valued atoms. Ternaries and `abs`
//! are lowered by case splitting. Each conjunctive branch is then decided
//! by Fourier-Motzkin elimination with strict and non-strict bounds. A
//! satisfying branch yields a model by back-substitution.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::ast::*;
use crate::printer::print_expr;

pub type Q = BigRational;

pub fn q_from(r: &Rational) -> Q {
    Q::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Linear expression `sum(coeff * atom) + constant`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct LinExpr {
    pub coeffs: BTreeMap<String, Q>,
    pub constant: Q,
}

impl LinExpr {
    pub fn constant(c: Q) -> LinExpr {
        LinExpr {
            coeffs: BTreeMap::new(),
            constant: c,
        }
    }
    pub fn atom(name: String) -> LinExpr {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(name, Q::one());
        LinExpr {
            coeffs,
            constant: Q::zero(),
        }
    }
    fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }
    pub fn add_scaled(&self, other: &LinExpr, k: &Q) -> LinExpr {
        let mut out = self.clone();
        for (a, c) in &other.coeffs {
            let e = out.coeffs.entry(a.clone()).or_insert_with(Q::zero);
            *e += c * k;
        }
        out.coeffs.retain(|_, c| !c.is_zero());
        out.constant += &other.constant * k;
        out
    }
    pub fn scale(&self, k: &Q) -> LinExpr {
        LinExpr::default().add_scaled(self, k)
    }
    pub fn neg(&self) -> LinExpr {
        self.scale(&-Q::one())
    }
    pub fn sub(&self, other: &LinExpr) -> LinExpr {
        self.add_scaled(other, &-Q::one())
    }
    pub fn eval(&self, model: &BTreeMap<String, Q>) -> Q {
        let mut v = self.constant.clone();
        for (a, c) in &self.coeffs {
            v += c * model.get(a).cloned().unwrap_or_else(Q::zero);
        }
        v
    }
    /// Substitute `atom := e`.
    fn subst(&self, atom: &str, e: &LinExpr) -> LinExpr {
        match self.coeffs.get(atom) {
            None => self.clone(),
            Some(c) => {
                let mut rest = self.clone();
                rest.coeffs.remove(atom);
                rest.add_scaled(e, &c.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rel {
    Lt,
    Le,
    Eq,
}

/// The constraint `lin rel 0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Constraint {
    pub lin: LinExpr,
    pub rel: Rel,
}

impl Constraint {
    fn holds(&self, model: &BTreeMap<String, Q>) -> bool {
        let v = self.lin.eval(model);
        match self.rel {
            Rel::Lt => v.is_negative(),
            Rel::Le => !v.is_positive(),
            Rel::Eq => v.is_zero(),
        }
    }
    /// Scale so the leading coefficient has magnitude one, for dedup.
    fn normalized(self) -> Constraint {
        let lead = self.lin.coeffs.values().next().cloned();
        match lead {
            Some(c) => {
                let k = if self.rel == Rel::Eq {
                    c.recip()
                } else {
                    c.abs().recip()
                };
                Constraint {
                    lin: self.lin.scale(&k),
                    rel: self.rel,
                }
            }
            None => self,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Lit(Constraint),
    BoolAtom(String, bool),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    fn and(items: Vec<Formula>) -> Formula {
        let mut out = Vec::new();
        for f in items {
            match f {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(xs) => out.extend(xs),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }
    fn or(items: Vec<Formula>) -> Formula {
        let mut out = Vec::new();
        for f in items {
            match f {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(xs) => out.extend(xs),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Unsupported {
    #[error("unsupported construct in obligation: {0}")]
    Construct(String),
}

/// Bookkeeping gathered while atomizing, used to decide whether a model
/// found over the abstraction is a genuine counterexample.
#[derive(Debug, Default, Clone)]
pub struct AtomInfo {
    /// Atom name of each list read, with the list name and index expression.
    pub reads: BTreeMap<String, (String, LinExpr)>,
    /// Non-linear atoms with their operator and operands.
    pub nonlinear: BTreeMap<String, (BinOp, LinExpr, LinExpr)>,
    pub bools: BTreeSet<String>,
}

pub struct Atomizer {
    pub info: AtomInfo,
}

type Cases = Vec<(Formula, LinExpr)>;

fn cmp_formula(op: CmpOp, a: &LinExpr, b: &LinExpr) -> Formula {
    let (lin, rel) = match op {
        CmpOp::Lt => (a.sub(b), Rel::Lt),
        CmpOp::Gt => (b.sub(a), Rel::Lt),
        CmpOp::Le => (a.sub(b), Rel::Le),
        CmpOp::Ge => (b.sub(a), Rel::Le),
        CmpOp::Eq => (a.sub(b), Rel::Eq),
    };
    lit(Constraint { lin, rel })
}

fn lit(c: Constraint) -> Formula {
    if c.lin.is_constant() {
        let holds = c.holds(&BTreeMap::new());
        return if holds { Formula::True } else { Formula::False };
    }
    Formula::Lit(c)
}

fn negate_lit(c: &Constraint) -> Formula {
    match c.rel {
        Rel::Lt => lit(Constraint {
            lin: c.lin.neg(),
            rel: Rel::Le,
        }),
        Rel::Le => lit(Constraint {
            lin: c.lin.neg(),
            rel: Rel::Lt,
        }),
        Rel::Eq => Formula::or(vec![
            lit(Constraint {
                lin: c.lin.clone(),
                rel: Rel::Lt,
            }),
            lit(Constraint {
                lin: c.lin.neg(),
                rel: Rel::Lt,
            }),
        ]),
    }
}

impl Default for Atomizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Atomizer {
    pub fn new() -> Atomizer {
        Atomizer {
            info: AtomInfo::default(),
        }
    }

    /// Lower a boolean expression; `positive` selects the formula or its negation.
    pub fn formula(&mut self, e: &Expr, positive: bool) -> Result<Formula, Unsupported> {
        Ok(match e {
            Expr::Bool(b) => {
                if *b == positive {
                    Formula::True
                } else {
                    Formula::False
                }
            }
            Expr::Var(x) => {
                self.info.bools.insert(x.clone());
                Formula::BoolAtom(x.clone(), positive)
            }
            Expr::Not(a) => self.formula(a, !positive)?,
            Expr::And(a, b) | Expr::Or(a, b) => {
                let (fa, fb) = (self.formula(a, positive)?, self.formula(b, positive)?);
                let conj = matches!(e, Expr::And(..)) == positive;
                if conj {
                    Formula::and(vec![fa, fb])
                } else {
                    Formula::or(vec![fa, fb])
                }
            }
            Expr::Ternary(c, a, b) => {
                let (ct, cf) = (self.formula(c, true)?, self.formula(c, false)?);
                let (fa, fb) = (self.formula(a, positive)?, self.formula(b, positive)?);
                Formula::or(vec![Formula::and(vec![ct, fa]), Formula::and(vec![cf, fb])])
            }
            Expr::Cmp(op, a, b) => {
                let (ca, cb) = (self.cases(a)?, self.cases(b)?);
                let mut alts = Vec::new();
                for (ga, la) in &ca {
                    for (gb, lb) in &cb {
                        let atom = cmp_formula(*op, la, lb);
                        let atom = if positive { atom } else { self.negate(&atom) };
                        alts.push(Formula::and(vec![ga.clone(), gb.clone(), atom]));
                    }
                }
                Formula::or(alts)
            }
            other => {
                return Err(Unsupported::Construct(format!(
                    "`{}` in boolean position",
                    print_expr(other)
                )))
            }
        })
    }

    fn negate(&self, f: &Formula) -> Formula {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Lit(c) => negate_lit(c),
            Formula::BoolAtom(x, b) => Formula::BoolAtom(x.clone(), !b),
            Formula::And(xs) => Formula::or(xs.iter().map(|x| self.negate(x)).collect()),
            Formula::Or(xs) => Formula::and(xs.iter().map(|x| self.negate(x)).collect()),
        }
    }

    fn read_atom(&mut self, list: &str, prefix: &str, idx: &Expr) -> Result<LinExpr, Unsupported> {
        let name = format!("{prefix}{list}@{}", print_expr(idx));
        let cases = self.cases(idx)?;
        let idx_lin = match cases.as_slice() {
            [(Formula::True, l)] => l.clone(),
            _ => {
                return Err(Unsupported::Construct(format!(
                    "conditional list index `{}`",
                    print_expr(idx)
                )))
            }
        };
        self.info
            .reads
            .insert(name.clone(), (format!("{prefix}{list}"), idx_lin));
        Ok(LinExpr::atom(name))
    }

    /// Piecewise-linear view of a numeric expression.
    pub fn cases(&mut self, e: &Expr) -> Result<Cases, Unsupported> {
        let single = |l: LinExpr| vec![(Formula::True, l)];
        Ok(match e {
            Expr::Num(r) => single(LinExpr::constant(q_from(r))),
            Expr::Var(x) => single(LinExpr::atom(x.clone())),
            Expr::Dist(d) => match &d.index {
                None => single(LinExpr::atom(format!("{}{}", d.version.sigil(), d.base))),
                Some(i) => single(self.read_atom(&d.base, &d.version.sigil().to_string(), i)?),
            },
            Expr::Index(base, i) => match &**base {
                Expr::Var(q) => single(self.read_atom(q, "", i)?),
                other => {
                    return Err(Unsupported::Construct(format!(
                        "list expression `{}`",
                        print_expr(other)
                    )))
                }
            },
            Expr::Ternary(c, a, b) => {
                let (ct, cf) = (self.formula(c, true)?, self.formula(c, false)?);
                let mut out = Vec::new();
                for (g, l) in self.cases(a)? {
                    out.push((Formula::and(vec![ct.clone(), g]), l));
                }
                for (g, l) in self.cases(b)? {
                    out.push((Formula::and(vec![cf.clone(), g]), l));
                }
                out
            }
            Expr::Abs(a) => {
                let mut out = Vec::new();
                for (g, l) in self.cases(a)? {
                    let nonneg = lit(Constraint {
                        lin: l.neg(),
                        rel: Rel::Le,
                    });
                    let neg = lit(Constraint {
                        lin: l.clone(),
                        rel: Rel::Lt,
                    });
                    out.push((Formula::and(vec![g.clone(), nonneg]), l.clone()));
                    out.push((Formula::and(vec![g, neg]), l.neg()));
                }
                out
            }
            Expr::Bin(op @ (BinOp::Add | BinOp::Sub), a, b) => {
                let k = if *op == BinOp::Add {
                    Q::one()
                } else {
                    -Q::one()
                };
                let (ca, cb) = (self.cases(a)?, self.cases(b)?);
                let mut out = Vec::new();
                for (ga, la) in &ca {
                    for (gb, lb) in &cb {
                        out.push((
                            Formula::and(vec![ga.clone(), gb.clone()]),
                            la.add_scaled(lb, &k),
                        ));
                    }
                }
                out
            }
            Expr::Bin(op, a, b) => {
                let (ca, cb) = (self.cases(a)?, self.cases(b)?);
                let mut out = Vec::new();
                for (ga, la) in &ca {
                    for (gb, lb) in &cb {
                        let g = Formula::and(vec![ga.clone(), gb.clone()]);
                        let lin = match op {
                            BinOp::Mul if la.is_constant() => Some(lb.scale(&la.constant)),
                            BinOp::Mul if lb.is_constant() => Some(la.scale(&lb.constant)),
                            BinOp::Div if lb.is_constant() && !lb.constant.is_zero() => {
                                Some(la.scale(&lb.constant.recip()))
                            }
                            _ => None,
                        };
                        let lin = match lin {
                            Some(l) => l,
                            None => {
                                let name =
                                    format!("({} {} {})", lin_key(la), op.symbol(), lin_key(lb));
                                self.info
                                    .nonlinear
                                    .insert(name.clone(), (*op, la.clone(), lb.clone()));
                                LinExpr::atom(name)
                            }
                        };
                        out.push((g, lin));
                    }
                }
                out
            }
            other => {
                return Err(Unsupported::Construct(format!(
                    "`{}` in numeric position",
                    print_expr(other)
                )))
            }
        })
    }
}

fn lin_key(l: &LinExpr) -> String {
    let mut parts: Vec<String> = l.coeffs.iter().map(|(a, c)| format!("{c}*{a}")).collect();
    if !l.constant.is_zero() || parts.is_empty() {
        parts.push(l.constant.to_string());
    }
    parts.join("+")
}

/// Result of one Fourier-Motzkin elimination step, kept for model
/// reconstruction.
enum Elim {
    Subst(String, LinExpr),
    Bounds(String, Vec<(LinExpr, bool)>, Vec<(LinExpr, bool)>),
}

/// Decide a conjunction of constraints; returns a model when satisfiable.
pub fn fm_solve(cons: &[Constraint]) -> Option<BTreeMap<String, Q>> {
    let mut set: BTreeSet<Constraint> = cons.iter().cloned().map(Constraint::normalized).collect();
    let mut steps: Vec<Elim> = Vec::new();
    loop {
        for c in &set {
            if c.lin.is_constant() && !c.holds(&BTreeMap::new()) {
                return None;
            }
        }
        set.retain(|c| !c.lin.is_constant());
        if set.is_empty() {
            break;
        }
        if let Some(eq) = set.iter().find(|c| c.rel == Rel::Eq).cloned() {
            set.remove(&eq);
            let (x, c) = eq
                .lin
                .coeffs
                .iter()
                .next()
                .map(|(a, c)| (a.clone(), c.clone()))
                .unwrap();
            let mut rest = eq.lin.clone();
            rest.coeffs.remove(&x);
            let solution = rest.scale(&(-c.recip()));
            set = set
                .into_iter()
                .map(|k| {
                    Constraint {
                        lin: k.lin.subst(&x, &solution),
                        rel: k.rel,
                    }
                    .normalized()
                })
                .collect();
            steps.push(Elim::Subst(x, solution));
            continue;
        }
        let mut vars: BTreeMap<&String, (usize, usize)> = BTreeMap::new();
        for c in &set {
            for (a, k) in &c.lin.coeffs {
                let e = vars.entry(a).or_insert((0, 0));
                if k.is_positive() {
                    e.1 += 1;
                } else {
                    e.0 += 1;
                }
            }
        }
        let x = vars
            .iter()
            .min_by_key(|(_, (l, u))| l * u)
            .map(|(a, _)| (*a).clone())
            .unwrap();
        let mut lowers = Vec::new();
        let mut uppers = Vec::new();
        let mut keep = BTreeSet::new();
        for c in set.into_iter() {
            match c.lin.coeffs.get(&x).cloned() {
                None => {
                    keep.insert(c);
                }
                Some(k) => {
                    let mut rest = c.lin.clone();
                    rest.coeffs.remove(&x);
                    let bound = rest.scale(&(-k.recip()));
                    let strict = c.rel == Rel::Lt;
                    if k.is_positive() {
                        uppers.push((bound, strict));
                    } else {
                        lowers.push((bound, strict));
                    }
                }
            }
        }
        for (lo, ls) in &lowers {
            for (hi, hs) in &uppers {
                let rel = if *ls || *hs { Rel::Lt } else { Rel::Le };
                keep.insert(
                    Constraint {
                        lin: lo.sub(hi),
                        rel,
                    }
                    .normalized(),
                );
            }
        }
        set = keep;
        steps.push(Elim::Bounds(x, lowers, uppers));
    }
    let mut model: BTreeMap<String, Q> = BTreeMap::new();
    for step in steps.iter().rev() {
        match step {
            Elim::Subst(x, e) => {
                let v = e.eval(&model);
                model.insert(x.clone(), v);
            }
            Elim::Bounds(x, lowers, uppers) => {
                let lo = lowers
                    .iter()
                    .map(|(e, s)| (e.eval(&model), *s))
                    .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
                let hi = uppers
                    .iter()
                    .map(|(e, s)| (e.eval(&model), *s))
                    .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
                let one = Q::one();
                let v = match (lo, hi) {
                    (None, None) => Q::zero(),
                    (Some((l, s)), None) => {
                        if s {
                            l + one
                        } else {
                            l
                        }
                    }
                    (None, Some((h, s))) => {
                        if s {
                            h - one
                        } else {
                            h
                        }
                    }
                    (Some((l, ls)), Some((h, hs))) => {
                        if l < h {
                            if !ls {
                                l
                            } else if !hs {
                                h
                            } else {
                                (l + h) / Q::from_integer(BigInt::from(2))
                            }
                        } else {
                            l
                        }
                    }
                };
                model.insert(x.clone(), v);
            }
        }
    }
    if cons.iter().all(|c| c.holds(&model)) {
        Some(model)
    } else {
        None
    }
}

/// Search for a model of `f` by splitting disjunctions, pruning with
/// Fourier-Motzkin at each split.
pub fn solve(f: &Formula) -> Option<(BTreeMap<String, Q>, BTreeMap<String, bool>)> {
    search(vec![f.clone()], Vec::new(), BTreeMap::new())
}

fn search(
    mut todo: Vec<Formula>,
    mut lits: Vec<Constraint>,
    mut bools: BTreeMap<String, bool>,
) -> Option<(BTreeMap<String, Q>, BTreeMap<String, bool>)> {
    let mut ors = Vec::new();
    while let Some(f) = todo.pop() {
        match f {
            Formula::True => {}
            Formula::False => return None,
            Formula::Lit(c) => lits.push(c),
            Formula::BoolAtom(x, b) => {
                if bools.insert(x, b) == Some(!b) {
                    return None;
                }
            }
            Formula::And(xs) => todo.extend(xs),
            Formula::Or(xs) => ors.push(xs),
        }
    }
    let model = fm_solve(&lits)?;
    if ors.is_empty() {
        return Some((model, bools));
    }
    ors.sort_by_key(|xs| xs.len());
    let first = ors.remove(0);
    let rest: Vec<Formula> = ors.into_iter().map(Formula::Or).collect();
    for alt in first {
        let mut next = rest.clone();
        next.push(alt);
        if let Some(m) = search(next, lits.clone(), bools.clone()) {
            return Some(m);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(pairs: &[(&str, i64)], k: i64, rel: Rel) -> Constraint {
        let mut lin = LinExpr::constant(Q::from_integer(BigInt::from(k)));
        for (a, v) in pairs {
            lin.coeffs
                .insert(a.to_string(), Q::from_integer(BigInt::from(*v)));
        }
        Constraint { lin, rel }
    }

    #[test]
    fn fm_detects_strict_infeasibility() {
        // x < y and y <= x
        let cons = [
            c(&[("x", 1), ("y", -1)], 0, Rel::Lt),
            c(&[("y", 1), ("x", -1)], 0, Rel::Le),
        ];
        assert!(fm_solve(&cons).is_none());
    }

    #[test]
    fn fm_builds_models() {
        // 0 < x < 1, y = x + 2
        let cons = [
            c(&[("x", -1)], 0, Rel::Lt),
            c(&[("x", 1)], -1, Rel::Lt),
            c(&[("y", 1), ("x", -1)], -2, Rel::Eq),
        ];
        let m = fm_solve(&cons).unwrap();
        assert!(cons.iter().all(|k| k.holds(&m)));
    }

    #[test]
    fn search_splits_disjunctions() {
        let f = Formula::And(vec![
            Formula::Or(vec![
                Formula::Lit(c(&[("x", 1)], -5, Rel::Eq)),
                Formula::Lit(c(&[("x", 1)], 0, Rel::Lt)),
            ]),
            Formula::Lit(c(&[("x", -1)], 1, Rel::Le)),
        ]);
        let (m, _) = solve(&f).unwrap();
        assert_eq!(m["x"], Q::from_integer(BigInt::from(5)));
    }
}
