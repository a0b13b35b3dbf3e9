//! Flow-sensitive distance type checker and instrumenter.
//!
//! [`check_program`] walks the source program with a typing environment
//! that maps each variable to its aligned and shadow distances. It
//! produces the instrumented program `c'`: the original commands plus
//! branch-alignment assertions, writes to distance variables wherever a
//! distance becomes dynamically tracked, and the shadow-execution
//! commands needed after control flow that the shadow run may not follow.

pub mod env;

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::*;
use crate::constraints::{Goal, Obligation, ObligationKind, Solver, Validity};
use crate::printer::{print_distance, print_expr};
use crate::simplify::{canon, collapse_under, light};

pub use env::{distance_leq, join_distance, join_type, type_leq, Env};

/// Whether the shadow execution may have left the original's control flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pc {
    Bottom,
    Top,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{span}: {rule}: {message}")]
pub struct TypeError {
    pub rule: &'static str,
    pub span: Span,
    pub message: String,
}

fn err<T>(rule: &'static str, span: Span, message: impl Into<String>) -> Result<T, TypeError> {
    Err(TypeError {
        rule,
        span,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
pub struct ObligationRecord {
    pub obligation: Obligation,
    pub result: Validity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObligationSummary {
    pub total: usize,
    pub valid: usize,
    /// Guard-equivalence checks that failed and raised the pc instead.
    pub pc_raised: usize,
    /// Failed obligations that were not absorbed (only in forced mode).
    pub open: usize,
}

impl std::fmt::Display for ObligationSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let noun = if self.total == 1 {
            "obligation"
        } else {
            "obligations"
        };
        write!(f, "{} {noun}: {} valid", self.total, self.valid)?;
        if self.pc_raised > 0 {
            write!(f, ", {} raised pc", self.pc_raised)?;
        }
        if self.open > 0 {
            write!(f, ", {} open", self.open)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    /// Record return-distance and comparison failures instead of rejecting
    /// the program. Used to push known-bad programs through to the verifier.
    pub force: bool,
}

/// Result of a successful check.
#[derive(Debug, Clone)]
pub struct Checked {
    /// The source signature with the instrumented body `c'`.
    pub program: Program,
    /// The checked source program.
    pub source: Program,
    pub obligations: Vec<ObligationRecord>,
    pub final_env: Env,
    /// The environment in force just before each sampling site draws.
    pub site_envs: BTreeMap<usize, Env>,
    /// True when no selector uses the shadow execution, so shadow distances
    /// are not tracked at all.
    pub shadow_free: bool,
    pub dist_inputs: BTreeSet<DistVarDecl>,
    /// Errors recorded instead of raised under [`CheckOptions::force`].
    pub waived: Vec<TypeError>,
    /// One entry per `while`, in the order their fixed points were reached.
    pub loops: Vec<LoopRecord>,
}

/// Environments around a typed loop. `invariant` is the join of `entry`
/// and `body_exit`, where `body_exit` results from typing the body once
/// more starting at `invariant`.
#[derive(Debug, Clone)]
pub struct LoopRecord {
    pub span: Span,
    pub entry: Env,
    pub invariant: Env,
    pub body_exit: Env,
}

impl Checked {
    pub fn summary(&self) -> ObligationSummary {
        let mut s = ObligationSummary {
            total: self.obligations.len(),
            ..Default::default()
        };
        for r in &self.obligations {
            match (&r.result, r.obligation.kind) {
                (Validity::Valid, _) => s.valid += 1,
                (_, ObligationKind::Pc) => s.pc_raised += 1,
                _ => s.open += 1,
            }
        }
        s
    }
}

/// True when `d` is the literal zero after linear normalization.
pub fn is_zero_expr(d: &Expr) -> bool {
    canon(d).is_zero()
}

fn norm_dist(owner: &str, v: Version, d: Distance) -> Distance {
    match d {
        Distance::Num(e) => {
            let e = canon(&e);
            match &e {
                Expr::Dist(dv) if dv.base == owner && dv.version == v && dv.index.is_none() => {
                    Distance::Star
                }
                _ => Distance::Num(e),
            }
        }
        other => other,
    }
}

fn mentions_var(e: &Expr, x: &str) -> bool {
    e.contains(&|n| matches!(n, Expr::Var(y) if y == x))
}

fn mentions_dist(e: &Expr, x: &str, v: Version) -> bool {
    e.contains(
        &|n| matches!(n, Expr::Dist(d) if d.base == x && d.version == v && d.index.is_none()),
    )
}

fn dist_write(x: &str, v: Version, e: Expr, span: Span) -> Cmd {
    Cmd::at(
        CmdKind::Assign(LValue::Dist(x.to_string(), v), light(&e)),
        span,
    )
}

/// Program variables whose values or distances an expression needs,
/// including the bases of distance variables.
fn uses(e: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    e.walk(&mut |n| match n {
        Expr::Var(x) => {
            out.insert(x.clone());
        }
        Expr::Dist(d) => {
            out.insert(d.base.clone());
        }
        _ => {}
    });
    out
}

fn selector_uses(s: &Selector, out: &mut BTreeSet<String>) {
    if let Selector::Cond(c, a, b) = s {
        out.extend(uses(c));
        selector_uses(a, out);
        selector_uses(b, out);
    }
}

fn live_before(c: &Cmd, after: &BTreeSet<String>) -> BTreeSet<String> {
    match &c.kind {
        CmdKind::Skip | CmdKind::Assert(_) => {
            let mut l = after.clone();
            if let CmdKind::Assert(e) = &c.kind {
                l.extend(uses(e));
            }
            l
        }
        CmdKind::Assign(lv, e) => {
            let mut l = after.clone();
            if let LValue::Var(x) = lv {
                l.remove(x);
            }
            l.extend(uses(e));
            l
        }
        CmdKind::Sample {
            var, scale, ann, ..
        } => {
            let mut l = after.clone();
            l.extend(uses(scale));
            if let Some(a) = ann {
                l.extend(uses(&a.dist));
                selector_uses(&a.select, &mut l);
            }
            l.remove(var);
            l
        }
        CmdKind::Havoc(x) => {
            let mut l = after.clone();
            l.remove(x);
            l
        }
        CmdKind::If(e, a, b) => {
            let mut l = live_block(a, after);
            l.extend(live_block(b, after));
            l.extend(uses(e));
            l
        }
        CmdKind::While(e, body) => {
            let mut l = after.clone();
            l.extend(uses(e));
            loop {
                let mut next = live_block(body, &l);
                next.extend(l.iter().cloned());
                if next == l {
                    return l;
                }
                l = next;
            }
        }
        CmdKind::Return(e) => uses(e),
    }
}

fn live_block(block: &[Cmd], after: &BTreeSet<String>) -> BTreeSet<String> {
    let mut l = after.clone();
    for c in block.iter().rev() {
        l = live_before(c, &l);
    }
    l
}

fn assigned_in(block: &[Cmd]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_cmds(block, &mut |c| match &c.kind {
        CmdKind::Assign(LValue::Var(x), _) | CmdKind::Sample { var: x, .. } | CmdKind::Havoc(x) => {
            out.insert(x.clone());
        }
        _ => {}
    });
    out
}

fn collapse_env(env: &Env, guard: &Expr, truth: bool) -> Env {
    let mut out = env.clone();
    out.map_distances(&mut |name, v, d| match d {
        Distance::Num(e) => norm_dist(name, v, Distance::Num(collapse_under(e, guard, truth))),
        other => other.clone(),
    });
    out
}

struct Ctx<'a> {
    solver: &'a Solver,
    pre: &'a [PreItem],
    ret: &'a Param,
    params: BTreeSet<String>,
    /// List parameters constrained by an adjacency macro, whose aligned and
    /// shadow element distances coincide.
    adjacent_lists: BTreeSet<String>,
    input_lists: BTreeSet<String>,
    shadow_free: bool,
    facts: Vec<Expr>,
    obligations: Vec<ObligationRecord>,
    force: bool,
    waived: Vec<TypeError>,
    site_envs: BTreeMap<usize, Env>,
    loops: Vec<LoopRecord>,
}

impl<'a> Ctx<'a> {
    fn discharge(&mut self, kind: ObligationKind, goal: Goal, span: Span) -> Validity {
        let ob = Obligation::new(kind, self.pre, &self.facts, goal, span);
        let result = self.solver.check_validity(&ob);
        self.obligations.push(ObligationRecord {
            obligation: ob,
            result: result.clone(),
        });
        result
    }

    fn soft_error(&mut self, e: TypeError) -> Result<(), TypeError> {
        if self.force {
            self.waived.push(e);
            Ok(())
        } else {
            Err(e)
        }
    }

    fn kill_facts(&mut self, x: &str) {
        self.facts.retain(|f| !mentions_var(f, x));
    }

    /// Distance component of a scalar variable with `*` desugared to the
    /// distance variable. `None` means the component is not tracked.
    fn comp(&self, env: &Env, x: &str, v: Version, span: Span) -> Result<Option<Expr>, TypeError> {
        let Some(t) = env.get(x) else {
            return err("T-Var", span, format!("undefined variable `{x}`"));
        };
        match &t.base {
            BaseType::Bool => Ok(Some(num(0))),
            BaseType::List(_) => err("T-Var", span, format!("list `{x}` used as a number")),
            BaseType::Real => Ok(match t.component(v) {
                Distance::Num(e) => Some(e.clone()),
                Distance::Star => Some(dist(x, v)),
                Distance::Any => None,
            }),
        }
    }

    fn elem_comp(
        &self,
        q: &str,
        elem: &DistType,
        v: Version,
        idx: &Expr,
        span: Span,
    ) -> Result<Distance, TypeError> {
        Ok(match elem.component(v) {
            Distance::Num(d) => Distance::Num(fill_hole(d, idx)),
            Distance::Star if self.input_lists.contains(q) => {
                Distance::Num(dist_at(q, v, idx.clone()))
            }
            Distance::Star => {
                return err(
                    "T-Index",
                    span,
                    format!("element distance of local list `{q}` is not tracked"),
                );
            }
            Distance::Any => Distance::Any,
        })
    }

    fn require_zero(
        &self,
        t: &DistType,
        rule: &'static str,
        what: &str,
        span: Span,
    ) -> Result<(), TypeError> {
        let zero = |d: &Distance| match d {
            Distance::Num(e) => is_zero_expr(e),
            Distance::Any => true,
            Distance::Star => false,
        };
        if t.base != BaseType::Real && t.base != BaseType::Bool {
            return err(rule, span, format!("{what} must be a number"));
        }
        if !zero(&t.aligned) || !zero(&t.shadow) {
            return err(
                rule,
                span,
                format!(
                    "{what} must have distance <0, 0>, found <{}, {}>",
                    print_distance(&t.aligned),
                    print_distance(&t.shadow)
                ),
            );
        }
        Ok(())
    }

    /// Expression typing. In `guard` position comparisons are not required
    /// to agree across executions; the caller inserts assertions instead.
    fn type_expr(
        &mut self,
        env: &Env,
        e: &Expr,
        guard: bool,
        span: Span,
    ) -> Result<DistType, TypeError> {
        let real = |a: Option<Expr>, s: Option<Expr>| {
            let d = |x: Option<Expr>| x.map(|e| Distance::Num(canon(&e))).unwrap_or(Distance::Any);
            DistType::real(d(a), d(s))
        };
        let opt = |d: &Distance| match d {
            Distance::Num(e) => Some(e.clone()),
            _ => None,
        };
        Ok(match e {
            Expr::Num(_) => DistType::real00(),
            Expr::Bool(_) => DistType::bool(),
            Expr::Var(x) => {
                let Some(t) = env.get(x) else {
                    return err("T-Var", span, format!("undefined variable `{x}`"));
                };
                match &t.base {
                    BaseType::Real => real(
                        self.comp(env, x, Version::Aligned, span)?,
                        self.comp(env, x, Version::Shadow, span)?,
                    ),
                    _ => t.clone(),
                }
            }
            Expr::Index(base, idx) => {
                let Expr::Var(q) = &**base else {
                    return err("T-Index", span, "only list variables can be indexed");
                };
                let it = self.type_expr(env, idx, guard, span)?;
                self.require_zero(&it, "T-Index", "list index", span)?;
                let Some(BaseType::List(elem)) = env.get(q).map(|t| t.base.clone()) else {
                    return err("T-Index", span, format!("`{q}` is not a list"));
                };
                let a = self.elem_comp(q, &elem, Version::Aligned, idx, span)?;
                let s = self.elem_comp(q, &elem, Version::Shadow, idx, span)?;
                match elem.base {
                    BaseType::Real => real(opt(&a), opt(&s)),
                    _ => (*elem).clone(),
                }
            }
            Expr::Bin(op, a, b) => {
                let (ta, tb) = (
                    self.type_expr(env, a, guard, span)?,
                    self.type_expr(env, b, guard, span)?,
                );
                if ta.base != BaseType::Real || tb.base != BaseType::Real {
                    return err(
                        "T-OPlus",
                        span,
                        format!("arithmetic on non-numeric operand in `{}`", print_expr(e)),
                    );
                }
                let pair = |t: &DistType| (opt(&t.aligned), opt(&t.shadow));
                let ((a1, s1), (a2, s2)) = (pair(&ta), pair(&tb));
                let comb =
                    |x: Option<Expr>, y: Option<Expr>, f: &dyn Fn(Expr, Expr) -> Expr| match (x, y)
                    {
                        (Some(x), Some(y)) => Some(f(x, y)),
                        _ => None,
                    };
                match op {
                    BinOp::Add => real(comb(a1, a2, &Expr::add), comb(s1, s2, &Expr::add)),
                    BinOp::Sub => real(comb(a1, a2, &Expr::sub), comb(s1, s2, &Expr::sub)),
                    _ => {
                        let zero_a = ta.aligned.is_zero()
                            || matches!(&ta.aligned, Distance::Num(x) if is_zero_expr(x));
                        let zero_b = tb.aligned.is_zero()
                            || matches!(&tb.aligned, Distance::Num(x) if is_zero_expr(x));
                        let szero = |t: &DistType| {
                            matches!(&t.shadow, Distance::Any)
                                || matches!(&t.shadow, Distance::Num(x) if is_zero_expr(x))
                        };
                        if zero_a && zero_b && szero(&ta) && szero(&tb) {
                            real(
                                Some(num(0)),
                                if ta.shadow == Distance::Any || tb.shadow == Distance::Any {
                                    None
                                } else {
                                    Some(num(0))
                                },
                            )
                        } else if let (BinOp::Mul, Some(k)) = (op, a.as_num()) {
                            real(
                                a2.map(|d| Expr::mul(Expr::Num(k), d)),
                                s2.map(|d| Expr::mul(Expr::Num(k), d)),
                            )
                        } else if let (BinOp::Mul | BinOp::Div, Some(k)) = (op, b.as_num()) {
                            let f = |d: Expr| Expr::bin(*op, d, Expr::Num(k));
                            real(a1.map(f), s1.map(f))
                        } else {
                            return err(
                                "T-OTimes",
                                span,
                                format!("non-linear operation on operands with nonzero distance in `{}`", print_expr(e)),
                            );
                        }
                    }
                }
            }
            Expr::Cmp(op, a, b) => {
                let (ta, tb) = (
                    self.type_expr(env, a, guard, span)?,
                    self.type_expr(env, b, guard, span)?,
                );
                if ta.base != BaseType::Real || tb.base != BaseType::Real {
                    return err(
                        "T-ODot",
                        span,
                        format!("comparison of non-numbers in `{}`", print_expr(e)),
                    );
                }
                if !guard {
                    let mut sides = vec![(Version::Aligned, &ta.aligned, &tb.aligned)];
                    if !self.shadow_free {
                        sides.push((Version::Shadow, &ta.shadow, &tb.shadow));
                    }
                    for (v, da, db) in sides {
                        let (Some(na), Some(nb)) = (opt(da), opt(db)) else {
                            continue;
                        };
                        let moved = Expr::cmp(
                            *op,
                            light(&Expr::add((**a).clone(), na)),
                            light(&Expr::add((**b).clone(), nb)),
                        );
                        let r =
                            self.discharge(ObligationKind::Odot, Goal::Iff(e.clone(), moved), span);
                        if !r.is_valid() {
                            let which = if v == Version::Aligned {
                                "aligned"
                            } else {
                                "shadow"
                            };
                            self.soft_error(TypeError {
                                rule: "T-ODot",
                                span,
                                message: format!(
                                    "`{}` may differ in the {which} execution ({})",
                                    print_expr(e),
                                    describe(&r)
                                ),
                            })?;
                        }
                    }
                }
                DistType::bool()
            }
            Expr::And(a, b) | Expr::Or(a, b) => {
                for x in [a, b] {
                    let t = self.type_expr(env, x, guard, span)?;
                    if t.base != BaseType::Bool {
                        return err(
                            "T-ODot",
                            span,
                            format!("`{}` is not boolean", print_expr(x)),
                        );
                    }
                }
                DistType::bool()
            }
            Expr::Not(a) => {
                if self.type_expr(env, a, guard, span)?.base != BaseType::Bool {
                    return err("T-Neg", span, format!("`{}` is not boolean", print_expr(a)));
                }
                DistType::bool()
            }
            Expr::Ternary(c, a, b) => {
                if self.type_expr(env, c, false, span)?.base != BaseType::Bool {
                    return err("T-Ternary", span, "condition is not boolean");
                }
                let (ta, tb) = (
                    self.type_expr(env, a, guard, span)?,
                    self.type_expr(env, b, guard, span)?,
                );
                if ta != tb {
                    return err(
                        "T-Ternary",
                        span,
                        format!("branches of `{}` have different distances", print_expr(e)),
                    );
                }
                ta
            }
            Expr::Cons(a, l) => {
                let ta = self.type_expr(env, a, guard, span)?;
                let tl = self.type_expr(env, l, guard, span)?;
                let BaseType::List(elem) = &tl.base else {
                    return err("T-Cons", span, format!("`{}` is not a list", print_expr(l)));
                };
                match join_type(&ta, elem) {
                    Some(j) => DistType::list(j),
                    None => return err("T-Cons", span, "element type does not match the list"),
                }
            }
            Expr::Dist(_) | Expr::Hole | Expr::Abs(_) => {
                return err(
                    "T-Var",
                    span,
                    format!("`{}` cannot appear in source programs", print_expr(e)),
                )
            }
        })
    }

    /// `<e, Γ>` for the given execution: every variable and list read is
    /// replaced by its value plus distance.
    fn version_expr(
        &self,
        env: &Env,
        e: &Expr,
        v: Version,
        star: &BTreeSet<String>,
        span: Span,
    ) -> Result<Expr, TypeError> {
        let out = self.version_rec(env, e, v, star, span)?;
        Ok(light(&out))
    }

    fn version_rec(
        &self,
        env: &Env,
        e: &Expr,
        v: Version,
        star: &BTreeSet<String>,
        span: Span,
    ) -> Result<Expr, TypeError> {
        let plus = |x: Expr, d: Option<Expr>, what: &str| match d {
            None => err(
                "T-Var",
                span,
                format!("{} distance of `{what}` is not tracked", version_name(v)),
            ),
            Some(d) if is_zero_expr(&d) => Ok(x),
            Some(d) => Ok(Expr::add(x, d)),
        };
        match e {
            Expr::Var(x) => match env.get(x).map(|t| &t.base) {
                Some(BaseType::Real) | None if star.contains(x) => {
                    plus(e.clone(), Some(dist(x, v)), x)
                }
                Some(BaseType::Real) => plus(e.clone(), self.comp(env, x, v, span)?, x),
                Some(_) => Ok(e.clone()),
                None => err("T-Var", span, format!("undefined variable `{x}`")),
            },
            Expr::Index(base, idx) => {
                let Expr::Var(q) = &**base else {
                    return err("T-Index", span, "only list variables can be indexed");
                };
                let Some(BaseType::List(elem)) = env.get(q).map(|t| t.base.clone()) else {
                    return err("T-Index", span, format!("`{q}` is not a list"));
                };
                let d = match self.elem_comp(q, &elem, v, idx, span)? {
                    Distance::Num(d) => Some(d),
                    _ => None,
                };
                if elem.base == BaseType::Real {
                    plus(e.clone(), d, q)
                } else {
                    Ok(e.clone())
                }
            }
            _ => {
                let mut failure = None;
                let out = e.map_children(&mut |c| match self.version_rec(env, c, v, star, span) {
                    Ok(x) => x,
                    Err(er) => {
                        failure.get_or_insert(er);
                        c.clone()
                    }
                });
                match failure {
                    Some(er) => Err(er),
                    None => Ok(out),
                }
            }
        }
    }

    /// Write `value` into the distance variable of `x`, first promoting
    /// every other component that still refers to the old contents.
    fn write_dist(
        &self,
        env: &mut Env,
        x: &str,
        v: Version,
        value: Expr,
        span: Span,
        out: &mut Vec<Cmd>,
    ) {
        self.promote(env, Some((x, v)), &|e| mentions_dist(e, x, v), span, out);
        out.push(dist_write(x, v, value, span));
    }

    /// Promote to `*` every scalar component (other than `skip`) whose
    /// distance satisfies `pred`, writing its current value first.
    fn promote(
        &self,
        env: &mut Env,
        skip: Option<(&str, Version)>,
        pred: &dyn Fn(&Expr) -> bool,
        span: Span,
        out: &mut Vec<Cmd>,
    ) {
        let mut hits = Vec::new();
        for (name, t) in env.iter() {
            for v in [Version::Aligned, Version::Shadow] {
                if skip == Some((name.as_str(), v)) {
                    continue;
                }
                match (&t.base, t.component(v)) {
                    (BaseType::Real, Distance::Num(d)) if pred(d) => {
                        hits.push((name.clone(), v, Some(d.clone())))
                    }
                    (BaseType::List(elem), _) => {
                        if let Distance::Num(d) = elem.component(v) {
                            if pred(d) {
                                hits.push((name.clone(), v, None));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        for (name, v, value) in hits {
            match value {
                Some(d) => {
                    if !matches!(
                        env.get(&name).map(|t| t.component(v)),
                        Some(Distance::Num(_))
                    ) {
                        continue;
                    }
                    *env.get_mut(&name).unwrap().component_mut(v) = Distance::Star;
                    self.write_dist(env, &name, v, d, span, out);
                }
                None => {
                    if let Some(BaseType::List(elem)) = env.get_mut(&name).map(|t| &mut t.base) {
                        *elem.component_mut(v) = Distance::Star;
                    }
                }
            }
        }
    }

    /// Writes realizing the transition from `from` to `to` (`from ⊑ to`)
    /// for every component that becomes `*`.
    fn instrument(&self, from: &Env, to: &Env, span: Span) -> Vec<Cmd> {
        let mut pending: Vec<(String, Version, Expr)> = Vec::new();
        for v in [Version::Aligned, Version::Shadow] {
            for (name, t) in to.iter() {
                if t.base != BaseType::Real || *t.component(v) != Distance::Star {
                    continue;
                }
                if let Some(Distance::Num(n)) = from.get(name).map(|f| f.component(v)) {
                    pending.push((name.clone(), v, n.clone()));
                }
            }
        }
        let mut out = Vec::new();
        while !pending.is_empty() {
            let pick = (0..pending.len())
                .find(|&k| {
                    let (x, v, _) = &pending[k];
                    pending
                        .iter()
                        .enumerate()
                        .all(|(j, (_, _, e))| j == k || !mentions_dist(e, x, *v))
                })
                .unwrap_or(0);
            let (x, v, e) = pending.remove(pick);
            out.push(dist_write(&x, v, e, span));
        }
        out
    }

    /// Join two branch environments, then promote any component that
    /// refers to a distance variable written on one of the incoming edges.
    fn join_envs(&self, a: &Env, b: &Env, span: Span) -> Result<Env, TypeError> {
        let mut j = match a.join(b) {
            Ok(j) => j,
            Err(x) => {
                return err(
                    "T-If",
                    span,
                    format!("`{x}` has different types on the two paths"),
                )
            }
        };
        loop {
            let written: Vec<(String, Version)> = j
                .iter()
                .flat_map(|(name, t)| {
                    [Version::Aligned, Version::Shadow]
                        .into_iter()
                        .filter_map(move |v| {
                            let star =
                                *t.component(v) == Distance::Star && t.base == BaseType::Real;
                            let moved = |e: &Env| {
                                e.get(name)
                                    .is_some_and(|u| *u.component(v) != Distance::Star)
                            };
                            (star && (moved(a) || moved(b))).then(|| (name.clone(), v))
                        })
                })
                .collect();
            let mut changed = false;
            j.map_distances(&mut |_, _, d| match d {
                Distance::Num(e) if written.iter().any(|(x, v)| mentions_dist(e, x, *v)) => {
                    changed = true;
                    Distance::Star
                }
                other => other.clone(),
            });
            if !changed {
                return Ok(j);
            }
        }
    }

    /// Drop variables that are dead in the original execution. Under a
    /// divergent pc the shadow run may still read them, so nothing is
    /// dropped there.
    fn prune(&self, pc: Pc, env: &Env, live: &BTreeSet<String>) -> Env {
        if pc == Pc::Top {
            return env.clone();
        }
        let mut keep = live.clone();
        keep.extend(self.params.iter().cloned());
        keep.insert(self.ret.name.clone());
        let mut out = env.clone();
        out.retain(&keep);
        out
    }

    fn upd_pc(&mut self, pc: Pc, env: &Env, guard: &Expr, span: Span) -> Pc {
        if pc == Pc::Top {
            return Pc::Top;
        }
        if self.shadow_free {
            return Pc::Bottom;
        }
        let Ok(shadow) = self.version_expr(env, guard, Version::Shadow, &BTreeSet::new(), span)
        else {
            return Pc::Top;
        };
        match self.discharge(ObligationKind::Pc, Goal::Iff(guard.clone(), shadow), span) {
            Validity::Valid => Pc::Bottom,
            _ => Pc::Top,
        }
    }

    fn block(
        &mut self,
        pc: Pc,
        env: &mut Env,
        block: &[Cmd],
        live_out: &BTreeSet<String>,
    ) -> Result<Vec<Cmd>, TypeError> {
        let mut lives = vec![live_out.clone()];
        for c in block.iter().rev() {
            let next = live_before(c, lives.last().unwrap());
            lives.push(next);
        }
        lives.reverse();
        let mut out = Vec::new();
        for (k, c) in block.iter().enumerate() {
            out.extend(self.cmd(pc, env, c, &lives[k + 1])?);
            *env = self.prune(pc, env, &lives[k + 1]);
        }
        Ok(out)
    }

    fn cmd(
        &mut self,
        pc: Pc,
        env: &mut Env,
        c: &Cmd,
        live_after: &BTreeSet<String>,
    ) -> Result<Vec<Cmd>, TypeError> {
        let span = c.span;
        match &c.kind {
            CmdKind::Skip => Ok(vec![c.clone()]),
            CmdKind::Assign(LValue::Var(x), e) => self.assign(pc, env, x, e, span),
            CmdKind::Sample {
                var,
                scale,
                site,
                ann,
            } => self.sample(pc, env, var, scale, *site, ann.as_ref(), span),
            CmdKind::If(guard, then, els) => {
                self.branch(pc, env, guard, then, els, live_after, span)
            }
            CmdKind::While(guard, body) => self.looping(pc, env, guard, body, live_after, span),
            CmdKind::Return(e) => {
                self.check_return(env, e, span)?;
                Ok(vec![c.clone()])
            }
            CmdKind::Assign(LValue::Dist(..), _) | CmdKind::Havoc(_) | CmdKind::Assert(_) => err(
                "T-Asgn",
                span,
                "target-language command in a source program",
            ),
        }
    }

    fn assign(
        &mut self,
        pc: Pc,
        env: &mut Env,
        x: &str,
        e: &Expr,
        span: Span,
    ) -> Result<Vec<Cmd>, TypeError> {
        let ty = self.type_expr(env, e, false, span)?;
        let mut out = Vec::new();
        self.promote(env, None, &|d| mentions_var(d, x), span, &mut out);
        self.kill_facts(x);
        let diverged = pc == Pc::Top && !self.shadow_free;
        match &ty.base {
            BaseType::Real => {
                let (mut a, mut s) = (ty.aligned.clone(), ty.shadow.clone());
                // A new distance computed in the pre-state that mentions x
                // itself must be stored before x changes.
                if matches!(&a, Distance::Num(d) if mentions_var(d, x) || (diverged && mentions_dist(d, x, Version::Shadow)))
                {
                    if let Distance::Num(d) = &a {
                        let d = d.clone();
                        self.write_dist(env, x, Version::Aligned, d, span, &mut out);
                    }
                    a = Distance::Star;
                }
                if diverged {
                    if env.get(x).is_some() {
                        let old = self
                            .comp(env, x, Version::Shadow, span)?
                            .unwrap_or_else(|| num(0));
                        let keep = Expr::sub(Expr::add(var(x), old), e.clone());
                        self.promote(
                            env,
                            Some((x, Version::Aligned)),
                            &|d| mentions_dist(d, x, Version::Shadow),
                            span,
                            &mut out,
                        );
                        out.push(dist_write(x, Version::Shadow, keep, span));
                    } else {
                        out.push(dist_write(x, Version::Shadow, num(0), span));
                    }
                    s = Distance::Star;
                } else if matches!(&s, Distance::Num(d) if mentions_var(d, x)) {
                    if let Distance::Num(d) = &s {
                        let d = d.clone();
                        self.write_dist(env, x, Version::Shadow, d, span, &mut out);
                    }
                    s = Distance::Star;
                }
                let t = DistType::real(
                    norm_dist(x, Version::Aligned, a),
                    norm_dist(x, Version::Shadow, s),
                );
                env.insert(x, t);
            }
            BaseType::Bool => {
                if diverged {
                    return err(
                        "T-Asgn",
                        span,
                        format!("boolean `{x}` assigned where the shadow execution may diverge"),
                    );
                }
                env.insert(x, DistType::bool());
            }
            BaseType::List(elem) => {
                let mut elem = (**elem).clone();
                if diverged {
                    elem.shadow = Distance::Any;
                }
                env.insert(x, DistType::list(elem));
            }
        }
        out.push(Cmd::at(
            CmdKind::Assign(LValue::Var(x.to_string()), e.clone()),
            span,
        ));
        Ok(out)
    }

    /// Replace `^v` / `~v` in an annotation by the statically known distance
    /// of `v` when there is one.
    fn resolve_annotation(&self, env: &Env, e: &Expr) -> Expr {
        match e {
            Expr::Dist(d) if d.index.is_none() => {
                match env.get(&d.base).map(|t| (&t.base, t.component(d.version))) {
                    Some((BaseType::Real, Distance::Num(n))) => n.clone(),
                    _ => e.clone(),
                }
            }
            _ => e.map_children(&mut |c| self.resolve_annotation(env, c)),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn sample(
        &mut self,
        pc: Pc,
        env: &mut Env,
        eta: &str,
        scale: &Expr,
        site: usize,
        ann: Option<&Annotation>,
        span: Span,
    ) -> Result<Vec<Cmd>, TypeError> {
        if pc == Pc::Top && !self.shadow_free {
            return err(
                "T-Laplace",
                span,
                format!("`{eta}` is sampled where the shadow execution may diverge"),
            );
        }
        let st = self.type_expr(env, scale, false, span)?;
        self.require_zero(&st, "T-Laplace", "the scale", span)?;
        let Some(ann) = ann else {
            return err(
                "T-Laplace",
                span,
                format!("sampling site {site} (`{eta}`) has no annotation"),
            );
        };
        let n = canon(&self.resolve_annotation(env, &ann.dist));
        if mentions_dist(&n, eta, Version::Aligned) || mentions_dist(&n, eta, Version::Shadow) {
            return err(
                "T-Laplace",
                span,
                format!("the alignment of `{eta}` refers to its own distance"),
            );
        }
        let mut out = Vec::new();
        self.promote(env, None, &|d| mentions_var(d, eta), span, &mut out);
        self.kill_facts(eta);
        self.site_envs.insert(site, env.clone());

        let (e1, e2) = (var(&format!("{eta}#1")), var(&format!("{eta}#2")));
        let shifted = |x: &Expr| Expr::add(x.clone(), substitute(&n, eta, x));
        let goal = Goal::Implies(
            Expr::cmp(CmpOp::Eq, shifted(&e1), shifted(&e2)),
            Expr::cmp(CmpOp::Eq, e1, e2),
        );
        let r = self.discharge(ObligationKind::Injectivity, goal, span);
        if !r.is_valid() {
            return err(
                "T-Laplace",
                span,
                format!(
                    "alignment `{}` of `{eta}` is not injective ({})",
                    print_expr(&n),
                    describe(&r)
                ),
            );
        }

        if ann.select.uses_shadow() {
            let names = env.names();
            for name in names {
                if name == eta {
                    continue;
                }
                let t = env.get(&name).unwrap().clone();
                let new_t = match &t.base {
                    BaseType::Real => {
                        let a = self.comp(env, &name, Version::Aligned, span)?;
                        let s = self.comp(env, &name, Version::Shadow, span)?;
                        let (Some(a), Some(s)) = (a, s) else {
                            return err(
                                "T-Laplace",
                                span,
                                format!("shadow distance of `{name}` is not tracked"),
                            );
                        };
                        let picked = ann.select.select(&a, &s);
                        DistType::real(
                            norm_dist(&name, Version::Aligned, Distance::Num(picked)),
                            t.shadow.clone(),
                        )
                    }
                    BaseType::List(elem) if self.adjacent_lists.contains(&name) => {
                        DistType::list((**elem).clone())
                    }
                    BaseType::List(elem) => {
                        let mut elem = (**elem).clone();
                        let as_expr = |d: &Distance, v: Version| match d {
                            Distance::Num(e) => Some(e.clone()),
                            Distance::Star if self.input_lists.contains(&name) => {
                                Some(dist_at(&name, v, Expr::Hole))
                            }
                            _ => None,
                        };
                        elem.aligned = match (
                            as_expr(&elem.aligned, Version::Aligned),
                            as_expr(&elem.shadow, Version::Shadow),
                        ) {
                            (Some(a), Some(s)) => Distance::Num(ann.select.select(&a, &s)),
                            _ => Distance::Star,
                        };
                        DistType::list(elem)
                    }
                    BaseType::Bool => t.clone(),
                };
                env.insert(&name, new_t);
            }
        }
        let shadow = if self.shadow_free {
            Distance::Any
        } else {
            Distance::zero()
        };
        env.insert(
            eta,
            DistType::real(
                norm_dist(eta, Version::Aligned, Distance::Num(n.clone())),
                shadow,
            ),
        );
        let ann = Annotation {
            select: ann.select.clone(),
            dist: n,
        };
        out.push(Cmd::at(
            CmdKind::Sample {
                var: eta.to_string(),
                scale: scale.clone(),
                site,
                ann: Some(ann),
            },
            span,
        ));
        Ok(out)
    }

    fn guard_type(
        &mut self,
        env: &Env,
        guard: &Expr,
        rule: &'static str,
        span: Span,
    ) -> Result<(), TypeError> {
        if self.type_expr(env, guard, true, span)?.base != BaseType::Bool {
            return err(
                rule,
                span,
                format!("guard `{}` is not boolean", print_expr(guard)),
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn branch(
        &mut self,
        pc: Pc,
        env: &mut Env,
        guard: &Expr,
        then: &[Cmd],
        els: &[Cmd],
        live_after: &BTreeSet<String>,
        span: Span,
    ) -> Result<Vec<Cmd>, TypeError> {
        self.guard_type(env, guard, "T-If", span)?;
        let pc2 = self.upd_pc(pc, env, guard, span);
        let mut outs = Vec::new();
        let mut envs = Vec::new();
        for (truth, body) in [(true, then), (false, els)] {
            let mut benv = collapse_env(env, guard, truth);
            let aligned =
                self.version_expr(&benv, guard, Version::Aligned, &BTreeSet::new(), span)?;
            let assertion = if truth { aligned } else { Expr::not(aligned) };
            let saved = self.facts.clone();
            self.facts.push(if truth {
                guard.clone()
            } else {
                Expr::not(guard.clone())
            });
            let mut cmds = vec![Cmd::at(CmdKind::Assert(assertion), span)];
            cmds.extend(self.block(pc2, &mut benv, body, live_after)?);
            self.facts = saved;
            outs.push(cmds);
            envs.push(benv);
        }
        let assigned = assigned_in(then)
            .union(&assigned_in(els))
            .cloned()
            .collect::<BTreeSet<_>>();
        for x in &assigned {
            self.kill_facts(x);
        }
        let full = self.join_envs(&envs[0], &envs[1], span)?;
        let (p1, p2) = (
            self.prune(pc, &envs[0], live_after),
            self.prune(pc, &envs[1], live_after),
        );
        let joined = self.join_envs(&p1, &p2, span)?;
        outs[0].extend(self.instrument(&p1, &joined, span));
        outs[1].extend(self.instrument(&p2, &joined, span));
        let mut result = Vec::new();
        let [t, f]: [Vec<Cmd>; 2] = outs.try_into().unwrap();
        result.push(Cmd::at(CmdKind::If(guard.clone(), t, f), span));
        if pc == Pc::Bottom && pc2 == Pc::Top {
            let shadow_env = overlay(&joined, &full);
            let original = Cmd::at(
                CmdKind::If(guard.clone(), then.to_vec(), els.to_vec()),
                span,
            );
            result.extend(self.shadow_cmd(&shadow_env, &original, &assigned)?);
        }
        *env = joined;
        Ok(result)
    }

    fn looping(
        &mut self,
        pc: Pc,
        env: &mut Env,
        guard: &Expr,
        body: &[Cmd],
        live_after: &BTreeSet<String>,
        span: Span,
    ) -> Result<Vec<Cmd>, TypeError> {
        let loop_cmd = Cmd::at(CmdKind::While(guard.clone(), body.to_vec()), span);
        let live_head = live_before(&loop_cmd, live_after);
        let assigned = assigned_in(body);
        for x in &assigned {
            self.kill_facts(x);
        }
        let g0 = self.prune(pc, env, &live_head);
        let mut cur = g0.clone();
        let limit = 2 * (g0.len() + assigned.len()) + 4;
        for _ in 0..limit {
            let mark = self.obligations.len();
            let loop_mark = self.loops.len();
            self.guard_type(&cur, guard, "T-While", span)?;
            let pc2 = self.upd_pc(pc, &cur, guard, span);
            let mut benv = collapse_env(&cur, guard, true);
            let aligned =
                self.version_expr(&benv, guard, Version::Aligned, &BTreeSet::new(), span)?;
            let saved = self.facts.clone();
            self.facts.push(guard.clone());
            let inner = self.block(pc2, &mut benv, body, &live_head);
            self.facts = saved;
            let inner = inner?;
            let gf = self.prune(pc, &benv, &live_head);
            let next = self.join_envs(&g0, &gf, span)?;
            if next != cur {
                cur = next;
                self.obligations.truncate(mark);
                self.loops.truncate(loop_mark);
                continue;
            }
            self.loops.push(LoopRecord {
                span,
                entry: g0.clone(),
                invariant: cur.clone(),
                body_exit: gf.clone(),
            });
            let mut out = self.instrument(&g0, &cur, span);
            let mut new_body = vec![Cmd::at(CmdKind::Assert(aligned), span)];
            new_body.extend(inner);
            new_body.extend(self.instrument(&gf, &cur, span));
            out.push(Cmd::at(CmdKind::While(guard.clone(), new_body), span));
            if pc == Pc::Bottom && pc2 == Pc::Top {
                out.extend(self.shadow_cmd(&cur, &loop_cmd, &assigned)?);
            }
            *env = collapse_env(&cur, guard, false);
            return Ok(out);
        }
        err("T-While", span, "loop typing did not reach a fixed point")
    }

    /// Shadow execution of a command: assignments become writes to the
    /// shadow distance so that `x + ~x` holds the shadow value.
    fn shadow_cmd(
        &self,
        env: &Env,
        c: &Cmd,
        star: &BTreeSet<String>,
    ) -> Result<Vec<Cmd>, TypeError> {
        let span = c.span;
        let sh = |e: &Expr| self.version_expr(env, e, Version::Shadow, star, span);
        Ok(match &c.kind {
            CmdKind::Skip => vec![],
            CmdKind::Assign(LValue::Var(x), e) => match env.get(x).map(|t| &t.base) {
                Some(BaseType::List(_)) => vec![],
                Some(BaseType::Bool) => {
                    return err(
                        "T-If",
                        span,
                        format!("shadow execution cannot track boolean `{x}`"),
                    );
                }
                _ => vec![dist_write(
                    x,
                    Version::Shadow,
                    Expr::sub(sh(e)?, var(x)),
                    span,
                )],
            },
            CmdKind::If(g, a, b) => {
                let mut ta = Vec::new();
                for x in a {
                    ta.extend(self.shadow_cmd(env, x, star)?);
                }
                let mut tb = Vec::new();
                for x in b {
                    tb.extend(self.shadow_cmd(env, x, star)?);
                }
                vec![Cmd::at(CmdKind::If(sh(g)?, ta, tb), span)]
            }
            CmdKind::While(g, body) => {
                let mut tb = Vec::new();
                for x in body {
                    tb.extend(self.shadow_cmd(env, x, star)?);
                }
                vec![Cmd::at(CmdKind::While(sh(g)?, tb), span)]
            }
            CmdKind::Sample { var, .. } => {
                return err(
                    "T-Laplace",
                    span,
                    format!("shadow execution cannot cross the sampling of `{var}`"),
                );
            }
            _ => return err("T-If", span, "unexpected command in shadow execution"),
        })
    }

    fn check_return(&mut self, env: &Env, e: &Expr, span: Span) -> Result<(), TypeError> {
        let t = self.type_expr(env, e, false, span)?;
        let declared = self.ret.ty.clone();
        let (got, want) = match (&t.base, &declared.base) {
            (BaseType::List(g), BaseType::List(w)) => ((**g).clone(), (**w).clone()),
            (BaseType::List(_), _) | (_, BaseType::List(_)) => {
                return err(
                    "T-Return",
                    span,
                    "returned value does not match the declared type",
                );
            }
            _ => (t.clone(), declared.clone()),
        };
        if got.base == BaseType::Bool {
            return Ok(());
        }
        let what = if t.is_list() {
            format!("elements of `{}`", print_expr(e))
        } else {
            format!("`{}`", print_expr(e))
        };
        let ok_aligned = match &got.aligned {
            Distance::Num(d) if is_zero_expr(d) => true,
            Distance::Num(d) if !d.contains(&|n| matches!(n, Expr::Hole)) => {
                let goal = Goal::Holds(Expr::cmp(CmpOp::Eq, d.clone(), num(0)));
                self.discharge(ObligationKind::Return, goal, span)
                    .is_valid()
            }
            _ => false,
        };
        if !ok_aligned {
            self.soft_error(TypeError {
                rule: "T-Return",
                span,
                message: format!(
                    "{what} must have aligned distance 0, found {}",
                    print_distance(&got.aligned)
                ),
            })?;
        }
        let ok_shadow = match (&want.shadow, &got.shadow) {
            (Distance::Any | Distance::Star, _) => true,
            (Distance::Num(w), Distance::Num(g)) => canon(w) == canon(g),
            _ => false,
        };
        if !ok_shadow && !self.shadow_free {
            self.soft_error(TypeError {
                rule: "T-Return",
                span,
                message: format!(
                    "{what} has shadow distance {}, declared {}",
                    print_distance(&got.shadow),
                    print_distance(&want.shadow)
                ),
            })?;
        }
        Ok(())
    }
}

fn version_name(v: Version) -> &'static str {
    match v {
        Version::Aligned => "aligned",
        Version::Shadow => "shadow",
    }
}

fn describe(v: &Validity) -> String {
    match v {
        Validity::Valid => "valid".into(),
        Validity::Invalid(w) => format!("counterexample: {w}"),
        Validity::Unknown(why) => format!("unknown: {why}"),
    }
}

/// `primary` with missing variables filled in from `fallback`.
fn overlay(primary: &Env, fallback: &Env) -> Env {
    let mut out = fallback.clone();
    for (k, t) in primary.iter() {
        out.insert(k, t.clone());
    }
    out
}

fn set_shadow_any(t: &mut DistType) {
    if let BaseType::List(elem) = &mut t.base {
        set_shadow_any(elem);
    }
    if t.base == BaseType::Real {
        t.shadow = Distance::Any;
    }
}

fn signature_balanced(t: &DistType) -> bool {
    let here = t.base == BaseType::Real && t.aligned != t.shadow;
    let inner = match &t.base {
        BaseType::List(e) => signature_balanced(e),
        _ => true,
    };
    !here && inner
}

/// True when no annotation selects the shadow execution.
pub fn is_shadow_free(p: &Program) -> bool {
    p.samples().iter().all(|c| match &c.kind {
        CmdKind::Sample { ann: Some(a), .. } => !a.select.uses_shadow(),
        _ => true,
    })
}

/// Initial environment from the signature.
pub fn initial_env(p: &Program, shadow_free: bool) -> Env {
    let mut env = Env::new();
    for param in &p.params {
        let mut t = param.ty.clone();
        if shadow_free {
            set_shadow_any(&mut t);
        }
        env.insert(&param.name, t);
    }
    if p.ret.ty.is_list() {
        let mut t = p.ret.ty.clone();
        if shadow_free {
            set_shadow_any(&mut t);
        }
        env.insert(&p.ret.name, t);
    }
    env
}

pub fn check_program(p: &Program, solver: &Solver) -> Result<Checked, TypeError> {
    check_program_with(p, solver, &CheckOptions::default())
}

pub fn check_program_with(
    p: &Program,
    solver: &Solver,
    opts: &CheckOptions,
) -> Result<Checked, TypeError> {
    let (p, dist_inputs) = match desugar_star_params(p) {
        Ok(x) => x,
        Err(e) => return err("Signature", Span::default(), e.to_string()),
    };
    for param in &p.params {
        if !signature_balanced(&param.ty) {
            return err(
                "Signature",
                Span::default(),
                format!(
                    "parameter `{}` must have equal aligned and shadow distances",
                    param.name
                ),
            );
        }
    }
    match p.body.last().map(|c| &c.kind) {
        Some(CmdKind::Return(_)) => {}
        _ => {
            return err(
                "T-Return",
                Span::default(),
                "the program must end with a return",
            )
        }
    }
    let shadow_free = is_shadow_free(&p);
    let mut ctx = Ctx {
        solver,
        pre: &p.pre,
        ret: &p.ret,
        params: p.params.iter().map(|x| x.name.clone()).collect(),
        adjacent_lists: p.macro_lists(),
        input_lists: p
            .params
            .iter()
            .filter(|x| x.ty.is_list())
            .map(|x| x.name.clone())
            .collect(),
        shadow_free,
        facts: Vec::new(),
        obligations: Vec::new(),
        force: opts.force,
        waived: Vec::new(),
        site_envs: BTreeMap::new(),
        loops: Vec::new(),
    };
    let mut env = initial_env(&p, shadow_free);
    let body = ctx.block(Pc::Bottom, &mut env, &p.body, &BTreeSet::new())?;
    let program = Program { body, ..p.clone() };
    Ok(Checked {
        program,
        source: p.clone(),
        obligations: ctx.obligations,
        final_env: env,
        site_envs: ctx.site_envs,
        shadow_free,
        dist_inputs,
        waived: ctx.waived,
        loops: ctx.loops,
    })
}

#[cfg(test)]
mod tests;
