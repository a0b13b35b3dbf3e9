//! Validity checking for the obligations produced by the type checker.
//!
//! An obligation is `Ψ ⇒ φ` where Ψ is the instantiated precondition plus
//! any branch facts. Checking goes through a syntactic fast path, a result
//! cache, and then either an external SMT-LIB2 solver (when configured) or
//! the built-in linear arithmetic procedure in [`lra`].

pub mod lra;
mod smtlib;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use num_traits::{Signed, Zero};
use sha2::{Digest, Sha256};

use crate::ast::*;
use crate::printer::print_expr;
use crate::simplify::light;
use lra::{q_from, Atomizer, Formula, Q};

pub use smtlib::{emit_smtlib, EmitError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObligationKind {
    /// A comparison must agree across the original, aligned and shadow runs.
    Odot,
    /// A branch guard must agree with its shadow counterpart.
    Pc,
    /// The alignment of a sampling site must be injective.
    Injectivity,
    /// A returned value's distance must match the declared one.
    Return,
    /// Side condition of a cost rewrite rule.
    Rewrite,
}

impl fmt::Display for ObligationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObligationKind::Odot => "odot",
            ObligationKind::Pc => "pc",
            ObligationKind::Injectivity => "injectivity",
            ObligationKind::Return => "return",
            ObligationKind::Rewrite => "rewrite",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Goal {
    Holds(Expr),
    Iff(Expr, Expr),
    Implies(Expr, Expr),
}

impl Goal {
    pub fn to_expr(&self) -> Expr {
        match self {
            Goal::Holds(e) => e.clone(),
            Goal::Iff(a, b) => Expr::or(
                Expr::and(a.clone(), b.clone()),
                Expr::and(Expr::not(a.clone()), Expr::not(b.clone())),
            ),
            Goal::Implies(a, b) => Expr::or(Expr::not(a.clone()), b.clone()),
        }
    }

    fn exprs(&self) -> Vec<&Expr> {
        match self {
            Goal::Holds(e) => vec![e],
            Goal::Iff(a, b) | Goal::Implies(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::Holds(e) => write!(f, "{e}"),
            Goal::Iff(a, b) => write!(f, "({a}) <=> ({b})"),
            Goal::Implies(a, b) => write!(f, "({a}) => ({b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Obligation {
    pub kind: ObligationKind,
    /// Instantiated precondition and path facts, as a list of conjuncts.
    pub hyps: Vec<Expr>,
    pub goal: Goal,
    pub span: Span,
}

impl Obligation {
    /// Build an obligation, instantiating the precondition at every index
    /// term that occurs in the goal or in `facts`.
    pub fn new(
        kind: ObligationKind,
        pre: &[PreItem],
        facts: &[Expr],
        goal: Goal,
        span: Span,
    ) -> Obligation {
        let mut terms = BTreeSet::new();
        for e in goal.exprs().into_iter().chain(facts) {
            collect_index_terms(e, &mut terms);
        }
        let mut hyps = instantiate_precondition(pre, &terms);
        for f in facts {
            if !hyps.contains(f) {
                hyps.push(f.clone());
            }
        }
        Obligation {
            kind,
            hyps,
            goal,
            span,
        }
    }

    pub fn hypothesis(&self) -> Expr {
        conjoin(&self.hyps)
    }

    /// Stable label used for exported file names: kind and source position.
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.kind, self.span.line, self.span.col)
    }

    fn key(&self) -> String {
        let text = format!(
            "{:?}|{}",
            self.hyps.iter().map(print_expr).collect::<Vec<_>>(),
            self.goal
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

impl fmt::Display for Obligation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{} at {}] {} => {}",
            self.kind,
            self.span,
            self.hypothesis(),
            self.goal
        )
    }
}

pub fn conjoin(items: &[Expr]) -> Expr {
    let mut it = items.iter().cloned();
    match it.next() {
        None => Expr::Bool(true),
        Some(first) => it.fold(first, Expr::and),
    }
}

fn index_term_of(e: &Expr) -> Option<&Expr> {
    match e {
        Expr::Index(_, i) => Some(i),
        Expr::Dist(DistVar { index: Some(i), .. }) => Some(i),
        _ => None,
    }
}

/// Every index expression used to read a list inside `e`.
pub fn collect_index_terms(e: &Expr, out: &mut BTreeSet<IndexTerm>) {
    e.walk(&mut |n| {
        if let Some(i) = index_term_of(n) {
            out.insert(IndexTerm(i.clone()));
        }
    });
}

/// An index expression ordered by its printed form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTerm(pub Expr);

impl Ord for IndexTerm {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        print_expr(&self.0).cmp(&print_expr(&other.0))
    }
}
impl PartialOrd for IndexTerm {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn adjacency_bounds(q: &str, t: &Expr) -> Vec<Expr> {
    let a = dist_at(q, Version::Aligned, t.clone());
    let s = dist_at(q, Version::Shadow, t.clone());
    vec![
        Expr::cmp(CmpOp::Le, num(-1), a.clone()),
        Expr::cmp(CmpOp::Le, a.clone(), num(1)),
        Expr::cmp(CmpOp::Eq, a, s),
    ]
}

/// Expand the precondition at the given index terms. Returns the list of
/// conjuncts; an empty list means `true`.
///
/// For `ONE_DIFFER` the pairwise clause for terms `t1`, `t2` is
/// `t1 = t2 || ^q[t1] = 0 || ^q[t2] = 0`, so that two syntactically
/// different terms denoting the same position are not over-constrained.
pub fn instantiate_precondition(pre: &[PreItem], terms: &BTreeSet<IndexTerm>) -> Vec<Expr> {
    let mut out: Vec<Expr> = Vec::new();
    let push = |e: Expr, out: &mut Vec<Expr>| {
        if e != Expr::Bool(true) && !out.contains(&e) {
            out.push(e);
        }
    };
    for item in pre {
        match item {
            PreItem::AllDiffer(q) | PreItem::OneDiffer(q) => {
                for t in terms {
                    for e in adjacency_bounds(q, &t.0) {
                        push(e, &mut out);
                    }
                }
                if matches!(item, PreItem::OneDiffer(_)) {
                    let ts: Vec<&IndexTerm> = terms.iter().collect();
                    for (k, t1) in ts.iter().enumerate() {
                        for t2 in &ts[k + 1..] {
                            let zero = |t: &Expr| {
                                Expr::cmp(
                                    CmpOp::Eq,
                                    dist_at(q, Version::Aligned, t.clone()),
                                    num(0),
                                )
                            };
                            let same = Expr::cmp(CmpOp::Eq, t1.0.clone(), t2.0.clone());
                            push(Expr::or(Expr::or(same, zero(&t1.0)), zero(&t2.0)), &mut out);
                        }
                    }
                }
            }
            PreItem::Forall(k, body) => {
                for t in terms {
                    push(substitute(body, k, &t.0), &mut out);
                }
            }
            PreItem::Fact(e) => push(e.clone(), &mut out),
        }
    }
    out
}

/// A counterexample: values for the atoms of an obligation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Witness {
    pub reals: BTreeMap<String, Q>,
    pub bools: BTreeMap<String, bool>,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self
            .reals
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect();
        parts.extend(self.bools.iter().map(|(k, v)| format!("{k} = {v}")));
        if parts.is_empty() {
            f.write_str("(any assignment)")
        } else {
            f.write_str(&parts.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(Witness),
    Unknown(String),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Atom key of a list read, matching the naming used by the atomizer.
fn read_key(prefix: &str, list: &str, idx: &Expr) -> String {
    format!("{prefix}{list}@{}", print_expr(idx))
}

fn eval_num(e: &Expr, w: &Witness) -> Option<Q> {
    Some(match e {
        Expr::Num(r) => q_from(r),
        Expr::Var(x) => w.reals.get(x).cloned().unwrap_or_else(Q::zero),
        Expr::Dist(d) => {
            let key = match &d.index {
                None => format!("{}{}", d.version.sigil(), d.base),
                Some(i) => read_key(&d.version.sigil().to_string(), &d.base, i),
            };
            w.reals.get(&key).cloned().unwrap_or_else(Q::zero)
        }
        Expr::Index(b, i) => match &**b {
            Expr::Var(q) => w
                .reals
                .get(&read_key("", q, i))
                .cloned()
                .unwrap_or_else(Q::zero),
            _ => return None,
        },
        Expr::Bin(op, a, b) => {
            let (x, y) = (eval_num(a, w)?, eval_num(b, w)?);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div if y.is_zero() => return None,
                BinOp::Div => x / y,
                BinOp::Mod if y.is_zero() => return None,
                BinOp::Mod => {
                    let k = (&x / &y).floor();
                    x - y * k
                }
            }
        }
        Expr::Ternary(c, a, b) => {
            if eval_bool(c, w)? {
                eval_num(a, w)?
            } else {
                eval_num(b, w)?
            }
        }
        Expr::Abs(a) => eval_num(a, w)?.abs(),
        _ => return None,
    })
}

/// Evaluate a boolean expression with list reads and distance variables
/// looked up as atoms in `w`. Missing atoms read as zero / false.
pub fn eval_bool(e: &Expr, w: &Witness) -> Option<bool> {
    Some(match e {
        Expr::Bool(b) => *b,
        Expr::Var(x) => w.bools.get(x).copied().unwrap_or(false),
        Expr::Not(a) => !eval_bool(a, w)?,
        Expr::And(a, b) => eval_bool(a, w)? && eval_bool(b, w)?,
        Expr::Or(a, b) => eval_bool(a, w)? || eval_bool(b, w)?,
        Expr::Ternary(c, a, b) => {
            if eval_bool(c, w)? {
                eval_bool(a, w)?
            } else {
                eval_bool(b, w)?
            }
        }
        Expr::Cmp(op, a, b) => {
            let (x, y) = (eval_num(a, w)?, eval_num(b, w)?);
            match op {
                CmpOp::Lt => x < y,
                CmpOp::Gt => x > y,
                CmpOp::Le => x <= y,
                CmpOp::Ge => x >= y,
                CmpOp::Eq => x == y,
            }
        }
        _ => return None,
    })
}

/// True when `w` makes the hypothesis true and the goal false.
pub fn falsifies(ob: &Obligation, w: &Witness) -> bool {
    eval_bool(&ob.hypothesis(), w) == Some(true) && eval_bool(&ob.goal.to_expr(), w) == Some(false)
}

fn trivially_true(e: &Expr) -> bool {
    match e {
        Expr::Bool(true) => true,
        Expr::Cmp(CmpOp::Eq | CmpOp::Le | CmpOp::Ge, a, b) => light(a) == light(b),
        _ => false,
    }
}

/// The syntactic discharge tried before any solver call. Only answers
/// `true` for identical sides after zero elimination or for goals that are
/// literally a conjunct of the hypothesis.
pub fn fast_path(ob: &Obligation) -> bool {
    let in_hyps = |e: &Expr| ob.hyps.iter().any(|h| light(h) == light(e));
    match &ob.goal {
        Goal::Iff(a, b) => light(a) == light(b),
        Goal::Holds(e) => trivially_true(e) || in_hyps(e),
        Goal::Implies(p, c) => trivially_true(c) || in_hyps(c) || light(p) == light(c),
    }
}

/// Decide `ob` with the built-in procedure.
pub fn check_builtin(ob: &Obligation) -> Validity {
    let mut atomizer = Atomizer::new();
    let negated = (|| {
        let h = atomizer.formula(&ob.hypothesis(), true)?;
        let g = atomizer.formula(&ob.goal.to_expr(), false)?;
        Ok::<_, lra::Unsupported>(Formula::And(vec![h, g]))
    })();
    let negated = match negated {
        Ok(f) => f,
        Err(e) => return Validity::Unknown(e.to_string()),
    };
    let Some((reals, bools)) = lra::solve(&negated) else {
        return Validity::Valid;
    };
    let info = &atomizer.info;
    for (name, (op, a, b)) in &info.nonlinear {
        let (x, y) = (a.eval(&reals), b.eval(&reals));
        let expected = match op {
            BinOp::Mul => Some(x * y),
            BinOp::Div if !y.is_zero() => Some(x / y),
            BinOp::Mod if !y.is_zero() => Some(&x - &y * (&x / &y).floor()),
            _ => None,
        };
        if expected.as_ref() != Some(&reals.get(name).cloned().unwrap_or_else(Q::zero)) {
            return Validity::Unknown("counterexample relies on non-linear terms".into());
        }
    }
    let reads: Vec<_> = info.reads.iter().collect();
    for (k, (n1, (l1, i1))) in reads.iter().enumerate() {
        for (n2, (l2, i2)) in &reads[k + 1..] {
            if l1 == l2 && i1.eval(&reals) == i2.eval(&reals) && reals.get(*n1) != reals.get(*n2) {
                return Validity::Unknown(
                    "counterexample reads one list position inconsistently".into(),
                );
            }
        }
    }
    let w = Witness { reals, bools };
    if falsifies(ob, &w) {
        Validity::Invalid(w)
    } else {
        Validity::Unknown("model of the abstraction does not falsify the obligation".into())
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Shell command reading an SMT-LIB2 script on stdin.
    pub smt_cmd: Option<String>,
    pub timeout: Duration,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            smt_cmd: None,
            timeout: Duration::from_secs(10),
        }
    }
}

impl SolverConfig {
    /// Default configuration with `SHADOWDP_SMT_CMD` applied when set.
    pub fn from_env() -> SolverConfig {
        let smt_cmd = std::env::var("SHADOWDP_SMT_CMD")
            .ok()
            .filter(|s| !s.trim().is_empty());
        SolverConfig {
            smt_cmd,
            ..SolverConfig::default()
        }
    }
}

/// Obligation checker with a result cache. Safe to share across threads.
#[derive(Debug, Default)]
pub struct Solver {
    pub config: SolverConfig,
    cache: Mutex<HashMap<String, Validity>>,
    queries: AtomicUsize,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Solver {
        Solver {
            config,
            cache: Mutex::new(HashMap::new()),
            queries: AtomicUsize::new(0),
        }
    }

    /// Number of obligations that went past the fast path and the cache.
    pub fn solver_queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn check_validity(&self, ob: &Obligation) -> Validity {
        if fast_path(ob) {
            return Validity::Valid;
        }
        let key = ob.key();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return v.clone();
        }
        self.queries.fetch_add(1, Ordering::Relaxed);
        let result = match &self.config.smt_cmd {
            Some(cmd) => smtlib::run_external(cmd, ob, self.config.timeout),
            None => check_builtin(ob),
        };
        self.cache.lock().unwrap().insert(key, result.clone());
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_expr;

    fn e(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    fn ob(pre: &[PreItem], goal: Goal) -> Obligation {
        Obligation::new(ObligationKind::Odot, pre, &[], goal, Span::default())
    }

    #[test]
    fn all_differ_instantiates_at_goal_terms() {
        let terms: BTreeSet<IndexTerm> = [IndexTerm(var("i"))].into();
        let got = instantiate_precondition(&[PreItem::AllDiffer("q".into())], &terms);
        assert_eq!(
            got,
            vec![e("-1 <= ^q[i]"), e("^q[i] <= 1"), e("^q[i] = ~q[i]")]
        );
        assert!(
            instantiate_precondition(&[PreItem::AllDiffer("q".into())], &BTreeSet::new())
                .is_empty()
        );
    }

    #[test]
    fn one_differ_adds_pairwise_clause() {
        let terms: BTreeSet<IndexTerm> = [IndexTerm(var("i")), IndexTerm(var("j"))].into();
        let got = instantiate_precondition(&[PreItem::OneDiffer("q".into())], &terms);
        assert_eq!(got.len(), 7);
        assert_eq!(got[6], e("i = j || ^q[i] = 0 || ^q[j] = 0"));
    }

    #[test]
    fn identical_sides_are_valid_on_the_fast_path() {
        let o = ob(&[], Goal::Iff(e("x > y"), e("x + 0 > y + 0")));
        assert!(fast_path(&o));
        assert_eq!(check_builtin(&o), Validity::Valid);
    }

    #[test]
    fn shifted_comparison_is_invalid_with_witness() {
        let o = ob(&[], Goal::Iff(e("x > y"), e("x + 1 > y + 0")));
        match Solver::default().check_validity(&o) {
            Validity::Invalid(w) => assert!(falsifies(&o, &w)),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn piecewise_constant_shift_is_injective() {
        let omega = |eta: &str| format!("q[i] + {eta} > bq");
        let shift = |eta: &str| format!("{eta} + ({} ? 2 : 0)", omega(eta));
        let goal = Goal::Implies(
            e(&format!("{} = {}", shift("e1"), shift("e2"))),
            e("e1 = e2"),
        );
        let o = ob(&[PreItem::AllDiffer("q".into())], goal);
        assert_eq!(check_builtin(&o), Validity::Valid);
    }

    #[test]
    fn bounded_distance_keeps_guard() {
        // With |^q[i]| <= 1 and an alignment of 2 the comparison is preserved.
        let goal = Goal::Implies(e("q[i] + eta > bq"), e("q[i] + ^q[i] + eta + 2 > bq + 1"));
        let o = ob(&[PreItem::AllDiffer("q".into())], goal);
        assert_eq!(check_builtin(&o), Validity::Valid);
        let weak = Goal::Implies(e("q[i] + eta > bq"), e("q[i] + ^q[i] + eta + 1 > bq + 1"));
        assert!(matches!(
            check_builtin(&ob(&[PreItem::AllDiffer("q".into())], weak)),
            Validity::Invalid(_)
        ));
    }

    #[test]
    fn nonlinear_counterexamples_are_unknown_or_genuine() {
        let o = ob(&[], Goal::Holds(e("x * y >= 0")));
        match check_builtin(&o) {
            Validity::Valid => panic!("x * y >= 0 is not valid"),
            Validity::Invalid(w) => assert!(falsifies(&o, &w)),
            Validity::Unknown(_) => {}
        }
    }

    #[test]
    fn solver_caches_results() {
        let s = Solver::default();
        let o = ob(&[], Goal::Holds(e("x + 1 > x")));
        assert!(s.check_validity(&o).is_valid());
        assert!(s.check_validity(&o).is_valid());
        assert_eq!(s.solver_queries(), 1);
    }
}
