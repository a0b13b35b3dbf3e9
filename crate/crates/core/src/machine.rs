//! Bytecode execution engine shared by the source interpreter, the
//! consistency oracle and the bounded verifier.
//!
//! Programs compile to a flat instruction list over numbered slots.
//! Execution state is a program counter plus slot values, so a run can be
//! suspended at a `havoc` and resumed from a cloned state.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, Signed, ToPrimitive, Zero};

use crate::ast::*;
use crate::printer::format_rational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("read of unset variable `{0}`")]
    Unset(String),
    #[error("type mismatch: {0}")]
    Type(String),
    #[error("index {index} out of range for a list of length {len}")]
    Index { index: String, len: usize },
    #[error("noise trace exhausted at site {0}")]
    TraceUnderflow(usize),
    #[error("noise trace has {0} unused entries")]
    TraceOverflow(usize),
    #[error("trace entry for site {got} where site {want} was expected")]
    TraceMismatch { want: usize, got: usize },
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
    #[error("invalid Laplace scale {0}")]
    Scale(String),
    #[error("{0}")]
    Compile(String),
    /// Raised by oracles that stop a run on purpose.
    #[error("run halted by the oracle")]
    Halted,
}

/// Numbers the machine computes with.
pub trait Scalar: Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn from_rational(r: &Rational) -> Self;
    fn add(&self, o: &Self) -> Result<Self, RunError>;
    fn sub(&self, o: &Self) -> Result<Self, RunError>;
    fn mul(&self, o: &Self) -> Result<Self, RunError>;
    fn div(&self, o: &Self) -> Result<Self, RunError>;
    /// Remainder with the sign of the divisor.
    fn modulo(&self, o: &Self) -> Result<Self, RunError>;
    fn abs(&self) -> Self;
    fn compare(&self, o: &Self) -> Ordering;
    fn to_index(&self) -> Option<usize>;
    fn to_f64(&self) -> f64;
    fn is_positive(&self) -> bool {
        self.to_f64() > 0.0
    }
}

impl Scalar for Rational {
    fn from_rational(r: &Rational) -> Self {
        *r
    }
    fn add(&self, o: &Self) -> Result<Self, RunError> {
        self.checked_add(o).ok_or(RunError::Overflow)
    }
    fn sub(&self, o: &Self) -> Result<Self, RunError> {
        self.checked_sub(o).ok_or(RunError::Overflow)
    }
    fn mul(&self, o: &Self) -> Result<Self, RunError> {
        self.checked_mul(o).ok_or(RunError::Overflow)
    }
    fn div(&self, o: &Self) -> Result<Self, RunError> {
        if o.is_zero() {
            return Err(RunError::DivisionByZero);
        }
        self.checked_div(o).ok_or(RunError::Overflow)
    }
    fn modulo(&self, o: &Self) -> Result<Self, RunError> {
        let q = Scalar::div(self, o)?.floor();
        Scalar::sub(self, &Scalar::mul(o, &q)?)
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn compare(&self, o: &Self) -> Ordering {
        self.cmp(o)
    }
    fn to_index(&self) -> Option<usize> {
        if self.is_integer() {
            usize::try_from(*self.numer()).ok()
        } else {
            None
        }
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_positive(&self) -> bool {
        Signed::is_positive(self)
    }
}

impl Scalar for f64 {
    fn from_rational(r: &Rational) -> Self {
        *r.numer() as f64 / *r.denom() as f64
    }
    fn add(&self, o: &Self) -> Result<Self, RunError> {
        Ok(self + o)
    }
    fn sub(&self, o: &Self) -> Result<Self, RunError> {
        Ok(self - o)
    }
    fn mul(&self, o: &Self) -> Result<Self, RunError> {
        Ok(self * o)
    }
    fn div(&self, o: &Self) -> Result<Self, RunError> {
        if *o == 0.0 {
            Err(RunError::DivisionByZero)
        } else {
            Ok(self / o)
        }
    }
    fn modulo(&self, o: &Self) -> Result<Self, RunError> {
        if *o == 0.0 {
            Err(RunError::DivisionByZero)
        } else {
            Ok(self - o * (self / o).floor())
        }
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn compare(&self, o: &Self) -> Ordering {
        self.partial_cmp(o).unwrap_or(Ordering::Equal)
    }
    fn to_index(&self) -> Option<usize> {
        (self.fract() == 0.0 && *self >= 0.0).then_some(*self as usize)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Value<S> {
    #[default]
    Unset,
    Num(S),
    Bool(bool),
    List(Arc<Vec<Value<S>>>),
}

impl<S: Scalar> Value<S> {
    pub fn list(items: Vec<Value<S>>) -> Self {
        Value::List(Arc::new(items))
    }
    pub fn as_num(&self) -> Option<&S> {
        match self {
            Value::Num(x) => Some(x),
            _ => None,
        }
    }
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
    pub fn as_list(&self) -> Option<&[Value<S>]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }
}

impl<S: Scalar> fmt::Display for Value<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unset => f.write_str("unset"),
            Value::Num(x) => write!(f, "{x}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (k, v) in items.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Render a rational for reports: integers plainly, others as `n/d`.
pub fn show_rational(r: &Rational) -> String {
    format_rational(r)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CExpr {
    Const(Rational),
    Bool(bool),
    Load(usize),
    Index(Box<CExpr>, Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Cmp(CmpOp, Box<CExpr>, Box<CExpr>),
    And(Box<CExpr>, Box<CExpr>),
    Or(Box<CExpr>, Box<CExpr>),
    Not(Box<CExpr>),
    Ternary(Box<CExpr>, Box<CExpr>, Box<CExpr>),
    Cons(Box<CExpr>, Box<CExpr>),
    Abs(Box<CExpr>),
}

/// A compiled selector, evaluated after sampling when probes are enabled.
#[derive(Debug, Clone, PartialEq)]
pub enum CSelector {
    Aligned,
    Shadow,
    Cond(CExpr, Box<CSelector>, Box<CSelector>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Assign(usize, CExpr),
    Sample {
        slot: usize,
        scale: CExpr,
        site: usize,
        probe: Option<(CSelector, CExpr)>,
    },
    Havoc(usize),
    Assert(CExpr, Span),
    JumpUnless(CExpr, usize),
    Jump(usize),
    Return(CExpr),
}

/// Slot name of a distance variable, e.g. `^x` or `~q`.
pub fn dist_slot_name(base: &str, v: Version) -> String {
    format!("{}{}", v.sigil(), base)
}

/// A compiled command block.
#[derive(Debug, Clone)]
pub struct Code {
    pub instrs: Vec<Instr>,
    pub slots: Vec<String>,
    index: HashMap<String, usize>,
    /// Slots live on entry to each instruction.
    live: Vec<Vec<usize>>,
}

impl Code {
    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Slots that may be read before being overwritten from `pc` on.
    pub fn live_at(&self, pc: usize) -> &[usize] {
        self.live.get(pc).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn fresh_state<S: Scalar>(&self) -> State<S> {
        State {
            pc: 0,
            slots: vec![Value::Unset; self.slots.len()],
            steps: 0,
        }
    }
}

struct Compiler {
    probes: bool,
    instrs: Vec<Instr>,
    slots: Vec<String>,
    index: HashMap<String, usize>,
}

impl Compiler {
    fn slot(&mut self, name: &str) -> usize {
        if let Some(&k) = self.index.get(name) {
            return k;
        }
        self.slots.push(name.to_string());
        self.index.insert(name.to_string(), self.slots.len() - 1);
        self.slots.len() - 1
    }

    fn expr(&mut self, e: &Expr) -> Result<CExpr, RunError> {
        let b = |x: CExpr| Box::new(x);
        Ok(match e {
            Expr::Num(r) => CExpr::Const(*r),
            Expr::Bool(v) => CExpr::Bool(*v),
            Expr::Var(x) => CExpr::Load(self.slot(x)),
            Expr::Dist(d) => {
                let load = CExpr::Load(self.slot(&dist_slot_name(&d.base, d.version)));
                match &d.index {
                    None => load,
                    Some(i) => CExpr::Index(b(load), b(self.expr(i)?)),
                }
            }
            Expr::Hole => {
                return Err(RunError::Compile(
                    "index placeholder in executable code".into(),
                ))
            }
            Expr::Bin(op, x, y) => CExpr::Bin(*op, b(self.expr(x)?), b(self.expr(y)?)),
            Expr::Cmp(op, x, y) => CExpr::Cmp(*op, b(self.expr(x)?), b(self.expr(y)?)),
            Expr::And(x, y) => CExpr::And(b(self.expr(x)?), b(self.expr(y)?)),
            Expr::Or(x, y) => CExpr::Or(b(self.expr(x)?), b(self.expr(y)?)),
            Expr::Not(x) => CExpr::Not(b(self.expr(x)?)),
            Expr::Ternary(c, x, y) => {
                CExpr::Ternary(b(self.expr(c)?), b(self.expr(x)?), b(self.expr(y)?))
            }
            Expr::Index(x, i) => CExpr::Index(b(self.expr(x)?), b(self.expr(i)?)),
            Expr::Cons(x, l) => CExpr::Cons(b(self.expr(x)?), b(self.expr(l)?)),
            Expr::Abs(x) => CExpr::Abs(b(self.expr(x)?)),
        })
    }

    fn selector(&mut self, s: &Selector) -> Result<CSelector, RunError> {
        Ok(match s {
            Selector::Aligned => CSelector::Aligned,
            Selector::Shadow => CSelector::Shadow,
            Selector::Cond(c, a, b) => CSelector::Cond(
                self.expr(c)?,
                Box::new(self.selector(a)?),
                Box::new(self.selector(b)?),
            ),
        })
    }

    fn block(&mut self, block: &[Cmd]) -> Result<(), RunError> {
        for c in block {
            match &c.kind {
                CmdKind::Skip => {}
                CmdKind::Assign(lv, e) => {
                    let e = self.expr(e)?;
                    let slot = match lv {
                        LValue::Var(x) => self.slot(x),
                        LValue::Dist(x, v) => self.slot(&dist_slot_name(x, *v)),
                    };
                    self.instrs.push(Instr::Assign(slot, e));
                }
                CmdKind::Sample {
                    var,
                    scale,
                    site,
                    ann,
                } => {
                    let scale = self.expr(scale)?;
                    let slot = self.slot(var);
                    let probe = match ann {
                        Some(a) if self.probes => {
                            Some((self.selector(&a.select)?, self.expr(&a.dist)?))
                        }
                        _ => None,
                    };
                    self.instrs.push(Instr::Sample {
                        slot,
                        scale,
                        site: *site,
                        probe,
                    });
                }
                CmdKind::Havoc(x) => {
                    let slot = self.slot(x);
                    self.instrs.push(Instr::Havoc(slot));
                }
                CmdKind::Assert(e) => {
                    let e = self.expr(e)?;
                    self.instrs.push(Instr::Assert(e, c.span));
                }
                CmdKind::Return(e) => {
                    let e = self.expr(e)?;
                    self.instrs.push(Instr::Return(e));
                }
                CmdKind::If(g, a, b) => {
                    let g = self.expr(g)?;
                    let branch = self.instrs.len();
                    self.instrs.push(Instr::JumpUnless(g, 0));
                    self.block(a)?;
                    let skip = self.instrs.len();
                    self.instrs.push(Instr::Jump(0));
                    let else_at = self.instrs.len();
                    self.block(b)?;
                    let end = self.instrs.len();
                    patch(&mut self.instrs[branch], else_at);
                    patch(&mut self.instrs[skip], end);
                }
                CmdKind::While(g, body) => {
                    let head = self.instrs.len();
                    let g = self.expr(g)?;
                    self.instrs.push(Instr::JumpUnless(g, 0));
                    self.block(body)?;
                    self.instrs.push(Instr::Jump(head));
                    let end = self.instrs.len();
                    patch(&mut self.instrs[head], end);
                }
            }
        }
        Ok(())
    }
}

fn patch(i: &mut Instr, target: usize) {
    match i {
        Instr::JumpUnless(_, t) | Instr::Jump(t) => *t = target,
        _ => unreachable!("only jumps are patched"),
    }
}

fn expr_reads(e: &CExpr, out: &mut BTreeSet<usize>) {
    match e {
        CExpr::Const(_) | CExpr::Bool(_) => {}
        CExpr::Load(s) => {
            out.insert(*s);
        }
        CExpr::Not(a) | CExpr::Abs(a) => expr_reads(a, out),
        CExpr::Index(a, b)
        | CExpr::Bin(_, a, b)
        | CExpr::Cmp(_, a, b)
        | CExpr::And(a, b)
        | CExpr::Or(a, b)
        | CExpr::Cons(a, b) => {
            expr_reads(a, out);
            expr_reads(b, out);
        }
        CExpr::Ternary(a, b, c) => {
            expr_reads(a, out);
            expr_reads(b, out);
            expr_reads(c, out);
        }
    }
}

fn liveness(instrs: &[Instr]) -> Vec<Vec<usize>> {
    let n = instrs.len();
    let mut live: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n + 1];
    let succ = |k: usize| -> Vec<usize> {
        match &instrs[k] {
            Instr::Jump(t) => vec![*t],
            Instr::JumpUnless(_, t) => vec![k + 1, *t],
            Instr::Return(_) => vec![],
            _ => vec![k + 1],
        }
    };
    loop {
        let mut changed = false;
        for k in (0..n).rev() {
            let mut out = BTreeSet::new();
            for s in succ(k) {
                out.extend(live[s].iter().copied());
            }
            let mut reads = BTreeSet::new();
            match &instrs[k] {
                Instr::Assign(slot, e) => {
                    out.remove(slot);
                    expr_reads(e, &mut reads);
                }
                Instr::Sample { slot, scale, .. } => {
                    out.remove(slot);
                    expr_reads(scale, &mut reads);
                }
                Instr::Havoc(slot) => {
                    out.remove(slot);
                }
                Instr::Assert(e, _) | Instr::JumpUnless(e, _) | Instr::Return(e) => {
                    expr_reads(e, &mut reads)
                }
                Instr::Jump(_) => {}
            }
            out.extend(reads);
            if out != live[k] {
                live[k] = out;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    live.into_iter()
        .take(n)
        .map(|s| s.into_iter().collect())
        .collect()
}

/// Compile a block. `names` are given slots first, in order, so callers can
/// lay out inputs predictably.
pub fn compile(block: &[Cmd], names: &[String]) -> Result<Code, RunError> {
    compile_with(block, names, false)
}

/// Like [`compile`]; with `probes` set, sampling annotations are compiled
/// and reported to [`Oracle::annotation`] after each sample.
pub fn compile_with(block: &[Cmd], names: &[String], probes: bool) -> Result<Code, RunError> {
    let mut c = Compiler {
        probes,
        instrs: Vec::new(),
        slots: Vec::new(),
        index: HashMap::new(),
    };
    for n in names {
        c.slot(n);
    }
    c.block(block)?;
    let live = liveness(&c.instrs);
    Ok(Code {
        instrs: c.instrs,
        slots: c.slots,
        index: c.index,
        live,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State<S> {
    pub pc: usize,
    pub slots: Vec<Value<S>>,
    pub steps: u64,
}

/// How a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Stop<S> {
    Returned(Value<S>),
    /// Fell off the end of the code without a return.
    Finished,
    AssertFailed(Span),
    /// Suspended before the `havoc` at the current pc.
    Suspended,
}

/// Supplies values for sampling and havoc instructions.
pub trait Oracle<S> {
    /// Draw for a sampling site; `slots` is the state just before sampling.
    fn sample(&mut self, site: usize, scale: &S, slots: &[Value<S>]) -> Result<S, RunError>;
    /// Reports the evaluated annotation of the sample just taken.
    fn annotation(&mut self, _site: usize, _shadow: bool, _dist: &S) {}
    /// `None` suspends execution at the havoc.
    fn havoc(&mut self, slot: usize) -> Result<Option<S>, RunError>;
}

pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

pub struct Machine<'c> {
    pub code: &'c Code,
    pub step_limit: u64,
}

impl<'c> Machine<'c> {
    pub fn new(code: &'c Code) -> Self {
        Machine {
            code,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    pub fn eval<S: Scalar>(&self, st: &State<S>, e: &CExpr) -> Result<Value<S>, RunError> {
        eval(&self.code.slots, &st.slots, e)
    }

    fn selects_shadow<S: Scalar>(&self, st: &State<S>, sel: &CSelector) -> Result<bool, RunError> {
        match sel {
            CSelector::Aligned => Ok(false),
            CSelector::Shadow => Ok(true),
            CSelector::Cond(c, a, b) => {
                if bool_of(self.eval(st, c)?)? {
                    self.selects_shadow(st, a)
                } else {
                    self.selects_shadow(st, b)
                }
            }
        }
    }

    /// Run from the current state until the program stops or suspends.
    pub fn run<S: Scalar>(
        &self,
        st: &mut State<S>,
        oracle: &mut dyn Oracle<S>,
    ) -> Result<Stop<S>, RunError> {
        let instrs = &self.code.instrs;
        loop {
            let Some(instr) = instrs.get(st.pc) else {
                return Ok(Stop::Finished);
            };
            st.steps += 1;
            if st.steps > self.step_limit {
                return Err(RunError::StepLimit(self.step_limit));
            }
            match instr {
                Instr::Assign(slot, e) => {
                    st.slots[*slot] = self.eval(st, e)?;
                    st.pc += 1;
                }
                Instr::Sample {
                    slot,
                    scale,
                    site,
                    probe,
                } => {
                    let r = num_of(&self.code.slots, self.eval(st, scale)?)?;
                    if !r.is_positive() {
                        return Err(RunError::Scale(r.to_string()));
                    }
                    st.slots[*slot] = Value::Num(oracle.sample(*site, &r, &st.slots)?);
                    if let Some((sel, dist)) = probe {
                        let shadow = self.selects_shadow(st, sel)?;
                        let d = num_of(&self.code.slots, self.eval(st, dist)?)?;
                        oracle.annotation(*site, shadow, &d);
                    }
                    st.pc += 1;
                }
                Instr::Havoc(slot) => match oracle.havoc(*slot)? {
                    Some(v) => {
                        st.slots[*slot] = Value::Num(v);
                        st.pc += 1;
                    }
                    None => return Ok(Stop::Suspended),
                },
                Instr::Assert(e, span) => {
                    if !bool_of(self.eval(st, e)?)? {
                        return Ok(Stop::AssertFailed(*span));
                    }
                    st.pc += 1;
                }
                Instr::JumpUnless(e, target) => {
                    st.pc = if bool_of(self.eval(st, e)?)? {
                        st.pc + 1
                    } else {
                        *target
                    };
                }
                Instr::Jump(target) => st.pc = *target,
                Instr::Return(e) => return Ok(Stop::Returned(self.eval(st, e)?)),
            }
        }
    }
}

fn num_of<S: Scalar>(_names: &[String], v: Value<S>) -> Result<S, RunError> {
    match v {
        Value::Num(x) => Ok(x),
        other => Err(RunError::Type(format!("expected a number, found {other}"))),
    }
}

fn bool_of<S: Scalar>(v: Value<S>) -> Result<bool, RunError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(RunError::Type(format!("expected a boolean, found {other}"))),
    }
}

fn eval<S: Scalar>(names: &[String], slots: &[Value<S>], e: &CExpr) -> Result<Value<S>, RunError> {
    let num = |e: &CExpr| -> Result<S, RunError> { num_of(names, eval(names, slots, e)?) };
    let boolean = |e: &CExpr| -> Result<bool, RunError> { bool_of(eval(names, slots, e)?) };
    Ok(match e {
        CExpr::Const(r) => Value::Num(S::from_rational(r)),
        CExpr::Bool(b) => Value::Bool(*b),
        CExpr::Load(s) => match &slots[*s] {
            Value::Unset => return Err(RunError::Unset(names[*s].clone())),
            v => v.clone(),
        },
        CExpr::Index(l, i) => {
            let list = eval(names, slots, l)?;
            let Value::List(items) = list else {
                return Err(RunError::Type(format!("indexing a non-list value {list}")));
            };
            let i = num(i)?;
            match i.to_index().and_then(|k| items.get(k)) {
                Some(v) => v.clone(),
                None => {
                    return Err(RunError::Index {
                        index: i.to_string(),
                        len: items.len(),
                    })
                }
            }
        }
        CExpr::Bin(op, a, b) => {
            let (x, y) = (num(a)?, num(b)?);
            Value::Num(match op {
                BinOp::Add => x.add(&y)?,
                BinOp::Sub => x.sub(&y)?,
                BinOp::Mul => x.mul(&y)?,
                BinOp::Div => x.div(&y)?,
                BinOp::Mod => x.modulo(&y)?,
            })
        }
        CExpr::Cmp(op, a, b) => {
            let o = num(a)?.compare(&num(b)?);
            Value::Bool(match op {
                CmpOp::Lt => o == Ordering::Less,
                CmpOp::Le => o != Ordering::Greater,
                CmpOp::Gt => o == Ordering::Greater,
                CmpOp::Ge => o != Ordering::Less,
                CmpOp::Eq => o == Ordering::Equal,
            })
        }
        CExpr::And(a, b) => Value::Bool(boolean(a)? && boolean(b)?),
        CExpr::Or(a, b) => Value::Bool(boolean(a)? || boolean(b)?),
        CExpr::Not(a) => Value::Bool(!boolean(a)?),
        CExpr::Ternary(c, a, b) => {
            if boolean(c)? {
                eval(names, slots, a)?
            } else {
                eval(names, slots, b)?
            }
        }
        CExpr::Cons(a, l) => {
            let head = eval(names, slots, a)?;
            let tail = eval(names, slots, l)?;
            let Value::List(items) = tail else {
                return Err(RunError::Type(format!("cons onto a non-list value {tail}")));
            };
            let mut out = Vec::with_capacity(items.len() + 1);
            out.push(head);
            out.extend(items.iter().cloned());
            Value::list(out)
        }
        CExpr::Abs(a) => Value::Num(num(a)?.abs()),
    })
}

/// Evaluate a closed expression over named values (used for preconditions).
pub fn eval_named<S: Scalar>(
    e: &Expr,
    env: &dyn Fn(&str) -> Option<Value<S>>,
) -> Result<Value<S>, RunError> {
    let mut c = Compiler {
        probes: false,
        instrs: Vec::new(),
        slots: Vec::new(),
        index: HashMap::new(),
    };
    let ce = c.expr(e)?;
    let slots: Vec<Value<S>> = c
        .slots
        .iter()
        .map(|n| env(n).unwrap_or(Value::Unset))
        .collect();
    eval(&c.slots, &slots, &ce)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_target;

    struct NoNoise;
    impl<S: Scalar> Oracle<S> for NoNoise {
        fn sample(&mut self, site: usize, _: &S, _: &[Value<S>]) -> Result<S, RunError> {
            Err(RunError::TraceUnderflow(site))
        }
        fn havoc(&mut self, _: usize) -> Result<Option<S>, RunError> {
            Ok(None)
        }
    }

    fn body(src: &str) -> Vec<Cmd> {
        let text = format!(
            "function F(n: real<0, 0>) returns (r: real<0, 0>) precondition true {{ {src} }}"
        );
        parse_target(&text).unwrap().body
    }

    #[test]
    fn loop_and_list() {
        let code = compile(
            &body("i := 0; l := n :: (n :: l); while (i < 3) { i := i + 1; } return i + l[1];"),
            &["n".into(), "l".into()],
        )
        .unwrap();
        let mut st = code.fresh_state::<Rational>();
        st.slots[0] = Value::Num(Rational::from_integer(5));
        st.slots[1] = Value::list(vec![]);
        let out = Machine::new(&code).run(&mut st, &mut NoNoise).unwrap();
        assert_eq!(out, Stop::Returned(Value::Num(Rational::from_integer(8))));
    }

    #[test]
    fn havoc_suspends_and_assert_fails() {
        let code = compile(&body("havoc x; assert(x > n); return x;"), &["n".into()]).unwrap();
        let m = Machine::new(&code);
        let mut st = code.fresh_state::<Rational>();
        st.slots[0] = Value::Num(Rational::from_integer(1));
        assert_eq!(m.run(&mut st, &mut NoNoise).unwrap(), Stop::Suspended);
        let x = code.slot("x").unwrap();
        assert!(code.live_at(st.pc).contains(&0));
        assert!(!code.live_at(st.pc).contains(&x));
        st.slots[x] = Value::Num(Rational::from_integer(0));
        st.pc += 1;
        assert!(matches!(
            m.run(&mut st, &mut NoNoise).unwrap(),
            Stop::AssertFailed(_)
        ));
    }

    #[test]
    fn rational_mod_and_errors() {
        let r = |n| Rational::from_integer(n);
        assert_eq!(Scalar::modulo(&r(-1), &r(3)).unwrap(), r(2));
        assert_eq!(Scalar::div(&r(1), &r(0)), Err(RunError::DivisionByZero));
        assert_eq!(Scalar::modulo(&-1.0f64, &3.0).unwrap(), 2.0);
    }
}
