//! Abstract syntax shared by the parser, type checker, transformer and
//! interpreters.
//!
//! Numeric and boolean expressions share one [`Expr`] enum. Which kind an
//! expression has is decided by the type checker, not by the tree shape.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

/// Exact rational used for literals and interpreter values.
pub type Rational = Rational64;

/// Name of the privacy-cost accumulator inserted by the target transformation.
pub const COST_VAR: &str = "v_eps";

/// Source position. Positions never take part in structural equality.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _other: &Span) -> bool {
        true
    }
}
impl Eq for Span {}

impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _state: &mut H) {}
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Version {
    Aligned,
    Shadow,
}

impl Version {
    pub fn sigil(self) -> char {
        match self {
            Version::Aligned => '^',
            Version::Shadow => '~',
        }
    }
}

/// A distance variable `^x`, `~x`, or a list distance `^q[e]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistVar {
    pub base: String,
    pub version: Version,
    pub index: Option<Box<Expr>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Gt,
    Eq,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Eq => "=",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "mod",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Num(Rational),
    Bool(bool),
    Var(String),
    Dist(DistVar),
    /// Placeholder for the index in list element distances, e.g. the
    /// element type of a list whose elements are at distance `^q[_]`.
    Hole,
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Cons(Box<Expr>, Box<Expr>),
    /// Absolute value. Only produced by the target transformation.
    Abs(Box<Expr>),
}

pub fn num(n: i64) -> Expr {
    Expr::Num(Rational::from_integer(n))
}

pub fn var(name: &str) -> Expr {
    Expr::Var(name.to_string())
}

pub fn dist(base: &str, version: Version) -> Expr {
    Expr::Dist(DistVar {
        base: base.to_string(),
        version,
        index: None,
    })
}

pub fn dist_at(base: &str, version: Version, index: Expr) -> Expr {
    Expr::Dist(DistVar {
        base: base.to_string(),
        version,
        index: Some(Box::new(index)),
    })
}

#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Add, a, b)
    }
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Sub, a, b)
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Mul, a, b)
    }
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Div, a, b)
    }
    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> Expr {
        Expr::Cmp(op, Box::new(a), Box::new(b))
    }
    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }
    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }
    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Expr) -> Expr {
        Expr::Not(Box::new(a))
    }
    pub fn ternary(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::Ternary(Box::new(c), Box::new(a), Box::new(b))
    }
    pub fn index(a: Expr, i: Expr) -> Expr {
        Expr::Index(Box::new(a), Box::new(i))
    }
    pub fn cons(a: Expr, b: Expr) -> Expr {
        Expr::Cons(Box::new(a), Box::new(b))
    }
    pub fn abs(a: Expr) -> Expr {
        Expr::Abs(Box::new(a))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(r) if *r == Rational::from_integer(0))
    }

    pub fn as_num(&self) -> Option<Rational> {
        match self {
            Expr::Num(r) => Some(*r),
            _ => None,
        }
    }

    /// True for `*`, `/` and `mod` nodes where neither side is a literal.
    pub fn is_nonlinear(&self) -> bool {
        match self {
            Expr::Bin(BinOp::Mul, a, b) => a.as_num().is_none() && b.as_num().is_none(),
            Expr::Bin(BinOp::Div, _, b) | Expr::Bin(BinOp::Mod, _, b) => b.as_num().is_none(),
            _ => false,
        }
    }

    /// Rebuild this node with `f` applied to every direct child.
    pub fn map_children(&self, f: &mut impl FnMut(&Expr) -> Expr) -> Expr {
        let b = |e: &Expr, f: &mut dyn FnMut(&Expr) -> Expr| Box::new(f(e));
        match self {
            Expr::Num(_) | Expr::Bool(_) | Expr::Var(_) | Expr::Hole => self.clone(),
            Expr::Dist(d) => Expr::Dist(DistVar {
                base: d.base.clone(),
                version: d.version,
                index: d.index.as_ref().map(|i| b(i, f)),
            }),
            Expr::Bin(op, x, y) => Expr::Bin(*op, b(x, f), b(y, f)),
            Expr::Cmp(op, x, y) => Expr::Cmp(*op, b(x, f), b(y, f)),
            Expr::And(x, y) => Expr::And(b(x, f), b(y, f)),
            Expr::Or(x, y) => Expr::Or(b(x, f), b(y, f)),
            Expr::Not(x) => Expr::Not(b(x, f)),
            Expr::Ternary(c, x, y) => Expr::Ternary(b(c, f), b(x, f), b(y, f)),
            Expr::Index(x, y) => Expr::Index(b(x, f), b(y, f)),
            Expr::Cons(x, y) => Expr::Cons(b(x, f), b(y, f)),
            Expr::Abs(x) => Expr::Abs(b(x, f)),
        }
    }

    /// Visit every direct child.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Num(_) | Expr::Bool(_) | Expr::Var(_) | Expr::Hole => vec![],
            Expr::Dist(d) => d.index.iter().map(|b| b.as_ref()).collect(),
            Expr::Bin(_, x, y)
            | Expr::Cmp(_, x, y)
            | Expr::And(x, y)
            | Expr::Or(x, y)
            | Expr::Index(x, y)
            | Expr::Cons(x, y) => vec![x, y],
            Expr::Not(x) | Expr::Abs(x) => vec![x],
            Expr::Ternary(c, x, y) => vec![c, x, y],
        }
    }

    /// Pre-order walk over all subexpressions including `self`.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    pub fn contains(&self, pred: &impl Fn(&Expr) -> bool) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if pred(e) {
                found = true;
            }
        });
        found
    }
}

/// A variable occurrence, tagged by kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarRef {
    Normal(String),
    Random(String),
    Dist(String, Version),
}

/// Normal and distance variables occurring in `e`. Use
/// [`free_vars_tagged`] to also separate out random variables.
pub fn free_vars(e: &Expr) -> BTreeSet<VarRef> {
    free_vars_tagged(e, &BTreeSet::new())
}

/// Like [`free_vars`], reporting names in `randoms` as [`VarRef::Random`].
pub fn free_vars_tagged(e: &Expr, randoms: &BTreeSet<String>) -> BTreeSet<VarRef> {
    let mut out = BTreeSet::new();
    e.walk(&mut |n| match n {
        Expr::Var(x) if randoms.contains(x) => {
            out.insert(VarRef::Random(x.clone()));
        }
        Expr::Var(x) => {
            out.insert(VarRef::Normal(x.clone()));
        }
        Expr::Dist(d) => {
            out.insert(VarRef::Dist(d.base.clone(), d.version));
        }
        _ => {}
    });
    out
}

/// Names of program (non-distance) variables occurring in `e`.
pub fn program_vars(e: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    e.walk(&mut |n| {
        if let Expr::Var(x) = n {
            out.insert(x.clone());
        }
    });
    out
}

/// Replace every occurrence of the program variable `target` with `replacement`.
pub fn substitute(e: &Expr, target: &str, replacement: &Expr) -> Expr {
    match e {
        Expr::Var(x) if x == target => replacement.clone(),
        _ => e.map_children(&mut |c| substitute(c, target, replacement)),
    }
}

/// Replace the index placeholder with `index`.
pub fn fill_hole(e: &Expr, index: &Expr) -> Expr {
    match e {
        Expr::Hole => index.clone(),
        _ => e.map_children(&mut |c| fill_hole(c, index)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Selector {
    Aligned,
    Shadow,
    Cond(Expr, Box<Selector>, Box<Selector>),
}

impl Selector {
    /// True if any leaf selects the shadow execution.
    pub fn uses_shadow(&self) -> bool {
        match self {
            Selector::Aligned => false,
            Selector::Shadow => true,
            Selector::Cond(_, a, b) => a.uses_shadow() || b.uses_shadow(),
        }
    }

    /// The select function: build the expression chosen between `aligned`
    /// and `shadow` according to this selector.
    pub fn select(&self, aligned: &Expr, shadow: &Expr) -> Expr {
        match self {
            Selector::Aligned => aligned.clone(),
            Selector::Shadow => shadow.clone(),
            Selector::Cond(c, a, b) => {
                let x = a.select(aligned, shadow);
                let y = b.select(aligned, shadow);
                if x == y {
                    x
                } else {
                    Expr::ternary(c.clone(), x, y)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Annotation {
    pub select: Selector,
    pub dist: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Distance {
    Num(Expr),
    Star,
    /// The `-` wildcard: the component is not tracked at all.
    Any,
}

impl Distance {
    pub fn zero() -> Distance {
        Distance::Num(num(0))
    }
    pub fn is_zero(&self) -> bool {
        matches!(self, Distance::Num(e) if e.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BaseType {
    Real,
    Bool,
    List(Box<DistType>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistType {
    pub base: BaseType,
    pub aligned: Distance,
    pub shadow: Distance,
}

impl DistType {
    pub fn real(aligned: Distance, shadow: Distance) -> DistType {
        DistType {
            base: BaseType::Real,
            aligned,
            shadow,
        }
    }
    pub fn real00() -> DistType {
        DistType::real(Distance::zero(), Distance::zero())
    }
    pub fn bool() -> DistType {
        DistType {
            base: BaseType::Bool,
            aligned: Distance::zero(),
            shadow: Distance::zero(),
        }
    }
    pub fn list(elem: DistType) -> DistType {
        DistType {
            base: BaseType::List(Box::new(elem)),
            aligned: Distance::zero(),
            shadow: Distance::zero(),
        }
    }
    pub fn component(&self, v: Version) -> &Distance {
        match v {
            Version::Aligned => &self.aligned,
            Version::Shadow => &self.shadow,
        }
    }
    pub fn component_mut(&mut self, v: Version) -> &mut Distance {
        match v {
            Version::Aligned => &mut self.aligned,
            Version::Shadow => &mut self.shadow,
        }
    }
    pub fn is_list(&self) -> bool {
        matches!(self.base, BaseType::List(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LValue {
    Var(String),
    Dist(String, Version),
}

impl LValue {
    pub fn name(&self) -> String {
        match self {
            LValue::Var(x) => x.clone(),
            LValue::Dist(x, v) => format!("{}{}", v.sigil(), x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CmdKind {
    Skip,
    Assign(LValue, Expr),
    Sample {
        var: String,
        scale: Expr,
        site: usize,
        ann: Option<Annotation>,
    },
    If(Expr, Vec<Cmd>, Vec<Cmd>),
    While(Expr, Vec<Cmd>),
    Return(Expr),
    Havoc(String),
    Assert(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cmd {
    pub kind: CmdKind,
    pub span: Span,
}

impl Cmd {
    pub fn new(kind: CmdKind) -> Cmd {
        Cmd {
            kind,
            span: Span::default(),
        }
    }
    pub fn at(kind: CmdKind, span: Span) -> Cmd {
        Cmd { kind, span }
    }
    pub fn assign(x: &str, e: Expr) -> Cmd {
        Cmd::new(CmdKind::Assign(LValue::Var(x.to_string()), e))
    }
    pub fn assign_dist(x: &str, v: Version, e: Expr) -> Cmd {
        Cmd::new(CmdKind::Assign(LValue::Dist(x.to_string(), v), e))
    }
}

/// Visit every command in a block, recursing into nested blocks.
pub fn walk_cmds<'a>(block: &'a [Cmd], f: &mut impl FnMut(&'a Cmd)) {
    for c in block {
        f(c);
        match &c.kind {
            CmdKind::If(_, a, b) => {
                walk_cmds(a, f);
                walk_cmds(b, f);
            }
            CmdKind::While(_, body) => walk_cmds(body, f),
            _ => {}
        }
    }
}

/// Program variables assigned (or sampled, or havocked) anywhere in `block`.
pub fn assigned_vars(block: &[Cmd]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_cmds(block, &mut |c| match &c.kind {
        CmdKind::Assign(LValue::Var(x), _) => {
            out.insert(x.clone());
        }
        CmdKind::Sample { var, .. } | CmdKind::Havoc(var) => {
            out.insert(var.clone());
        }
        _ => {}
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: String,
    pub ty: DistType,
}

/// One conjunct of a precondition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PreItem {
    AllDiffer(String),
    OneDiffer(String),
    Forall(String, Expr),
    Fact(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Param,
    pub pre: Vec<PreItem>,
    /// Privacy budget. `None` means the parameter `eps`.
    pub budget: Option<Expr>,
    pub body: Vec<Cmd>,
}

impl Program {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn budget_expr(&self) -> Expr {
        self.budget.clone().unwrap_or_else(|| var("eps"))
    }

    /// Names of all sampled variables.
    pub fn random_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        walk_cmds(&self.body, &mut |c| {
            if let CmdKind::Sample { var, .. } | CmdKind::Havoc(var) = &c.kind {
                out.insert(var.clone());
            }
        });
        out
    }

    /// Sampling commands in textual order.
    pub fn samples(&self) -> Vec<&Cmd> {
        let mut out = Vec::new();
        walk_cmds(&self.body, &mut |c| {
            if matches!(c.kind, CmdKind::Sample { .. }) {
                out.push(c);
            }
        });
        out
    }

    /// Lists constrained by an adjacency macro.
    pub fn macro_lists(&self) -> BTreeSet<String> {
        self.pre
            .iter()
            .filter_map(|p| match p {
                PreItem::AllDiffer(q) | PreItem::OneDiffer(q) => Some(q.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Role of a distance variable registered by [`desugar_star_params`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistRole {
    Input,
    Return,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistVarDecl {
    pub base: String,
    pub version: Version,
    pub is_list: bool,
    pub role: DistRole,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("name clash: `{name}` is reserved for instrumentation")]
pub struct NameClash {
    pub name: String,
}

/// True for identifiers reserved by instrumentation and emitted code.
pub fn is_reserved_ident(name: &str) -> bool {
    name == COST_VAR || name.starts_with("hat_") || name.starts_with("tilde_")
}

fn star_components(ty: &DistType) -> (bool, bool, bool) {
    match &ty.base {
        BaseType::List(elem) => {
            let (a, s, _) = star_components(elem);
            (a, s, true)
        }
        _ => (
            ty.aligned == Distance::Star,
            ty.shadow == Distance::Star,
            false,
        ),
    }
}

/// Register the hidden distance variables introduced by `*` distances in
/// the signature. Identifiers that would collide with the generated names
/// are rejected.
pub fn desugar_star_params(p: &Program) -> Result<(Program, BTreeSet<DistVarDecl>), NameClash> {
    let mut names: Vec<String> = p.params.iter().map(|x| x.name.clone()).collect();
    names.push(p.ret.name.clone());
    names.extend(assigned_vars(&p.body));
    if let Some(bad) = names.iter().find(|n| is_reserved_ident(n)) {
        return Err(NameClash { name: bad.clone() });
    }
    Ok((p.clone(), star_dist_decls(p)))
}

/// The hidden distance variables introduced by `*` distances in the
/// signature.
pub fn star_dist_decls(p: &Program) -> BTreeSet<DistVarDecl> {
    let mut decls = BTreeSet::new();
    let mut register = |param: &Param, role: DistRole| {
        let (a, s, is_list) = star_components(&param.ty);
        for (on, version) in [(a, Version::Aligned), (s, Version::Shadow)] {
            if on {
                decls.insert(DistVarDecl {
                    base: param.name.clone(),
                    version,
                    is_list,
                    role: role.clone(),
                });
            }
        }
    };
    for param in &p.params {
        register(param, DistRole::Input);
    }
    register(&p.ret, DistRole::Return);
    decls
}
