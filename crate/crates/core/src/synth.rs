//! Enumerative search for sampling annotations.
//!
//! Each unannotated sampling site gets a list of candidate annotations
//! built from a few selector shapes and small alignments. Candidate vectors
//! are tried in a fixed order until one type checks (and, optionally,
//! passes bounded verification).
//!
//! Vectors are ordered by the sum of their per-site ranks, then
//! lexicographically, so cheap choices at every site come first.

use std::collections::BTreeSet;

use crate::ast::*;
use crate::constraints::Solver;
use crate::printer::{print_expr, print_selector};
use crate::target::{bounded_verify, to_target, GridConfig};
use crate::typer::check_program;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpace {
    pub site: usize,
    pub var: String,
    /// Guard of the first conditional after the site that reads the sample.
    pub branch: Option<Expr>,
    pub candidates: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSpace {
    pub sites: Vec<SiteSpace>,
}

impl CandidateSpace {
    /// Number of annotation vectors, saturating.
    pub fn size(&self) -> u128 {
        self.sites.iter().fold(1u128, |acc, s| {
            acc.saturating_mul(s.candidates.len() as u128)
        })
    }
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub program: Program,
    pub explored: usize,
    pub space: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no annotation found after {explored} of {space} candidates")]
pub struct SynthFailure {
    pub explored: usize,
    pub space: u128,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Also require bounded verification on this grid. Without it, any
    /// candidate whose branch assertions are left to the verifier is
    /// accepted.
    pub verify: Option<GridConfig>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            verify: Some(GridConfig {
                stop_on_failure: true,
                ..GridConfig::default()
            }),
        }
    }
}

const CONSTANTS: [i64; 5] = [0, 1, -1, 2, -2];

fn reads_var(e: &Expr, x: &str) -> bool {
    e.contains(&|s| matches!(s, Expr::Var(v) if v == x))
}

/// Guard of the first `if` following position `k` of `block` whose guard
/// reads `eta`.
fn following_branch(block: &[Cmd], k: usize, eta: &str) -> Option<Expr> {
    block[k + 1..].iter().find_map(|c| match &c.kind {
        CmdKind::If(g, _, _) if reads_var(g, eta) => Some(g.clone()),
        _ => None,
    })
}

struct Collector<'a> {
    program: &'a Program,
    list_reads: Vec<Expr>,
    assigned: Vec<String>,
    sites: Vec<SiteSpace>,
}

impl Collector<'_> {
    fn block(&mut self, block: &[Cmd]) {
        for (k, c) in block.iter().enumerate() {
            match &c.kind {
                CmdKind::Assign(LValue::Var(x), _) => {
                    if !self.assigned.contains(x) {
                        self.assigned.push(x.clone());
                    }
                }
                CmdKind::Sample {
                    var: eta,
                    site,
                    ann,
                    ..
                } => {
                    let branch = following_branch(block, k, eta);
                    let candidates = match ann {
                        Some(a) => vec![a.clone()],
                        None => self.candidates(eta, branch.as_ref()),
                    };
                    self.sites.push(SiteSpace {
                        site: *site,
                        var: eta.clone(),
                        branch,
                        candidates,
                    });
                    if !self.assigned.contains(eta) {
                        self.assigned.push(eta.clone());
                    }
                }
                CmdKind::If(_, a, b) => {
                    self.block(a);
                    self.block(b);
                }
                CmdKind::While(_, b) => self.block(b),
                _ => {}
            }
        }
    }

    fn candidates(&self, eta: &str, branch: Option<&Expr>) -> Vec<Annotation> {
        let mut selectors = vec![Selector::Aligned, Selector::Shadow];
        if let Some(g) = branch {
            let cond = |a, b| Selector::Cond(g.clone(), Box::new(a), Box::new(b));
            selectors.push(cond(Selector::Aligned, Selector::Shadow));
            selectors.push(cond(Selector::Shadow, Selector::Aligned));
        }
        let mut dists: Vec<Expr> = CONSTANTS.iter().map(|&n| num(n)).collect();
        let randoms = self.program.random_vars();
        let mut reads: Vec<Expr> = self
            .assigned
            .iter()
            .filter(|x| {
                *x != eta
                    && !randoms.contains(*x)
                    && self.program.param(x).is_none()
                    && **x != self.program.ret.name
            })
            .map(|x| dist(x, Version::Aligned))
            .collect();
        reads.extend(self.list_reads.iter().cloned());
        for r in reads {
            dists.push(Expr::sub(num(0), r.clone()));
            dists.push(r);
        }
        if let Some(g) = branch {
            for &a in &CONSTANTS {
                for &b in &CONSTANTS {
                    if a != b {
                        dists.push(Expr::ternary(g.clone(), num(a), num(b)));
                    }
                }
            }
        }
        let mut out = Vec::new();
        for dist in &dists {
            for select in &selectors {
                out.push(Annotation {
                    select: select.clone(),
                    dist: dist.clone(),
                });
            }
        }
        out
    }
}

/// `^q[e]` for every read `q[e]` of a list parameter with a `*` distance.
fn list_reads(p: &Program, star_lists: &BTreeSet<String>) -> Vec<Expr> {
    let mut seen: Vec<Expr> = Vec::new();
    walk_cmds(&p.body, &mut |c| {
        let mut visit = |e: &Expr| {
            e.walk(&mut |s| {
                if let Expr::Index(a, i) = s {
                    if let Expr::Var(q) = a.as_ref() {
                        let d = dist_at(q, Version::Aligned, (**i).clone());
                        if star_lists.contains(q) && !seen.contains(&d) {
                            seen.push(d);
                        }
                    }
                }
            })
        };
        match &c.kind {
            CmdKind::Assign(_, e)
            | CmdKind::Assert(e)
            | CmdKind::Return(e)
            | CmdKind::If(e, _, _)
            | CmdKind::While(e, _) => visit(e),
            CmdKind::Sample { scale, .. } => visit(scale),
            CmdKind::Havoc(_) | CmdKind::Skip => {}
        }
    });
    seen
}

pub fn candidate_space(p: &Program) -> CandidateSpace {
    let star_lists: BTreeSet<String> = p
        .params
        .iter()
        .filter(|x| matches!(&x.ty.base, BaseType::List(e) if e.aligned == Distance::Star))
        .map(|x| x.name.clone())
        .collect();
    let reads = list_reads(p, &star_lists);
    let mut c = Collector {
        program: p,
        list_reads: reads,
        assigned: Vec::new(),
        sites: Vec::new(),
    };
    c.block(&p.body);
    CandidateSpace { sites: c.sites }
}

/// Index vectors in order of increasing rank sum, lexicographic within a sum.
struct Diagonal {
    sizes: Vec<usize>,
    sum: usize,
    current: Option<Vec<usize>>,
}

impl Diagonal {
    fn new(sizes: Vec<usize>) -> Self {
        Diagonal {
            sizes,
            sum: 0,
            current: None,
        }
    }

    fn max_sum(&self) -> usize {
        self.sizes.iter().map(|s| s.saturating_sub(1)).sum()
    }

    /// First vector of the given sum, lexicographically.
    fn first_with_sum(&self, sum: usize) -> Option<Vec<usize>> {
        let mut v = vec![0; self.sizes.len()];
        let mut left = sum;
        for k in (0..self.sizes.len()).rev() {
            let take = left.min(self.sizes[k] - 1);
            v[k] = take;
            left -= take;
        }
        (left == 0).then_some(v)
    }

    /// Next vector with the same sum in lexicographic order.
    fn next_same_sum(&self, v: &[usize]) -> Option<Vec<usize>> {
        let n = v.len();
        // Find the rightmost position that can grow while a later position
        // gives up one unit.
        for k in (0..n.saturating_sub(1)).rev() {
            let rest: usize = v[k + 1..].iter().sum();
            if v[k] + 1 < self.sizes[k] && rest > 0 {
                let mut next = v[..=k].to_vec();
                next[k] += 1;
                let mut left = rest - 1;
                let mut tail = vec![0; n - k - 1];
                for j in (0..tail.len()).rev() {
                    let take = left.min(self.sizes[k + 1 + j] - 1);
                    tail[j] = take;
                    left -= take;
                }
                if left == 0 {
                    next.extend(tail);
                    return Some(next);
                }
            }
        }
        None
    }
}

impl Iterator for Diagonal {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.sizes.contains(&0) {
            return None;
        }
        let next = match &self.current {
            None => self.first_with_sum(0),
            Some(v) => self.next_same_sum(v).or_else(|| {
                while self.sum < self.max_sum() {
                    self.sum += 1;
                    if let Some(v) = self.first_with_sum(self.sum) {
                        return Some(v);
                    }
                }
                None
            }),
        };
        self.current = next.clone();
        next
    }
}

fn annotate(block: &[Cmd], chosen: &[(usize, Annotation)]) -> Vec<Cmd> {
    block
        .iter()
        .map(|c| {
            let kind = match &c.kind {
                CmdKind::Sample {
                    var,
                    scale,
                    site,
                    ann,
                } => {
                    let ann = chosen
                        .iter()
                        .find(|(s, _)| s == site)
                        .map(|(_, a)| a.clone())
                        .or_else(|| ann.clone());
                    CmdKind::Sample {
                        var: var.clone(),
                        scale: scale.clone(),
                        site: *site,
                        ann,
                    }
                }
                CmdKind::If(g, a, b) => {
                    CmdKind::If(g.clone(), annotate(a, chosen), annotate(b, chosen))
                }
                CmdKind::While(g, b) => CmdKind::While(g.clone(), annotate(b, chosen)),
                k => k.clone(),
            };
            Cmd::at(kind, c.span)
        })
        .collect()
}

/// Try annotation vectors in order until one is accepted, checking at most
/// `budget` of them.
pub fn synthesize_annotations(
    p: &Program,
    budget: usize,
    solver: &Solver,
    opts: &SynthOptions,
) -> Result<Synthesized, SynthFailure> {
    let space = candidate_space(p);
    let size = space.size();
    if space.sites.is_empty() {
        return Ok(Synthesized {
            program: p.clone(),
            explored: 0,
            space: size,
        });
    }
    let sizes: Vec<usize> = space.sites.iter().map(|s| s.candidates.len()).collect();
    let mut explored = 0;
    for pick in Diagonal::new(sizes).take(budget) {
        explored += 1;
        let chosen: Vec<(usize, Annotation)> = space
            .sites
            .iter()
            .zip(&pick)
            .map(|(s, &k)| (s.site, s.candidates[k].clone()))
            .collect();
        let candidate = Program {
            body: annotate(&p.body, &chosen),
            ..p.clone()
        };
        let Ok(checked) = check_program(&candidate, solver) else {
            continue;
        };
        if let Some(grid) = &opts.verify {
            match bounded_verify(&to_target(&checked), grid) {
                Ok(r) if r.pass() => {}
                _ => continue,
            }
        }
        return Ok(Synthesized {
            program: candidate,
            explored,
            space: size,
        });
    }
    Err(SynthFailure {
        explored,
        space: size,
    })
}

/// Remove every sampling annotation.
pub fn strip_annotations(p: &Program) -> Program {
    fn strip(block: &[Cmd]) -> Vec<Cmd> {
        block
            .iter()
            .map(|c| {
                let kind = match &c.kind {
                    CmdKind::Sample {
                        var, scale, site, ..
                    } => CmdKind::Sample {
                        var: var.clone(),
                        scale: scale.clone(),
                        site: *site,
                        ann: None,
                    },
                    CmdKind::If(g, a, b) => CmdKind::If(g.clone(), strip(a), strip(b)),
                    CmdKind::While(g, b) => CmdKind::While(g.clone(), strip(b)),
                    k => k.clone(),
                };
                Cmd::at(kind, c.span)
            })
            .collect()
    }
    Program {
        body: strip(&p.body),
        ..p.clone()
    }
}

/// One line per annotation: `site N (eta): select; dist`.
pub fn describe_annotations(p: &Program) -> Vec<String> {
    let mut out = Vec::new();
    walk_cmds(&p.body, &mut |c| {
        if let CmdKind::Sample {
            var,
            site,
            ann: Some(a),
            ..
        } = &c.kind
        {
            out.push(format!(
                "site {site} ({var}): {}; {}",
                print_selector(&a.select),
                print_expr(&a.dist)
            ));
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::parser::parse_program;

    fn skeleton(name: &str) -> Program {
        strip_annotations(&parse_program(corpus::get(name).unwrap().source).unwrap())
    }

    #[test]
    fn diagonal_order_covers_the_product_once() {
        let all: Vec<Vec<usize>> = Diagonal::new(vec![2, 3, 1]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 1, 0]);
        assert_eq!(all[2], vec![1, 0, 0]);
        let sums: Vec<usize> = all.iter().map(|v| v.iter().sum()).collect();
        assert!(sums.windows(2).all(|w| w[0] <= w[1]));
        let unique: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(unique.len(), 6);
        assert_eq!(Diagonal::new(vec![]).count(), 1);
        assert_eq!(Diagonal::new(vec![3, 0]).count(), 0);
    }

    #[test]
    fn noisymax_space_uses_the_branch() {
        let space = candidate_space(&skeleton("noisymax"));
        assert_eq!(space.sites.len(), 1);
        let s = &space.sites[0];
        assert_eq!(
            print_expr(s.branch.as_ref().unwrap()),
            "q[i] + eta > bq || i = 0"
        );
        assert!(s
            .candidates
            .iter()
            .all(|a| !reads_var(&a.dist, "eta")
                || a.dist.contains(&|e| matches!(e, Expr::Ternary(..)))));
    }

    #[test]
    fn noisymax_and_partialsum_are_recovered() {
        let solver = Solver::default();
        let found = synthesize_annotations(
            &skeleton("noisymax"),
            200,
            &solver,
            &SynthOptions::default(),
        )
        .unwrap();
        assert_eq!(describe_annotations(&found.program), ["site 0 (eta): (q[i] + eta > bq || i = 0) ? shadow : aligned; q[i] + eta > bq || i = 0 ? 2 : 0"]);
        assert!(found.explored <= 200);
        eprintln!("noisymax: {} of {} candidates", found.explored, found.space);
        let found = synthesize_annotations(
            &skeleton("partialsum"),
            200,
            &solver,
            &SynthOptions::default(),
        )
        .unwrap();
        assert_eq!(
            describe_annotations(&found.program),
            ["site 0 (eta): aligned; 0 - ^sum"]
        );
        eprintln!(
            "partialsum: {} of {} candidates",
            found.explored, found.space
        );
    }

    #[test]
    fn reused_noise_svt_has_no_annotation() {
        let e = synthesize_annotations(
            &skeleton("svt_unsafe"),
            200,
            &Solver::default(),
            &SynthOptions::default(),
        )
        .unwrap_err();
        assert!(e.explored as u128 == e.space.min(200), "{e}");
    }

    #[test]
    fn no_sampling_is_unchanged() {
        let p = parse_program("function F(x: real<0, 0>) returns (r: real<0, 0>) precondition true { r := x; return r; }").unwrap();
        let s =
            synthesize_annotations(&p, 10, &Solver::default(), &SynthOptions::default()).unwrap();
        assert_eq!(s.program, p);
        assert_eq!(s.explored, 0);
    }

    #[test]
    fn budget_is_respected() {
        let e = synthesize_annotations(
            &skeleton("noisymax"),
            3,
            &Solver::default(),
            &SynthOptions::default(),
        )
        .unwrap_err();
        assert_eq!(e.explored, 3);
    }
}
