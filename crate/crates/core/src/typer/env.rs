//! Typing environments and the two-level distance lattice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ast::*;
use crate::printer::print_type;

/// Join of two distances: equal distances are kept, anything else goes to
/// `*`. The `-` wildcard sits above `*`.
pub fn join_distance(a: &Distance, b: &Distance) -> Distance {
    match (a, b) {
        (Distance::Any, _) | (_, Distance::Any) => Distance::Any,
        _ if a == b => a.clone(),
        _ => Distance::Star,
    }
}

/// `a ⊑ b` on distances.
pub fn distance_leq(a: &Distance, b: &Distance) -> bool {
    match (a, b) {
        (_, Distance::Any) => true,
        (Distance::Any, _) => false,
        (_, Distance::Star) => true,
        (Distance::Star, _) => false,
        _ => a == b,
    }
}

/// Componentwise join. Base types must agree; `None` signals a mismatch.
pub fn join_type(a: &DistType, b: &DistType) -> Option<DistType> {
    let base = match (&a.base, &b.base) {
        (BaseType::List(x), BaseType::List(y)) => BaseType::List(Box::new(join_type(x, y)?)),
        (x, y) if x == y => x.clone(),
        _ => return None,
    };
    Some(DistType {
        base,
        aligned: join_distance(&a.aligned, &b.aligned),
        shadow: join_distance(&a.shadow, &b.shadow),
    })
}

pub fn type_leq(a: &DistType, b: &DistType) -> bool {
    let base_ok = match (&a.base, &b.base) {
        (BaseType::List(x), BaseType::List(y)) => type_leq(x, y),
        (x, y) => x == y,
    };
    base_ok && distance_leq(&a.aligned, &b.aligned) && distance_leq(&a.shadow, &b.shadow)
}

/// Flow-sensitive map from variables to distance types.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Env {
    vars: BTreeMap<String, DistType>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn get(&self, x: &str) -> Option<&DistType> {
        self.vars.get(x)
    }

    pub fn get_mut(&mut self, x: &str) -> Option<&mut DistType> {
        self.vars.get_mut(x)
    }

    pub fn insert(&mut self, x: &str, t: DistType) {
        self.vars.insert(x.to_string(), t);
    }

    pub fn remove(&mut self, x: &str) {
        self.vars.remove(x);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DistType)> {
        self.vars.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Keep only the variables in `keep`.
    pub fn retain(&mut self, keep: &BTreeSet<String>) {
        self.vars.retain(|k, _| keep.contains(k));
    }

    /// Apply `f` to every scalar distance component (list element types
    /// included).
    pub fn map_distances(&mut self, f: &mut impl FnMut(&str, Version, &Distance) -> Distance) {
        fn go(
            name: &str,
            t: &mut DistType,
            f: &mut impl FnMut(&str, Version, &Distance) -> Distance,
        ) {
            if let BaseType::List(elem) = &mut t.base {
                go(name, elem, f);
                return;
            }
            if t.base == BaseType::Bool {
                return;
            }
            t.aligned = f(name, Version::Aligned, &t.aligned);
            t.shadow = f(name, Version::Shadow, &t.shadow);
        }
        for (name, t) in self.vars.iter_mut() {
            go(name, t, f);
        }
    }

    /// Pointwise join. A variable bound on only one side keeps that binding.
    /// Returns `Err(name)` when base types disagree.
    pub fn join(&self, other: &Env) -> Result<Env, String> {
        let mut out = self.clone();
        for (k, t) in &other.vars {
            let joined = match self.vars.get(k) {
                None => t.clone(),
                Some(s) => join_type(s, t).ok_or_else(|| k.clone())?,
            };
            out.vars.insert(k.clone(), joined);
        }
        Ok(out)
    }

    /// Pointwise ordering. Variables missing from `other` are not ordered.
    pub fn leq(&self, other: &Env) -> bool {
        self.vars
            .iter()
            .all(|(k, t)| other.vars.get(k).is_some_and(|u| type_leq(t, u)))
    }
}

impl fmt::Display for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .vars
            .iter()
            .map(|(k, t)| format!("{k}: {}", print_type(t)))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl FromIterator<(String, DistType)> for Env {
    fn from_iter<I: IntoIterator<Item = (String, DistType)>>(iter: I) -> Env {
        Env {
            vars: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_expr;

    fn d(s: &str) -> Distance {
        Distance::Num(parse_expr(s).unwrap())
    }

    #[test]
    fn join_examples() {
        assert_eq!(join_distance(&d("3"), &d("4")), Distance::Star);
        assert_eq!(join_distance(&d("x + y"), &d("x + y")), d("x + y"));
        assert_eq!(join_distance(&d("0"), &d("0")), d("0"));
        assert_eq!(join_distance(&Distance::Star, &d("0")), Distance::Star);
        assert_eq!(join_distance(&Distance::Any, &d("0")), Distance::Any);
    }

    #[test]
    fn env_join_orders_both_sides() {
        let a: Env = [("x".to_string(), DistType::real(d("1"), d("0")))]
            .into_iter()
            .collect();
        let b: Env = [("x".to_string(), DistType::real(d("0"), d("0")))]
            .into_iter()
            .collect();
        let j = a.join(&b).unwrap();
        assert!(a.leq(&j) && b.leq(&j));
        assert_eq!(j.get("x").unwrap().aligned, Distance::Star);
        assert_eq!(j.get("x").unwrap().shadow, d("0"));
    }
}
