//! What a receiver can check about an incoming message, and matching of
//! ground payloads against that view.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::term::{derive, KnowledgeSet, Name, Term};

/// Substitution from template keys (variables or opaque sub-templates) to
/// ground values.
pub type Bindings = BTreeMap<Term, Term>;

/// Type constraint on a bound value (the typed intruder model).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    Agent,
    /// Nonces: only fresh values fit.
    Number,
    /// Opaque blob; anything fits.
    Message,
}

impl Sort {
    pub fn admits(self, value: &Term) -> bool {
        match self {
            Sort::Agent => value.is_agent(),
            Sort::Number => matches!(value, Term::Fresh { .. }),
            Sort::Message => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// The receiver can recompute this template and compares for equality.
    Check(Term),
    /// Whatever arrives here is accepted and remembered under `key`.
    Bind { key: Term, sort: Sort },
    Tuple(Vec<Pattern>),
}

impl Pattern {
    /// Bind keys in matching order.
    pub fn bind_keys(&self) -> Vec<(&Term, Sort)> {
        let mut out = Vec::new();
        self.collect_binds(&mut out);
        out
    }

    fn collect_binds<'a>(&'a self, out: &mut Vec<(&'a Term, Sort)>) {
        match self {
            Pattern::Check(_) => {}
            Pattern::Bind { key, sort } => out.push((key, *sort)),
            Pattern::Tuple(ps) => ps.iter().for_each(|p| p.collect_binds(out)),
        }
    }

    pub fn is_single_bind(&self) -> bool {
        matches!(self, Pattern::Bind { .. })
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Check(t) => match t {
                Term::Tuple(_) => write!(f, "?({t})"),
                _ => write!(f, "?{t}"),
            },
            Pattern::Bind { key, .. } => match key {
                Term::Tuple(_) => write!(f, "*({key})"),
                _ => write!(f, "*{key}"),
            },
            Pattern::Tuple(ps) => {
                f.write_str("<")?;
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(">")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("malformed template: variable `{0}` is neither bound nor bindable")]
    Malformed(Name),
}

/// Computes the receiver's view of `msg`.
///
/// `k` is the receiver's knowledge (variables it already knows count as
/// known names), `bound` substitutes already-bound keys, and `sort_of`
/// gives the sort of a variable the receiver may bind. Tuple items are
/// processed left to right, so a value bound early in a message can be
/// checked later in the same message.
pub fn recognizable_pattern(
    k: &KnowledgeSet,
    bound: &Bindings,
    msg: &Term,
    sort_of: &dyn Fn(&str) -> Option<Sort>,
) -> Result<Pattern, PatternError> {
    let mut view = k.clone();
    for v in bound.values() {
        view.insert(v.clone());
    }
    build(&mut view, bound, msg, sort_of)
}

fn build(
    view: &mut KnowledgeSet,
    bound: &Bindings,
    msg: &Term,
    sort_of: &dyn Fn(&str) -> Option<Sort>,
) -> Result<Pattern, PatternError> {
    if derive(view, &msg.substitute(bound)) {
        return Ok(Pattern::Check(msg.clone()));
    }
    match msg {
        Term::Var(name) => {
            let sort = sort_of(name).ok_or_else(|| PatternError::Malformed(name.clone()))?;
            view.insert(msg.clone());
            Ok(Pattern::Bind { key: msg.clone(), sort })
        }
        Term::Tuple(items) => {
            let mut ps = Vec::with_capacity(items.len());
            for item in items {
                ps.push(build(view, bound, item, sort_of)?);
            }
            Ok(Pattern::Tuple(ps))
        }
        // Unrecognisable application (or unknown constant): one opaque slot.
        _ => {
            view.insert(msg.clone());
            Ok(Pattern::Bind { key: msg.clone(), sort: Sort::Message })
        }
    }
}

/// Instantiates a template under `b`; `None` if some variable is unbound.
pub fn instantiate(t: &Term, b: &Bindings) -> Option<Term> {
    if let Some(v) = b.get(t) {
        return Some(v.clone());
    }
    match t {
        Term::Var(_) => None,
        Term::App { fun, args } => Some(Term::App {
            fun: fun.clone(),
            args: args.iter().map(|a| instantiate(a, b)).collect::<Option<_>>()?,
        }),
        Term::Tuple(items) => {
            Some(Term::Tuple(items.iter().map(|a| instantiate(a, b)).collect::<Option<_>>()?))
        }
        other => Some(other.clone()),
    }
}

/// Matches a ground payload; returns the extended bindings or `None`.
pub fn match_pattern(p: &Pattern, payload: &Term, bound: &Bindings) -> Option<Bindings> {
    let mut b = bound.clone();
    if go(p, payload, &mut b) {
        Some(b)
    } else {
        None
    }
}

fn go(p: &Pattern, payload: &Term, b: &mut Bindings) -> bool {
    match p {
        Pattern::Check(t) => instantiate(t, b).as_ref() == Some(payload),
        Pattern::Bind { key, sort } => match b.get(key) {
            Some(existing) => existing == payload,
            None => {
                if !sort.admits(payload) {
                    return false;
                }
                b.insert(key.clone(), payload.clone());
                true
            }
        },
        Pattern::Tuple(ps) => match payload {
            Term::Tuple(items) if items.len() == ps.len() => {
                ps.iter().zip(items).all(|(p, item)| go(p, item, b))
            }
            _ => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::AtomKind;

    fn sorts(name: &str) -> Option<Sort> {
        match name {
            "AISP" | "A" => Some(Sort::Agent),
            "N" | "X" => Some(Sort::Number),
            _ => None,
        }
    }

    fn honest(n: &str) -> Term {
        Term::atom(n, AtomKind::Honest)
    }

    #[test]
    fn unknown_server_function_collapses_to_one_slot() {
        let token = Term::app("fClientCredToken", vec![Term::var("AISP")]);
        let k = KnowledgeSet::from_parts([Term::var("AISP")], []);
        let p = recognizable_pattern(&k, &Bindings::new(), &token, &sorts).unwrap();
        assert_eq!(p, Pattern::Bind { key: token, sort: Sort::Message });
    }

    #[test]
    fn bind_then_check_within_one_message() {
        let secret = Term::app("fAISPSecret", vec![Term::var("AISP")]);
        let msg = Term::tuple(vec![Term::var("AISP"), secret.clone()]);
        let k = KnowledgeSet::from_parts([], [("fAISPSecret".into(), 1)]);
        let p = recognizable_pattern(&k, &Bindings::new(), &msg, &sorts).unwrap();
        assert_eq!(
            p,
            Pattern::Tuple(vec![
                Pattern::Bind { key: Term::var("AISP"), sort: Sort::Agent },
                Pattern::Check(secret.clone()),
            ])
        );
        let payload = Term::tuple(vec![
            honest("aisp1"),
            Term::app("fAISPSecret", vec![honest("aisp1")]),
        ]);
        let b = match_pattern(&p, &payload, &Bindings::new()).unwrap();
        assert_eq!(b.get(&Term::var("AISP")), Some(&honest("aisp1")));
        let forged = Term::tuple(vec![
            honest("aisp1"),
            Term::app("fAISPSecret", vec![honest("other")]),
        ]);
        assert_eq!(match_pattern(&p, &forged, &Bindings::new()), None);
    }

    #[test]
    fn known_constant_is_checked() {
        let c = Term::atom("aspspA", AtomKind::Trusted);
        let k = KnowledgeSet::from_parts([c.clone()], []);
        let p = recognizable_pattern(&k, &Bindings::new(), &c, &sorts).unwrap();
        assert_eq!(p, Pattern::Check(c));
    }

    #[test]
    fn undeclared_variable_is_malformed() {
        let err = recognizable_pattern(&KnowledgeSet::new(), &Bindings::new(), &Term::var("Q"), &sorts);
        assert_eq!(err, Err(PatternError::Malformed("Q".into())));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Pattern::Tuple(vec![
            Pattern::Check(Term::var("N")),
            Pattern::Bind { key: Term::var("X"), sort: Sort::Message },
        ]);
        let mut b = Bindings::new();
        b.insert(Term::var("N"), Term::fresh("N", 1, "A"));
        let intent = Term::app("fCreateIntent", vec![honest("t"), honest("u")]);
        assert_eq!(match_pattern(&p, &intent, &b), None);
    }

    #[test]
    fn single_bind_accepts_anything_of_its_sort() {
        let p = Pattern::Bind { key: Term::var("X"), sort: Sort::Message };
        let intent = Term::app("fCreateIntent", vec![honest("t")]);
        let b = match_pattern(&p, &intent, &Bindings::new()).unwrap();
        assert_eq!(b[&Term::var("X")], intent);
        let n = Pattern::Bind { key: Term::var("N"), sort: Sort::Number };
        assert_eq!(match_pattern(&n, &intent, &Bindings::new()), None);
        assert!(match_pattern(&n, &Term::fresh("N", 1, "A"), &Bindings::new()).is_some());
    }

    #[test]
    fn rebinding_must_agree() {
        let p = Pattern::Bind { key: Term::var("A"), sort: Sort::Agent };
        let mut b = Bindings::new();
        b.insert(Term::var("A"), honest("a1"));
        assert!(match_pattern(&p, &honest("a1"), &b).is_some());
        assert!(match_pattern(&p, &honest("a2"), &b).is_none());
    }
}
