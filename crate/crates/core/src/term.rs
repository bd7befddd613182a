//! Symbolic message algebra and composition-only deduction.
//!
//! Function symbols are uninterpreted and one-way: knowing `f(x)` never
//! reveals `x`, and `f(x)` can only be built by a holder of `f`. Tuples are
//! the only constructor that can be taken apart.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};

pub type Name = Arc<str>;

/// What an atomic constant stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomKind {
    /// Lower-case agent names; never played by the intruder.
    Trusted,
    /// Honest agent instantiating a role variable (`p1`, `a1`, ...).
    Honest,
    /// The intruder identity `i`.
    Intruder,
    /// Any other public constant.
    Public,
}

impl AtomKind {
    pub fn is_agent(self) -> bool {
        !matches!(self, AtomKind::Public)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Atom { name: Name, kind: AtomKind },
    Var(Name),
    /// A number minted by `owner` in session `session`.
    Fresh { name: Name, session: u32, owner: Name },
    App { fun: Name, args: Vec<Term> },
    /// Fixed-arity, non-associative tuple with at least two items.
    Tuple(Vec<Term>),
}

impl Term {
    pub fn atom(name: &str, kind: AtomKind) -> Term {
        Term::Atom { name: name.into(), kind }
    }

    pub fn var(name: &str) -> Term {
        Term::Var(name.into())
    }

    pub fn fresh(name: &str, session: u32, owner: &str) -> Term {
        Term::Fresh { name: name.into(), session, owner: owner.into() }
    }

    pub fn app(fun: &str, args: Vec<Term>) -> Term {
        Term::App { fun: fun.into(), args }
    }

    /// Builds a tuple; panics on fewer than two items.
    pub fn tuple(items: Vec<Term>) -> Term {
        assert!(items.len() >= 2, "tuple arity must be at least 2");
        Term::Tuple(items)
    }

    /// Height of the term tree; leaves have height 1.
    pub fn height(&self) -> usize {
        match self {
            Term::App { args, .. } => 1 + args.iter().map(Term::height).max().unwrap_or(0),
            Term::Tuple(items) => 1 + items.iter().map(Term::height).max().unwrap_or(0),
            _ => 1,
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::App { args, .. } => args.iter().all(Term::is_ground),
            Term::Tuple(items) => items.iter().all(Term::is_ground),
            _ => true,
        }
    }

    /// True if `needle` occurs anywhere in `self` (including `self` itself).
    pub fn contains(&self, needle: &Term) -> bool {
        if self == needle {
            return true;
        }
        match self {
            Term::App { args, .. } => args.iter().any(|a| a.contains(needle)),
            Term::Tuple(items) => items.iter().any(|a| a.contains(needle)),
            _ => false,
        }
    }

    /// Pre-order walk over all subterms.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.push(t);
            match t {
                Term::App { args, .. } => stack.extend(args.iter().rev()),
                Term::Tuple(items) => stack.extend(items.iter().rev()),
                _ => {}
            }
        }
        out
    }

    /// Variable names in order of first occurrence.
    pub fn vars(&self) -> Vec<Name> {
        let mut seen = Vec::new();
        for t in self.subterms() {
            if let Term::Var(v) = t {
                if !seen.contains(v) {
                    seen.push(v.clone());
                }
            }
        }
        seen
    }

    /// Top-level tuple items, or the term itself.
    pub fn components(&self) -> &[Term] {
        match self {
            Term::Tuple(items) => items,
            other => std::slice::from_ref(other),
        }
    }

    /// Replaces every subterm that is a key of `map` (outermost first).
    pub fn substitute(&self, map: &BTreeMap<Term, Term>) -> Term {
        if let Some(v) = map.get(self) {
            return v.clone();
        }
        match self {
            Term::App { fun, args } => Term::App {
                fun: fun.clone(),
                args: args.iter().map(|a| a.substitute(map)).collect(),
            },
            Term::Tuple(items) => Term::Tuple(items.iter().map(|a| a.substitute(map)).collect()),
            other => other.clone(),
        }
    }

    pub fn is_agent(&self) -> bool {
        matches!(self, Term::Atom { kind, .. } if kind.is_agent())
    }

    fn fmt_item(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Tuple(_) => write!(f, "({self})"),
            _ => write!(f, "{self}"),
        }
    }
}

/// Tuples print without outer parentheses; nested tuples are parenthesised.
impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom { name, .. } | Term::Var(name) => f.write_str(name),
            Term::Fresh { name, session, owner } => write!(f, "{name}@{owner}.{session}"),
            Term::App { fun, args } => {
                write!(f, "{fun}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.fmt_item(f)?;
                }
                f.write_str(")")
            }
            Term::Tuple(items) => {
                for (i, a) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.fmt_item(f)?;
                }
                Ok(())
            }
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Terms an agent holds plus the function symbols it may apply.
///
/// Stored terms are kept analysed: inserting a tuple stores its components,
/// so membership of a known tuple's parts is a plain lookup.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct KnowledgeSet {
    terms: BTreeSet<Term>,
    functions: BTreeMap<Name, usize>,
}

impl KnowledgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts<I, F>(terms: I, functions: F) -> Self
    where
        I: IntoIterator<Item = Term>,
        F: IntoIterator<Item = (Name, usize)>,
    {
        let mut k = KnowledgeSet::new();
        for t in terms {
            k.insert(t);
        }
        for (f, n) in functions {
            k.add_function(f, n);
        }
        k
    }

    /// Adds a term; returns true if anything new was learned.
    pub fn insert(&mut self, t: Term) -> bool {
        match t {
            Term::Tuple(items) => {
                let mut changed = false;
                for item in items {
                    changed |= self.insert(item);
                }
                changed
            }
            other => self.terms.insert(other),
        }
    }

    pub fn add_function(&mut self, name: Name, arity: usize) {
        self.functions.insert(name, arity);
    }

    pub fn holds_function(&self, name: &str, arity: usize) -> bool {
        self.functions.get(name) == Some(&arity)
    }

    pub fn terms(&self) -> &BTreeSet<Term> {
        &self.terms
    }

    pub fn functions(&self) -> &BTreeMap<Name, usize> {
        &self.functions
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.terms.contains(t)
    }

    pub fn extend(&mut self, other: &KnowledgeSet) {
        for t in &other.terms {
            self.terms.insert(t.clone());
        }
        for (f, n) in &other.functions {
            self.functions.insert(f.clone(), *n);
        }
    }
}

/// Can `t` be built from `k`?
///
/// Variables are treated as opaque names: they are derivable only if `k`
/// contains them, which lets compile-time role views reuse this check.
pub fn derive(k: &KnowledgeSet, t: &Term) -> bool {
    if k.terms.contains(t) {
        return true;
    }
    match t {
        Term::Tuple(items) => items.iter().all(|i| derive(k, i)),
        Term::App { fun, args } => {
            k.holds_function(fun, args.len()) && args.iter().all(|a| derive(k, a))
        }
        _ => false,
    }
}

/// All derivable terms of height at most `depth_bound`.
///
/// Composition uses pairs and the held functions at their arity; wider
/// tuples are derivable (see [`derive`]) but not enumerated here.
pub fn close(k: &KnowledgeSet, depth_bound: usize) -> BTreeSet<Term> {
    assert!(depth_bound >= 1, "depth bound must be positive");
    let mut out: BTreeSet<Term> = k
        .terms
        .iter()
        .filter(|t| t.height() <= depth_bound)
        .cloned()
        .collect();
    // `layers[h]` holds closure members of height exactly h.
    let mut layers: Vec<Vec<Term>> = vec![Vec::new(); depth_bound + 1];
    for t in &out {
        layers[t.height()].push(t.clone());
    }
    for h in 2..=depth_bound {
        let lower: Vec<Term> = layers[1..h].iter().flatten().cloned().collect();
        let top: BTreeSet<&Term> = layers[h - 1].iter().collect();
        let mut fresh = Vec::new();
        for a in &lower {
            for b in &lower {
                if top.contains(a) || top.contains(b) {
                    fresh.push(Term::Tuple(vec![a.clone(), b.clone()]));
                }
            }
        }
        for (f, &arity) in &k.functions {
            if arity == 0 {
                continue;
            }
            for args in cartesian(&lower, arity) {
                if args.iter().any(|a| top.contains(a)) {
                    fresh.push(Term::App { fun: f.clone(), args });
                }
            }
        }
        for t in fresh {
            if out.insert(t.clone()) {
                layers[h].push(t);
            }
        }
    }
    out
}

fn cartesian(pool: &[Term], n: usize) -> Vec<Vec<Term>> {
    let mut acc: Vec<Vec<Term>> = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(acc.len() * pool.len());
        for prefix in &acc {
            for t in pool {
                let mut v = prefix.clone();
                v.push(t.clone());
                next.push(v);
            }
        }
        acc = next;
    }
    acc
}
