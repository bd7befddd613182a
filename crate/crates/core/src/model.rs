//! Protocol abstract syntax, static validation and definition expansion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::diag::{DiagCode, Diagnostic, Pos};
use crate::pattern::Sort;
use crate::term::{Name, Term};

/// A source position that never affects equality, so that two protocols
/// parsed from differently laid out text still compare equal.
#[derive(Clone, Copy, Debug, Default)]
pub struct Span(pub Pos);

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl Eq for Span {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentDecl {
    pub name: Name,
    /// Lower-case names are trusted constants.
    pub trusted: bool,
    pub span: Span,
}

impl AgentDecl {
    pub fn new(name: &str) -> Self {
        AgentDecl {
            name: name.into(),
            trusted: name.chars().next().is_some_and(|c| c.is_lowercase()),
            span: Span::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decl {
    pub name: Name,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Definition {
    pub name: Name,
    pub body: Term,
    pub span: Span,
}

/// One role's initial knowledge: ground templates and held function symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleKnowledge {
    pub role: Name,
    pub terms: Vec<Term>,
    pub functions: Vec<Name>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InequalityConstraint {
    pub left: Name,
    pub right: Name,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// `->`: the intruder reads, drops and injects freely.
    Plain,
    /// `*->*`: authenticated and confidential, but replayable.
    Secure,
    /// `*->`: parsed, not supported.
    Authentic,
    /// `->*`: parsed, not supported.
    Confidential,
}

impl Channel {
    pub fn arrow(self) -> &'static str {
        match self {
            Channel::Plain => "->",
            Channel::Secure => "*->*",
            Channel::Authentic => "*->",
            Channel::Confidential => "->*",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Action {
    pub label: String,
    pub sender: Name,
    pub receiver: Name,
    pub channel: Channel,
    pub message: Term,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalKind {
    Secrecy,
    WeakAuth,
    StrongAuth,
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalKind::Secrecy => "secrecy",
            GoalKind::WeakAuth => "weak-auth",
            GoalKind::StrongAuth => "strong-auth",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GoalParties {
    Secrecy(Vec<Name>),
    /// `authenticator (weakly) authenticates peer on payload`.
    Auth { authenticator: Name, peer: Name },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Goal {
    pub id: String,
    pub kind: GoalKind,
    pub payload: Term,
    pub parties: GoalParties,
    pub span: Span,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Protocol {
    pub name: String,
    pub agents: Vec<AgentDecl>,
    pub numbers: Vec<Decl>,
    pub functions: Vec<Decl>,
    pub definitions: Vec<Definition>,
    pub knowledge: Vec<RoleKnowledge>,
    pub constraints: Vec<InequalityConstraint>,
    pub actions: Vec<Action>,
    pub goals: Vec<Goal>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("cyclic definitions: {}", .0.join(" -> "))]
    DefinitionCycle(Vec<String>),
}

impl Protocol {
    pub fn agent(&self, name: &str) -> Option<&AgentDecl> {
        self.agents.iter().find(|a| &*a.name == name)
    }

    pub fn is_number(&self, name: &str) -> bool {
        self.numbers.iter().any(|n| &*n.name == name)
    }

    pub fn is_function(&self, name: &str) -> bool {
        self.functions.iter().any(|n| &*n.name == name)
    }

    pub fn definition(&self, name: &str) -> Option<&Definition> {
        self.definitions.iter().find(|d| &*d.name == name)
    }

    /// Role variables (upper-case agents) in declaration order.
    pub fn role_variables(&self) -> Vec<Name> {
        self.agents.iter().filter(|a| !a.trusted).map(|a| a.name.clone()).collect()
    }

    /// Sort of a variable a receiver may bind.
    pub fn sort_of(&self, name: &str) -> Option<Sort> {
        if self.agent(name).is_some_and(|a| !a.trusted) {
            Some(Sort::Agent)
        } else if self.is_number(name) {
            Some(Sort::Number)
        } else {
            None
        }
    }

    pub fn knowledge_of(&self, role: &str) -> Option<&RoleKnowledge> {
        self.knowledge.iter().find(|k| &*k.role == role)
    }

    pub fn goal(&self, id: &str) -> Option<&Goal> {
        self.goals.iter().find(|g| g.id == id)
    }

    /// Arity of each function symbol, taken from its first application.
    pub fn function_arities(&self) -> BTreeMap<Name, usize> {
        let mut out = BTreeMap::new();
        for t in self.all_terms() {
            for sub in t.subterms() {
                if let Term::App { fun, args } = sub {
                    out.entry(fun.clone()).or_insert(args.len());
                }
            }
        }
        out
    }

    /// Functions every role lists in its knowledge; the intruder may apply
    /// these too.
    pub fn public_functions(&self) -> BTreeSet<Name> {
        let mut iter = self.knowledge.iter();
        let Some(first) = iter.next() else {
            return BTreeSet::new();
        };
        let mut set: BTreeSet<Name> = first.functions.iter().cloned().collect();
        for k in iter {
            let other: BTreeSet<Name> = k.functions.iter().cloned().collect();
            set = set.intersection(&other).cloned().collect();
        }
        if self.knowledge.len() < self.agents.len() {
            set.clear();
        }
        set
    }

    fn all_terms(&self) -> Vec<&Term> {
        let mut v: Vec<&Term> = Vec::new();
        v.extend(self.definitions.iter().map(|d| &d.body));
        for k in &self.knowledge {
            v.extend(k.terms.iter());
        }
        v.extend(self.actions.iter().map(|a| &a.message));
        v.extend(self.goals.iter().map(|g| &g.payload));
        v
    }

    /// The name a definition gives to `t`, if any (for readable output).
    pub fn definition_name_for(&self, t: &Term) -> Option<&Name> {
        self.definitions.iter().find(|d| &d.body == t).map(|d| &d.name)
    }
}

/// Reports every static problem in `p`; empty means valid.
pub fn validate(p: &Protocol) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let err = |code, msg: String, span: &Span| Diagnostic::error(code, msg, span.0);

    // Declarations.
    let mut seen: HashMap<&str, ()> = HashMap::new();
    let decls = p
        .agents
        .iter()
        .map(|a| (&a.name, &a.span))
        .chain(p.numbers.iter().map(|d| (&d.name, &d.span)))
        .chain(p.functions.iter().map(|d| (&d.name, &d.span)))
        .chain(p.definitions.iter().map(|d| (&d.name, &d.span)));
    for (name, span) in decls {
        if seen.insert(name, ()).is_some() {
            out.push(err(DiagCode::DuplicateDeclaration, format!("`{name}` declared twice"), span));
        }
    }

    let check_term = |t: &Term, span: &Span, out: &mut Vec<Diagnostic>| {
        for sub in t.subterms() {
            match sub {
                Term::Var(n) => {
                    let known = p.agent(n).is_some() || p.is_number(n) || p.definition(n).is_some();
                    if !known {
                        let msg = if p.is_function(n) {
                            format!("function `{n}` used without arguments")
                        } else {
                            format!("undeclared identifier `{n}`")
                        };
                        out.push(err(DiagCode::Undeclared, msg, span));
                    }
                }
                Term::App { fun, .. } if !p.is_function(fun) => {
                    out.push(err(DiagCode::Undeclared, format!("undeclared function `{fun}`"), span));
                }
                _ => {}
            }
        }
    };

    // Arity consistency.
    let arities = p.function_arities();
    for t in p.all_terms() {
        for sub in t.subterms() {
            if let Term::App { fun, args } = sub {
                if arities.get(fun).is_some_and(|&n| n != args.len()) {
                    let span = span_of_term(p, t);
                    out.push(err(
                        DiagCode::Arity,
                        format!("`{fun}` applied to {} arguments, first use had {}", args.len(), arities[fun]),
                        &span,
                    ));
                }
            }
        }
    }

    // Definitions.
    for d in &p.definitions {
        check_term(&d.body, &d.span, &mut out);
    }
    let cycle = find_cycle(p);
    if let Some(c) = &cycle {
        let span = p.definition(&c[0]).map(|d| d.span).unwrap_or_default();
        out.push(err(DiagCode::DefinitionCycle, format!("cyclic definitions: {}", c.join(" -> ")), &span));
    }

    // Knowledge.
    for k in &p.knowledge {
        if p.agent(&k.role).is_none() {
            out.push(err(DiagCode::Undeclared, format!("knowledge for undeclared agent `{}`", k.role), &k.span));
        }
        for t in &k.terms {
            check_term(t, &k.span, &mut out);
        }
        for f in &k.functions {
            if !p.is_function(f) {
                out.push(err(DiagCode::Undeclared, format!("undeclared function `{f}`"), &k.span));
            }
        }
    }

    for c in &p.constraints {
        let (l, r) = (p.agent(&c.left), p.agent(&c.right));
        for (name, decl) in [(&c.left, l), (&c.right, r)] {
            if decl.is_none() {
                out.push(err(DiagCode::Undeclared, format!("constraint names undeclared agent `{name}`"), &c.span));
            }
        }
        if c.left == c.right {
            out.push(err(DiagCode::Constraint, format!("constraint `{0}!={0}` can never hold", c.left), &c.span));
        } else if l.is_some_and(|a| a.trusted) && r.is_some_and(|a| a.trusted) {
            out.push(err(
                DiagCode::Constraint,
                format!("constraint `{}!={}` relates two trusted constants", c.left, c.right),
                &c.span,
            ));
        }
    }

    // Actions.
    let mut labels = HashMap::new();
    for a in &p.actions {
        if labels.insert(a.label.as_str(), ()).is_some() {
            out.push(err(DiagCode::DuplicateLabel, format!("duplicate action label `{}`", a.label), &a.span));
        }
        for role in [&a.sender, &a.receiver] {
            if p.agent(role).is_none() {
                out.push(err(DiagCode::Undeclared, format!("undeclared agent `{role}`"), &a.span));
            }
        }
        if a.sender == a.receiver {
            out.push(err(DiagCode::Channel, format!("action {} sends to itself", a.label), &a.span));
        }
        if matches!(a.channel, Channel::Authentic | Channel::Confidential) {
            out.push(err(
                DiagCode::UnsupportedChannel,
                format!("channel `{}` in action {} is not supported", a.channel.arrow(), a.label),
                &a.span,
            ));
        }
        check_term(&a.message, &a.span, &mut out);
    }

    // Goals.
    let mut ids = HashMap::new();
    let expanded = if cycle.is_none() { expand_definitions(p).ok() } else { None };
    for (gi, g) in p.goals.iter().enumerate() {
        if ids.insert(g.id.as_str(), ()).is_some() {
            out.push(err(DiagCode::DuplicateLabel, format!("duplicate goal id `{}`", g.id), &g.span));
        }
        check_term(&g.payload, &g.span, &mut out);
        match &g.parties {
            GoalParties::Secrecy(parties) => {
                for r in parties {
                    if p.agent(r).is_none() {
                        out.push(err(DiagCode::Undeclared, format!("undeclared agent `{r}`"), &g.span));
                    }
                }
            }
            GoalParties::Auth { authenticator, peer } => {
                for r in [authenticator, peer] {
                    if p.agent(r).is_none() {
                        out.push(err(DiagCode::Undeclared, format!("undeclared agent `{r}`"), &g.span));
                    }
                }
                if authenticator == peer {
                    out.push(err(
                        DiagCode::GoalMalformed,
                        format!("goal {} authenticates `{authenticator}` with itself", g.id),
                        &g.span,
                    ));
                }
            }
        }
        if let Some(e) = &expanded {
            let payload = &e.goals[gi].payload;
            let sent = payload
                .components()
                .iter()
                .all(|c| e.actions.iter().any(|a| a.message.contains(c)));
            if !sent {
                out.push(err(
                    DiagCode::GoalUnrealizable,
                    format!("goal {}: payload `{}` never appears in any action", g.id, g.payload),
                    &g.span,
                ));
            }
        }
    }
    out
}

fn span_of_term(p: &Protocol, t: &Term) -> Span {
    p.actions
        .iter()
        .find(|a| std::ptr::eq(&a.message, t))
        .map(|a| a.span)
        .or_else(|| p.goals.iter().find(|g| std::ptr::eq(&g.payload, t)).map(|g| g.span))
        .or_else(|| p.definitions.iter().find(|d| std::ptr::eq(&d.body, t)).map(|d| d.span))
        .unwrap_or_default()
}

fn find_cycle(p: &Protocol) -> Option<Vec<String>> {
    fn visit(
        p: &Protocol,
        name: &str,
        stack: &mut Vec<String>,
        done: &mut BTreeSet<String>,
    ) -> Option<Vec<String>> {
        if let Some(i) = stack.iter().position(|s| s == name) {
            let mut c = stack[i..].to_vec();
            c.push(name.to_string());
            return Some(c);
        }
        if done.contains(name) {
            return None;
        }
        let def = p.definition(name)?;
        stack.push(name.to_string());
        for v in def.body.vars() {
            if p.definition(&v).is_some() {
                if let Some(c) = visit(p, &v, stack, done) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        done.insert(name.to_string());
        None
    }
    let mut done = BTreeSet::new();
    for d in &p.definitions {
        if let Some(c) = visit(p, &d.name, &mut Vec::new(), &mut done) {
            return Some(c);
        }
    }
    None
}

/// Replaces definition references by their bodies, recursively.
///
/// Definitions stay listed (with expanded bodies) so that output can still
/// name the sub-terms they stand for.
pub fn expand_definitions(p: &Protocol) -> Result<Protocol, ModelError> {
    if let Some(c) = find_cycle(p) {
        return Err(ModelError::DefinitionCycle(c));
    }
    let mut cache: BTreeMap<Name, Term> = BTreeMap::new();
    fn expand(p: &Protocol, t: &Term, cache: &mut BTreeMap<Name, Term>) -> Term {
        match t {
            Term::Var(n) => {
                if let Some(done) = cache.get(n) {
                    return done.clone();
                }
                match p.definition(n) {
                    Some(d) => {
                        let body = expand(p, &d.body, cache);
                        cache.insert(n.clone(), body.clone());
                        body
                    }
                    None => t.clone(),
                }
            }
            Term::App { fun, args } => Term::App {
                fun: fun.clone(),
                args: args.iter().map(|a| expand(p, a, cache)).collect(),
            },
            Term::Tuple(items) => Term::Tuple(items.iter().map(|a| expand(p, a, cache)).collect()),
            other => other.clone(),
        }
    }
    let mut out = p.clone();
    for d in &mut out.definitions {
        d.body = expand(p, &d.body, &mut cache);
    }
    for k in &mut out.knowledge {
        for t in &mut k.terms {
            *t = expand(p, t, &mut cache);
        }
    }
    for a in &mut out.actions {
        a.message = expand(p, &a.message, &mut cache);
    }
    for g in &mut out.goals {
        g.payload = expand(p, &g.payload, &mut cache);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::AtomKind;

    fn toy() -> Protocol {
        Protocol {
            name: "Toy".into(),
            agents: vec![AgentDecl::new("A"), AgentDecl::new("b")],
            numbers: vec![Decl { name: "N".into(), span: Span::default() }],
            functions: vec![Decl { name: "f".into(), span: Span::default() }],
            definitions: vec![],
            knowledge: vec![
                RoleKnowledge { role: "A".into(), terms: vec![Term::var("A"), Term::atom("b", AtomKind::Trusted)], functions: vec![], span: Span::default() },
                RoleKnowledge { role: "b".into(), terms: vec![Term::atom("b", AtomKind::Trusted)], functions: vec!["f".into()], span: Span::default() },
            ],
            constraints: vec![],
            actions: vec![Action {
                label: "T1".into(),
                sender: "A".into(),
                receiver: "b".into(),
                channel: Channel::Secure,
                message: Term::var("N"),
                span: Span::default(),
            }],
            goals: vec![Goal {
                id: "G1".into(),
                kind: GoalKind::Secrecy,
                payload: Term::var("N"),
                parties: GoalParties::Secrecy(vec!["A".into(), "b".into()]),
                span: Span::default(),
            }],
        }
    }

    #[test]
    fn toy_is_valid() {
        assert_eq!(validate(&toy()), vec![]);
    }

    #[test]
    fn undeclared_function_is_reported_once() {
        let mut p = toy();
        p.actions[0].message = Term::app("fFoo", vec![Term::var("N")]);
        p.goals.clear();
        let d = validate(&p);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].code, DiagCode::Undeclared);
    }

    #[test]
    fn goal_on_unsent_term_is_unrealizable() {
        let mut p = toy();
        p.goals[0].payload = Term::app("f", vec![Term::var("N")]);
        let d = validate(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagCode::GoalUnrealizable);
    }

    #[test]
    fn trusted_pair_constraint_is_flagged() {
        let mut p = toy();
        p.agents.push(AgentDecl::new("c"));
        p.constraints.push(InequalityConstraint { left: "b".into(), right: "c".into(), span: Span::default() });
        assert_eq!(validate(&p)[0].code, DiagCode::Constraint);
    }

    #[test]
    fn cycles_are_reported_and_refused() {
        let mut p = toy();
        p.definitions = vec![
            Definition { name: "X".into(), body: Term::app("f", vec![Term::var("Y")]), span: Span::default() },
            Definition { name: "Y".into(), body: Term::var("X"), span: Span::default() },
        ];
        assert!(validate(&p).iter().any(|d| d.code == DiagCode::DefinitionCycle));
        assert_eq!(
            expand_definitions(&p),
            Err(ModelError::DefinitionCycle(vec!["X".into(), "Y".into(), "X".into()]))
        );
    }

    #[test]
    fn expansion_without_definitions_is_identity() {
        assert_eq!(expand_definitions(&toy()).unwrap(), toy());
    }

    #[test]
    fn expansion_is_idempotent() {
        let mut p = toy();
        p.definitions = vec![
            Definition { name: "X".into(), body: Term::app("f", vec![Term::var("Y")]), span: Span::default() },
            Definition { name: "Y".into(), body: Term::var("N"), span: Span::default() },
        ];
        p.actions[0].message = Term::var("X");
        let once = expand_definitions(&p).unwrap();
        assert_eq!(once.actions[0].message, Term::app("f", vec![Term::var("N")]));
        assert_eq!(expand_definitions(&once).unwrap(), once);
    }

    #[test]
    fn unsupported_channel_is_rejected() {
        let mut p = toy();
        p.actions[0].channel = Channel::Authentic;
        assert_eq!(validate(&p)[0].code, DiagCode::UnsupportedChannel);
    }
}
