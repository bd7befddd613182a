//! Projection of a protocol onto per-role strands, with executability
//! checking and the placement of goal facts.

use std::collections::BTreeSet;

use crate::diag::{DiagCode, Diagnostic};
use crate::model::{expand_definitions, validate, Channel, Goal, GoalKind, GoalParties, Protocol};
use crate::pattern::{recognizable_pattern, Bindings, Pattern};
use crate::term::{derive, AtomKind, KnowledgeSet, Name, Term};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Send,
    Receive,
}

/// Whose identity a witness names.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Peer {
    Role(Name),
    /// The emitting role does not know its peer yet.
    Unbound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FactKind {
    Witness,
    Request,
    Secret,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactEmission {
    pub kind: FactKind,
    pub goal_id: String,
    /// Witness: the authenticator as seen by the sender. Request: the peer.
    pub peer: Option<Peer>,
    pub payload_template: Term,
    /// Secrecy only.
    pub parties: Vec<Name>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub action_label: String,
    pub counterpart: Name,
    pub channel: Channel,
    pub template: Term,
    /// Receive events only.
    pub pattern: Option<Pattern>,
    /// Numbers minted by this send.
    pub fresh: Vec<Name>,
    pub facts: Vec<FactEmission>,
    /// The role's knowledge once the event has happened (templates).
    pub knowledge_after: KnowledgeSet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleStrand {
    pub role: Name,
    pub events: Vec<Event>,
    pub initial_knowledge: KnowledgeSet,
}

impl RoleStrand {
    /// Knowledge holding just before event `i`.
    pub fn knowledge_before(&self, i: usize) -> &KnowledgeSet {
        if i == 0 {
            &self.initial_knowledge
        } else {
            &self.events[i - 1].knowledge_after
        }
    }

    pub fn labels(&self) -> Vec<(EventKind, &str)> {
        self.events.iter().map(|e| (e.kind, e.action_label.as_str())).collect()
    }
}

/// A validated, expanded protocol together with its annotated strands.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub protocol: Protocol,
    pub strands: Vec<RoleStrand>,
}

impl Compiled {
    pub fn strand(&self, role: &str) -> Option<&RoleStrand> {
        self.strands.iter().find(|s| &*s.role == role)
    }

    pub fn strand_index(&self, role: &str) -> Option<usize> {
        self.strands.iter().position(|s| &*s.role == role)
    }
}

/// Validates, expands definitions, projects and annotates.
pub fn compile(p: &Protocol) -> Result<Compiled, Vec<Diagnostic>> {
    let diags = validate(p);
    if diags.iter().any(Diagnostic::is_error) {
        return Err(diags);
    }
    let expanded = expand_definitions(p).map_err(|e| {
        vec![Diagnostic::error(DiagCode::DefinitionCycle, e.to_string(), Default::default())]
    })?;
    let mut strands = project(&expanded)?;
    annotate_goals(&mut strands, &expanded)?;
    Ok(Compiled { protocol: expanded, strands })
}

fn initial_knowledge(p: &Protocol, role: &str) -> KnowledgeSet {
    let arities = p.function_arities();
    let mut k = KnowledgeSet::new();
    // Trusted agent names are public.
    for a in p.agents.iter().filter(|a| a.trusted) {
        k.insert(Term::atom(&a.name, AtomKind::Trusted));
    }
    if let Some(rk) = p.knowledge_of(role) {
        for t in &rk.terms {
            k.insert(t.clone());
        }
        for f in &rk.functions {
            if let Some(&n) = arities.get(f) {
                k.add_function(f.clone(), n);
            }
        }
    }
    k
}

/// First subterm that blocks composing `t`.
fn blocking_subterm<'a>(k: &KnowledgeSet, t: &'a Term) -> &'a Term {
    match t {
        Term::Tuple(items) => items.iter().find(|i| !derive(k, i)).map_or(t, |i| blocking_subterm(k, i)),
        Term::App { fun, args } if k.holds_function(fun, args.len()) => {
            args.iter().find(|a| !derive(k, a)).map_or(t, |a| blocking_subterm(k, a))
        }
        _ => t,
    }
}

/// Splits the (expanded) protocol into one strand per declared agent.
pub fn project(p: &Protocol) -> Result<Vec<RoleStrand>, Vec<Diagnostic>> {
    let mut strands: Vec<RoleStrand> = p
        .agents
        .iter()
        .map(|a| {
            let k = initial_knowledge(p, &a.name);
            RoleStrand { role: a.name.clone(), events: Vec::new(), initial_knowledge: k }
        })
        .collect();
    let mut views: Vec<KnowledgeSet> = strands.iter().map(|s| s.initial_knowledge.clone()).collect();
    let index = |role: &str| p.agents.iter().position(|a| &*a.name == role);
    let mut sent_numbers: BTreeSet<Name> = BTreeSet::new();
    let mut diags = Vec::new();

    for action in &p.actions {
        let (Some(si), Some(ri)) = (index(&action.sender), index(&action.receiver)) else {
            continue;
        };
        let msg = &action.message;
        let numbers: Vec<Name> = msg.vars().into_iter().filter(|v| p.is_number(v)).collect();

        // Send side.
        let mut fresh = Vec::new();
        for n in &numbers {
            let var = Term::Var(n.clone());
            if !sent_numbers.contains(n) && !derive(&views[si], &var) {
                fresh.push(n.clone());
                views[si].insert(var);
            }
        }
        if !derive(&views[si], msg) {
            let sub = blocking_subterm(&views[si], msg);
            let what = match sub {
                Term::Var(v) if p.is_number(v) => format!("sends `{v}` without having received it"),
                _ => format!("cannot compose `{sub}`"),
            };
            diags.push(Diagnostic::error(
                DiagCode::Executability,
                format!("{}: {} {what}", action.label, action.sender),
                action.span.0,
            ));
        }
        sent_numbers.extend(numbers.iter().cloned());
        views[si].insert(msg.clone());
        strands[si].events.push(Event {
            kind: EventKind::Send,
            action_label: action.label.clone(),
            counterpart: action.receiver.clone(),
            channel: action.channel,
            template: msg.clone(),
            pattern: None,
            fresh,
            facts: Vec::new(),
            knowledge_after: views[si].clone(),
        });

        // Receive side.
        let sort_of = |name: &str| p.sort_of(name);
        let pattern = match recognizable_pattern(&views[ri], &Bindings::new(), msg, &sort_of) {
            Ok(pat) => pat,
            Err(e) => {
                diags.push(Diagnostic::error(DiagCode::Executability, format!("{}: {e}", action.label), action.span.0));
                continue;
            }
        };
        views[ri].insert(msg.clone());
        // The channel authenticates the sender.
        if p.agent(&action.sender).is_some_and(|a| !a.trusted) {
            views[ri].insert(Term::Var(action.sender.clone()));
        }
        strands[ri].events.push(Event {
            kind: EventKind::Receive,
            action_label: action.label.clone(),
            counterpart: action.sender.clone(),
            channel: action.channel,
            template: msg.clone(),
            pattern: Some(pattern),
            fresh: Vec::new(),
            facts: Vec::new(),
            knowledge_after: views[ri].clone(),
        });
    }
    if diags.is_empty() {
        Ok(strands)
    } else {
        Err(diags)
    }
}

fn contains_payload(template: &Term, payload: &Term) -> bool {
    payload.components().iter().all(|c| template.contains(c))
}

fn knows_role(k: &KnowledgeSet, p: &Protocol, role: &str) -> bool {
    match p.agent(role) {
        Some(a) if a.trusted => true,
        _ => derive(k, &Term::var(role)),
    }
}

/// Attaches witness, request and secret facts.
///
/// Witness: the peer's first send containing the payload. Request: the
/// authenticator's last receive containing it. Secret: each listed role's
/// first event after which a payload component is derivable.
pub fn annotate_goals(strands: &mut [RoleStrand], p: &Protocol) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    for goal in &p.goals {
        match &goal.parties {
            GoalParties::Auth { authenticator, peer } => {
                if let Err(d) = annotate_auth(strands, p, goal, authenticator, peer) {
                    diags.push(d);
                }
            }
            GoalParties::Secrecy(parties) => {
                for role in parties {
                    let Some(strand) = strands.iter_mut().find(|s| &s.role == role) else {
                        continue;
                    };
                    for c in goal.payload.components() {
                        if let Some(ev) = strand.events.iter_mut().find(|e| derive(&e.knowledge_after, c)) {
                            ev.facts.push(FactEmission {
                                kind: FactKind::Secret,
                                goal_id: goal.id.clone(),
                                peer: None,
                                payload_template: c.clone(),
                                parties: parties.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn annotate_auth(
    strands: &mut [RoleStrand],
    p: &Protocol,
    goal: &Goal,
    authenticator: &Name,
    peer: &Name,
) -> Result<(), Diagnostic> {
    debug_assert!(goal.kind != GoalKind::Secrecy);
    let payload = &goal.payload;
    let unrealizable = |why: String| Diagnostic::error(DiagCode::GoalUnrealizable, format!("goal {}: {why}", goal.id), goal.span.0);

    let wi = strands.iter().position(|s| &s.role == peer).ok_or_else(|| unrealizable(format!("no strand for {peer}")))?;
    let w_ev = strands[wi]
        .events
        .iter()
        .position(|e| e.kind == EventKind::Send && contains_payload(&e.template, payload))
        .ok_or_else(|| unrealizable(format!("{peer} never sends `{payload}`")))?;
    let ai = strands.iter().position(|s| &s.role == authenticator).ok_or_else(|| unrealizable(format!("no strand for {authenticator}")))?;
    let r_ev = strands[ai]
        .events
        .iter()
        .rposition(|e| e.kind == EventKind::Receive && contains_payload(&e.template, payload))
        .ok_or_else(|| unrealizable(format!("{authenticator} never receives `{payload}`")))?;

    let w_known = &strands[wi].events[w_ev].knowledge_after;
    if !derive(w_known, payload) {
        return Err(unrealizable(format!("{peer} cannot name `{payload}` when sending it")));
    }
    let witness_peer = if knows_role(strands[wi].knowledge_before(w_ev), p, authenticator) {
        Peer::Role(authenticator.clone())
    } else {
        Peer::Unbound
    };
    if !derive(&strands[ai].events[r_ev].knowledge_after, payload) {
        return Err(unrealizable(format!("{authenticator} cannot name `{payload}` on receipt")));
    }
    strands[wi].events[w_ev].facts.push(FactEmission {
        kind: FactKind::Witness,
        goal_id: goal.id.clone(),
        peer: Some(witness_peer),
        payload_template: payload.clone(),
        parties: Vec::new(),
    });
    strands[ai].events[r_ev].facts.push(FactEmission {
        kind: FactKind::Request,
        goal_id: goal.id.clone(),
        peer: Some(Peer::Role(peer.clone())),
        payload_template: payload.clone(),
        parties: Vec::new(),
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, SourceSpec};

    const TOY: &str = "\
Protocol: T
Types:
  Agent A, b;
  Number N;
  Function f, g;
Knowledge:
  A: A, b, g;
  b: b, f;
Actions:
  A *->* b: N  #T1
  b *->* A: f(N)  #T2
Goals:
  A authenticates b on f(N)  #G1
  N secret between A, b  #G2
";

    fn compiled(src: &str) -> Result<Compiled, Vec<Diagnostic>> {
        compile(&parse(&SourceSpec::new(src, "t")).unwrap())
    }

    #[test]
    fn toy_projection() {
        let c = compiled(TOY).unwrap();
        let a = c.strand("A").unwrap();
        assert_eq!(a.labels(), vec![(EventKind::Send, "T1"), (EventKind::Receive, "T2")]);
        assert_eq!(a.events[0].fresh, vec![Name::from("N")]);
        // A cannot apply f: the reply is one opaque slot.
        assert!(a.events[1].pattern.as_ref().unwrap().is_single_bind());
        let b = c.strand("b").unwrap();
        assert_eq!(b.events[0].pattern, Some(Pattern::Bind { key: Term::var("N"), sort: crate::pattern::Sort::Number }));
    }

    #[test]
    fn facts_are_placed() {
        let c = compiled(TOY).unwrap();
        let b = c.strand("b").unwrap();
        let w = &b.events[1].facts[0];
        assert_eq!(w.kind, FactKind::Witness);
        // b has learned A from the channel at T1.
        assert_eq!(w.peer, Some(Peer::Role("A".into())));
        let a = c.strand("A").unwrap();
        assert_eq!(a.events[1].facts[0].kind, FactKind::Request);
        // Secrecy of N: A at its mint, b at receipt.
        assert_eq!(a.events[0].facts[0].kind, FactKind::Secret);
        assert_eq!(b.events[0].facts[0].kind, FactKind::Secret);
    }

    #[test]
    fn unheld_function_is_not_executable() {
        let src = TOY.replace("b *->* A: f(N)  #T2", "b *->* A: g(N)  #T2").replace("on f(N)", "on N");
        let err = compiled(&src).unwrap_err();
        assert_eq!(err[0].code, DiagCode::Executability);
        assert!(err[0].message.contains("`g(N)`"), "{}", err[0].message);
    }

    #[test]
    fn knowledge_is_monotone() {
        let c = compiled(TOY).unwrap();
        for s in &c.strands {
            for i in 0..s.events.len() {
                let before = s.knowledge_before(i);
                let after = &s.events[i].knowledge_after;
                assert!(before.terms().iter().all(|t| derive(after, t)));
            }
        }
    }
}
