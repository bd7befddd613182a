//! The network adversary: what it has seen, what it knows, and which
//! messages it can get an honest receiver to accept.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::Serialize;

use crate::model::Channel;
use crate::pattern::{instantiate, match_pattern, Bindings, Pattern, Sort};
use crate::term::{close, derive, AtomKind, KnowledgeSet, Name, Term};

pub const INTRUDER: &str = "i";

pub fn intruder_atom() -> Term {
    Term::atom(INTRUDER, AtomKind::Intruder)
}

/// The canonical value the intruder makes up when it needs a fresh one.
pub fn intruder_nonce() -> Term {
    Term::fresh("nI", 0, INTRUDER)
}

/// A message as it travels between two agents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SealedEnvelope {
    pub sender: Term,
    pub receiver: Term,
    pub payload: Term,
    pub origin_label: String,
    /// Ply at which the envelope was sent.
    pub seq: usize,
    pub channel: Channel,
    pub session: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    /// Index into [`IntruderState::observed`].
    Replay(usize),
    Composed { payload: Term, claimed_sender: Term },
}

/// What the receiver expects at its next event.
#[derive(Clone, Copy, Debug)]
pub struct Expectation<'a> {
    pub receiver: &'a Term,
    pub claimed_sender: &'a Term,
    pub channel: Channel,
    pub pattern: &'a Pattern,
    pub bound: &'a Bindings,
}

/// 128-bit hash, for state fingerprints.
pub fn hash128<T: Hash + ?Sized>(t: &T) -> u128 {
    let mut out = 0u128;
    for salt in 0u8..2 {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        t.hash(&mut h);
        out = out << 64 | u128::from(h.finish());
    }
    out
}

#[derive(Clone, Debug)]
pub struct IntruderState {
    knowledge: Arc<KnowledgeSet>,
    pub observed: Vec<Arc<SealedEnvelope>>,
    compose_depth: usize,
    /// Non-tuple fillers for opaque slots; rebuilt when knowledge grows.
    fillers: Arc<Vec<Term>>,
    knowledge_hash: u128,
    /// Order-independent sum over observed envelopes, ignoring `seq`.
    observed_hash: u128,
}

impl IntruderState {
    pub fn new(knowledge: KnowledgeSet, compose_depth: usize) -> Self {
        let mut st = IntruderState {
            knowledge: Arc::new(knowledge),
            observed: Vec::new(),
            compose_depth,
            fillers: Arc::default(),
            knowledge_hash: 0,
            observed_hash: 0,
        };
        Arc::make_mut(&mut st.knowledge).insert(intruder_nonce());
        st.refresh_fillers();
        st
    }

    pub fn knowledge(&self) -> &KnowledgeSet {
        &self.knowledge
    }

    /// Identifies knowledge plus the multiset of observed envelopes.
    pub fn fingerprint(&self) -> (u128, u128) {
        (self.knowledge_hash, self.observed_hash)
    }

    pub fn compose_depth(&self) -> usize {
        self.compose_depth
    }

    fn refresh_fillers(&mut self) {
        let mut set = close(&self.knowledge, self.compose_depth);
        set.extend(self.knowledge.terms().iter().cloned());
        set.retain(|t| !matches!(t, Term::Tuple(_)));
        self.fillers = Arc::new(set.into_iter().collect());
        self.knowledge_hash = hash128(&*self.knowledge);
    }

    /// Records an envelope; its payload is learned when the intruder is an
    /// endpoint or the channel is plain.
    ///
    /// Returns true when the intruder learned something.
    pub fn observe(&mut self, env: SealedEnvelope) -> bool {
        let readable = env.channel == Channel::Plain || is_intruder(&env.sender) || is_intruder(&env.receiver);
        let learned = readable && !derive(&self.knowledge, &env.payload);
        if learned {
            Arc::make_mut(&mut self.knowledge).insert(env.payload.clone());
            self.refresh_fillers();
        }
        let key = (&env.sender, &env.receiver, &env.payload, &env.origin_label, env.session, env.channel);
        self.observed_hash = self.observed_hash.wrapping_add(hash128(&key));
        self.observed.push(Arc::new(env));
        learned
    }

    /// Every delivery the receiver would accept, with the bindings it yields.
    ///
    /// Replays come first in sending order, then composed messages. A
    /// composed payload that some replay already delivers is dropped.
    pub fn deliverables(&self, exp: &Expectation<'_>) -> Vec<(Delivery, Bindings)> {
        let mut out = Vec::new();
        for (idx, env) in self.observed.iter().enumerate() {
            if &env.sender != exp.claimed_sender || &env.receiver != exp.receiver {
                continue;
            }
            if let Some(b) = match_pattern(exp.pattern, &env.payload, exp.bound) {
                out.push((Delivery::Replay(idx), b));
            }
        }
        if is_intruder(exp.claimed_sender) || exp.channel == Channel::Plain {
            let replayed: Vec<Term> = out
                .iter()
                .map(|(d, _)| match d {
                    Delivery::Replay(i) => self.observed[*i].payload.clone(),
                    Delivery::Composed { payload, .. } => payload.clone(),
                })
                .collect();
            for (payload, b) in self.compose(exp.pattern, exp.bound) {
                if replayed.contains(&payload) {
                    continue;
                }
                out.push((Delivery::Composed { payload, claimed_sender: exp.claimed_sender.clone() }, b));
            }
        }
        out
    }

    fn candidates(&self, sort: Sort) -> Vec<Term> {
        match sort {
            Sort::Message => self.fillers.to_vec(),
            _ => self.fillers.iter().filter(|t| sort.admits(t)).cloned().collect(),
        }
    }

    /// Payloads the intruder can build that fit `p`, left to right.
    pub fn compose(&self, p: &Pattern, bound: &Bindings) -> Vec<(Term, Bindings)> {
        match p {
            Pattern::Check(t) => match instantiate(t, bound) {
                Some(v) if derive(&self.knowledge, &v) => vec![(v, bound.clone())],
                _ => Vec::new(),
            },
            Pattern::Bind { key, sort } => match bound.get(key) {
                Some(v) if derive(&self.knowledge, v) => vec![(v.clone(), bound.clone())],
                Some(_) => Vec::new(),
                None => self
                    .candidates(*sort)
                    .into_iter()
                    .map(|c| {
                        let mut b = bound.clone();
                        b.insert(key.clone(), c.clone());
                        (c, b)
                    })
                    .collect(),
            },
            Pattern::Tuple(ps) => {
                let mut partial: Vec<(Vec<Term>, Bindings)> = vec![(Vec::new(), bound.clone())];
                for sub in ps {
                    let mut next = Vec::new();
                    for (items, b) in &partial {
                        for (t, b2) in self.compose(sub, b) {
                            let mut items = items.clone();
                            items.push(t);
                            next.push((items, b2));
                        }
                    }
                    partial = next;
                }
                partial.into_iter().map(|(items, b)| (Term::Tuple(items), b)).collect()
            }
        }
    }
}

pub fn is_intruder(t: &Term) -> bool {
    matches!(t, Term::Atom { kind: AtomKind::Intruder, .. })
}

/// Initial intruder knowledge for a scenario: every agent name, the public
/// functions, and the knowledge of each role it plays.
pub fn initial_knowledge(agents: &[Term], public_functions: &[(Name, usize)], played: &[KnowledgeSet]) -> KnowledgeSet {
    let mut k = KnowledgeSet::new();
    for a in agents {
        k.insert(a.clone());
    }
    for (f, n) in public_functions {
        k.add_function(f.clone(), *n);
    }
    for role_k in played {
        k.extend(role_k);
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn honest(n: &str) -> Term {
        Term::atom(n, AtomKind::Honest)
    }

    fn trusted(n: &str) -> Term {
        Term::atom(n, AtomKind::Trusted)
    }

    fn env(sender: Term, receiver: Term, payload: Term, label: &str, seq: usize) -> SealedEnvelope {
        SealedEnvelope { sender, receiver, payload, origin_label: label.into(), seq, channel: Channel::Secure, session: 1 }
    }

    fn intent() -> Term {
        Term::app("fCreateIntent", vec![Term::atom("tok", AtomKind::Public), Term::fresh("N", 1, "PSU")])
    }

    #[test]
    fn honest_traffic_stays_confidential() {
        let mut st = IntruderState::new(KnowledgeSet::new(), 2);
        st.observe(env(trusted("aspspR"), honest("a1"), intent(), "A2.4", 8));
        assert_eq!(st.observed.len(), 1);
        assert!(!derive(st.knowledge(), &intent()));
    }

    #[test]
    fn traffic_to_the_intruder_is_learned() {
        let mut st = IntruderState::new(KnowledgeSet::new(), 2);
        let payload = Term::tuple(vec![trusted("x"), intent()]);
        st.observe(env(honest("a1"), intruder_atom(), payload.clone(), "A3.1.1", 3));
        assert!(derive(st.knowledge(), &intent()));
        let before = st.knowledge().clone();
        st.observe(env(honest("a1"), intruder_atom(), payload, "A3.1.1", 4));
        assert_eq!(st.observed.len(), 2);
        assert_eq!(st.knowledge(), &before);
    }

    #[test]
    fn replay_into_opaque_slot() {
        let mut st = IntruderState::new(KnowledgeSet::new(), 2);
        st.observe(env(trusted("aspspR"), honest("a1"), intent(), "A2.4", 8));
        let p = Pattern::Bind { key: Term::var("Accounts"), sort: Sort::Message };
        let exp = Expectation {
            receiver: &honest("a1"),
            claimed_sender: &trusted("aspspR"),
            channel: Channel::Secure,
            pattern: &p,
            bound: &Bindings::new(),
        };
        let d = st.deliverables(&exp);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].0, Delivery::Replay(0));
        // Envelopes are directional.
        let back = Expectation { receiver: &trusted("aspspR"), claimed_sender: &honest("a1"), ..exp };
        assert!(st.deliverables(&back).is_empty());
    }

    #[test]
    fn nonce_check_rejects_replay() {
        let mut st = IntruderState::new(KnowledgeSet::new(), 2);
        st.observe(env(trusted("aspspR"), honest("a1"), intent(), "A2.4", 8));
        let p = Pattern::Tuple(vec![
            Pattern::Check(Term::var("NAISP")),
            Pattern::Bind { key: Term::var("Accounts"), sort: Sort::Message },
        ]);
        let mut b = Bindings::new();
        b.insert(Term::var("NAISP"), Term::fresh("NAISP", 1, "AISP"));
        let exp = Expectation {
            receiver: &honest("a1"),
            claimed_sender: &trusted("aspspR"),
            channel: Channel::Secure,
            pattern: &p,
            bound: &b,
        };
        assert!(st.deliverables(&exp).is_empty());
    }

    #[test]
    fn composed_only_as_itself() {
        let st = IntruderState::new(KnowledgeSet::from_parts([honest("a1")], []), 2);
        let p = Pattern::Bind { key: Term::var("X"), sort: Sort::Message };
        let from_honest = Expectation {
            receiver: &honest("a1"),
            claimed_sender: &trusted("aspspR"),
            channel: Channel::Secure,
            pattern: &p,
            bound: &Bindings::new(),
        };
        assert!(st.deliverables(&from_honest).is_empty());
        let from_i = Expectation { claimed_sender: &intruder_atom(), ..from_honest };
        let d = st.deliverables(&from_i);
        assert!(d.iter().any(|(del, _)| matches!(del, Delivery::Composed { payload, .. } if *payload == intruder_nonce())));
        assert!(d.iter().all(|(del, _)| matches!(del, Delivery::Composed { .. })));
    }

    #[test]
    fn number_slots_take_only_fresh_values() {
        let st = IntruderState::new(KnowledgeSet::from_parts([honest("a1")], []), 2);
        let fills = st.compose(&Pattern::Bind { key: Term::var("N"), sort: Sort::Number }, &Bindings::new());
        assert_eq!(fills.len(), 1);
        assert_eq!(fills[0].0, intruder_nonce());
    }
}
