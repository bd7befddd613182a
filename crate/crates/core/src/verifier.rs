//! Bounded-session search for goal violations.
//!
//! Each scenario fixes which agent plays every role in every session. The
//! search explores interleavings of honest events by iterative deepening,
//! so the first violation found for a goal has a minimal number of plies.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::intruder::{
    hash128, initial_knowledge, intruder_atom, is_intruder, Delivery, Expectation, IntruderState, SealedEnvelope, INTRUDER,
};
use crate::model::{GoalKind, Protocol};
use crate::pattern::{instantiate, Bindings};
use crate::strand::{Compiled, EventKind, FactKind, Peer};
use crate::term::{derive, AtomKind, KnowledgeSet, Name, Term};

pub const MAX_SESSIONS: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("sessions must be between 1 and {MAX_SESSIONS}, got {0}")]
    Sessions(usize),
    #[error("depth must be positive")]
    Depth,
    #[error("workers must be positive")]
    Workers,
    #[error("unknown goal `{0}`")]
    UnknownGoal(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    pub sessions: usize,
    pub max_depth: usize,
    /// Only these goals; all when `None`.
    pub goals: Option<Vec<String>>,
    pub workers: usize,
    pub compose_depth: usize,
    /// Per-scenario cap on visited states; reaching it leaves open goals
    /// unknown.
    pub max_states: Option<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Config { sessions: 1, max_depth: 20, goals: None, workers: 1, compose_depth: 2, max_states: None }
    }
}

/// Role to agent, for one session.
pub type Assignment = BTreeMap<Name, Term>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub sessions: Vec<Assignment>,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.sessions.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            let parts: Vec<String> = s
                .iter()
                .filter(|(r, _)| !r.chars().next().is_some_and(char::is_lowercase))
                .map(|(r, a)| format!("{r}={a}"))
                .collect();
            f.write_str(&parts.join(", "))?;
        }
        Ok(())
    }
}

fn honest_names(p: &Protocol) -> Vec<(Name, Term)> {
    let taken: Vec<String> = p.agents.iter().map(|a| a.name.to_lowercase()).collect();
    let mut used: Vec<String> = Vec::new();
    p.role_variables()
        .into_iter()
        .map(|r| {
            let short = format!("{}1", r.chars().next().unwrap_or('x').to_lowercase());
            let name = if used.contains(&short) || taken.contains(&short) || short == INTRUDER {
                format!("{}1", r.to_lowercase())
            } else {
                short
            };
            used.push(name.clone());
            (r, Term::atom(&name, AtomKind::Honest))
        })
        .collect()
}

/// All role instantiations over {honest candidate, i} that satisfy the
/// constraints, in a fixed order; with two sessions, their ordered product.
pub fn instantiate_scenarios(p: &Protocol, sessions: usize) -> Result<Vec<Scenario>, VerifyError> {
    if sessions == 0 || sessions > MAX_SESSIONS {
        return Err(VerifyError::Sessions(sessions));
    }
    let roles = honest_names(p);
    let mut singles: Vec<Assignment> = Vec::new();
    for mask in 0u64..(1 << roles.len()) {
        let mut a = Assignment::new();
        for agent in p.agents.iter().filter(|a| a.trusted) {
            a.insert(agent.name.clone(), Term::atom(&agent.name, AtomKind::Trusted));
        }
        for (bit, (role, honest)) in roles.iter().enumerate() {
            let v = if mask >> bit & 1 == 1 { intruder_atom() } else { honest.clone() };
            a.insert(role.clone(), v);
        }
        if p.constraints.iter().all(|c| a.get(&c.left) != a.get(&c.right)) {
            singles.push(a);
        }
    }
    let mut out: Vec<Scenario> = singles.iter().map(|s| Scenario { sessions: vec![s.clone()] }).collect();
    for _ in 1..sessions {
        out = out
            .iter()
            .flat_map(|sc| {
                singles.iter().map(move |s| {
                    let mut v = sc.sessions.clone();
                    v.push(s.clone());
                    Scenario { sessions: v }
                })
            })
            .collect();
    }
    Ok(out)
}

/// A goal-relevant event that has happened.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fact {
    Witness { goal: usize, by: Term, peer: Option<Term>, payload: Term, label: Name, session: u32 },
    Request { goal: usize, by: Term, peer: Term, payload: Term, label: Name, session: u32 },
    Secret { goal: usize, holder: Term, payload: Term, parties: Vec<Term>, label: Name, session: u32 },
}

impl Fact {
    fn goal(&self) -> usize {
        match self {
            Fact::Witness { goal, .. } | Fact::Request { goal, .. } | Fact::Secret { goal, .. } => *goal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryKind {
    /// An honest agent sealed and sent a message.
    Send,
    /// The envelope meant for this very event.
    Direct,
    Replay,
    Composed,
}

impl fmt::Display for DeliveryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeliveryKind::Send => "send",
            DeliveryKind::Direct => "direct",
            DeliveryKind::Replay => "replay",
            DeliveryKind::Composed => "composed",
        })
    }
}

/// One ply of a trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Step {
    pub n: usize,
    pub label: String,
    pub session: u32,
    pub role: String,
    pub from: Term,
    pub to: Term,
    pub delivery: DeliveryKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_seq: Option<usize>,
    pub payload: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackTrace {
    pub scenario: Scenario,
    pub steps: Vec<Step>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Safe { depth: usize },
    Attack(AttackTrace),
    /// The state budget ran out; every bound up to `explored` was searched
    /// exhaustively.
    Unknown { explored: usize },
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Safe { .. } => "safe",
            Status::Attack(_) => "attack",
            Status::Unknown { .. } => "unknown",
        }
    }

    pub fn is_attack(&self) -> bool {
        matches!(self, Status::Attack(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub goal_id: String,
    pub kind: GoalKind,
    pub status: Status,
    /// States visited when the attack was found, or in total.
    pub states: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub model: String,
    pub sessions: usize,
    pub depth: usize,
    pub verdicts: Vec<Verdict>,
    pub states: u64,
    pub millis: u128,
}

impl Report {
    pub fn verdict(&self, goal: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.goal_id == goal)
    }

    pub fn attacks(&self) -> usize {
        self.verdicts.iter().filter(|v| v.status.is_attack()).count()
    }

    /// JSON form; wall time appears only with `stats`.
    pub fn to_json(&self, stats: bool) -> Value {
        let goals: Vec<Value> = self
            .verdicts
            .iter()
            .map(|v| {
                let mut g = json!({ "id": v.goal_id, "kind": v.kind, "status": v.status.name() });
                match &v.status {
                    Status::Attack(t) => {
                        g["scenario"] = json!(t.scenario.to_string());
                        g["reason"] = json!(t.reason);
                        g["trace"] = serde_json::to_value(&t.steps).expect("steps serialize");
                    }
                    Status::Safe { depth } => g["safe_to_depth"] = json!(depth),
                    Status::Unknown { explored } => g["explored_depth"] = json!(explored),
                }
                g["states"] = json!(v.states);
                if stats {
                    g["millis"] = json!(self.millis);
                }
                g
            })
            .collect();
        let mut out = json!({
            "model": self.model,
            "sessions": self.sessions,
            "depth": self.depth,
            "goals": goals,
        });
        if stats {
            out["states"] = json!(self.states);
            out["millis"] = json!(self.millis);
        }
        out
    }

    pub fn to_text(&self, stats: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model {}  sessions {}  depth {}", self.model, self.sessions, self.depth);
        for v in &self.verdicts {
            let status = match &v.status {
                Status::Safe { depth } => format!("safe (to depth {depth})"),
                Status::Unknown { explored } => format!("unknown (exhaustive to depth {explored}, state budget reached)"),
                Status::Attack(t) => format!("ATTACK in {} plies [{}]", t.steps.len(), t.scenario),
            };
            let _ = writeln!(s, "  {:<4} {:<12} {status}", v.goal_id, v.kind.to_string());
            if let Status::Attack(t) = &v.status {
                let _ = writeln!(s, "       {}", t.reason);
            }
        }
        if stats {
            let _ = writeln!(s, "states {}  time {} ms", self.states, self.millis);
        }
        s
    }
}

pub fn format_trace(t: &AttackTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", t.scenario);
    for st in &t.steps {
        let origin = st.origin_seq.map(|o| format!(" of #{o}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:>3}. {:<7} {} -> {}  [{}{origin}]  {}",
            st.n, st.label, st.from, st.to, st.delivery, st.payload
        );
    }
    let _ = writeln!(s, "reason: {}", t.reason);
    s
}

// ---------------------------------------------------------------------------
// Search engine

struct Instance {
    session: u32,
    strand: usize,
    me: Term,
    init: Bindings,
}

struct Bound {
    map: Bindings,
    hash: u128,
}

impl Bound {
    fn new(map: Bindings) -> Arc<Bound> {
        let hash = hash128(&map);
        Arc::new(Bound { map, hash })
    }
}

#[derive(Clone)]
struct State {
    pcs: Vec<usize>,
    /// Instances that will take no further steps on this branch.
    frozen: Vec<bool>,
    /// Lowest instance allowed to take the next receive.
    floor: usize,
    bindings: Vec<Arc<Bound>>,
    intruder: IntruderState,
    facts: Vec<Arc<Fact>>,
    facts_hash: u128,
}

enum Move {
    Send(usize),
    Receive(usize, Delivery, Bindings),
}

#[derive(Clone, Debug)]
struct Violation {
    goal: usize,
    reason: String,
}

struct Engine<'a> {
    c: &'a Compiled,
    scenario: &'a Scenario,
    instances: Vec<Instance>,
}

impl<'a> Engine<'a> {
    fn new(c: &'a Compiled, scenario: &'a Scenario) -> Self {
        let roles = c.protocol.role_variables();
        let mut instances = Vec::new();
        for (si, sess) in scenario.sessions.iter().enumerate() {
            for (ri, strand) in c.strands.iter().enumerate() {
                let me = sess[&strand.role].clone();
                if is_intruder(&me) {
                    continue;
                }
                let init: Bindings = roles.iter().map(|r| (Term::Var(r.clone()), sess[r].clone())).collect();
                instances.push(Instance { session: si as u32 + 1, strand: ri, me, init });
            }
        }
        Engine { c, scenario, instances }
    }

    fn role_value(&self, session: u32, role: &str) -> Term {
        self.scenario.sessions[session as usize - 1][role].clone()
    }

    fn initial_state(&self, compose_depth: usize) -> State {
        let p = &self.c.protocol;
        let arities = p.function_arities();
        let public: Vec<(Name, usize)> =
            p.public_functions().into_iter().filter_map(|f| arities.get(&f).map(|&n| (f, n))).collect();
        let mut agents: Vec<Term> = Vec::new();
        for sess in &self.scenario.sessions {
            agents.extend(sess.values().cloned());
        }
        agents.push(intruder_atom());
        let mut played = Vec::new();
        for sess in &self.scenario.sessions {
            let sub: Bindings = sess.iter().map(|(r, a)| (Term::Var(r.clone()), a.clone())).collect();
            for strand in &self.c.strands {
                if is_intruder(&sess[&strand.role]) {
                    let k = &strand.initial_knowledge;
                    let terms = k.terms().iter().map(|t| t.substitute(&sub));
                    let funcs = k.functions().iter().map(|(f, n)| (f.clone(), *n));
                    played.push(KnowledgeSet::from_parts(terms, funcs));
                }
            }
        }
        let k = initial_knowledge(&agents, &public, &played);
        State {
            pcs: vec![0; self.instances.len()],
            frozen: vec![false; self.instances.len()],
            floor: 0,
            bindings: self.instances.iter().map(|i| Bound::new(i.init.clone())).collect(),
            intruder: IntruderState::new(k, compose_depth),
            facts: Vec::new(),
            facts_hash: 0,
        }
    }

    fn next_event(&self, st: &State, ix: usize) -> Option<&crate::strand::Event> {
        self.c.strands[self.instances[ix].strand].events.get(st.pcs[ix])
    }

    /// Lowest-indexed active instance whose next event is a send.
    fn pending_send(&self, st: &State) -> Option<usize> {
        (0..self.instances.len())
            .find(|&ix| !st.frozen[ix] && self.next_event(st, ix).is_some_and(|e| e.kind == EventKind::Send))
    }

    fn receive_moves(&self, st: &State, floor: usize, out: &mut Vec<Move>) {
        for (ix, inst) in self.instances.iter().enumerate().skip(floor) {
            if st.frozen[ix] {
                continue;
            }
            let Some(ev) = self.next_event(st, ix) else { continue };
            if ev.kind != EventKind::Receive {
                continue;
            }
            let from = self.role_value(inst.session, &ev.counterpart);
            let exp = Expectation {
                receiver: &inst.me,
                claimed_sender: &from,
                channel: ev.channel,
                pattern: ev.pattern.as_ref().expect("receive events carry a pattern"),
                bound: &st.bindings[ix].map,
            };
            for (d, b) in st.intruder.deliverables(&exp) {
                out.push(Move::Receive(ix, d, b));
            }
        }
    }

    /// Every enabled transition, without any reduction.
    fn all_moves(&self, st: &State) -> Vec<Move> {
        let mut out: Vec<Move> = (0..self.instances.len())
            .filter(|&ix| self.next_event(st, ix).is_some_and(|e| e.kind == EventKind::Send))
            .map(Move::Send)
            .collect();
        self.receive_moves(st, 0, &mut out);
        out
    }

    /// Performs one ply. The flag tells whether facts or intruder knowledge
    /// changed, the only things goals depend on.
    fn apply(&self, st: &State, mv: Move, n: usize) -> (State, Step, bool) {
        let mut next = st.clone();
        let mut changed = false;
        let (ix, step) = match mv {
            Move::Send(ix) => {
                let inst = &self.instances[ix];
                let strand = &self.c.strands[inst.strand];
                let ev = &strand.events[st.pcs[ix]];
                let mut b = st.bindings[ix].map.clone();
                for name in &ev.fresh {
                    b.insert(Term::Var(name.clone()), Term::fresh(name, inst.session, &strand.role));
                }
                let payload = instantiate(&ev.template, &b).expect("send templates are ground under bindings");
                let to = self.role_value(inst.session, &ev.counterpart);
                changed |= next.intruder.observe(SealedEnvelope {
                    sender: inst.me.clone(),
                    receiver: to.clone(),
                    payload: payload.clone(),
                    origin_label: ev.action_label.clone(),
                    seq: n,
                    channel: ev.channel,
                    session: inst.session,
                });
                if !ev.fresh.is_empty() {
                    next.bindings[ix] = Bound::new(b);
                }
                next.floor = 0;
                let step = Step {
                    n,
                    label: ev.action_label.clone(),
                    session: inst.session,
                    role: strand.role.to_string(),
                    from: inst.me.clone(),
                    to,
                    delivery: DeliveryKind::Send,
                    origin_seq: None,
                    payload,
                };
                (ix, step)
            }
            Move::Receive(ix, d, b) => {
                let inst = &self.instances[ix];
                let strand = &self.c.strands[inst.strand];
                let ev = &strand.events[st.pcs[ix]];
                let (from, payload, delivery, origin_seq) = match d {
                    Delivery::Replay(i) => {
                        let env = &st.intruder.observed[i];
                        let kind = if env.origin_label == ev.action_label && env.session == inst.session {
                            DeliveryKind::Direct
                        } else {
                            DeliveryKind::Replay
                        };
                        (env.sender.clone(), env.payload.clone(), kind, Some(env.seq))
                    }
                    Delivery::Composed { payload, claimed_sender } => {
                        (claimed_sender, payload, DeliveryKind::Composed, None)
                    }
                };
                next.bindings[ix] = Bound::new(b);
                next.floor = ix;
                let step = Step {
                    n,
                    label: ev.action_label.clone(),
                    session: inst.session,
                    role: strand.role.to_string(),
                    from,
                    to: inst.me.clone(),
                    delivery,
                    origin_seq,
                    payload,
                };
                (ix, step)
            }
        };
        changed |= self.emit_facts(&mut next, ix);
        next.pcs[ix] += 1;
        (next, step, changed)
    }

    fn emit_facts(&self, st: &mut State, ix: usize) -> bool {
        let inst = &self.instances[ix];
        let ev = &self.c.strands[inst.strand].events[st.pcs[ix]];
        let b = &st.bindings[ix].map;
        let mut new = Vec::new();
        for fe in &ev.facts {
            let Some(goal) = self.c.protocol.goals.iter().position(|g| g.id == fe.goal_id) else { continue };
            let Some(payload) = instantiate(&fe.payload_template, b) else { continue };
            let label: Name = ev.action_label.as_str().into();
            let fact = match fe.kind {
                FactKind::Witness => Fact::Witness {
                    goal,
                    by: inst.me.clone(),
                    peer: match &fe.peer {
                        Some(Peer::Role(r)) => Some(self.role_value(inst.session, r)),
                        _ => None,
                    },
                    payload,
                    label,
                    session: inst.session,
                },
                FactKind::Request => {
                    let Some(Peer::Role(r)) = &fe.peer else { continue };
                    Fact::Request {
                        goal,
                        by: inst.me.clone(),
                        peer: self.role_value(inst.session, r),
                        payload,
                        label,
                        session: inst.session,
                    }
                }
                FactKind::Secret => Fact::Secret {
                    goal,
                    holder: inst.me.clone(),
                    payload,
                    parties: fe.parties.iter().map(|r| self.role_value(inst.session, r)).collect(),
                    label,
                    session: inst.session,
                },
            };
            new.push(fact);
        }
        let changed = !new.is_empty();
        for f in new {
            st.facts_hash = st.facts_hash.wrapping_add(hash128(&f));
            st.facts.push(Arc::new(f));
        }
        changed
    }

    fn key(&self, st: &State) -> u128 {
        let bindings: Vec<u128> = st.bindings.iter().map(|b| b.hash).collect();
        hash128(&(&st.pcs, &st.frozen, st.floor, bindings, st.intruder.fingerprint(), st.facts_hash))
    }
}

/// Violations of the listed goals in `st`.
fn check_goals(c: &Compiled, st: &State, wanted: &[usize]) -> Vec<Violation> {
    let k = st.intruder.knowledge();
    let mut out = Vec::new();
    for &g in wanted {
        let goal = &c.protocol.goals[g];
        match goal.kind {
            GoalKind::Secrecy => {
                for f in st.facts.iter().filter(|f| f.goal() == g) {
                    if let Fact::Secret { holder, payload, parties, label, session, .. } = &**f {
                        if parties.iter().any(is_intruder) || !derive(k, payload) {
                            continue;
                        }
                        out.push(Violation {
                            goal: g,
                            reason: format!(
                                "secret {payload} held by {holder} after {label} (session {session}) is known to the intruder"
                            ),
                        });
                        break;
                    }
                }
            }
            GoalKind::WeakAuth | GoalKind::StrongAuth => {
                if let Some(reason) = check_auth(st, g, goal.kind == GoalKind::StrongAuth) {
                    out.push(Violation { goal: g, reason });
                }
            }
        }
    }
    out
}

fn check_auth(st: &State, g: usize, injective: bool) -> Option<String> {
    let witnesses: Vec<&Fact> =
        st.facts.iter().map(|f| &**f).filter(|f| f.goal() == g && matches!(f, Fact::Witness { .. })).collect();
    let mut seen: HashMap<(&Term, &Term, &Term), usize> = HashMap::new();
    for f in &st.facts {
        let Fact::Request { goal, by, peer, payload, label, session } = &**f else { continue };
        if *goal != g || is_intruder(peer) {
            continue;
        }
        let matching = witnesses
            .iter()
            .filter(|w| matches!(w, Fact::Witness { by: wb, peer: Some(wp), payload: wpl, .. } if wb == peer && wp == by && wpl == payload))
            .count();
        if matching == 0 {
            let mut reason = format!(
                "request by {by} at {label} (session {session}) on {payload} has no matching witness from {peer}"
            );
            let unbound: Vec<String> = witnesses
                .iter()
                .filter_map(|w| match w {
                    Fact::Witness { by: wb, peer: None, label, .. } if wb == peer => Some(label.to_string()),
                    _ => None,
                })
                .collect();
            if !unbound.is_empty() {
                let _ = write!(reason, "; {peer} emitted only an UNBOUND-peer witness at {}", unbound.join(", "));
            }
            return Some(reason);
        }
        if injective {
            let count = seen.entry((by, peer, payload)).or_insert(0);
            *count += 1;
            if *count > matching {
                return Some(format!(
                    "request by {by} at {label} (session {session}) on {payload} reuses a witness from {peer} already consumed by an earlier request (replay)"
                ));
            }
        }
    }
    None
}

/// Keys are already uniform hashes; use their low bits directly.
#[derive(Default)]
struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = self.0.rotate_left(8) ^ u64::from(b);
        }
    }

    fn write_u128(&mut self, n: u128) {
        self.0 = n as u64;
    }
}

type Table = HashMap<u128, u8, BuildHasherDefault<KeyHasher>>;

/// Transposition-table capacity; beyond it states are no longer recorded,
/// which costs time but not correctness.
const TABLE_CAP: usize = 1 << 24;

struct Found {
    depth: usize,
    steps: Vec<Step>,
    reason: String,
    states: u64,
}

struct Outcome {
    found: BTreeMap<usize, Found>,
    states: u64,
    /// False when the state cap stopped the search.
    complete: bool,
    /// Deepest bound whose iteration finished.
    explored: usize,
}

struct Search<'e, 'a> {
    engine: &'e Engine<'a>,
    wanted: Vec<usize>,
    found: BTreeMap<usize, Found>,
    tt: Table,
    trace: Vec<Step>,
    states: u64,
    max_states: Option<u64>,
    cutoff: bool,
    aborted: bool,
}

impl Search<'_, '_> {
    fn open_goals(&self) -> Vec<usize> {
        self.wanted.iter().copied().filter(|g| !self.found.contains_key(g)).collect()
    }

    fn done(&self) -> bool {
        self.aborted || self.wanted.iter().all(|g| self.found.contains_key(g))
    }

    fn can_move(&self, st: &State) -> bool {
        if self.engine.pending_send(st).is_some() {
            return true;
        }
        let mut mv = Vec::new();
        self.engine.receive_moves(st, st.floor, &mut mv);
        !mv.is_empty()
    }

    /// Depth-first search to `bound` plies.
    ///
    /// Sends only add envelopes and knowledge, so any trace can be
    /// reordered to perform each send right after the sender's previous
    /// step, with the same length and final state. The search therefore
    /// branches on a pending send only by taking it or by freezing its
    /// instance for the rest of the branch (which costs no ply).
    fn dfs(&mut self, st: &State, g: usize, bound: usize, changed: bool) {
        self.states += 1;
        if self.max_states.is_some_and(|m| self.states > m) {
            self.aborted = true;
            return;
        }
        if g == bound {
            if changed {
                let open = self.open_goals();
                for v in check_goals(self.engine.c, st, &open) {
                    let f = Found { depth: g, steps: self.trace.clone(), reason: v.reason, states: self.states };
                    self.found.insert(v.goal, f);
                }
            }
            if !self.cutoff && self.can_move(st) {
                self.cutoff = true;
            }
            return;
        }
        let key = self.engine.key(st);
        let remaining = (bound - g) as u8;
        match self.tt.get(&key) {
            Some(&r) if r >= remaining => return,
            Some(_) => {
                self.tt.insert(key, remaining);
            }
            None if self.tt.len() < TABLE_CAP => {
                self.tt.insert(key, remaining);
            }
            None => {}
        }
        if let Some(ix) = self.engine.pending_send(st) {
            let (next, step, ch) = self.engine.apply(st, Move::Send(ix), g + 1);
            self.trace.push(step);
            self.dfs(&next, g + 1, bound, ch);
            self.trace.pop();
            if self.done() {
                return;
            }
            let mut frozen = st.clone();
            frozen.frozen[ix] = true;
            self.dfs(&frozen, g, bound, false);
            return;
        }
        // Receives leave intruder knowledge unchanged, so receives of
        // different instances commute; consecutive ones go in index order.
        let mut moves = Vec::new();
        self.engine.receive_moves(st, st.floor, &mut moves);
        for mv in moves {
            let (next, step, ch) = self.engine.apply(st, mv, g + 1);
            self.trace.push(step);
            self.dfs(&next, g + 1, bound, ch);
            self.trace.pop();
            if self.done() {
                return;
            }
        }
    }
}

fn search_scenario(c: &Compiled, sc: &Scenario, wanted: &[usize], cfg: &Config) -> Outcome {
    let engine = Engine::new(c, sc);
    let init = engine.initial_state(cfg.compose_depth);
    let mut s = Search {
        engine: &engine,
        wanted: wanted.to_vec(),
        found: BTreeMap::new(),
        tt: Table::default(),
        trace: Vec::new(),
        states: 0,
        max_states: cfg.max_states,
        cutoff: false,
        aborted: false,
    };
    let mut explored = 0;
    for bound in 1..=cfg.max_depth {
        s.tt.clear();
        s.cutoff = false;
        s.dfs(&init, 0, bound, false);
        if !s.aborted {
            explored = if s.cutoff { bound } else { cfg.max_depth };
        }
        if s.done() || !s.cutoff {
            break;
        }
    }
    Outcome { found: s.found, states: s.states, complete: !s.aborted, explored }
}

/// Re-executes `steps` from the initial state of `sc` and returns the
/// reason `goal` is violated at the end, or an error describing where the
/// trace stops being executable.
pub fn replay_trace(c: &Compiled, sc: &Scenario, steps: &[Step], goal: &str, compose_depth: usize) -> Result<String, String> {
    let g = c.protocol.goals.iter().position(|x| x.id == goal).ok_or_else(|| format!("unknown goal {goal}"))?;
    let engine = Engine::new(c, sc);
    let mut st = engine.initial_state(compose_depth);
    for (i, want) in steps.iter().enumerate() {
        let mut next = None;
        for mv in engine.all_moves(&st) {
            let (cand, step, _) = engine.apply(&st, mv, i + 1);
            if &step == want {
                next = Some(cand);
                break;
            }
        }
        st = next.ok_or_else(|| format!("step {} ({}) is not enabled", i + 1, want.label))?;
    }
    check_goals(c, &st, &[g])
        .into_iter()
        .next()
        .map(|v| v.reason)
        .ok_or_else(|| format!("trace does not violate {goal}"))
}

fn goal_order(id: &str) -> (String, u64, String) {
    let digits: String = id.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
    let prefix: String = id.chars().take_while(|c| !c.is_ascii_digit()).collect();
    (prefix, digits.parse().unwrap_or(0), id.to_string())
}

/// Searches every scenario and aggregates one verdict per goal.
pub fn verify(c: &Compiled, cfg: &Config) -> Result<Report, VerifyError> {
    let started = Instant::now();
    if cfg.max_depth == 0 {
        return Err(VerifyError::Depth);
    }
    if cfg.workers == 0 {
        return Err(VerifyError::Workers);
    }
    let goals = &c.protocol.goals;
    let wanted: Vec<usize> = match &cfg.goals {
        None => (0..goals.len()).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| goals.iter().position(|g| &g.id == id).ok_or_else(|| VerifyError::UnknownGoal(id.clone())))
            .collect::<Result<_, _>>()?,
    };
    let scenarios = instantiate_scenarios(&c.protocol, cfg.sessions)?;
    // A scenario whose sessions are a permutation of an earlier one's is
    // isomorphic to it and would lose every tie-break.
    let mirrored: Vec<bool> = scenarios
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let mut key = sc.sessions.clone();
            key.sort();
            scenarios[..i].iter().any(|o| {
                let mut k = o.sessions.clone();
                k.sort();
                k == key
            })
        })
        .collect();

    let results: Vec<Mutex<Option<Outcome>>> = scenarios.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(sc) = scenarios.get(i) else { break };
        let out = if mirrored[i] {
            Outcome { found: BTreeMap::new(), states: 0, complete: true, explored: cfg.max_depth }
        } else {
            search_scenario(c, sc, &wanted, cfg)
        };
        *results[i].lock().expect("result slot") = Some(out);
    };
    if cfg.workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..cfg.workers.min(scenarios.len()) {
                s.spawn(work);
            }
        });
    }
    let outcomes: Vec<Outcome> =
        results.into_iter().map(|m| m.into_inner().expect("result slot").expect("scenario searched")).collect();

    let total: u64 = outcomes.iter().map(|o| o.states).sum();
    let complete = outcomes.iter().all(|o| o.complete);
    let mut verdicts = Vec::new();
    for &g in &wanted {
        let best = outcomes
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.found.get(&g).map(|f| (i, f)))
            .min_by_key(|(i, f)| (f.depth, *i));
        let (status, states) = match best {
            Some((i, f)) => (
                Status::Attack(AttackTrace { scenario: scenarios[i].clone(), steps: f.steps.clone(), reason: f.reason.clone() }),
                f.states,
            ),
            None if complete => (Status::Safe { depth: cfg.max_depth }, total),
            None => (Status::Unknown { explored: outcomes.iter().map(|o| o.explored).min().unwrap_or(0) }, total),
        };
        verdicts.push(Verdict { goal_id: goals[g].id.clone(), kind: goals[g].kind, status, states });
    }
    verdicts.sort_by_key(|v| goal_order(&v.goal_id));
    Ok(Report {
        model: c.protocol.name.clone(),
        sessions: cfg.sessions,
        depth: cfg.max_depth,
        verdicts,
        states: total,
        millis: started.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::load;
    use crate::parser::{parse, SourceSpec};
    use crate::strand::compile;

    fn render(sc: &Scenario) -> String {
        sc.to_string()
    }

    #[test]
    fn atp_scenarios() {
        let c = load("atp-base").unwrap();
        let one: Vec<String> = instantiate_scenarios(&c.protocol, 1).unwrap().iter().map(render).collect();
        assert_eq!(one, ["AISP=a1, PSU=p1", "AISP=a1, PSU=i", "AISP=i, PSU=p1"]);
        assert_eq!(instantiate_scenarios(&c.protocol, 2).unwrap().len(), 9);
        assert!(matches!(instantiate_scenarios(&c.protocol, 3), Err(VerifyError::Sessions(3))));
    }

    #[test]
    fn unconstrained_single_role() {
        let src = "Protocol: One\nTypes:\n  Agent A, s;\n  Number N;\nKnowledge:\n  A: A, s;\n  s: s;\n\
                   Actions:\n  A *->* s: N  #X1\nGoals:\n  N secret between A, s  #G1\n";
        let p = parse(&SourceSpec::new(src, "one")).unwrap();
        assert_eq!(instantiate_scenarios(&p, 1).unwrap().len(), 2);
        let c = compile(&p).unwrap();
        let r = verify(&c, &Config::default()).unwrap();
        assert_eq!(r.verdict("G1").unwrap().status, Status::Safe { depth: 20 });
    }

    #[test]
    fn toy_replay_is_a_strong_auth_attack_only() {
        let c = load("toy-replay").unwrap();
        let cfg = Config { sessions: 2, max_depth: 8, ..Config::default() };
        let r = verify(&c, &cfg).unwrap();
        let Status::Attack(t) = &r.verdict("G1").unwrap().status else { panic!("G1 should fail") };
        assert!(t.reason.contains("replay"));
        assert_eq!(replay_trace(&c, &t.scenario, &t.steps, "G1", 2).as_deref(), Ok(t.reason.as_str()));
        assert!(matches!(r.verdict("G2").unwrap().status, Status::Safe { .. }));
    }

    #[test]
    fn budget_yields_unknown() {
        let c = load("atp-fixed").unwrap();
        let cfg = Config { max_states: Some(500), ..Config::default() };
        let r = verify(&c, &cfg).unwrap();
        assert!(r.verdicts.iter().all(|v| matches!(v.status, Status::Unknown { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let c = load("toy-nonce").unwrap();
        assert!(matches!(verify(&c, &Config { max_depth: 0, ..Config::default() }), Err(VerifyError::Depth)));
        assert!(matches!(verify(&c, &Config { workers: 0, ..Config::default() }), Err(VerifyError::Workers)));
        let goals = Some(vec!["G9".to_string()]);
        assert!(matches!(verify(&c, &Config { goals, ..Config::default() }), Err(VerifyError::UnknownGoal(_))));
    }
}
