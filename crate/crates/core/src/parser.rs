//! Text format for the AnB subset.
//!
//! ```text
//! Protocol: Name
//! Types:        Agent A, b; Number N; Function f;
//! Definitions:  X: f(A, N)                       (optional)
//! Knowledge:    A: A, b; b: b, f;  where A!=b    (where-clause optional)
//! Actions:      A *->* b: N, X   #T1
//! Goals:        b authenticates A on X   #G1
//! ```
//!
//! `#` starts a comment; on an action or goal line it also supplies the
//! label. A comma list is a flat tuple; parentheses nest.

use std::fmt::Write as _;

use crate::diag::{DiagCode, Diagnostic, Pos};
use crate::model::{
    validate, Action, AgentDecl, Channel, Decl, Definition, Goal, GoalKind, GoalParties,
    InequalityConstraint, Protocol, RoleKnowledge, Span,
};
use crate::term::{AtomKind, Term};

/// Protocol text and where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceSpec {
    pub text: String,
    pub origin: String,
}

impl SourceSpec {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        SourceSpec { text: text.into(), origin: origin.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Colon,
    Semi,
    Comma,
    LParen,
    RParen,
    Neq,
    Arrow(Channel),
    Comment(String),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let take = |n: usize, tok: Tok, out: &mut Vec<Token>| {
            out.push(Token { tok, pos });
            n
        };
        let consumed = match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => 1,
            '#' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '\n' {
                    j += 1;
                }
                let body: String = chars[start..j].iter().collect();
                take(j - i, Tok::Comment(body), &mut out)
            }
            ':' => take(1, Tok::Colon, &mut out),
            ';' => take(1, Tok::Semi, &mut out),
            ',' => take(1, Tok::Comma, &mut out),
            '(' => take(1, Tok::LParen, &mut out),
            ')' => take(1, Tok::RParen, &mut out),
            '!' if chars.get(i + 1) == Some(&'=') => take(2, Tok::Neq, &mut out),
            '*' if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') => {
                if chars.get(i + 3) == Some(&'*') {
                    take(4, Tok::Arrow(Channel::Secure), &mut out)
                } else {
                    take(3, Tok::Arrow(Channel::Authentic), &mut out)
                }
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                if chars.get(i + 2) == Some(&'*') {
                    take(3, Tok::Arrow(Channel::Confidential), &mut out)
                } else {
                    take(2, Tok::Arrow(Channel::Plain), &mut out)
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                take(j - i, Tok::Ident(word), &mut out)
            }
            other => {
                return Err(Diagnostic::error(DiagCode::Lexical, format!("unexpected character `{other}`"), pos));
            }
        };
        i += consumed;
        col += consumed;
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, column: col } });
    Ok(out)
}

const SECTIONS: [&str; 6] = ["Protocol", "Types", "Definitions", "Knowledge", "Actions", "Goals"];

struct Parser {
    toks: Vec<Token>,
    at: usize,
    proto: Protocol,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.at + n).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::error(DiagCode::Syntax, msg, self.pos()))
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Neq => "`!=`".into(),
            Tok::Arrow(c) => format!("`{}`", c.arrow()),
            Tok::Comment(_) => "comment".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    /// Skips comments that are not in label position.
    fn skip_comments(&mut self) {
        while matches!(self.peek(), Tok::Comment(_)) {
            self.bump();
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Pos> {
        if *self.peek() == want {
            Ok(self.bump().pos)
        } else {
            self.fail(format!("expected {what}, found {}", self.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Pos)> {
        self.skip_comments();
        match self.peek().clone() {
            Tok::Ident(s) if !self.at_section_header() => {
                let pos = self.bump().pos;
                Ok((s, pos))
            }
            _ => self.fail(format!("expected {what}, found {}", self.describe())),
        }
    }

    fn at_section_header(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if SECTIONS.contains(&s.as_str()))
            && *self.peek_at(1) == Tok::Colon
    }

    fn at_section(&mut self, name: &str) -> bool {
        self.skip_comments();
        matches!(self.peek(), Tok::Ident(s) if s == name) && *self.peek_at(1) == Tok::Colon
    }

    fn section(&mut self, name: &str) -> PResult<()> {
        if !self.at_section(name) {
            return self.fail(format!("expected `{name}:` section, found {}", self.describe()));
        }
        self.bump();
        self.bump();
        Ok(())
    }

    /// Label from a comment on the same line as `line`.
    fn trailing_label(&mut self, line: usize) -> Option<String> {
        if let Tok::Comment(body) = self.peek().clone() {
            if self.pos().line == line {
                self.bump();
                return body.split_whitespace().next().map(str::to_string);
            }
        }
        None
    }

    fn classify(&self, name: &str) -> Term {
        match self.proto.agent(name) {
            Some(a) if a.trusted => Term::atom(name, AtomKind::Trusted),
            _ => Term::var(name),
        }
    }

    /// term := item ("," item)*
    fn term(&mut self) -> PResult<Term> {
        let first = self.item()?;
        let mut items = vec![first];
        while *self.peek() == Tok::Comma {
            self.bump();
            items.push(self.item()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Term::Tuple(items) })
    }

    /// item := ident | ident "(" term-args ")" | "(" term ")"
    fn item(&mut self) -> PResult<Term> {
        self.skip_comments();
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let t = self.term()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(t)
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident("identifier")?;
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = vec![self.item()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.item()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Term::App { fun: name.into(), args })
                } else {
                    Ok(self.classify(&name))
                }
            }
            _ => self.fail(format!("expected a term, found {}", self.describe())),
        }
    }

    fn name_list(&mut self, what: &str) -> PResult<Vec<(String, Pos)>> {
        let mut v = vec![self.ident(what)?];
        while *self.peek() == Tok::Comma {
            self.bump();
            v.push(self.ident(what)?);
        }
        Ok(v)
    }

    fn parse(&mut self) -> PResult<()> {
        self.section("Protocol")?;
        let (name, _) = self.ident("protocol name")?;
        self.proto.name = name;

        self.section("Types")?;
        self.types()?;
        if self.at_section("Definitions") {
            self.section("Definitions")?;
            self.definitions()?;
        }
        self.section("Knowledge")?;
        self.knowledge()?;
        self.section("Actions")?;
        self.actions()?;
        self.section("Goals")?;
        self.goals()?;
        self.skip_comments();
        if *self.peek() != Tok::Eof {
            return self.fail(format!("unexpected {} after Goals section", self.describe()));
        }
        Ok(())
    }

    fn types(&mut self) -> PResult<()> {
        let mut any = false;
        loop {
            self.skip_comments();
            let kind = match self.peek() {
                Tok::Ident(s) if !self.at_section_header() => s.clone(),
                _ => break,
            };
            if !matches!(kind.as_str(), "Agent" | "Number" | "Function") {
                return self.fail(format!("expected `Agent`, `Number` or `Function`, found `{kind}`"));
            }
            self.bump();
            for (name, pos) in self.name_list("declared name")? {
                let span = Span(pos);
                match kind.as_str() {
                    "Agent" => {
                        let mut a = AgentDecl::new(&name);
                        a.span = span;
                        self.proto.agents.push(a);
                    }
                    "Number" => self.proto.numbers.push(Decl { name: name.into(), span }),
                    _ => self.proto.functions.push(Decl { name: name.into(), span }),
                }
            }
            if *self.peek() == Tok::Semi {
                self.bump();
            }
            any = true;
        }
        if !any {
            return self.fail("empty Types section");
        }
        Ok(())
    }

    fn definitions(&mut self) -> PResult<()> {
        loop {
            self.skip_comments();
            if !matches!(self.peek(), Tok::Ident(_)) || self.at_section_header() {
                return Ok(());
            }
            let (name, pos) = self.ident("definition name")?;
            self.expect(Tok::Colon, "`:`")?;
            let body = self.term()?;
            if *self.peek() == Tok::Semi {
                self.bump();
            }
            self.proto.definitions.push(Definition { name: name.into(), body, span: Span(pos) });
        }
    }

    fn knowledge(&mut self) -> PResult<()> {
        loop {
            self.skip_comments();
            match self.peek() {
                Tok::Ident(s) if s == "where" => break,
                Tok::Ident(_) if !self.at_section_header() => {}
                _ => break,
            }
            let (role, pos) = self.ident("role name")?;
            self.expect(Tok::Colon, "`:`")?;
            let mut entry = RoleKnowledge { role: role.into(), terms: vec![], functions: vec![], span: Span(pos) };
            loop {
                let t = self.item()?;
                match t {
                    Term::Var(ref n) if self.proto.is_function(n) => entry.functions.push(n.clone()),
                    other => entry.terms.push(other),
                }
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
            self.proto.knowledge.push(entry);
            if *self.peek() == Tok::Semi {
                self.bump();
            }
        }
        if matches!(self.peek(), Tok::Ident(s) if s == "where") {
            self.bump();
            loop {
                let (left, pos) = self.ident("role name")?;
                self.expect(Tok::Neq, "`!=`")?;
                let (right, _) = self.ident("role name")?;
                self.proto.constraints.push(InequalityConstraint { left: left.into(), right: right.into(), span: Span(pos) });
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        if self.proto.knowledge.is_empty() {
            return self.fail("empty Knowledge section");
        }
        Ok(())
    }

    fn actions(&mut self) -> PResult<()> {
        loop {
            self.skip_comments();
            if !matches!(self.peek(), Tok::Ident(_)) || self.at_section_header() {
                break;
            }
            let (sender, pos) = self.ident("sender")?;
            let channel = match self.peek() {
                Tok::Arrow(c) => *c,
                _ => return self.fail(format!("expected `->` or `*->*`, found {}", self.describe())),
            };
            self.bump();
            let (receiver, _) = self.ident("receiver")?;
            self.expect(Tok::Colon, "`:`")?;
            let message = self.term()?;
            let last_line = self.toks[self.at - 1].pos.line;
            let label = self
                .trailing_label(last_line)
                .unwrap_or_else(|| format!("A{}", self.proto.actions.len() + 1));
            self.proto.actions.push(Action {
                label,
                sender: sender.into(),
                receiver: receiver.into(),
                channel,
                message,
                span: Span(pos),
            });
        }
        if self.proto.actions.is_empty() {
            return self.fail("empty Actions section");
        }
        Ok(())
    }

    fn goals(&mut self) -> PResult<()> {
        loop {
            self.skip_comments();
            if *self.peek() == Tok::Eof {
                break;
            }
            let pos = self.pos();
            let is_auth = matches!(self.peek_at(1), Tok::Ident(s) if s == "authenticates" || s == "weakly");
            let (kind, payload, parties) = if is_auth {
                let (authenticator, _) = self.ident("role name")?;
                let kind = match self.ident("`authenticates`")?.0.as_str() {
                    "weakly" => {
                        let (kw, _) = self.ident("`authenticates`")?;
                        if kw != "authenticates" {
                            return self.fail("expected `authenticates`");
                        }
                        GoalKind::WeakAuth
                    }
                    _ => GoalKind::StrongAuth,
                };
                let (peer, _) = self.ident("role name")?;
                let (on, _) = self.ident("`on`")?;
                if on != "on" {
                    return Err(Diagnostic::error(DiagCode::Syntax, format!("expected `on`, found `{on}`"), self.toks[self.at - 1].pos));
                }
                let payload = self.term()?;
                (kind, payload, GoalParties::Auth { authenticator: authenticator.into(), peer: peer.into() })
            } else {
                let payload = self.term()?;
                for kw in ["secret", "between"] {
                    let (w, wpos) = self.ident(&format!("`{kw}`"))?;
                    if w != kw {
                        return Err(Diagnostic::error(DiagCode::Syntax, format!("expected `{kw}`, found `{w}`"), wpos));
                    }
                }
                let parties = self.name_list("role name")?.into_iter().map(|(n, _)| n.into()).collect();
                (GoalKind::Secrecy, payload, GoalParties::Secrecy(parties))
            };
            let last_line = self.toks[self.at - 1].pos.line;
            let id = self
                .trailing_label(last_line)
                .unwrap_or_else(|| format!("G{}", self.proto.goals.len() + 1));
            self.proto.goals.push(Goal { id, kind, payload, parties, span: Span(pos) });
        }
        if self.proto.goals.is_empty() {
            return self.fail("empty Goals section");
        }
        Ok(())
    }
}

/// Parses and validates; any error-level diagnostic means failure.
pub fn parse(s: &SourceSpec) -> Result<Protocol, Vec<Diagnostic>> {
    let toks = lex(&s.text).map_err(|d| vec![d])?;
    let mut p = Parser { toks, at: 0, proto: Protocol::default() };
    p.parse().map_err(|d| vec![d])?;
    let diags = validate(&p.proto);
    if diags.iter().any(Diagnostic::is_error) {
        return Err(diags);
    }
    Ok(p.proto)
}

/// Parses without validating (syntax errors only).
pub fn parse_syntax(s: &SourceSpec) -> Result<Protocol, Diagnostic> {
    let toks = lex(&s.text)?;
    let mut p = Parser { toks, at: 0, proto: Protocol::default() };
    p.parse()?;
    Ok(p.proto)
}

fn item_text(t: &Term) -> String {
    match t {
        Term::Tuple(_) => format!("({t})"),
        _ => t.to_string(),
    }
}

fn joined<T: AsRef<str>>(names: &[T]) -> String {
    names.iter().map(|n| n.as_ref()).collect::<Vec<_>>().join(", ")
}

/// Canonical text; `parse(render(p))` is structurally equal to `p`.
pub fn render(p: &Protocol) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Protocol: {}\n", p.name);
    s.push_str("Types:\n");
    let agents: Vec<&str> = p.agents.iter().map(|a| &*a.name).collect();
    if !agents.is_empty() {
        let _ = writeln!(s, "  Agent {};", joined(&agents));
    }
    let numbers: Vec<&str> = p.numbers.iter().map(|a| &*a.name).collect();
    if !numbers.is_empty() {
        let _ = writeln!(s, "  Number {};", joined(&numbers));
    }
    let functions: Vec<&str> = p.functions.iter().map(|a| &*a.name).collect();
    if !functions.is_empty() {
        let _ = writeln!(s, "  Function {};", joined(&functions));
    }
    if !p.definitions.is_empty() {
        s.push_str("\nDefinitions:\n");
        for d in &p.definitions {
            let _ = writeln!(s, "  {}: {}", d.name, d.body);
        }
    }
    s.push_str("\nKnowledge:\n");
    for k in &p.knowledge {
        let mut items: Vec<String> = k.terms.iter().map(item_text).collect();
        items.extend(k.functions.iter().map(|f| f.to_string()));
        let _ = writeln!(s, "  {}: {};", k.role, items.join(", "));
    }
    if !p.constraints.is_empty() {
        let cs: Vec<String> = p.constraints.iter().map(|c| format!("{}!={}", c.left, c.right)).collect();
        let _ = writeln!(s, "  where {}", cs.join(", "));
    }
    s.push_str("\nActions:\n");
    for a in &p.actions {
        let _ = writeln!(s, "  {} {} {}: {}  #{}", a.sender, a.channel.arrow(), a.receiver, a.message, a.label);
    }
    s.push_str("\nGoals:\n");
    for g in &p.goals {
        let body = match &g.parties {
            GoalParties::Secrecy(parties) => format!("{} secret between {}", g.payload, joined(parties)),
            GoalParties::Auth { authenticator, peer } => {
                let verb = if g.kind == GoalKind::WeakAuth { "weakly authenticates" } else { "authenticates" };
                format!("{authenticator} {verb} {peer} on {}", g.payload)
            }
        };
        let _ = writeln!(s, "  {body}  #{}", g.id);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
Protocol: Small
Types:
  Agent PSU, AISP, aspspA, aspspR;
  Number IntentAgreement;
  Function fAISPSecret, fPSUSecret;
Knowledge:
  PSU: PSU, AISP, aspspA, aspspR, fPSUSecret(PSU);
  AISP: AISP, PSU, aspspA, aspspR, fAISPSecret(AISP);
  aspspA: aspspA, aspspR, fPSUSecret, fAISPSecret;
  aspspR: aspspR, aspspA;
where PSU!=AISP,PSU!=aspspA,PSU!=aspspR
Actions:
    # ---- step 1 ----
    PSU *->* AISP:       IntentAgreement    #A1.1
    AISP *->* aspspA:    AISP, fAISPSecret(AISP)  #A2.1
Goals:
  fAISPSecret(AISP) secret between AISP,aspspA              #G1
  # FAILED initially + Fixed #A2.3
  AISP weakly authenticates PSU on IntentAgreement  #G2
  aspspA authenticates AISP on fAISPSecret(AISP)
";

    fn parsed() -> Protocol {
        parse(&SourceSpec::new(SMALL, "test")).unwrap()
    }

    #[test]
    fn where_clause_yields_constraints() {
        let p = parsed();
        assert_eq!(p.constraints.len(), 3);
        assert_eq!(&*p.constraints[2].right, "aspspR");
    }

    #[test]
    fn secure_action_and_labels() {
        let p = parsed();
        let a = &p.actions[0];
        assert_eq!((&*a.sender, &*a.receiver, a.channel), ("PSU", "AISP", Channel::Secure));
        assert_eq!(a.label, "A1.1");
        assert_eq!(p.actions[1].label, "A2.1");
        assert_eq!(
            p.actions[1].message,
            Term::tuple(vec![Term::var("AISP"), Term::app("fAISPSecret", vec![Term::var("AISP")])])
        );
    }

    #[test]
    fn goal_forms() {
        let p = parsed();
        assert_eq!(p.goals[0].kind, GoalKind::Secrecy);
        assert_eq!(p.goals[0].parties, GoalParties::Secrecy(vec!["AISP".into(), "aspspA".into()]));
        assert_eq!(p.goals[1].kind, GoalKind::WeakAuth);
        assert_eq!(p.goals[1].id, "G2");
        assert_eq!(p.goals[2].kind, GoalKind::StrongAuth);
        // No trailing comment: numbered by position.
        assert_eq!(p.goals[2].id, "G3");
    }

    #[test]
    fn knowledge_separates_functions() {
        let p = parsed();
        let a = p.knowledge_of("aspspA").unwrap();
        assert_eq!(a.functions.len(), 2);
        assert_eq!(a.terms.len(), 2);
        assert_eq!(a.terms[0], Term::atom("aspspA", AtomKind::Trusted));
    }

    #[test]
    fn unbalanced_paren_reports_position() {
        let bad = SMALL.replace("AISP, fAISPSecret(AISP)  #A2.1", "AISP, fAISPSecret(AISP  #A2.1");
        let err = parse(&SourceSpec::new(bad, "t")).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].code, DiagCode::Syntax);
        assert_eq!(err[0].line, 15);
        assert!(err[0].column > 1);
    }

    #[test]
    fn render_round_trips() {
        let p = parsed();
        let text = render(&p);
        let again = parse(&SourceSpec::new(text.clone(), "r")).unwrap();
        assert_eq!(again, p);
        assert_eq!(render(&again), text);
        assert!(text.contains("  AISP *->* aspspA: AISP, fAISPSecret(AISP)  #A2.1\n"));
        assert!(!text.contains("Definitions:"));
    }

    #[test]
    fn nested_tuples_keep_parentheses() {
        let src = SMALL.replace("AISP, fAISPSecret(AISP)  #A2.1", "AISP, (fAISPSecret(AISP), AISP)  #A2.1");
        let p = parse(&SourceSpec::new(src, "t")).unwrap();
        let again = parse(&SourceSpec::new(render(&p), "r")).unwrap();
        assert_eq!(again.actions[1].message, p.actions[1].message);
        assert!(matches!(&p.actions[1].message, Term::Tuple(items) if items.len() == 2));
    }

    #[test]
    fn section_order_is_enforced() {
        let swapped = SMALL.replace("Knowledge:", "Knowledge_:").replace("Actions:", "Knowledge:");
        assert!(parse(&SourceSpec::new(swapped, "t")).is_err());
    }

    #[test]
    fn stray_characters_are_lexical_errors() {
        let err = parse(&SourceSpec::new("Protocol: X\nTypes: Agent A$;", "t")).unwrap_err();
        assert_eq!(err[0].code, DiagCode::Lexical);
        assert_eq!((err[0].line, err[0].column), (2, 15));
    }
}
