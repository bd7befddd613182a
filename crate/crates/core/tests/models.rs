use std::collections::BTreeSet;

use anbverify::model::Protocol;
use anbverify::models::{self, Expected};
use anbverify::parser::{parse, render, SourceSpec};

fn protocol(name: &str) -> Protocol {
    parse(&models::builtin(name).unwrap()).unwrap()
}

/// Labels of actions whose message differs between two models with the
/// same action list.
fn changed_actions(a: &Protocol, b: &Protocol) -> BTreeSet<String> {
    assert_eq!(a.actions.len(), b.actions.len());
    a.actions
        .iter()
        .zip(&b.actions)
        .filter(|(x, y)| x != y)
        .map(|(x, y)| {
            assert_eq!(x.label, y.label);
            x.label.clone()
        })
        .collect()
}

fn numbers(p: &Protocol) -> Vec<String> {
    p.numbers.iter().map(|d| d.name.to_string()).collect()
}

fn same_frame(a: &Protocol, b: &Protocol) {
    assert_eq!(a.agents, b.agents);
    assert_eq!(a.functions, b.functions);
    assert_eq!(a.definitions, b.definitions);
    assert_eq!(a.knowledge, b.knowledge);
    assert_eq!(a.constraints, b.constraints);
    assert_eq!(a.goals, b.goals);
}

#[test]
fn bundled_models_round_trip() {
    for m in models::builtins() {
        let p = protocol(m.name);
        let text = render(&p);
        let again = parse(&SourceSpec::new(text.clone(), "rendered")).unwrap();
        assert_eq!(again, p, "{}", m.name);
        assert_eq!(render(&again), text, "{}", m.name);
    }
}

#[test]
fn g4_fix_only_adds_the_user_to_intent_creation() {
    let base = protocol("atp-base");
    let fix = protocol("atp-g4fix");
    same_frame(&base, &fix);
    assert_eq!(numbers(&base), numbers(&fix));
    assert_eq!(changed_actions(&base, &fix), BTreeSet::from(["A2.3".to_string()]));
    let a23 = fix.actions.iter().find(|a| a.label == "A2.3").unwrap();
    assert_eq!(a23.message.to_string(), "ClientToken, IntentAgreement, PSU");
}

#[test]
fn g7g8_fix_only_adds_a_nonce_to_the_data_request() {
    let base = protocol("atp-base");
    let fix = protocol("atp-g7g8fix");
    same_frame(&base, &fix);
    assert_eq!(numbers(&fix), ["IntentAgreement", "SelectedAccounts", "NAISP"]);
    assert_eq!(changed_actions(&base, &fix), BTreeSet::from(["A4.1".to_string(), "A4.2".to_string()]));
}

#[test]
fn fixed_is_the_union_of_both_fixes() {
    let g4 = protocol("atp-g4fix");
    let g7g8 = protocol("atp-g7g8fix");
    let fixed = protocol("atp-fixed");
    same_frame(&g4, &fixed);
    assert_eq!(numbers(&fixed), numbers(&g7g8));
    for (i, a) in fixed.actions.iter().enumerate() {
        let expected = if a.label.starts_with("A4.") { &g7g8.actions[i] } else { &g4.actions[i] };
        assert_eq!(a, expected);
    }
}

#[test]
fn expected_tables_cover_every_goal() {
    for m in models::builtins() {
        let p = protocol(m.name);
        let ids: Vec<&str> = p.goals.iter().map(|g| g.id.as_str()).collect();
        let table: Vec<&str> = m.expected.iter().map(|(g, _)| *g).collect();
        assert_eq!(ids, table);
        assert!(m.expected.iter().all(|(_, e)| *e != Expected::NoAttack));
    }
}
