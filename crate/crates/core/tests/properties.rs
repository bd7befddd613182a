use proptest::prelude::*;

use anbverify::parser::{parse, SourceSpec};
use anbverify::pattern::{match_pattern, recognizable_pattern, Bindings, Sort};
use anbverify::term::{close, derive, AtomKind, KnowledgeSet, Term};

fn atom() -> impl Strategy<Value = Term> {
    prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(|n| Term::atom(n, AtomKind::Public))
}

fn grow(leaf: BoxedStrategy<Term>) -> impl Strategy<Value = Term> {
    leaf.prop_recursive(2, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(x, y)| Term::tuple(vec![x, y])),
            inner.clone().prop_map(|x| Term::app("f", vec![x])),
            (inner.clone(), inner).prop_map(|(x, y)| Term::app("g", vec![x, y])),
        ]
    })
}

fn ground() -> impl Strategy<Value = Term> {
    grow(atom().boxed())
}

fn template() -> impl Strategy<Value = Term> {
    let var = prop::sample::select(vec!["X", "Y"]).prop_map(Term::var);
    grow(prop_oneof![atom(), var].boxed())
}

fn knowledge() -> impl Strategy<Value = KnowledgeSet> {
    (prop::collection::vec(ground(), 0..4), any::<bool>(), any::<bool>()).prop_map(|(ts, f, g)| {
        let mut funcs = Vec::new();
        if f {
            funcs.push(("f".into(), 1));
        }
        if g {
            funcs.push(("g".into(), 2));
        }
        KnowledgeSet::from_parts(ts, funcs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn close_grows_with_depth(k in knowledge(), d in 1usize..3) {
        let small = close(&k, d);
        let big = close(&k, d + 1);
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn close_grows_with_knowledge(k in knowledge(), extra in ground(), d in 1usize..4) {
        let mut more = k.clone();
        more.insert(extra);
        prop_assert!(close(&k, d).is_subset(&close(&more, d)));
    }

    #[test]
    fn close_is_idempotent(k in knowledge(), d in 1usize..3) {
        let once = close(&k, d);
        let again = KnowledgeSet::from_parts(once.iter().cloned(), k.functions().iter().map(|(f, n)| (f.clone(), *n)));
        prop_assert_eq!(close(&again, d), once);
    }

    #[test]
    fn derive_agrees_with_close(k in knowledge(), t in ground()) {
        prop_assert_eq!(derive(&k, &t), close(&k, t.height()).contains(&t));
    }

    #[test]
    fn patterns_accept_their_own_instances(k in knowledge(), m in template(), x in ground(), y in ground()) {
        let sigma: Bindings = [(Term::var("X"), x), (Term::var("Y"), y)].into_iter().collect();
        let p = recognizable_pattern(&k, &Bindings::new(), &m, &|_| Some(Sort::Message)).unwrap();
        let payload = m.substitute(&sigma);
        let b = match_pattern(&p, &payload, &Bindings::new());
        prop_assert!(b.is_some(), "{} rejects {}", p, payload);
        for (key, value) in b.unwrap() {
            prop_assert_eq!(key.substitute(&sigma), value);
        }
    }

    #[test]
    fn parser_is_total(text in "\\PC{0,200}") {
        let _ = parse(&SourceSpec::new(text, "prop"));
    }

    #[test]
    fn parser_is_total_on_near_models(cut in 0usize..600, junk in "[A-Za-z0-9#:;,()*>!= \n-]{0,12}") {
        let src = anbverify::models::builtin("atp-base").unwrap().text;
        let at = src.char_indices().map(|(i, _)| i).nth(cut).unwrap_or(src.len());
        let text = format!("{}{junk}{}", &src[..at], &src[at..]);
        let _ = parse(&SourceSpec::new(text, "prop"));
    }
}
