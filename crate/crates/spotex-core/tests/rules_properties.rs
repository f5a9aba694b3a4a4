//! Property tests for the rule language: parser/renderer round trips,
//! boolean-algebra consistency of the evaluator, and parser totality.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{arb_fingerprint, arb_store, client_mac};
use spotex_core::rules::{
    evaluate, match_all, parse_rules, render_rule, ConditionNode, EvalContext, Predicate, Rule,
    TimeOfDay, VisitHistory,
};

fn arb_time() -> impl Strategy<Value = TimeOfDay> {
    (0u8..24, 0u8..60).prop_map(|(h, m)| TimeOfDay::new(h, m).unwrap())
}

/// Predicates biased toward the small pools the context strategies draw
/// from, so they hit as often as they miss.
fn arb_predicate() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        (0u8..8).prop_map(|n| Predicate::IsVisible(format!("net{n}"))),
        (0u8..8).prop_map(|n| Predicate::IsVisibleMac(common::pool_mac(n))),
        ((0u8..8), -100i32..=0, 0i32..=40).prop_map(|(n, lo, span)| Predicate::RssiIn {
            ssid: format!("net{n}"),
            lo,
            hi: (lo + span).min(0),
        }),
        (arb_time(), arb_time()).prop_map(|(from, to)| Predicate::TimeBetween { from, to }),
        (0u8..4).prop_map(|n| Predicate::ClientIs(client_mac(n + 1))),
        Just(Predicate::FirstVisit),
        (1u32..4, 1u64..5).prop_map(|(n, t_secs)| Predicate::InGroupOf { n, t_secs }),
        ("[a-z]{1,6}", -50i64..50).prop_map(|(key, min)| Predicate::AttrGe { key, min }),
    ]
}

/// Predicates with fully arbitrary string payloads, for round-trip tests.
fn arb_predicate_wild() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        any::<String>().prop_map(Predicate::IsVisible),
        common::arb_mac().prop_map(Predicate::IsVisibleMac),
        (any::<String>(), -100i32..=0, 0i32..=40).prop_map(|(ssid, lo, span)| {
            Predicate::RssiIn {
                ssid,
                lo,
                hi: (lo + span).min(0),
            }
        }),
        (arb_time(), arb_time()).prop_map(|(from, to)| Predicate::TimeBetween { from, to }),
        common::arb_mac().prop_map(Predicate::ClientIs),
        Just(Predicate::FirstVisit),
        (1u32..1000, 1u64..100_000).prop_map(|(n, t_secs)| Predicate::InGroupOf { n, t_secs }),
        (any::<String>(), any::<i64>()).prop_map(|(key, min)| Predicate::AttrGe { key, min }),
    ]
}

fn arb_condition(
    leaf: impl Strategy<Value = Predicate> + 'static,
) -> impl Strategy<Value = ConditionNode> {
    leaf.prop_map(ConditionNode::Predicate).prop_recursive(
        5,  // depth
        48, // node budget
        2,
        |inner| {
            prop_oneof![
                (inner.clone(), inner.clone())
                    .prop_map(|(l, r)| ConditionNode::and(l, r)),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| ConditionNode::or(l, r)),
                inner.prop_map(ConditionNode::not),
            ]
        },
    )
}

fn arb_attrs() -> impl Strategy<Value = BTreeMap<String, i64>> {
    prop::collection::btree_map("[a-z]{1,6}", -50i64..50, 0..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parse_render_parse_is_ast_identity(
        cond in arb_condition(arb_predicate_wild()),
        message in any::<String>(),
    ) {
        let rule = Rule::new(cond, message.trim());
        let rendered = render_rule(&rule);
        let reparsed = parse_rules(&rendered).unwrap_or_else(|e| {
            panic!("rendered rule failed to parse: {e}\n{rendered}")
        });
        prop_assert_eq!(reparsed.len(), 1);
        prop_assert_eq!(&reparsed[0], &rule);
    }

    #[test]
    fn de_morgan_holds_under_evaluation(
        p in arb_condition(arb_predicate()),
        q in arb_condition(arb_predicate()),
        scan in arb_fingerprint(5000, 8),
        now in arb_time(),
        attrs in arb_attrs(),
        store_and_clients in arb_store(3, 6),
        client_ix in 0u8..4,
    ) {
        let (store, _) = store_and_clients;
        let ctx = EvalContext {
            scan: &scan,
            now,
            client: client_mac(client_ix + 1),
            attrs: &attrs,
            log: Some(&store),
            group_delta_ms: 1000,
            group_omega_db: 8.0,
        };
        let history = VisitHistory::new();

        let lhs = Rule::new(
            ConditionNode::not(ConditionNode::and(p.clone(), q.clone())),
            "m",
        );
        let rhs = Rule::new(
            ConditionNode::or(ConditionNode::not(p), ConditionNode::not(q)),
            "m",
        );
        // Both rules carry their own ids, but FIRST_VISIT sees the same
        // (empty) history either way.
        let a = evaluate(&lhs, &ctx, &history).unwrap();
        let b = evaluate(&rhs, &ctx, &history).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn evaluation_is_pure_against_a_history_snapshot(
        cond in arb_condition(arb_predicate()),
        scan in arb_fingerprint(5000, 8),
        now in arb_time(),
        attrs in arb_attrs(),
        store_and_clients in arb_store(3, 6),
    ) {
        let (store, clients) = store_and_clients;
        let ctx = EvalContext {
            scan: &scan,
            now,
            client: clients[0],
            attrs: &attrs,
            log: Some(&store),
            group_delta_ms: 1000,
            group_omega_db: 8.0,
        };
        let mut history = VisitHistory::new();
        history.mark(clients[0], "some-other-rule");
        let rule = Rule::new(cond, "m");
        let a = evaluate(&rule, &ctx, &history).unwrap();
        let b = evaluate(&rule, &ctx, &history).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fired_rules_keep_source_order(
        conds in prop::collection::vec(arb_condition(arb_predicate()), 1..12),
        scan in arb_fingerprint(5000, 8),
        now in arb_time(),
        attrs in arb_attrs(),
        store_and_clients in arb_store(2, 4),
    ) {
        let (store, clients) = store_and_clients;
        let rules: Vec<Rule> = conds
            .into_iter()
            .enumerate()
            .map(|(i, c)| Rule::new(c, format!("m{i}")))
            .collect();
        let ctx = EvalContext {
            scan: &scan,
            now,
            client: clients[0],
            attrs: &attrs,
            log: Some(&store),
            group_delta_ms: 1000,
            group_omega_db: 8.0,
        };
        let mut history = VisitHistory::new();
        let fired = match_all(&rules, &ctx, &mut history).unwrap();

        // The fired messages must be a subsequence of the source order.
        let source: Vec<&str> = rules.iter().map(|r| r.message()).collect();
        let mut cursor = 0usize;
        for (_, message) in &fired {
            let found = source[cursor..]
                .iter()
                .position(|m| *m == message.as_str());
            prop_assert!(found.is_some(), "fired out of source order");
            cursor += found.unwrap() + 1;
        }
    }

    #[test]
    fn parser_never_panics_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let text = String::from_utf8_lossy(&bytes);
        let _ = parse_rules(&text);
    }

    #[test]
    fn parser_never_panics_on_arbitrary_strings(text in any::<String>()) {
        let _ = parse_rules(&text);
    }

    #[test]
    fn parser_never_panics_on_rule_shaped_input(
        head in "[IFANDORNT() '{}#\\\\a-z0-9:,_\n-]{0,120}",
    ) {
        let _ = parse_rules(&head);
    }
}
