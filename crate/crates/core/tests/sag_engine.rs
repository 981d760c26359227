mod common;

use scriptalign_core::backend::{FreeformMock, ScriptFaithfulMock};
use scriptalign_core::context::ScriptBlock;
use scriptalign_core::rule::oracle_path;
use scriptalign_core::sag::{build_sag_prompt, sag_start, sag_step, SagConfig};
use scriptalign_core::script::NodeKind;
use scriptalign_core::UserInput;

#[test]
fn golden_prompt_for_fixture_topic() {
    let lib = common::sample_library();
    let s = lib.get("confidence_rating").unwrap();
    let req = build_sag_prompt(s, &[], &[s.root_id().to_string()], &SagConfig::default()).unwrap();
    common::assert_golden("sag_confidence_rating.txt", &req.system_prompt);
    let again = build_sag_prompt(s, &[], &[s.root_id().to_string()], &SagConfig::default()).unwrap();
    assert_eq!(req, again);
}

#[test]
fn one_node_script_lists_one_node() {
    let doc = br#"{"topic_id":"one","title":"One","framework":"MI","root":"q",
        "nodes":{"q":{"kind":"therapeutic_question","speaker":"bot","text":"Ready?","children":["e"]},
                 "e":{"kind":"terminal","speaker":"bot","text":"Bye.","children":[]}}}"#;
    let s = scriptalign_core::script::DialogueScript::parse(doc).unwrap();
    let req = build_sag_prompt(&s, &[], &["q".into()], &SagConfig { token_budget: 6000, ..SagConfig::default() }).unwrap();
    let block = ScriptBlock::find(&req.system_prompt).unwrap();
    assert_eq!(block.nodes.len(), 2);
}

/// With the faithful mock, the tracked node sequence of every path equals
/// the rule-based oracle path.
#[test]
fn faithful_mock_reproduces_oracle_paths() {
    let lib = common::sample_library();
    let cfg = SagConfig::default();
    for s in lib.scripts() {
        for path in s.enumerate_paths() {
            let choices = s.choices_on_path(&path);
            let (mut state, mut turn) = sag_start(&lib, s.topic_id(), &ScriptFaithfulMock, &cfg).unwrap();
            let mut choice = choices.iter();
            while !state.completed {
                let input = match turn.options.first() {
                    Some(_) => UserInput::option(choice.next().unwrap().clone()),
                    None => UserInput::text("I think so."),
                };
                (state, turn) = sag_step(s, &state, &input, &ScriptFaithfulMock, &cfg).unwrap();
            }
            assert_eq!(state.matched_nodes, oracle_path(s, &choices).unwrap(), "{}", s.topic_id());
            let path_questions: std::collections::BTreeSet<_> = s.questions_on_path(&path).into_iter().collect();
            assert_eq!(state.matched_questions, path_questions);
        }
    }
}

#[test]
fn freeform_mock_matches_nothing() {
    let lib = common::sample_library();
    let cfg = SagConfig::default();
    for s in lib.scripts() {
        let (mut state, _) = sag_start(&lib, s.topic_id(), &FreeformMock, &cfg).unwrap();
        for _ in 0..10 {
            state = sag_step(s, &state, &UserInput::text("yes"), &FreeformMock, &cfg).unwrap().0;
        }
        assert!(state.matched_questions.is_empty());
        assert!(!state.completed);
        assert!(state
            .matched_nodes
            .iter()
            .all(|id| s.node(id).unwrap().kind != NodeKind::TherapeuticQuestion));
    }
}
