mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::stage1::{fuzz_case, fuzz_skill, goal_accepts, selection_within_limits, view_subsets, GOALS};
use mmskills::package::{StateCard, ViewType};
use mmskills::protocol::{
    candidate_previews, parse_main_output, parse_stage1_output, parse_stage2_output, render_main_prompts,
    render_stage1_prompt, render_stage2_prompt, validate_view_request, BranchGuidance, EvidenceGoal, LoadedView,
    MainDecision, MainPromptInput, PromptBundle, ProtocolError, Stage1Input, Stage2Input, ViewBudget, ViewRequest,
    ViewSelection, NO_SKILLS_TEXT, NO_VISUAL_REFERENCES_TEXT,
};

fn all_views_card() -> StateCard {
    StateCard {
        state_id: "s".into(),
        when_to_use: "w".into(),
        when_not_to_use: String::new(),
        visible_cues: vec![],
        verification_cue: "v".into(),
        available_views: ViewType::ALL.into_iter().collect(),
    }
}

#[test]
fn goal_view_truth_table() {
    let card = all_views_card();
    let mut accepted = 0;
    for goal in EvidenceGoal::ALL {
        for views in view_subsets() {
            let req = ViewRequest { state_id: "s".into(), views: views.clone(), evidence_goal: goal, reason: "r".into() };
            let names: BTreeSet<&str> = views.iter().map(|v| v.as_str()).collect();
            let expected = goal_accepts(goal.as_str(), &names);
            let got = validate_view_request(&req, &card, 4);
            assert_eq!(got.is_ok(), expected, "{goal} {names:?}: {got:?}");
            if let Err(e) = got {
                assert!(matches!(e, ProtocolError::GoalViewMismatch { .. }), "{e:?}");
            }
            accepted += expected as usize;
        }
    }
    assert_eq!(accepted, 12);
    assert_eq!(GOALS.len() * view_subsets().len(), 60);
}

#[test]
fn request_level_errors() {
    let mut card = all_views_card();
    let req = |views: Vec<ViewType>, goal| ViewRequest { state_id: "s".into(), views, evidence_goal: goal, reason: "r".into() };
    use ViewType::*;
    assert!(validate_view_request(&req(vec![Before], EvidenceGoal::RecognizeBefore), &card, 4).is_ok());
    assert!(matches!(
        validate_view_request(&req(vec![Before], EvidenceGoal::VerifyAfter), &card, 4),
        Err(ProtocolError::GoalViewMismatch { .. })
    ));
    assert!(matches!(validate_view_request(&req(vec![], EvidenceGoal::VerifyAfter), &card, 4), Err(ProtocolError::EmptyViews(_))));
    assert!(matches!(
        validate_view_request(&req(vec![After, After], EvidenceGoal::VerifyAfter), &card, 4),
        Err(ProtocolError::DuplicateView { .. })
    ));
    assert!(matches!(
        validate_view_request(&req(vec![FullFrame, Before, After], EvidenceGoal::CompareTransition), &card, 2),
        Err(ProtocolError::ViewBudgetExceeded { requested: 3, remaining: 2, .. })
    ));
    card.available_views.remove(&After);
    assert!(matches!(
        validate_view_request(&req(vec![After], EvidenceGoal::VerifyAfter), &card, 4),
        Err(ProtocolError::ViewNotAvailable { view: After, .. })
    ));
}

#[test]
fn stage1_examples() {
    let skill = fuzz_skill();
    let b = ViewBudget::default();
    let wrap = |p: &str| format!("```\nLOAD_STATE_VIEWS({p})\n```");
    let sel = parse_stage1_output(
        &wrap(r#"{"visual_reference_needed": false, "why_not_text_only": "text is enough", "requests": []}"#),
        &skill,
        b,
    )
    .unwrap();
    assert_eq!(sel, ViewSelection::text_only("text is enough"));
    let sel = parse_stage1_output(
        &wrap(r#"{"visual_reference_needed": true, "why_not_text_only": "x", "requests": [{"state_id": "s3", "views": ["before", "after"], "evidence_goal": "compare_transition", "reason": "r"}]}"#),
        &skill,
        b,
    )
    .unwrap();
    assert_eq!(sel.pairs(), [("s3".to_string(), ViewType::Before), ("s3".to_string(), ViewType::After)]);
    let err = parse_stage1_output(
        &wrap(r#"{"visual_reference_needed": true, "why_not_text_only": "x", "requests": [{"state_id": "s1", "views": ["full_frame", "focus_crop"], "evidence_goal": "locate_control", "reason": "r"}]}"#),
        &skill,
        b,
    );
    assert!(matches!(err, Err(ProtocolError::GoalViewMismatch { .. })));
    let err = parse_stage1_output(
        &wrap(r#"{"visual_reference_needed": false, "why_not_text_only": "x", "requests": [{"state_id": "s1", "views": ["after"], "evidence_goal": "verify_after", "reason": "r"}]}"#),
        &skill,
        b,
    );
    assert!(matches!(err, Err(ProtocolError::RequestsWithoutNeed(1))));
}

#[test]
fn stage1_fuzz_against_oracle() {
    let skill = fuzz_skill();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for budget in [ViewBudget::default(), ViewBudget { max_states: 1, max_views: 2 }, ViewBudget { max_states: 3, max_views: 6 }] {
        let (mut ok, mut rejected) = (0, 0);
        for _ in 0..1500 {
            let case = fuzz_case(&mut rng, &skill, budget);
            let got = parse_stage1_output(&case.reply, &skill, budget);
            match (&got, case.expect_ok) {
                (Ok(sel), Some(true)) => {
                    selection_within_limits(sel, &skill, budget).unwrap();
                    ok += 1;
                }
                (Err(_), Some(false) | None) => rejected += 1,
                _ => panic!("{}\n=> {got:?}, oracle {:?}", case.reply, case.expect_ok),
            }
        }
        assert!(ok > 50 && rejected > 500, "weak coverage: {ok} accepted, {rejected} rejected");
    }
}

#[test]
fn main_output_examples() {
    assert_eq!(parse_main_output("```python\npyautogui.click(1, 2)\n```").unwrap(), MainDecision::ActionScript("pyautogui.click(1, 2)".into()));
    assert_eq!(parse_main_output("```\nWAIT\n```").unwrap(), MainDecision::Wait);
    assert_eq!(parse_main_output("I think\n```\nLOAD_SKILL(\"open_menu\")\n```").unwrap(), MainDecision::SkillCall("open_menu".into()));
    assert!(matches!(parse_main_output("```\nDONE\n```\n```\nFAIL\n```"), Err(ProtocolError::MultipleCodeBlocks(2))));
    assert!(matches!(
        parse_main_output("```\nLOAD_SKILL(\"a\")\npyautogui.click(1, 1)\n```"),
        Err(ProtocolError::MixedSkillCall)
    ));
    assert!(matches!(parse_main_output("just prose"), Err(ProtocolError::NoCodeBlock)));
}

#[test]
fn stage2_requires_all_fields() {
    let g = BranchGuidance {
        skill_applicability: mmskills::protocol::Applicability::Uncertain,
        subgoal: "s".into(),
        plan: "p".into(),
        do_not_do: "d".into(),
        fallback_if_no_progress: "f".into(),
        expected_state: "e".into(),
        completion_scope: mmskills::protocol::CompletionScope::LocalOnly,
    };
    assert_eq!(parse_stage2_output(&g.render_canonical()).unwrap(), g);
    for key in BranchGuidance::KEYS {
        let mut v = serde_json::to_value(&g).unwrap();
        v.as_object_mut().unwrap().remove(key);
        let text = format!("```json\n{v}\n```");
        assert!(matches!(parse_stage2_output(&text), Err(ProtocolError::MissingKey(k)) if k == key), "{key}");
    }
}

// Golden prompts: regenerate with MMSKILLS_BLESS=1 after an intended prompt change.
fn golden(name: &str, bundle: &PromptBundle) {
    let text = format!(
        "== surface: {}\n== images: {}\n== system\n{}\n== user\n{}\n",
        bundle.surface,
        bundle.image_labels().join(", "),
        bundle.system_text,
        bundle.user_text
    );
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    if std::env::var_os("MMSKILLS_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(want == text, "{name} differs from golden:\n{text}");
}

fn demo_skills() -> (tempfile::TempDir, mmskills::library::SkillLibrary) {
    let tmp = tempfile::tempdir().unwrap();
    let lib = mmskills::adapters::toy::build_demo_library(tmp.path()).unwrap();
    (tmp, lib)
}

#[test]
fn main_prompt_golden() {
    let (_t, lib) = demo_skills();
    let previews = candidate_previews(lib.packages());
    let notes = [parse_stage2_output(mmskills::adapters::toy::scenarios::STAGE2_REPLY).unwrap()];
    let input = MainPromptInput {
        instruction: "Toggle panel A and open panel C on the panel board.",
        skills: Some(&previews),
        memo: "[toggle_panels] subgoal: toggle panel A",
        planner_notes: &notes,
        previous_steps: "Step 1: pyautogui.click(60, 70)",
        feedback: "clicked (60, 70): panel A is now open",
        resolution: (320, 200),
        observation: Some(&[1, 2, 3]),
        consult_limit: 2,
        client_password: "password",
    };
    let bundle = render_main_prompts(&input);
    for p in &previews {
        assert_eq!(bundle.user_text.matches(&format!("- {}:", p.name)).count(), 1);
    }
    golden("main_prompt.txt", &bundle);

    let none = render_main_prompts(&MainPromptInput { skills: Some(&[]), planner_notes: &[], ..input });
    assert!(none.user_text.contains(NO_SKILLS_TEXT));
    assert!(!none.system_text.contains("LOAD_SKILL"));
    let baseline = render_main_prompts(&MainPromptInput { skills: None, planner_notes: &[], ..input });
    golden("main_prompt_no_skill.txt", &baseline);
}

#[test]
fn branch_prompts_golden() {
    let (_t, lib) = demo_skills();
    let skill = lib.get("toggle_panels").unwrap();
    let s1 = render_stage1_prompt(&Stage1Input {
        instruction: "Toggle panel A and open panel C on the panel board.",
        skill,
        budget: ViewBudget::default(),
        previous_steps: "",
        feedback: "",
        resolution: (320, 200),
        observation: Some(&[1]),
    });
    assert_eq!(s1.image_labels(), ["observation"]);
    golden("stage1_prompt.txt", &s1);

    let selection = parse_stage1_output(mmskills::adapters::toy::scenarios::STAGE1_REPLY, skill, ViewBudget::default()).unwrap();
    let loaded: Vec<LoadedView> = selection
        .pairs()
        .into_iter()
        .map(|(state_id, view)| LoadedView { state_id, view, data: vec![7] })
        .collect();
    let base = Stage2Input {
        instruction: "Toggle panel A and open panel C on the panel board.",
        skill,
        selection: &selection,
        loaded_views: &loaded,
        previous_steps: "",
        feedback: "",
        resolution: (320, 200),
        observation: Some(&[1]),
    };
    let s2 = render_stage2_prompt(&base);
    assert_eq!(s2.image_labels().len(), 4);
    assert_eq!(s2.image_labels()[0], "observation");
    golden("stage2_prompt.txt", &s2);

    let text_only = ViewSelection::text_only("procedure is enough");
    let bare = render_stage2_prompt(&Stage2Input { selection: &text_only, loaded_views: &[], ..base });
    assert!(bare.user_text.contains(NO_VISUAL_REFERENCES_TEXT));
    assert_eq!(bare.image_labels(), ["observation"]);
}
