mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use proptest::prelude::*;

use mmskills::adapters::{HashedBagOfTokens, RecordingProvider, RuleProvider, ScriptEntry, ScriptedProvider};
use mmskills::generator::synthetic::{synthetic_config, synthetic_rules, write_synthetic_pool};
use mmskills::generator::{
    crop_focus_region, draft_text_package, embed_and_cluster, ground_and_audit, load_pool, merge_skill_plans,
    run_pipeline, squared_distance, write_trajectory, AnchoredCard, CardAnchor, CardPurpose, DraftPackage, GenError,
    GeneratorConfig, GeneratorGates, MergedSpec, Providers, SkillPlan, Trajectory,
};
use mmskills::library::load_library;
use mmskills::package::{load_package, BBox, SkillDescriptor, ViewType};
use mmskills::protocol::PromptSurface;

fn tiny_pool(dir: &Path, texts: &[&str]) -> Vec<Trajectory> {
    let frame = RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]));
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            write_trajectory(dir, &format!("t{i:02}"), t, BTreeMap::new(), &[(frame.clone(), "DONE".into())]).unwrap()
        })
        .collect()
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let pool_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_synthetic_pool(pool_dir.path()).unwrap();
    let pool = load_pool(pool_dir.path()).unwrap();
    assert_eq!(pool.len(), 20);

    let model = RecordingProvider::new(RuleProvider::new(synthetic_rules()));
    let embedder = HashedBagOfTokens::default();
    let (lib, report) =
        run_pipeline(&pool, &synthetic_config(), &Providers { model: &model, embedder: &embedder }, out.path()).unwrap();

    // the two task families come out as the two clusters
    let clusters: Vec<BTreeSet<String>> =
        report.phase0.clusters.iter().map(|c| c.members.iter().map(|m| m[..4].to_string()).collect()).collect();
    assert_eq!(clusters.len(), 2);
    assert!(clusters.iter().all(|c| c.len() == 1));

    assert_eq!(report.library, ["save_memo", "toggle_panel"]);
    assert!(report.gate_records().all(|g| g.passed), "{:#?}", report.gate_records().collect::<Vec<_>>());
    let toggle = report.phase2.specs.iter().find(|s| s.name == "toggle_panel").unwrap();
    assert_eq!(toggle.merged_from.len(), 2);
    assert_eq!(toggle.reference_task_ids.len(), 10);
    // the editor box reply is out of frame and falls back to the centred box
    assert!(report.phase4.warnings.iter().any(|w| w.contains("editor_field")));

    let calls = model.calls();
    let draft_calls: Vec<_> = calls.iter().filter(|c| c.surface == PromptSurface::GeneratorDraft).collect();
    assert_eq!(draft_calls.len(), 2);
    assert!(draft_calls.iter().all(|c| c.image_labels.is_empty()));
    assert!(calls.iter().filter(|c| c.surface == PromptSurface::GeneratorPlan).all(|c| c.image_labels.is_empty()));

    let loaded = load_library(out.path()).unwrap();
    assert_eq!(loaded.len(), lib.len());
    for pkg in loaded.packages() {
        assert!((1..=8).contains(&pkg.state_cards.len()));
        assert!(pkg.keyframes.iter().all(|b| (1..=4).contains(&b.views.len())));
        assert!(pkg.total_views() <= 10);
        assert_eq!(&load_package(&out.path().join(pkg.name())).unwrap(), pkg);
    }

    let panel = loaded.get("toggle_panel").unwrap();
    let closed = panel.bundle("panel_closed").unwrap();
    assert_eq!(closed.focus_bbox, Some(mmskills::adapters::toy::panel_rect(0)));
    let crop = &closed.views[&ViewType::FocusCrop];
    assert_eq!((crop.width, crop.height), (80, 70));
    let toggled = panel.bundle("panel_toggled").unwrap();
    assert_eq!(toggled.views.keys().copied().collect::<Vec<_>>(), [ViewType::FullFrame, ViewType::Before, ViewType::After]);

    // every stored view traces back to a pool step, and each view's pixels match that frame
    for summary in &report.phase4.packages {
        let pkg = loaded.get(&summary.skill_name).unwrap();
        let root = out.path().join(&summary.skill_name);
        assert_eq!(summary.provenance.len(), pkg.total_views());
        for p in &summary.provenance {
            let t = pool.iter().find(|t| t.task_id == p.task_id).unwrap();
            let src = t.frame(p.step_index).unwrap();
            let view = pkg.view(&p.state_id, p.view).unwrap();
            let stored = image::open(root.join(&view.path)).unwrap().to_rgb8();
            let expected = match p.view {
                ViewType::FocusCrop => crop_focus_region(&src, pkg.bundle(&p.state_id).unwrap().focus_bbox.unwrap()).unwrap(),
                _ => src,
            };
            assert_eq!(stored, expected, "{} {}", p.state_id, p.view);
        }
    }
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let pool_dir = tempfile::tempdir().unwrap();
    write_synthetic_pool(pool_dir.path()).unwrap();
    let pool = load_pool(pool_dir.path()).unwrap();
    let mut trees = Vec::new();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let model = RuleProvider::new(synthetic_rules());
        let embedder = HashedBagOfTokens::default();
        let (_, report) =
            run_pipeline(&pool, &synthetic_config(), &Providers { model: &model, embedder: &embedder }, out.path())
                .unwrap();
        trees.push(common::tree_bytes(out.path()));
        reports.push(report.to_json());
    }
    assert_eq!(trees[0], trees[1]);
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn empty_spec_set_gives_empty_library() {
    let pool_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let pool = tiny_pool(pool_dir.path(), &["open the menu"]);
    let model = ScriptedProvider::new(vec![ScriptEntry::any("```json\n{\"skills\": []}\n```")]);
    let embedder = HashedBagOfTokens::default();
    let cfg = GeneratorConfig::default();
    let (lib, report) = run_pipeline(&pool, &cfg, &Providers { model: &model, embedder: &embedder }, out.path()).unwrap();
    assert!(lib.is_empty());
    assert!(report.library.is_empty() && report.error.is_none());
    assert_eq!(report.phase0.clusters.len(), 1);
    assert!(load_library(out.path()).unwrap().is_empty());
}

#[test]
fn phase_error_keeps_partial_report() {
    let pool_dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let pool = tiny_pool(pool_dir.path(), &["open the menu"]);
    let model = ScriptedProvider::new(vec![ScriptEntry::any("no"), ScriptEntry::any("still no")]);
    let embedder = HashedBagOfTokens::default();
    let err = run_pipeline(&pool, &GeneratorConfig::default(), &Providers { model: &model, embedder: &embedder }, out.path())
        .unwrap_err();
    assert!(matches!(err.error, GenError::Schema { .. }));
    assert_eq!(err.report.phase0.clusters.len(), 1);
    assert!(err.report.error.as_deref().unwrap().contains("still no"));
}

#[test]
fn single_trajectory_single_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let pool = tiny_pool(dir.path(), &["anything"]);
    let set = embed_and_cluster(&pool, &HashedBagOfTokens::default(), 1, 3).unwrap();
    assert_eq!(set.clusters.len(), 1);
    assert_eq!(set.clusters[0].members, ["t00"]);
    assert!(embed_and_cluster(&pool, &HashedBagOfTokens::default(), 0, 3).is_err());
    assert!(embed_and_cluster(&pool, &HashedBagOfTokens::default(), 2, 3).is_err());
}

#[test]
fn disjoint_vocabularies_are_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let texts = [
        "edit the image canvas layer resize",
        "edit the image canvas layer crop",
        "edit the image canvas layer rotate",
        "edit the image canvas layer export",
        "sort mail inbox message thread forward",
        "sort mail inbox message thread archive",
        "sort mail inbox message thread reply",
        "sort mail inbox message thread flag",
    ];
    let pool = tiny_pool(dir.path(), &texts);
    for seed in 0..20 {
        let set = embed_and_cluster(&pool, &HashedBagOfTokens::default(), 2, seed).unwrap();
        let mut groups: Vec<Vec<String>> = set.clusters.iter().map(|c| c.members.clone()).collect();
        groups.sort();
        assert_eq!(groups, [vec!["t00", "t01", "t02", "t03"], vec!["t04", "t05", "t06", "t07"]], "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_partition_and_members_sit_nearest(
        words in prop::collection::vec(prop::collection::vec(0usize..12, 1..6), 1..14),
        k_seed in 0usize..100,
        seed in 0u64..1000,
    ) {
        const VOCAB: [&str; 12] = ["menu", "file", "save", "open", "mail", "send", "draw", "line", "zoom", "page", "font", "bold"];
        let dir = tempfile::tempdir().unwrap();
        let texts: Vec<String> = words.iter().map(|w| w.iter().map(|i| VOCAB[*i]).collect::<Vec<_>>().join(" ")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let pool = tiny_pool(dir.path(), &refs);
        let k = 1 + k_seed % pool.len();
        let embedder = HashedBagOfTokens::default();
        let set = embed_and_cluster(&pool, &embedder, k, seed).unwrap();
        let again = embed_and_cluster(&pool, &embedder, k, seed).unwrap();
        prop_assert_eq!(&set, &again);

        let mut all: Vec<String> = set.clusters.iter().flat_map(|c| c.members.clone()).collect();
        all.sort();
        let expected: Vec<String> = pool.iter().map(|t| t.task_id.clone()).collect();
        prop_assert_eq!(all, expected);
        prop_assert!(set.clusters.iter().all(|c| !c.members.is_empty()));

        use mmskills::adapters::EmbeddingProvider;
        for c in &set.clusters {
            for m in &c.members {
                let t = pool.iter().find(|t| &t.task_id == m).unwrap();
                let v = embedder.embed(&t.embedding_text()).unwrap();
                let own = squared_distance(&v, &c.centroid);
                for other in &set.clusters {
                    prop_assert!(own <= squared_distance(&v, &other.centroid) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn merge_ignores_plan_order(
        raw in prop::collection::vec((0usize..5, 0usize..4, prop::collection::btree_set(0usize..12, 1..4), 0usize..3), 0..10),
        shuffle_seed in any::<u64>(),
    ) {
        const NAMES: [&str; 5] = ["open_menu", "open_menus", "save_file", "send_mail", "zoom_page"];
        const BOUNDARIES: [&str; 4] = ["open the menu bar", "save the current file", "send a mail", "zoom the page in"];
        let plans: Vec<(String, SkillPlan)> = raw
            .iter()
            .map(|(n, b, ids, c)| {
                (
                    format!("c{c}"),
                    SkillPlan {
                        proposed_name: NAMES[*n].into(),
                        workflow_boundary: BOUNDARIES[*b].into(),
                        completion_condition: "done".into(),
                        covered_task_ids: ids.iter().map(|i| format!("t{i:02}")).collect(),
                    },
                )
            })
            .collect();
        let mut shuffled = plans.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let g = GeneratorGates::default();
        prop_assert_eq!(merge_skill_plans(&plans, 12, &g), merge_skill_plans(&shuffled, 12, &g));
    }

    #[test]
    fn crop_matches_direct_indexing(w in 1u32..40, h in 1u32..40, a in any::<(u32, u32, u32, u32)>()) {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + y) as u8, (y * 13) as u8, (x ^ y) as u8]));
        let bw = 1 + a.2 % w;
        let bh = 1 + a.3 % h;
        let b = BBox::new(a.0 % (w - bw + 1), a.1 % (h - bh + 1), bw, bh);
        let c = crop_focus_region(&img, b).unwrap();
        prop_assert_eq!(c.dimensions(), (bw, bh));
        for y in 0..bh {
            for x in 0..bw {
                prop_assert_eq!(c.get_pixel(x, y), img.get_pixel(b.x + x, b.y + y));
            }
        }
    }
}

fn card(id: &str, purpose: CardPurpose, views: &[ViewType], task: &str, step: usize) -> AnchoredCard {
    AnchoredCard {
        state_id: id.into(),
        purpose,
        when_to_use: "when".into(),
        when_not_to_use: "not".into(),
        visible_cues: vec!["cue".into()],
        verification_cue: "check".into(),
        views: views.iter().copied().collect(),
        anchor: CardAnchor { task_id: task.into(), step_index: step },
    }
}

fn step_pool(dir: &Path) -> Vec<Trajectory> {
    let steps: Vec<(RgbImage, String)> = (0..4u8)
        .map(|i| (RgbImage::from_fn(60, 40, |x, y| Rgb([i * 50, x as u8, y as u8])), format!("pyautogui.press('{i}')")))
        .collect();
    vec![write_trajectory(dir, "t0", "press four keys", BTreeMap::new(), &steps).unwrap()]
}

fn draft(cards: Vec<AnchoredCard>) -> DraftPackage {
    DraftPackage {
        descriptor: SkillDescriptor {
            skill_name: "press_keys".into(),
            short_description: "press keys".into(),
            domain_tag: "test".into(),
            source_task_ids: vec!["t0".into()],
        },
        procedure: "1. press".into(),
        cards,
    }
}

fn spec() -> MergedSpec {
    MergedSpec {
        name: "press_keys".into(),
        merged_from: vec!["c0/press_keys".into()],
        generalized_description: "press keys in order".into(),
        completion_condition: "all pressed".into(),
        reference_task_ids: vec!["t0".into()],
    }
}

fn draft_reply(anchor_steps: &[usize]) -> String {
    let cards: Vec<String> = anchor_steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                r#"{{"state_id": "s{i}", "purpose": "recognition", "when_to_use": "w", "verification_cue": "v", "views": ["full_frame"], "anchor": {{"task_id": "t0", "step_index": {s}}}}}"#
            )
        })
        .collect();
    format!(
        "```json\n{{\"short_description\": \"d\", \"procedure\": \"1. p\", \"cards\": [{}]}}\n```",
        cards.join(", ")
    )
}

#[test]
fn draft_with_three_anchored_cards_and_no_images() {
    let dir = tempfile::tempdir().unwrap();
    let pool = step_pool(dir.path());
    let model = RecordingProvider::new(ScriptedProvider::new(vec![ScriptEntry::any(draft_reply(&[0, 1, 2]))]));
    let (d, warnings) = draft_text_package(&spec(), &pool, &model, &GeneratorGates::default(), "test").unwrap();
    assert_eq!(d.cards.len(), 3);
    assert!(warnings.is_empty());
    let calls = model.calls();
    assert_eq!(calls.len(), 1);
    assert!(calls[0].image_labels.is_empty());
    assert!(calls[0].user_text.contains("pyautogui.press('2')"));
}

#[test]
fn draft_anchor_past_the_end_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pool = step_pool(dir.path());
    let model = ScriptedProvider::new(vec![ScriptEntry::any(draft_reply(&[0, 4]))]);
    match draft_text_package(&spec(), &pool, &model, &GeneratorGates::default(), "test") {
        Err(GenError::Gate(f)) => {
            assert_eq!(f.gate, "anchors");
            assert!(f.message.contains("step 4"));
        }
        other => panic!("expected anchor gate failure, got {other:?}"),
    }
}

#[test]
fn ground_full_and_focus() {
    let dir = tempfile::tempdir().unwrap();
    let pool = step_pool(dir.path());
    let d = draft(vec![card("s0", CardPurpose::Recognition, &[ViewType::FocusCrop], "t0", 1)]);
    let model = ScriptedProvider::new(vec![ScriptEntry::any(
        "```json\n{\"boxes\": {\"s0\": {\"x\": 5, \"y\": 6, \"width\": 20, \"height\": 10}}}\n```",
    )]);
    let g = ground_and_audit(&d, &pool, &model, &GeneratorGates::default()).unwrap();
    let b = &g.package.keyframes[0];
    assert_eq!(b.views.len(), 2);
    assert_eq!(b.focus_bbox, Some(BBox::new(5, 6, 20, 10)));
    assert_eq!((b.views[&ViewType::FocusCrop].width, b.views[&ViewType::FocusCrop].height), (20, 10));
    assert!(g.warnings.is_empty());

    let out = tempfile::tempdir().unwrap();
    g.write(out.path()).unwrap();
    assert_eq!(load_package(out.path()).unwrap(), g.package);
}

#[test]
fn ground_transition_uses_adjacent_frames() {
    let dir = tempfile::tempdir().unwrap();
    let pool = step_pool(dir.path());
    let d = draft(vec![card("s1", CardPurpose::Transition, &[ViewType::Before, ViewType::After], "t0", 1)]);
    let model = ScriptedProvider::new(vec![]);
    let g = ground_and_audit(&d, &pool, &model, &GeneratorGates::default()).unwrap();
    let steps: BTreeMap<ViewType, usize> = g.provenance.iter().map(|p| (p.view, p.step_index)).collect();
    assert_eq!(steps, BTreeMap::from([(ViewType::FullFrame, 1), (ViewType::Before, 0), (ViewType::After, 2)]));

    let first = draft(vec![card("s0", CardPurpose::Transition, &[ViewType::Before], "t0", 0)]);
    match ground_and_audit(&first, &pool, &model, &GeneratorGates::default()) {
        Err(GenError::Gate(f)) => assert_eq!(f.gate, "frames"),
        other => panic!("expected frames gate failure, got {other:?}"),
    }
}

#[test]
fn recognition_card_with_after_view_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pool = step_pool(dir.path());
    let d = draft(vec![card("s0", CardPurpose::Recognition, &[ViewType::After], "t0", 0)]);
    match ground_and_audit(&d, &pool, &ScriptedProvider::new(vec![]), &GeneratorGates::default()) {
        Err(GenError::Gate(f)) => assert_eq!(f.gate, "view_policy"),
        other => panic!("expected view policy rejection, got {other:?}"),
    }
}

#[test]
fn views_must_stay_below_source_frames() {
    let dir = tempfile::tempdir().unwrap();
    let pool = step_pool(dir.path());
    let d = draft(vec![
        card("s0", CardPurpose::Recognition, &[], "t0", 0),
        card("s1", CardPurpose::Recognition, &[], "t0", 1),
        card("s2", CardPurpose::Recognition, &[], "t0", 2),
        card("s3", CardPurpose::Recognition, &[], "t0", 3),
    ]);
    match ground_and_audit(&d, &pool, &ScriptedProvider::new(vec![]), &GeneratorGates::default()) {
        Err(GenError::Gate(f)) => assert_eq!(f.gate, "views_cap"),
        other => panic!("expected views cap rejection, got {other:?}"),
    }
}
