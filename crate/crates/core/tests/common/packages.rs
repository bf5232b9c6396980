//! Random valid packages on disk and single-fault mutations with the violation they must raise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use mmskills::package::{
    write_view_image, BBox, KeyframeBundle, SkillDescriptor, SkillPackage, StateCard, ViewType, ViolationKind,
    FORMAT_VERSION,
};

const WORDS: [&str; 12] = ["open", "the", "dialog", "menü", "click", "OK", "grün", "tab", "→", "save", "row 3", "\"quoted\""];

fn text(rng: &mut impl Rng, min: usize) -> String {
    let n = rng.random_range(min..min + 6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn subset(rng: &mut impl Rng, of: &[ViewType]) -> BTreeSet<ViewType> {
    loop {
        let s: BTreeSet<ViewType> = of.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn image(rng: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    let c = Rgb([rng.random(), rng.random(), rng.random()]);
    RgbImage::from_fn(w, h, |x, y| if (x + y) % 3 == 0 { Rgb([0, 0, 0]) } else { c })
}

/// Write the images of a random valid package under `root` and return its manifest.
///
/// One in ten packages is the text-only form.
pub fn random_package(rng: &mut impl Rng, root: &Path, name: &str) -> SkillPackage {
    let n_cards = if rng.random_bool(0.1) { 0 } else { rng.random_range(1..=8) };
    let mut state_cards = Vec::new();
    let mut keyframes = Vec::new();
    for i in 0..n_cards {
        let state_id = format!("state_{i}");
        let available = subset(rng, &ViewType::ALL);
        let stored = subset(rng, &available.iter().copied().collect::<Vec<_>>());
        let (fw, fh) = (rng.random_range(8..40), rng.random_range(6..30));
        let mut views = BTreeMap::new();
        for v in &stored {
            let (w, h) = match v {
                ViewType::FocusCrop => (rng.random_range(1..=fw), rng.random_range(1..=fh)),
                _ => (fw, fh),
            };
            let r = write_view_image(root, &state_id, *v, &image(rng, w, h)).unwrap();
            views.insert(*v, r);
        }
        let focus_bbox = stored.contains(&ViewType::FocusCrop).then(|| {
            let (x, y) = (rng.random_range(0..fw), rng.random_range(0..fh));
            BBox::new(x, y, rng.random_range(1..=fw - x), rng.random_range(1..=fh - y))
        });
        state_cards.push(StateCard {
            state_id: state_id.clone(),
            when_to_use: text(rng, 1),
            when_not_to_use: text(rng, 0),
            visible_cues: (0..rng.random_range(0..4)).map(|_| text(rng, 1)).collect(),
            verification_cue: text(rng, 1),
            available_views: available,
        });
        keyframes.push(KeyframeBundle { state_id, views, focus_bbox });
    }
    SkillPackage {
        version: FORMAT_VERSION.into(),
        descriptor: SkillDescriptor {
            skill_name: name.to_string(),
            short_description: text(rng, 1),
            domain_tag: text(rng, 1),
            source_task_ids: (0..rng.random_range(0..4)).map(|i| format!("task-{i}")).collect(),
        },
        procedure: (1..=rng.random_range(1..6)).map(|i| format!("{i}. {}", text(rng, 1))).collect::<Vec<_>>().join("\n"),
        state_cards,
        keyframes,
    }
}

pub const MUTATIONS: [ViolationKind; 15] = [
    ViolationKind::UnsupportedVersion,
    ViolationKind::InvalidSkillName,
    ViolationKind::EmptyProcedure,
    ViolationKind::CardBundleMisalignment,
    ViolationKind::StateIdMismatch,
    ViolationKind::DuplicateStateId,
    ViolationKind::EmptyStateId,
    ViolationKind::EmptyWhenToUse,
    ViolationKind::EmptyVerificationCue,
    ViolationKind::NoAvailableViews,
    ViolationKind::ViewNotAvailable,
    ViolationKind::UnsafeImagePath,
    ViolationKind::UnreadableImage,
    ViolationKind::ImageDimensionMismatch,
    ViolationKind::BBoxOutOfBounds,
];

/// Break `pkg` (which must have at least two cards) so that it raises `kind`.
pub fn mutate(rng: &mut impl Rng, pkg: &SkillPackage, kind: ViolationKind) -> SkillPackage {
    assert!(pkg.state_cards.len() >= 2);
    let mut p = pkg.clone();
    let i = rng.random_range(0..p.state_cards.len());
    let first_view = |p: &SkillPackage, i: usize| *p.keyframes[i].views.keys().next().unwrap();
    match kind {
        ViolationKind::UnsupportedVersion => p.version = "mmskill/0".into(),
        ViolationKind::InvalidSkillName => p.descriptor.skill_name = "bad name!".into(),
        ViolationKind::EmptyProcedure => p.procedure = " \n ".into(),
        ViolationKind::CardBundleMisalignment => {
            p.keyframes.remove(i);
        }
        ViolationKind::StateIdMismatch => p.keyframes.swap(0, 1),
        ViolationKind::DuplicateStateId => {
            let id = p.state_cards[0].state_id.clone();
            p.state_cards[1].state_id = id.clone();
            p.keyframes[1].state_id = id;
        }
        ViolationKind::EmptyStateId => {
            p.state_cards[i].state_id = String::new();
            p.keyframes[i].state_id = String::new();
        }
        ViolationKind::EmptyWhenToUse => p.state_cards[i].when_to_use = "  ".into(),
        ViolationKind::EmptyVerificationCue => p.state_cards[i].verification_cue = String::new(),
        ViolationKind::NoAvailableViews => p.state_cards[i].available_views.clear(),
        ViolationKind::ViewNotAvailable => {
            let v = first_view(&p, i);
            let card = &mut p.state_cards[i];
            card.available_views.remove(&v);
            if card.available_views.is_empty() {
                card.available_views.insert(*ViewType::ALL.iter().find(|x| **x != v).unwrap());
            }
        }
        ViolationKind::UnsafeImagePath => {
            let v = first_view(&p, i);
            let r = p.keyframes[i].views.get_mut(&v).unwrap();
            r.path = ["../outside.png", "/etc/passwd", "views/../../x.png", ""].choose(rng).unwrap().to_string();
        }
        ViolationKind::UnreadableImage => {
            let v = first_view(&p, i);
            p.keyframes[i].views.get_mut(&v).unwrap().path = "views/missing.png".into();
        }
        ViolationKind::ImageDimensionMismatch => {
            let v = first_view(&p, i);
            p.keyframes[i].views.get_mut(&v).unwrap().width += 1;
        }
        ViolationKind::BBoxOutOfBounds => {
            let b = &mut p.keyframes[i];
            let (w, h) = match b.views.get(&ViewType::FullFrame) {
                Some(r) => (r.width, r.height),
                None => {
                    // borrow another stored image as the full frame so the box has something to escape
                    let r = b.views.values().next().unwrap().clone();
                    p.state_cards[i].available_views.insert(ViewType::FullFrame);
                    let (w, h) = (r.width, r.height);
                    b.views.insert(ViewType::FullFrame, r);
                    (w, h)
                }
            };
            b.focus_bbox = Some(BBox::new(w, rng.random_range(0..h), 1, 1));
        }
        other => panic!("no mutation for {other:?}"),
    }
    p
}

/// A random valid package with at least two cards, written under `root`.
pub fn random_multi_card_package(rng: &mut impl Rng, root: &Path, name: &str) -> SkillPackage {
    loop {
        let _ = std::fs::remove_dir_all(root);
        let p = random_package(rng, root, name);
        if p.state_cards.len() >= 2 {
            return p;
        }
    }
}

pub fn shuffled_kinds(rng: &mut impl Rng, n: usize) -> Vec<ViolationKind> {
    let mut v: Vec<ViolationKind> = MUTATIONS.iter().copied().cycle().take(n).collect();
    v.shuffle(rng);
    v
}
