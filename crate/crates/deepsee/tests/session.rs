mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use candle_core::DType;
use deepsee::session::{Command, ExploreSession, Limits, RegionRef, SessionInit, SessionStore, UndoTarget};
use deepsee_core::{PaintShape, SemanticMask};
use deepsee_nn::{DeepSee, Segmenter};
use proptest::prelude::*;

use common::{config, face, lr_face};

fn session(ablation: &str, seed: u64) -> ExploreSession {
    let cfg = config(4, ablation, 5);
    let model = Arc::new(DeepSee::new(&cfg, DType::F32).unwrap());
    let seg = Arc::new(Segmenter::new(&cfg, DType::F32).unwrap());
    let guide = cfg.needs_guide().then(|| {
        let (g, m) = face(77, 32);
        (g, Some(m))
    });
    ExploreSession::create(
        "s".into(),
        ablation.into(),
        model,
        Some(seg),
        SessionInit {
            x_lr: lr_face(3, 8, 4),
            mask: None,
            guide,
            seed,
        },
        &Limits::default(),
    )
    .unwrap()
}

fn rows_equal(a: &deepsee_core::StyleMatrix, b: &deepsee_core::StyleMatrix, r: usize) -> bool {
    a.data().row(r) == b.data().row(r)
}

#[test]
fn store_expires_idle_sessions() {
    let store = SessionStore::new(Duration::from_secs(10));
    store.insert(session("independent", 0));
    let t0 = Instant::now();
    assert!(store.get_at("s", t0 + Duration::from_secs(9)).is_ok());
    // The lookup above refreshed the idle timer.
    assert!(store.get_at("s", t0 + Duration::from_secs(18)).is_ok());
    assert_eq!(store.purge_expired(t0 + Duration::from_secs(29)), 1);
    assert!(store.get("s").is_err());
    assert!(store.is_empty());
}

#[test]
fn undo_without_target_reverts_the_latest_change() {
    let mut s = session("independent", 0);
    let mask0 = s.mask.clone().unwrap();
    let style0 = s.style.clone().unwrap();
    s.apply(&Command::Grow { region: RegionRef::Name("nose".into()), radius: 2 }).unwrap();
    let mask1 = s.mask.clone().unwrap();
    s.apply(&Command::Sample { seed: Some(1), regions: None }).unwrap();
    s.apply(&Command::Undo { target: None }).unwrap();
    assert_eq!(s.style.as_ref(), Some(&style0));
    assert_eq!(s.mask.as_ref(), Some(&mask1));
    s.apply(&Command::Undo { target: None }).unwrap();
    assert_eq!(s.mask.as_ref(), Some(&mask0));
    assert!(s.apply(&Command::Undo { target: None }).is_err());
    assert!(s.apply(&Command::Undo { target: Some(UndoTarget::Style) }).is_err());
}

#[test]
fn regional_sampling_only_touches_listed_rows() {
    let mut s = session("independent", 0);
    let before = s.style.clone().unwrap();
    let regions = vec![RegionRef::Name("hair".into()), RegionRef::Index(2)];
    s.apply(&Command::Sample { seed: Some(4), regions: Some(regions) }).unwrap();
    let after = s.style.clone().unwrap();
    for r in 0..19 {
        assert_eq!(rows_equal(&before, &after, r), r != 13 && r != 2, "row {r}");
    }
}

#[test]
fn unseeded_commands_are_reproducible_per_session_seed() {
    let run = |seed| {
        let mut s = session("independent", seed);
        s.apply(&Command::Sample { seed: None, regions: None }).unwrap();
        s.apply(&Command::Jitter { delta: 0.3, seed: None }).unwrap();
        s.style.clone().unwrap()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn repeated_renders_reuse_the_cached_output() {
    let mut s = session("independent", 0);
    let a = s.render().unwrap();
    let b = s.render().unwrap();
    assert_eq!((a.index, b.index), (0, 1));
    assert_eq!(a.inputs_hash, b.inputs_hash);
    assert!(Arc::ptr_eq(&a.png, &b.png));
    s.apply(&Command::Jitter { delta: 0.2, seed: Some(1) }).unwrap();
    assert_ne!(s.render().unwrap().inputs_hash, a.inputs_hash);
}

#[test]
fn guided_sessions_default_to_the_guide_style() {
    let s = session("guided", 0);
    assert_eq!(s.snapshots.get("guide"), s.style.as_ref());
    let lr_only = session("lr-style-only", 0);
    assert_eq!(lr_only.snapshots.get("guide"), lr_only.style.as_ref());
    assert!(lr_only.mask.is_none());
}

#[test]
fn a_semantic_model_without_segmenter_needs_an_uploaded_mask() {
    let cfg = config(4, "independent", 5);
    let model = Arc::new(DeepSee::new(&cfg, DType::F32).unwrap());
    let init = |mask| SessionInit {
        x_lr: lr_face(3, 8, 4),
        mask,
        guide: None,
        seed: 0,
    };
    let err = ExploreSession::create("a".into(), "m".into(), model.clone(), None, init(None), &Limits::default());
    assert!(err.is_err());
    let m = SemanticMask::uniform(32, 32, 19, 1).unwrap();
    assert!(ExploreSession::create("b".into(), "m".into(), model, None, init(Some(m)), &Limits::default()).is_ok());
}

fn region() -> impl Strategy<Value = RegionRef> {
    prop_oneof![
        (0usize..19).prop_map(RegionRef::Index),
        prop::sample::select(vec!["skin", "hair", "nose", "l_eye", "u_lip"]).prop_map(|n| RegionRef::Name(n.into())),
    ]
}

fn command() -> impl Strategy<Value = Command> {
    let snap = prop::sample::select(vec!["default", "current", "a", "b"]).prop_map(String::from);
    prop_oneof![
        (region(), 0usize..32, 0usize..32, 1usize..8, 1usize..8).prop_map(|(region, row, col, height, width)| {
            Command::Paint { region, shape: PaintShape::Rect { row, col, height, width } }
        }),
        (region(), prop::collection::vec((0f32..32.0, 0f32..32.0), 1..4), 0.5f32..4.0).prop_map(|(region, pts, radius)| {
            Command::Paint {
                region,
                shape: PaintShape::Brush { points: pts.into_iter().map(|(x, y)| [x, y]).collect(), radius },
            }
        }),
        (region(), 0usize..3).prop_map(|(region, radius)| Command::Grow { region, radius }),
        (region(), 0usize..3).prop_map(|(region, radius)| Command::Shrink { region, radius }),
        (region(), region()).prop_map(|(from, to)| Command::Transfer { from, to }),
        Just(Command::Undo { target: None }),
        (snap.clone(), snap.clone(), 0f32..=1.0).prop_map(|(from, to, t)| Command::Interpolate { from, to, t }),
        (snap.clone(), prop::collection::vec(region(), 0..4)).prop_map(|(source, regions)| Command::Mix { source, regions }),
        any::<u64>().prop_map(|s| Command::Sample { seed: Some(s), regions: None }),
        (0f32..2.0).prop_map(|delta| Command::Jitter { delta, seed: None }),
        prop::sample::select(vec!["a", "b"]).prop_map(|n| Command::Snapshot { name: n.into() }),
        snap.prop_map(|name| Command::Restore { name }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn command_sequences_keep_session_invariants(cmds in prop::collection::vec(command(), 1..25)) {
        let mut s = session("independent", 1);
        for c in &cmds {
            // Unknown snapshots and empty undo stacks are allowed to fail.
            let _ = s.apply(c);
            let m = s.mask.as_ref().unwrap();
            let sums_to_one = (0..m.height()).all(|i| (0..m.width()).all(|j| {
                (0..m.n_regions()).map(|r| m.data()[[r, i, j]] as u32).sum::<u32>() == 1
            }));
            prop_assert!(sums_to_one);
            prop_assert!(s.style.as_ref().unwrap().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        prop_assert!(s.renders.is_empty());
    }
}
