use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use elicit_core::corpus::{Corpus, Method, Scene, Storyboard, TranslationUnit};
use elicit_core::protocol::{
    assign_tasks, generate_tasks, Action, ElicitationSession, ProtocolError, SessionState, TaskKind, TaskPayload,
    TaskRequest, Track,
};
use proptest::prelude::*;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 1, 12, 0, 0).unwrap()
}

fn session(track: Track, state: SessionState, gap: u64) -> ElicitationSession {
    let mut s = ElicitationSession::new("s1", "a1", "c001", "sb", "hau".into(), track, Some(gap), t0());
    s.state = state;
    if matches!(state, SessionState::Gap | SessionState::Annotating | SessionState::Complete)
        && track == Track::TreatmentStoryboard
    {
        s.reading_completed_at = Some(t0());
    }
    s
}

/// The declared machine, written out as a table.
fn declared(track: Track, state: SessionState, action: Action) -> Option<SessionState> {
    use Action::{BeginAnnotation, CompleteReading, StartReading, SubmitTranslation};
    use SessionState::{Annotating, Created, Gap, Reading};
    match (track, state, action) {
        (Track::ControlText, Created, BeginAnnotation) => Some(Annotating),
        (Track::TreatmentStoryboard, Created, StartReading) => Some(Reading),
        (Track::TreatmentStoryboard, Reading, CompleteReading) => Some(Gap),
        (Track::TreatmentStoryboard, Gap, BeginAnnotation) => Some(Annotating),
        (_, Annotating, SubmitTranslation) => Some(Annotating),
        (_, Annotating, Action::Complete) => Some(SessionState::Complete),
        _ => None,
    }
}

#[test]
fn every_state_action_pair_matches_the_table() {
    let mut checked = 0;
    for track in [Track::ControlText, Track::TreatmentStoryboard] {
        for state in SessionState::ALL {
            for action in Action::ALL {
                let s = session(track, state, 0);
                let got = s.step(action, t0()).map(|n| n.state);
                match declared(track, state, action) {
                    Some(next) => assert_eq!(got, Ok(next), "{track} {state} {action}"),
                    None => assert_eq!(
                        got,
                        Err(ProtocolError::InvalidTransition { track, state, action }),
                        "{track} {state} {action}"
                    ),
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 50);
}

#[test]
fn gap_boundaries() {
    let gap = session(Track::TreatmentStoryboard, SessionState::Gap, 3600);
    assert_eq!(
        gap.begin_annotation(t0() + TimeDelta::seconds(3599)),
        Err(ProtocolError::GapNotElapsed { remaining_seconds: 1 })
    );
    assert_eq!(gap.begin_annotation(t0() + TimeDelta::seconds(3600)).unwrap().state, SessionState::Annotating);
    let control = session(Track::ControlText, SessionState::Created, 3600);
    assert_eq!(control.begin_annotation(t0()).unwrap().state, SessionState::Annotating);
    let zero = session(Track::TreatmentStoryboard, SessionState::Gap, 0);
    assert!(zero.begin_annotation(t0()).is_ok());
}

proptest! {
    /// Random traces never reach `annotating` early in the treatment track.
    #[test]
    fn treatment_never_annotates_before_gap(
        gap in 0u64..10_000,
        steps in prop::collection::vec((0usize..5, 0i64..5_000), 1..30),
    ) {
        let mut s = ElicitationSession::new("s", "a", "c", "sb", "hau".into(), Track::TreatmentStoryboard, Some(gap), t0());
        let mut now = t0();
        for (a, dt) in steps {
            now += TimeDelta::seconds(dt);
            let before = s.state;
            if let Ok(next) = s.step(Action::ALL[a], now) {
                if before != SessionState::Annotating && next.state == SessionState::Annotating {
                    let done = next.reading_completed_at.unwrap();
                    prop_assert!(now >= done + TimeDelta::seconds(gap as i64));
                }
                s = next;
            }
        }
    }
}

fn corpus(scenes: u32) -> Corpus {
    let mut c = Corpus::new(["hau"]);
    c.add_storyboard(Storyboard {
        id: "sb-farm".into(),
        title: "Farm".into(),
        scenes: (1..=scenes)
            .map(|i| Scene {
                storyboard_id: "sb-farm".into(),
                index: i,
                english_text: format!("The farmer waters row {i}."),
                image_ref: format!("farm/{i}.png"),
            })
            .collect(),
    })
    .unwrap();
    for i in 1..=scenes {
        for (m, who, text) in [
            (Method::Text, "tr-a", format!("Manomi ya shayar da layi {i}.")),
            (Method::Text, "tr-b", format!("Manomi yana ban ruwa ga layi {i}.")),
            (Method::Storyboard, "tr-c", format!("Bakauye na zuba ruwa a layi {i}.")),
        ] {
            let id = format!("u{}", c.units().len() + 1);
            c.add_unit(TranslationUnit {
                id,
                language: "hau".into(),
                storyboard_id: "sb-farm".into(),
                scene_index: i,
                method: m,
                translator_id: who.into(),
                text,
            })
            .unwrap();
        }
    }
    c
}

#[test]
fn storyboard_lands_in_slot_one_half_the_time() {
    let c = corpus(200);
    let mut total = 0;
    let mut slot1_storyboard = 0;
    for seed in 0..100 {
        let tasks = generate_tasks(&c, &TaskRequest::new("hau".into(), TaskKind::Fluency, 100, seed), "b").unwrap();
        for t in &tasks {
            total += 1;
            if t.blinding.slot1 == Method::Storyboard {
                slot1_storyboard += 1;
            }
        }
    }
    assert_eq!(total, 10_000);
    let share = slot1_storyboard as f64 / total as f64;
    assert!((share - 0.5).abs() <= 0.02, "{share}");
}

#[test]
fn payloads_carry_no_method_identifiers() {
    let c = corpus(120);
    for kind in [TaskKind::Accuracy, TaskKind::Fluency] {
        let tasks = generate_tasks(&c, &TaskRequest::new("hau".into(), kind, 100, 42), "b").unwrap();
        for t in &tasks {
            let json = serde_json::to_string(&TaskPayload::new(t, &c).unwrap()).unwrap().to_lowercase();
            for banned in ["text", "storyboard", "method", "slot", "blinding", "unit", "sb-farm", "tr-"] {
                assert!(!json.contains(banned), "`{banned}` in {json}");
            }
            let english = c.scene("sb-farm", t.scene_index).unwrap().english_text.to_lowercase();
            assert_eq!(json.contains(&english), kind == TaskKind::Accuracy);
        }
    }
}

#[test]
fn generation_is_a_pure_function_of_inputs() {
    let request = TaskRequest::new("hau".into(), TaskKind::Accuracy, 100, 2024);
    let a = serde_json::to_string(&generate_tasks(&corpus(150), &request, "b").unwrap()).unwrap();
    let b = serde_json::to_string(&generate_tasks(&corpus(150), &request, "b").unwrap()).unwrap();
    assert_eq!(a, b);
    let other = TaskRequest { seed: 2025, ..request };
    assert_ne!(a, serde_json::to_string(&generate_tasks(&corpus(150), &other, "b").unwrap()).unwrap());
}

#[test]
fn assignment_balances_load() {
    let c = corpus(100);
    let tasks = generate_tasks(&c, &TaskRequest::new("hau".into(), TaskKind::Fluency, 100, 1), "b").unwrap();
    for n in 3..=9 {
        let annotators: Vec<String> = (1..=n).map(|i| format!("ev{i}")).collect();
        let assignment = assign_tasks(&tasks, &annotators, 3, &c).unwrap();
        let mut load = vec![0usize; n];
        for raters in assignment.values() {
            assert_eq!(raters.len(), 3);
            let mut distinct = raters.clone();
            distinct.sort();
            distinct.dedup();
            assert_eq!(distinct.len(), 3);
            for r in raters {
                load[annotators.iter().position(|a| a == r).unwrap()] += 1;
            }
        }
        let (lo, hi) = (load.iter().min().unwrap(), load.iter().max().unwrap());
        assert!(hi - lo <= 1, "{n} annotators: {load:?}");
        if n == 6 {
            assert!(load.iter().all(|l| (49..=51).contains(l)));
        }
    }
}
