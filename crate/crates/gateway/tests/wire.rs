use gta_core::codec::parse_cot;
use gta_core::geometry::{ImageBox, ImagePoint};
use gta_core::guide::{GuidanceEvent, GuidanceSource, SpatialPrior};
use gta_core::sim::{Proprio, ViewObject, WristObject};
use gta_gateway::{Envelope, EpisodeOutcome, ErrorClass, WireMessage};
use proptest::prelude::*;

const GOLDEN_COT: &str = include_str!("../../core/tests/golden/green_block.cot");

fn samples() -> Vec<WireMessage> {
    vec![
        WireMessage::Hello { protocol: 1 },
        WireMessage::Observation {
            tick: 3,
            main_view: vec![ViewObject {
                label: "block".into(),
                bbox: ImageBox::new(0.1, 0.2, 0.3, 0.4),
                color: Some("red".into()),
                object_id: 2,
            }],
            wrist_view: vec![WristObject {
                label: "block".into(),
                offset: [0.01, -0.02],
            }],
            proprio: Proprio {
                position: ImagePoint::new(0.5, 0.25),
                aperture: 1.0,
            },
            gripper_image: ImagePoint::new(0.5, 0.25),
        },
        WireMessage::Cot {
            tick: 5,
            text: GOLDEN_COT.into(),
            parsed: parse_cot(GOLDEN_COT).ok(),
        },
        WireMessage::Action {
            tick: 5,
            chunk_digest: "ab".repeat(32),
            executed: vec![[0.1, -0.2, 1.0]],
        },
        WireMessage::Guidance {
            event: GuidanceEvent::mid_episode(SpatialPrior::point(0.42, 0.35), GuidanceSource::User, 7),
        },
        WireMessage::Start,
        WireMessage::GuidanceAck {
            issued_at: 7,
            effective_tick: 10,
        },
        WireMessage::Gap {
            dropped: 3,
            first_tick: 4,
            last_tick: 6,
        },
        WireMessage::Result {
            outcome: EpisodeOutcome {
                success: true,
                obstacle_contact: false,
                fast_ticks: 42,
                trace_digest: "cd".repeat(32),
            },
            trace: "/sessions/s000001/trace".into(),
        },
        WireMessage::error(ErrorClass::Validation, "x_min ≥ x_max"),
    ]
}

#[test]
fn every_message_round_trips_through_one_line() {
    for (seq, message) in samples().into_iter().enumerate() {
        let env = Envelope {
            session: "s000001".into(),
            seq: seq as u64,
            message,
        };
        let line = env.to_line();
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1, "{line}");
        assert_eq!(Envelope::from_line(&line).unwrap(), env);
    }
}

#[test]
fn type_tags_and_field_names_are_stable() {
    let tags: Vec<String> = samples()
        .iter()
        .map(|m| serde_json::to_value(m).unwrap()["type"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(
        tags,
        [
            "hello",
            "observation",
            "cot",
            "action",
            "guidance",
            "start",
            "guidance_ack",
            "gap",
            "result",
            "error"
        ]
    );
    let env = Envelope {
        session: "s000002".into(),
        seq: 4,
        message: WireMessage::GuidanceAck {
            issued_at: 7,
            effective_tick: 10,
        },
    };
    assert_eq!(
        env.to_line(),
        "{\"session\":\"s000002\",\"seq\":4,\"type\":\"guidance_ack\",\"issued_at\":7,\"effective_tick\":10}\n"
    );
    let client = r#"{"type":"guidance","event":{"prior":{"kind":"box","box":{"x_min":0.1,"y_min":0.2,"x_max":0.3,"y_max":0.4}},"timing":"mid_episode","source":"user","issued_at":0}}"#;
    match serde_json::from_str::<WireMessage>(client).unwrap() {
        WireMessage::Guidance { event } => assert_eq!(event.prior, SpatialPrior::bbox(ImageBox::new(0.1, 0.2, 0.3, 0.4))),
        other => panic!("{other:?}"),
    }
}

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..=1.0f64, Just(0.0), Just(1.0)]
}

proptest! {
    #[test]
    fn coordinates_survive_the_wire_exactly(x in unit(), y in unit(), seq in any::<u64>(), tick in any::<u64>()) {
        let env = Envelope {
            session: "s".into(),
            seq,
            message: WireMessage::Guidance {
                event: GuidanceEvent::mid_episode(SpatialPrior::point(x, y), GuidanceSource::User, tick),
            },
        };
        prop_assert_eq!(Envelope::from_line(&env.to_line()).unwrap(), env);
    }
}
