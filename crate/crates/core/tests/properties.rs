use proptest::prelude::*;

use alive::plane::{ControlPlane, PlaneConfig, Registry};
use alive::protocol::{
    decode_frame, encode_frame, Actuators, Frame, Link, LinkDown, SampleFlags, SendBuffer,
    TelemetrySample, PROTOCOL_VERSION,
};
use alive::scenario::{sample_sd, Profile};
use alive::thermal::{plant_step, PlantInput, PlantParams, ThermalState};

fn arb_sample() -> impl Strategy<Value = TelemetrySample> {
    (
        1u64..1_000_000,
        0u64..4_000_000_000_000,
        prop::array::uniform8(-1000.0f64..1000.0),
        prop::array::uniform4(-180.0f64..180.0),
        0u8..32,
        0u8..32,
    )
        .prop_map(|(seq, t_ms, f, g, act, flags)| TelemetrySample {
            v: PROTOCOL_VERSION,
            dev: "dev-01".into(),
            seq,
            t_ms,
            t_chamber_c: f[0],
            t_pouch_c: f[1],
            rh_pct: f[2],
            v_bus_v: f[3],
            i_bus_a: f[4],
            p_w: f[5],
            lat: g[0] / 2.0,
            lon: g[1],
            setpoint_c: f[6],
            duty_pct: f[7],
            soc_pct: g[2],
            act: Actuators::from_bits_truncate(act),
            flags: SampleFlags::from_bits_truncate(flags),
        })
}

proptest! {
    #[test]
    fn sample_round_trip_is_canonical(s in arb_sample()) {
        let line = encode_frame(&Frame::Sample(s.clone())).unwrap();
        prop_assert!(line.ends_with('\n') && line.matches('\n').count() == 1);
        let Frame::Sample(back) = decode_frame(&line).unwrap() else {
            panic!("decoded to another kind");
        };
        prop_assert_eq!(back.seq, s.seq);
        prop_assert_eq!(back.t_ms, s.t_ms);
        prop_assert_eq!(back.act, s.act);
        prop_assert_eq!(back.flags, s.flags);
        for (a, b) in [
            (back.t_chamber_c, s.t_chamber_c),
            (back.t_pouch_c, s.t_pouch_c),
            (back.p_w, s.p_w),
            (back.lat, s.lat),
            (back.soc_pct, s.soc_pct),
        ] {
            prop_assert!((a - b).abs() <= 5e-7 + 1e-12 * b.abs());
        }
        // encoding the decoded frame reproduces the same bytes
        prop_assert_eq!(encode_frame(&Frame::Sample(back)).unwrap(), line);
    }

    #[test]
    fn decode_never_panics(line in ".{0,200}") {
        let _ = decode_frame(&line);
    }

    #[test]
    fn decode_survives_mangled_frames(s in arb_sample(), cut in 0usize..400, junk in "[{}\":,a-z0-9]{0,8}") {
        let line = encode_frame(&Frame::Sample(s)).unwrap();
        let cut = cut.min(line.len());
        let _ = decode_frame(&format!("{}{}", &line[..cut], junk));
    }
}

#[derive(Debug, Clone)]
enum Op {
    Push,
    Ack(u64),
    Flush,
    Down,
    Up,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => Just(Op::Push),
        2 => (0u64..8).prop_map(Op::Ack),
        3 => Just(Op::Flush),
        1 => Just(Op::Down),
        1 => Just(Op::Up),
    ]
}

struct Wire {
    up: bool,
    sent: Vec<Vec<u64>>,
}

impl Link for Wire {
    fn is_up(&self) -> bool {
        self.up
    }

    fn transmit(&mut self, frame: &str) -> Result<(), LinkDown> {
        let seq = frame.parse().unwrap();
        self.sent.last_mut().unwrap().push(seq);
        Ok(())
    }
}

proptest! {
    #[test]
    fn send_buffer_invariants(cap in 1usize..16, ops in prop::collection::vec(arb_op(), 0..300)) {
        let mut buf = SendBuffer::new(cap);
        let mut wire = Wire { up: true, sent: vec![Vec::new()] };
        let mut next = 1u64;
        for op in ops {
            match op {
                Op::Push => {
                    buf.push(next, next.to_string());
                    next += 1;
                }
                // acks only ever cover frames the far side has seen
                Op::Ack(back) => {
                    let seen = wire.sent.iter().flatten().copied().max().unwrap_or(0);
                    buf.ack(seen.saturating_sub(back));
                }
                Op::Flush => {
                    buf.flush(&mut wire);
                }
                Op::Down => {
                    if wire.up {
                        wire.up = false;
                        buf.link_lost();
                    }
                }
                Op::Up => {
                    if !wire.up {
                        wire.up = true;
                        wire.sent.push(Vec::new());
                    }
                }
            }
            prop_assert!(buf.len() <= cap);
            prop_assert_eq!(
                buf.pushed_count(),
                buf.acked_count() + buf.len() as u64 + buf.dropped_count()
            );
            let seqs: Vec<u64> = buf.frames().map(|f| f.seq).collect();
            prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        }
        // within one connection every frame goes out once, in order
        for session in &wire.sent {
            prop_assert!(session.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn undersized_buffer_drops_exact_overflow(cap in 1usize..64, n in 0usize..200) {
        let mut buf = SendBuffer::new(cap);
        for seq in 1..=n as u64 {
            buf.push(seq, String::new());
        }
        prop_assert_eq!(buf.dropped_count(), n.saturating_sub(cap) as u64);
        prop_assert_eq!(buf.oldest_seq(), (n > 0).then(|| (n.saturating_sub(cap) + 1) as u64));
    }
}

fn arb_params() -> impl Strategy<Value = PlantParams> {
    (100.0f64..20000.0, 100.0f64..20000.0, 0.1f64..10.0, 10.0f64..50.0, 0.1f64..20.0, 1.0f64..200.0)
        .prop_map(|(ca, cp, uw, uo, up, q)| PlantParams {
            c_air: ca,
            c_pouch: cp,
            ua_wall_closed: uw,
            ua_wall_open: uo,
            ua_pouch: up,
            q_pelt_max: q,
            ..PlantParams::default()
        })
}

proptest! {
    #[test]
    fn passive_plant_moves_toward_ambient(
        params in arb_params(),
        air in 2.0f64..98.0,
        pouch in 2.0f64..98.0,
        amb in 2.0f64..98.0,
        door in any::<bool>(),
        dt in 0.1f64..5.0,
    ) {
        let input = PlantInput::cooling(0.0, door, amb);
        let mut state = ThermalState { t_air_c: air, t_pouch_c: pouch, door_open: door, t_ambient_c: amb };
        let spread = |s: &ThermalState| (s.t_air_c - amb).abs().max((s.t_pouch_c - amb).abs());
        // explicit steps are only monotone when dt is below the fastest time constant
        let fastest = (params.c_air / (params.ua_wall_open + params.ua_pouch)).min(params.c_pouch / params.ua_pouch);
        prop_assume!(dt < fastest);
        for _ in 0..50 {
            let next = plant_step(&state, &input, &params, dt).unwrap().state;
            prop_assert!(spread(&next) <= spread(&state) + 1e-9);
            state = next;
        }
    }

    #[test]
    fn plant_stays_in_envelope(
        params in arb_params(),
        air in 2.0f64..98.0,
        pouch in 2.0f64..98.0,
        amb in -20.0f64..60.0,
        duty in 0.0f64..=1.0,
        heating in any::<bool>(),
    ) {
        let input = PlantInput { duty, heating, door_open: false, t_ambient_c: amb };
        let mut state = ThermalState { t_air_c: air, t_pouch_c: pouch, door_open: false, t_ambient_c: amb };
        for _ in 0..200 {
            state = plant_step(&state, &input, &params, 1.0).unwrap().state;
            prop_assert!((2.0..=98.0).contains(&state.t_air_c));
            prop_assert!((2.0..=98.0).contains(&state.t_pouch_c));
        }
    }

    #[test]
    fn profile_stays_within_its_points(
        mut pts in prop::collection::vec((0.0f64..10000.0, -50.0f64..50.0), 1..8),
        t in -100.0f64..11000.0,
    ) {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let v = Profile(pts).at(t);
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn sd_is_shift_invariant_and_scales(xs in prop::collection::vec(-100.0f64..100.0, 2..50), c in -1e3f64..1e3, k in 0.1f64..10.0) {
        let sd = sample_sd(&xs).unwrap();
        prop_assert!(sd >= 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        prop_assert!((sample_sd(&shifted).unwrap() - sd).abs() <= 1e-6 * (1.0 + sd));
        prop_assert!((sample_sd(&scaled).unwrap() - k * sd).abs() <= 1e-9 * (1.0 + k * sd));
    }
}

fn sample(seq: u64) -> TelemetrySample {
    TelemetrySample {
        v: PROTOCOL_VERSION,
        dev: "dev-01".into(),
        seq,
        t_ms: 1_000 * seq,
        t_chamber_c: 15.0 + seq as f64 * 1e-3,
        t_pouch_c: 15.1,
        rh_pct: 55.0,
        v_bus_v: 12.0,
        i_bus_a: 0.1667,
        p_w: 2.0,
        lat: 22.5,
        lon: 88.3,
        setpoint_c: 15.0,
        duty_pct: 30.0,
        soc_pct: 100.0,
        act: Actuators::empty(),
        flags: SampleFlags::empty(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn restart_preserves_every_stored_sample(seqs in prop::collection::vec(1u64..80, 1..120), split in 0usize..120) {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::new().with_device("dev-01", "t").with_operator("op", "o");
        let split = split.min(seqs.len());
        let (before, after) = {
            let mut p = ControlPlane::open(reg.clone(), dir.path(), PlaneConfig::default()).unwrap();
            let s = p.authenticate("dev-01", "t", 0).unwrap();
            for &q in &seqs[..split] {
                p.ingest(&s, &sample(q), 0).unwrap();
            }
            let snapshot = p.query_range("dev-01", 0, u64::MAX).unwrap();
            drop(p);
            let mut p = ControlPlane::open(reg.clone(), dir.path(), PlaneConfig::default()).unwrap();
            prop_assert_eq!(&p.query_range("dev-01", 0, u64::MAX).unwrap(), &snapshot);
            let s = p.authenticate("dev-01", "t", 0).unwrap();
            for &q in &seqs[split..] {
                p.ingest(&s, &sample(q), 0).unwrap();
            }
            (snapshot, p.query_range("dev-01", 0, u64::MAX).unwrap())
        };
        let reopened = ControlPlane::open(reg, dir.path(), PlaneConfig::default()).unwrap();
        prop_assert_eq!(reopened.query_range("dev-01", 0, u64::MAX).unwrap(), after.clone());
        // history only grows, and each seq is held once
        prop_assert!(before.iter().all(|s| after.contains(s)));
        let mut uniq: Vec<u64> = seqs.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(after.iter().map(|s| s.seq).collect::<Vec<_>>(), uniq);
    }
}
