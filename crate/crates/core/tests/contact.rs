use ethd_sim::contact::{
    hardness_set, selected_plates, simulate_impact, simulate_session, simulate_tap, SessionSpec,
    TapProfile, TapRig,
};
use ethd_sim::dsp::{crop, detect_taps};

fn contact_duration(samples: &[f64], fs: f64) -> f64 {
    samples.iter().filter(|&&f| f > 0.0).count() as f64 / fs
}

#[test]
fn hard_plate_taps_are_shorter() {
    let rig = TapRig::default();
    let p = selected_plates();
    let soft = simulate_impact(&p[0], 1000.0, &rig, 0.15).unwrap();
    let hard = simulate_impact(&p[4], 1000.0, &rig, 0.15).unwrap();
    assert!(contact_duration(&hard, 1e4) < contact_duration(&soft, 1e4));
}

#[test]
fn impulse_between_plastic_and_elastic_bounds() {
    let rig = TapRig::default();
    let mv = rig.profile.stylus_mass * 0.15;
    for plate in hardness_set() {
        for k in [200.0, 1000.0, 2000.0] {
            let s = simulate_tap(
                &plate,
                k,
                &TapRig {
                    profile: TapProfile {
                        velocity_jitter: 0.0,
                        ..TapProfile::default()
                    },
                    ..rig.clone()
                },
                0,
            )
            .unwrap();
            let j = s.impulse();
            assert!(
                j >= mv * 0.999 && j <= 2.0 * mv * 1.001,
                "{} at {k}: impulse {j} vs mv {mv}",
                plate.label
            );
        }
    }
}

#[test]
fn force_is_nonnegative_and_compact() {
    let rig = TapRig::default();
    for plate in hardness_set() {
        let s = simulate_tap(&plate, 600.0, &rig, 11).unwrap();
        assert_eq!(s.samples[0], 0.0);
        assert_eq!(*s.samples.last().unwrap(), 0.0);
        assert!(s.samples.iter().all(|&f| f >= 0.0 && f.is_finite()));
        assert!(s.peak() > 0.0);
    }
}

#[test]
fn zero_approach_speed_gives_zero_force() {
    let rig = TapRig {
        profile: TapProfile {
            approach_velocity: 0.0,
            velocity_jitter: 0.0,
            ..TapProfile::default()
        },
        ..TapRig::default()
    };
    let s = simulate_tap(&selected_plates()[2], 1000.0, &rig, 3).unwrap();
    assert!(s.samples.iter().all(|&f| f == 0.0));
}

#[test]
fn session_is_deterministic() {
    let rig = TapRig::default();
    let p = &selected_plates()[1];
    let a = simulate_session(p, 800.0, &rig, &SessionSpec::default(), 9).unwrap();
    let b = simulate_session(p, 800.0, &rig, &SessionSpec::default(), 9).unwrap();
    assert_eq!(a.samples, b.samples);
    let c = simulate_session(p, 800.0, &rig, &SessionSpec::default(), 10).unwrap();
    assert_ne!(a.samples, c.samples);
    assert!(a.duration() >= 13.0);
}

#[test]
fn default_session_has_many_taps_in_window() {
    let rig = TapRig::default();
    for p in selected_plates() {
        let s = simulate_session(&p, 1000.0, &rig, &SessionSpec::default(), 4).unwrap();
        let c = crop(&s, 3.0, 10.0).unwrap();
        let taps = detect_taps(&c, 0.2 * c.peak(), 0.1).unwrap();
        assert!(taps.len() >= 10, "{}: {} taps", p.label, taps.len());
    }
}

#[test]
fn single_tap_session() {
    let rig = TapRig::default();
    let spec = SessionSpec {
        n_taps: 1,
        duration: 13.0,
        first_tap_s: Some(5.0),
    };
    let s = simulate_session(&selected_plates()[3], 1500.0, &rig, &spec, 2).unwrap();
    let c = crop(&s, 3.0, 10.0).unwrap();
    assert_eq!(detect_taps(&c, 0.2 * c.peak(), 0.1).unwrap().len(), 1);
}

#[test]
fn overfull_session_rejected() {
    let rig = TapRig::default();
    let spec = SessionSpec {
        n_taps: 40,
        ..SessionSpec::default()
    };
    assert!(simulate_session(&selected_plates()[0], 500.0, &rig, &spec, 0).is_err());
}
