use ethd_sim::calibration::{compare, fit_quadratic, run_sweep, Compensator, SweepConfig};
use ethd_sim::device::{DeviceParams, DEFAULT_SATURATION_COEFFS};

#[test]
fn sweep_fit_recovers_reference_compensator() {
    let device = DeviceParams::default();
    let cfg = SweepConfig::default();
    let samples = run_sweep(&device, &cfg, 42).unwrap();
    let comp = fit_quadratic(&samples).unwrap();
    for (got, want) in comp.coeffs.iter().zip(DEFAULT_SATURATION_COEFFS) {
        assert!(
            ((got - want) / want).abs() < 0.05,
            "coeffs {:?} vs {:?}",
            comp.coeffs,
            DEFAULT_SATURATION_COEFFS
        );
    }
    println!(
        "fitted {:?} rms {:.3} n {}",
        comp.coeffs, comp.residual_rms, comp.sample_count
    );
}

#[test]
fn identity_device_fits_identity() {
    let samples = run_sweep(&DeviceParams::identity(), &SweepConfig::default(), 42).unwrap();
    let comp = fit_quadratic(&samples).unwrap();
    let [a, b, c] = comp.coeffs;
    assert!(a.abs() < 1e-5, "{a}");
    assert!((b - 1.0).abs() < 0.02, "{b}");
    assert!(c.abs() < 10.0, "{c}");
}

#[test]
fn closure_within_five_percent() {
    let device = DeviceParams::default();
    let cfg = SweepConfig::default();
    let comp = fit_quadratic(&run_sweep(&device, &cfg, 7).unwrap()).unwrap();
    let check = SweepConfig {
        k_start: 200.0,
        k_end: 2000.0,
        ..cfg
    };
    for row in compare(&device, &comp, &check, 8).unwrap() {
        let err = (row.after - row.k_des).abs() / row.k_des;
        assert!(err < 0.05, "k_des {} -> {}", row.k_des, row.after);
    }
}

#[test]
fn same_seed_same_coefficients() {
    let device = DeviceParams::default();
    let cfg = SweepConfig {
        sensor_noise: 2e-6,
        ..SweepConfig::default()
    };
    let a = fit_quadratic(&run_sweep(&device, &cfg, 5).unwrap()).unwrap();
    let b = fit_quadratic(&run_sweep(&device, &cfg, 5).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = fit_quadratic(&run_sweep(&device, &cfg, 6).unwrap()).unwrap();
    assert_ne!(a.coeffs, c.coeffs);
}

#[test]
fn compensator_json_round_trip() {
    let comp = Compensator::reference();
    let json = serde_json::to_string(&comp).unwrap();
    assert!(json.contains("residual_rms") && json.contains("sample_count"));
    let back: Compensator = serde_json::from_str(&json).unwrap();
    assert_eq!(back, comp);
}
