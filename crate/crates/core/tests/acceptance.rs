//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use ethd_sim::calibration::{compare, fit_quadratic, run_sweep, Compensator, SweepConfig};
use ethd_sim::device::DeviceParams;
use ethd_sim::dsp::{
    classify_duration, dft_magnitude, dominant_frequency, spectral_centroid, DurationClass,
    Spectrum,
};
use ethd_sim::experiment::{run_experiment1, run_experiment2, Exp1Config, Exp2Config};
use ethd_sim::psychophysics::{
    run_staircase, wf_by_plate, wf_by_reference, Observer, Order, StaircaseConfig, StaircaseState,
};
use ethd_sim::stats::{f_sf, one_way_anova, two_way_anova, FactorialTable, TwoWayModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: &str, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = f();
    let took = t0.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = out.pass && in_time;
    let timing = match limit {
        Some(l) => format!("{:.2}s of {}s", took.as_secs_f64(), l.as_secs()),
        None => format!("{:.2}s", took.as_secs_f64()),
    };
    println!(
        "{id} {} {title} [{timing}] {}",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    pass
}

fn a1() -> Outcome {
    let c = Compensator::reference();
    let want = [(500.0, 780.48), (1000.0, 1533.73), (2000.0, 2516.73)];
    let errs: Vec<f64> = want
        .iter()
        .map(|&(k, v)| (c.compensate(k) - v).abs())
        .collect();
    Outcome {
        pass: errs.iter().all(|&e| e <= 1e-2),
        detail: format!(
            "max abs error {:.2e}",
            errs.iter().copied().fold(0.0, f64::max)
        ),
    }
}

fn a2() -> Outcome {
    let device = DeviceParams::default();
    let cfg = SweepConfig::default();
    let comp = match run_sweep(&device, &cfg, 1).and_then(|s| fit_quadratic(&s)) {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("fit failed: {e}"),
            }
        }
    };
    let check_cfg = SweepConfig {
        k_start: 200.0,
        k_end: 2000.0,
        k_step: 100.0,
        ..cfg
    };
    let rows = compare(&device, &comp, &check_cfg, 2).expect("comparison sweep");
    let worst = rows
        .iter()
        .map(|r| (r.after - r.k_des).abs() / r.k_des)
        .fold(0.0, f64::max);
    let ceiling = (0..=400)
        .map(|i| device.actual_stiffness(i as f64 * 10.0).unwrap())
        .fold(0.0, f64::max);
    Outcome {
        pass: worst < 0.05 && ceiling <= 2040.0 && rows.len() == 19,
        detail: format!(
            "worst closure error {:.2}% over {} points, max delivered {:.1} N/m, fit {:?}",
            worst * 100.0,
            rows.len(),
            ceiling,
            comp.coeffs
        ),
    }
}

fn a3() -> Outcome {
    let cfg = Exp1Config {
        stiffness: (1..=10).map(|i| i as f64 * 200.0).collect(),
        ..Exp1Config::default()
    };
    let res = run_experiment1(&cfg, &DeviceParams::default(), &Compensator::reference(), 3)
        .expect("experiment 1");
    if !res.failures.is_empty() {
        return Outcome {
            pass: false,
            detail: format!(
                "{} cells failed: {}",
                res.failures.len(),
                res.failures[0].error
            ),
        };
    }
    let anova = match res.anova {
        Some(Ok(a)) => a,
        other => {
            return Outcome {
                pass: false,
                detail: format!("no ANOVA: {other:?}"),
            }
        }
    };
    let hp = anova.effect("hardness").and_then(|r| r.p).unwrap_or(1.0);
    let sp = anova.effect("stiffness").and_then(|r| r.p).unwrap_or(0.0);
    let mut means = Vec::new();
    let mut worst_spread: f64 = 0.0;
    for p in &res.plates {
        let sc: Vec<f64> = res
            .rows
            .iter()
            .filter(|r| r.plate == p.label)
            .map(|r| r.features.spectral_centroid)
            .collect();
        let m = sc.iter().sum::<f64>() / sc.len() as f64;
        let max = sc.iter().copied().fold(f64::MIN, f64::max);
        let min = sc.iter().copied().fold(f64::MAX, f64::min);
        worst_spread = worst_spread.max((max - min) / m);
        means.push(m);
    }
    let monotone = means.windows(2).all(|w| w[0] < w[1]);
    Outcome {
        pass: hp < 0.001 && sp > 0.05 && worst_spread < 0.10 && monotone,
        detail: format!(
            "{}; {}; worst SC spread {:.2}%; SC means {:?}",
            anova.report("hardness").unwrap(),
            anova.report("stiffness").unwrap(),
            worst_spread * 100.0,
            means.iter().map(|m| m.round() as i64).collect::<Vec<_>>()
        ),
    }
}

fn a4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = dft_magnitude(&noise, 10_000.0).unwrap();
    let energy: f64 = noise.iter().map(|x| x * x).sum();
    let parseval = (spec.two_sided_energy() - energy).abs() / energy;

    // a tone with a whole number of periods in the transform length is a
    // single line; 100 Hz over 1 s is not, so its peak bin is checked instead
    let fs = 10_000.0;
    let n = 4096;
    let f0 = 41.0 * fs / n as f64;
    let tone: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
        .collect();
    let ts = dft_magnitude(&tone, fs).unwrap();
    let sc_tone = spectral_centroid(&ts).unwrap();
    let hundred: Vec<f64> = (0..10_000)
        .map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / fs).sin())
        .collect();
    let hs = dft_magnitude(&hundred, fs).unwrap();
    let (peak100, _) = dominant_frequency(&hs).unwrap();
    let tone_ok =
        (sc_tone - f0).abs() <= ts.resolution() && (peak100 - 100.0).abs() <= hs.resolution();

    let scaled = |a: f64| {
        spectral_centroid(&Spectrum {
            mags: spec.mags.iter().map(|m| m * a).collect(),
            ..spec.clone()
        })
        .unwrap()
    };
    let base = spectral_centroid(&spec).unwrap();
    let exact = [0.25, 2.0, 8.0, 1024.0].iter().all(|&a| scaled(a) == base);
    let rel = [7.0, 0.3, 1e6]
        .iter()
        .map(|&a| (scaled(a) - base).abs() / base)
        .fold(0.0, f64::max);

    use DurationClass::*;
    let boundaries = [
        (0.020, VeryShort),
        (0.087, Short),
        (0.154, Long),
        (0.221, VeryLong),
        (0.288, VeryLong),
    ];
    let classes_ok = boundaries
        .iter()
        .all(|&(d, c)| classify_duration(d) == Ok(c));
    Outcome {
        pass: parseval < 1e-9 && tone_ok && exact && rel < 1e-12 && classes_ok,
        detail: format!(
            "Parseval rel err {parseval:.1e}; tone {f0:.2} Hz -> SC {sc_tone:.2} Hz (bin {:.2} Hz), 100 Hz tone peak {peak100:.2} Hz; \
             scale invariance bit-exact for powers of two, max rel {rel:.1e} otherwise; \
             boundary classes {}",
            ts.resolution(),
            if classes_ok { "ok" } else { "wrong" }
        ),
    }
}

/// Long-run mean reversal level of a plain 1-up/1-down staircase.
fn convergence_oracle(reference: f64, step: f64, sigma: f64, trials: usize, seed: u64) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = reference - step;
    let mut last: Option<bool> = None;
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 0..trials {
        let p = normal.cdf((reference - k) / (sigma * std::f64::consts::SQRT_2));
        let up = rng.random::<f64>() < p;
        if last.is_some_and(|l| l != up) && t > trials / 20 {
            sum += k;
            n += 1;
        }
        last = Some(up);
        k = if up {
            (k + step).min(reference - step)
        } else {
            k - step
        };
    }
    sum / n as f64
}

fn mean_wf(cfg: &StaircaseConfig, obs: &Observer, runs: u64, seed: u64) -> (f64, Vec<f64>) {
    let wf: Vec<f64> = (0..runs)
        .filter_map(|r| run_staircase(cfg, obs, seed.wrapping_add(r)).ok())
        .map(|r| r.result.weber_fraction)
        .collect();
    (wf.iter().sum::<f64>() / wf.len() as f64, wf)
}

fn a5() -> Outcome {
    let mut lines = Vec::new();
    let mut oracle_ok = true;
    for reference in [500.0, 1000.0, 1500.0, 2000.0] {
        let cfg = StaircaseConfig::for_reference(reference);
        let obs = Observer {
            sigma: 0.1 * reference,
            lapse_rate: 0.0,
        };
        let (wf, runs) = mean_wf(&cfg, &obs, 200, 500);
        let fine = (reference
            - convergence_oracle(reference, cfg.step / 10.0, obs.sigma, 400_000, 51))
            / reference;
        let same = (reference - convergence_oracle(reference, cfg.step, obs.sigma, 400_000, 52))
            / reference;
        let ok = runs.len() >= 200 && (wf - fine).abs() <= 0.2 * fine;
        oracle_ok &= ok;
        lines.push(format!(
            "ref {reference}: WF {wf:.4} vs fine-step oracle {fine:.4} ({:+.0}%), same-step {same:.4}",
            (wf / fine - 1.0) * 100.0
        ));
    }
    let base = StaircaseConfig::for_reference(1000.0);
    let obs = Observer {
        sigma: 100.0,
        lapse_rate: 0.0,
    };
    let big_obs = Observer {
        sigma: 200.0,
        lapse_rate: 0.0,
    };
    let (_, a) = mean_wf(&base, &obs, 2000, 10_000);
    let (_, b) = mean_wf(&base.scaled(2.0), &big_obs, 2000, 20_000);
    let d = ethd_sim::stats::ks_statistic(&a, &b);
    Outcome {
        pass: oracle_ok && d < 0.1,
        detail: format!(
            "{}; KS D = {d:.4} between proportional configs (n = {}, {})",
            lines.join("; "),
            a.len(),
            b.len()
        ),
    }
}

fn a6() -> Outcome {
    let cfg = StaircaseConfig::for_reference(1000.0);
    let mut s = StaircaseState::new(&cfg);
    for c in "CCCWCCCC".chars() {
        s.record_response(&cfg, c == 'C', Order::RefFirst).unwrap();
    }
    let trace_ok = s.reversals.is_empty();

    let bias = |window: usize| {
        let cfg = StaircaseConfig {
            forgiveness_window: window,
            ..StaircaseConfig::for_reference(1000.0)
        };
        let clean = Observer {
            sigma: 100.0,
            lapse_rate: 0.0,
        };
        let lapsing = Observer {
            lapse_rate: 0.05,
            ..clean
        };
        let mut total = 0.0;
        let mut n = 0;
        for seed in 0..400u64 {
            if let (Ok(x), Ok(y)) = (
                run_staircase(&cfg, &lapsing, seed),
                run_staircase(&cfg, &clean, seed),
            ) {
                total += (x.result.threshold_k - y.result.threshold_k).abs();
                n += 1;
            }
        }
        (total / n as f64, n)
    };
    let (with, n1) = bias(4);
    let (without, n2) = bias(0);
    Outcome {
        pass: trace_ok && with < without && n1 >= 200 && n2 >= 200,
        detail: format!(
            "trace CCCWCCCC leaves {} reversals; mean |threshold bias| {with:.2} N/m with rule vs {without:.2} N/m without ({n1}/{n2} paired runs)",
            s.reversals.len()
        ),
    }
}

fn a7() -> Outcome {
    let (_, rows) = run_experiment2(&Exp2Config::default(), 7).expect("experiment 2");
    let plates = wf_by_plate(&rows);
    let refs = wf_by_reference(&rows);
    let p_ok = plates.windows(2).all(|w| w[0].1.mean < w[1].1.mean);
    let r_ok = refs.windows(2).all(|w| w[0].1.mean <= w[1].1.mean);
    Outcome {
        pass: p_ok && r_ok,
        detail: format!(
            "WF by plate {:?}; by reference {:?}",
            plates
                .iter()
                .map(|(p, s)| format!("{p} {:.3}", s.mean))
                .collect::<Vec<_>>(),
            refs.iter()
                .map(|(r, s)| format!("{r} {:.3}", s.mean))
                .collect::<Vec<_>>()
        ),
    }
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_t: f64 = 0.0;
    for _ in 0..500 {
        let nx = rng.random_range(2..20);
        let ny = rng.random_range(2..20);
        let x: Vec<f64> = (0..nx).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..ny).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (mx, my) = (
            x.iter().sum::<f64>() / nx as f64,
            y.iter().sum::<f64>() / ny as f64,
        );
        let ss = |v: &[f64], m: f64| v.iter().map(|a| (a - m).powi(2)).sum::<f64>();
        let sp2 = (ss(&x, mx) + ss(&y, my)) / (nx + ny - 2) as f64;
        let t = (mx - my) / (sp2 * (1.0 / nx as f64 + 1.0 / ny as f64)).sqrt();
        let f = one_way_anova(&[x, y]).unwrap().effects[0].f.unwrap();
        worst_t = worst_t.max((f - t * t).abs() / (1.0 + f));
    }
    let mut worst_ss: f64 = 0.0;
    for _ in 0..200 {
        let (a, b, n) = (
            rng.random_range(2..6),
            rng.random_range(2..6),
            rng.random_range(1..4),
        );
        let records: Vec<(String, String, f64)> = (0..a)
            .flat_map(|i| (0..b).flat_map(move |j| (0..n).map(move |_| (i, j))))
            .map(|(i, j)| (format!("a{i}"), format!("b{j}"), 0.0))
            .collect();
        let records: Vec<(String, String, f64)> = records
            .into_iter()
            .map(|(i, j, _)| (i, j, rng.random_range(-5.0..5.0)))
            .collect();
        let table = FactorialTable::from_records(
            "A",
            "B",
            records.iter().map(|(i, j, v)| (i.as_str(), j.as_str(), *v)),
        );
        for model in [TwoWayModel::Additive, TwoWayModel::WithInteraction] {
            if let Ok(t) = two_way_anova(&table, model) {
                worst_ss =
                    worst_ss.max((t.explained_plus_residual() - t.total_ss).abs() / t.total_ss);
            }
        }
    }
    let p = f_sf(4.26, 2.0, 9.0);
    Outcome {
        pass: worst_t < 1e-9 && worst_ss < 1e-9 && (p - 0.05).abs() <= 5e-4,
        detail: format!(
            "max |F - t^2| {worst_t:.1e}; max SS additivity rel err {worst_ss:.1e}; f_sf(4.26, 2, 9) = {p:.5}"
        ),
    }
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        check("A1", "compensator values", None, a1),
        check("A2", "calibration closure", Some(s(10)), a2),
        check("A3", "experiment-1 significance pattern", Some(s(60)), a3),
        check("A4", "DFT and feature correctness", None, a4),
        check(
            "A5",
            "staircase oracle and scale invariance",
            Some(s(60)),
            a5,
        ),
        check("A6", "forgiveness rule", Some(s(30)), a6),
        check("A7", "experiment-2 trends", Some(s(60)), a7),
        check("A8", "stats identities", None, a8),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
