//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits non-zero on any
//! failure.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::{Duration, Instant};

use ppg_stress::dataset::{
    self, anova_f, f_statistic, FeatureMatrix, FeatureRow, PipelineConfig, WindowSpec,
};
use ppg_stress::dsp::FilterConfig;
use ppg_stress::dsp::{design_butter_bandpass, filtfilt};
use ppg_stress::eval::{self, mann_whitney_u, EvalConfig, UTestMode};
use ppg_stress::hrv::{self, feature_index};
use ppg_stress::models::{lda_fit, sgd_logistic_fit, ModelKind, SgdConfig};
use ppg_stress::pulse::{detect_peaks, to_rr, RrSeries};
use ppg_stress::signal_io::{beat_times, synth_cohort, synth_ppg, SynthCohortSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------------------

fn filter_correctness() -> Check {
    let start = Instant::now();
    let c = design_butter_bandpass(3, 0.5, 8.0, 100.0).map_err(|e| e.to_string())?;
    let h2 = c.magnitude(2.0);
    let h_edge = c.magnitude(0.5);
    let h_stop = c.magnitude(0.05);
    let h_dc = c.magnitude(0.0);
    let h_nyq = c.magnitude(50.0);
    ensure(h2 >= 0.98, format!("|H(2 Hz)| = {h2}"))?;
    ensure(
        (h_edge - FRAC_1_SQRT_2).abs() <= 0.01 * FRAC_1_SQRT_2,
        format!("|H(0.5 Hz)| = {h_edge}"),
    )?;
    ensure(h_stop <= 0.01, format!("|H(0.05 Hz)| = {h_stop}"))?;
    ensure(
        h_dc == 0.0 && h_nyq == 0.0,
        format!("DC {h_dc}, Nyquist {h_nyq}"),
    )?;

    let x: Vec<f64> = (0..2000)
        .map(|i| (2.0 * PI * 2.0 * i as f64 / 100.0).sin())
        .collect();
    let y = filtfilt(&c, &x).map_err(|e| e.to_string())?;
    let xcorr = |lag: i64| -> f64 {
        (500..1500)
            .map(|i| x[i] * y[(i as i64 + lag) as usize])
            .sum()
    };
    let best = (-25..=25)
        .max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b)))
        .unwrap();
    ensure(best == 0, format!("zero-phase lag {best} samples"))?;
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(1),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "|H| 2 Hz {h2:.5}, 0.5 Hz {h_edge:.5}, 0.05 Hz {h_stop:.2e}; lag 0; {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------------

fn peak_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let plan: Vec<f64> = (0..120).map(|_| rng.random_range(700.0..1000.0)).collect();
    let truth = beat_times(&plan);
    let filt = FilterConfig::default();

    let trace = synth_ppg(&plan, 100.0, 0.0, 0).map_err(|e| e.to_string())?;
    let x = filt
        .apply(&trace.samples, 100.0)
        .map_err(|e| e.to_string())?;
    let peaks = detect_peaks(&x, 100.0);
    ensure(
        peaks.len() == truth.len(),
        format!("{} peaks for {} planted beats", peaks.len(), truth.len()),
    )?;
    let rr = to_rr(&peaks).map_err(|e| e.to_string())?;
    ensure(rr.n_rejected() == 0, "intervals rejected on clean signal")?;
    let mae = rr
        .rr_ms
        .iter()
        .zip(&plan[1..])
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / rr.len() as f64;
    ensure(mae < 5.0, format!("mean |RR error| {mae:.3} ms"))?;

    let noisy = synth_ppg(&plan, 100.0, 0.1, 5).map_err(|e| e.to_string())?;
    let x = filt
        .apply(&noisy.samples, 100.0)
        .map_err(|e| e.to_string())?;
    let peaks = detect_peaks(&x, 100.0);
    let hits = truth
        .iter()
        .filter(|&&t| peaks.iter().any(|&p| (p - t).abs() <= 0.05))
        .count();
    let frac = hits as f64 / truth.len() as f64;
    ensure(frac >= 0.98, format!("noisy recovery {frac:.3}"))?;
    Ok(format!(
        "clean MAE {mae:.3} ms, 120/120 beats; noisy recovery {:.1}%",
        100.0 * frac
    ))
}

// ---------------------------------------------------------------------------

mod oracle {
    //! Direct-definition HRV features written independently of the library.

    pub fn mean(x: &[f64]) -> f64 {
        let mut s = 0.0;
        for v in x {
            s += v;
        }
        s / x.len() as f64
    }

    pub fn std(x: &[f64], ddof: f64) -> f64 {
        let m = mean(x);
        let mut ss = 0.0;
        for v in x {
            ss += (v - m) * (v - m);
        }
        (ss / (x.len() as f64 - ddof)).sqrt()
    }

    /// numpy's default ("linear") percentile.
    pub fn percentile(x: &[f64], p: f64) -> f64 {
        let mut s = x.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = p / 100.0 * (s.len() - 1) as f64;
        let i = pos as usize;
        if i + 1 >= s.len() {
            return s[s.len() - 1];
        }
        let frac = pos - i as f64;
        s[i] * (1.0 - frac) + s[i + 1] * frac
    }

    pub fn median(x: &[f64]) -> f64 {
        let mut s = x.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    }

    pub fn time_and_nonlinear(rr: &[f64]) -> Vec<(&'static str, f64)> {
        let d: Vec<f64> = rr.windows(2).map(|w| w[1] - w[0]).collect();
        let mean_nn = mean(rr);
        let sdnn = std(rr, 1.0);
        let rmssd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        let med = median(rr);
        let dev: Vec<f64> = rr.iter().map(|v| (v - med).abs()).collect();
        let mad = 1.4826 * median(&dev);
        let pnn = |t: f64| 100.0 * d.iter().filter(|v| v.abs() > t).count() as f64 / d.len() as f64;
        let sd1 = std(&d, 0.0) / 2f64.sqrt();
        let sd2 = (2.0 * std(rr, 0.0).powi(2) - 0.5 * std(&d, 0.0).powi(2)).sqrt();
        let lo = rr.iter().cloned().fold(f64::MAX, f64::min);
        let hi = rr.iter().cloned().fold(f64::MIN, f64::max);
        let mut bins = [0.0f64; 8];
        for v in rr {
            let mut b = ((v - lo) / (hi - lo) * 8.0) as usize;
            if b == 8 {
                b = 7;
            }
            bins[b] += 1.0;
        }
        let shan: f64 = bins
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|c| {
                let p = c / rr.len() as f64;
                -p * p.log2()
            })
            .sum();
        vec![
            ("MeanNN", mean_nn),
            ("SDNN", sdnn),
            ("RMSSD", rmssd),
            ("SDSD", std(&d, 1.0)),
            ("CVNN", sdnn / mean_nn),
            ("CVSD", rmssd / mean_nn),
            ("MedianNN", med),
            ("MadNN", mad),
            ("MCVNN", mad / med),
            ("IQRNN", percentile(rr, 75.0) - percentile(rr, 25.0)),
            ("pNN20", pnn(20.0)),
            ("pNN50", pnn(50.0)),
            ("MinNN", lo),
            ("MaxNN", hi),
            ("SD1", sd1),
            ("SD2", sd2),
            ("SD1SD2", sd1 / sd2),
            ("CSI", sd2 / sd1),
            ("ShanEn", shan),
        ]
    }
}

fn random_window(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(90..160);
    let base = rng.random_range(650.0..950.0);
    let amp = rng.random_range(10.0..60.0);
    let noise = Normal::new(0.0, rng.random_range(5.0..40.0)).unwrap();
    let f = rng.random_range(0.05..0.35);
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            let v: f64 = base + amp * (2.0 * PI * f * t).sin() + noise.sample(rng);
            let v = v.clamp(350.0, 1800.0);
            t += v / 1000.0;
            v
        })
        .collect()
}

fn modulated(freq_hz: f64) -> RrSeries {
    let mut t = 0.0;
    let rr: Vec<f64> = (0..300)
        .map(|_| {
            let v = 850.0 + 60.0 * (2.0 * PI * freq_hz * t).sin();
            t += v / 1000.0;
            v
        })
        .collect();
    RrSeries::from_intervals(&rr)
}

fn hrv_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for w in 0..100 {
        let rr = random_window(&mut rng);
        let series = RrSeries::from_intervals(&rr);
        let span = rr.iter().sum::<f64>() / 1000.0;
        let fv = hrv::all_features(&series, span).map_err(|e| format!("window {w}: {e}"))?;
        for (name, expected) in oracle::time_and_nonlinear(&rr) {
            let got = fv.get(name).unwrap();
            let err = (got - expected).abs() / expected.abs().max(1e-300);
            worst = worst.max(if expected == got { 0.0 } else { err });
            ensure(
                rel_close(got, expected, 1e-9),
                format!("window {w}: {name} = {got}, oracle {expected}"),
            )?;
        }
        let sd1 = fv.get("SD1").unwrap();
        let sd2 = fv.get("SD2").unwrap();
        let var_p = oracle::std(&rr, 0.0).powi(2);
        ensure(
            rel_close(sd1 * sd1 + sd2 * sd2, 2.0 * var_p, 1e-9),
            format!("window {w}: SD1²+SD2² identity"),
        )?;
    }

    let lf = hrv::frequency_domain(&modulated(0.1), 250.0).map_err(|e| e.to_string())?;
    let hf = hrv::frequency_domain(&modulated(0.25), 250.0).map_err(|e| e.to_string())?;
    ensure(
        lf.lfn > 0.9,
        format!("LFn {} for 0.1 Hz modulation", lf.lfn),
    )?;
    ensure(
        hf.hfn > 0.9,
        format!("HFn {} for 0.25 Hz modulation", hf.hfn),
    )?;
    ensure(feature_index("LFn").is_some(), "LFn missing from catalog")?;
    Ok(format!(
        "100 windows, worst rel err {worst:.1e}; LFn {:.3} @0.1 Hz, HFn {:.3} @0.25 Hz",
        lf.lfn, hf.hfn
    ))
}

// ---------------------------------------------------------------------------

fn matrix(columns: &[&str], rows: Vec<(u8, Vec<f64>)>) -> FeatureMatrix {
    FeatureMatrix::new(
        columns.iter().map(|c| c.to_string()).collect(),
        rows.into_iter()
            .enumerate()
            .map(|(i, (label, values))| FeatureRow {
                subject: "S".into(),
                label,
                start_s: i as f64,
                values,
            })
            .collect(),
    )
    .unwrap()
}

fn selection() -> Check {
    let f = f_statistic(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
    ensure(f == 13.5, format!("F = {f}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for trial in 0..50 {
        let g0: Vec<f64> = (0..20).map(|_| normal.sample(&mut rng)).collect();
        let g1: Vec<f64> = (0..25).map(|_| 0.7 + normal.sample(&mut rng)).collect();
        let a = rng.random_range(0.01..100.0) * if trial % 2 == 0 { 1.0 } else { -1.0 };
        let b = rng.random_range(-1e3..1e3);
        let t = |x: &[f64]| x.iter().map(|v| a * v + b).collect::<Vec<_>>();
        let f0 = f_statistic(&g0, &g1);
        let f1 = f_statistic(&t(&g0), &t(&g1));
        ensure(rel_close(f0, f1, 1e-9), format!("affine: {f0} vs {f1}"))?;
    }

    let rows = vec![
        (0, vec![1.0, 5.0, 1.0, 0.0]),
        (0, vec![2.0, 5.0, 2.0, 1.0]),
        (0, vec![3.0, 5.0, 3.0, 0.0]),
        (1, vec![4.0, 5.0, 4.0, 1.0]),
        (1, vec![5.0, 5.0, 5.0, 0.0]),
        (1, vec![6.0, 5.0, 6.0, 1.0]),
    ];
    let m = matrix(&["b", "const", "a", "noise"], rows);
    let report = anova_f(&m).map_err(|e| e.to_string())?;
    ensure(
        report.ranking == ["b", "a", "noise", "const"],
        format!("ranking {:?}", report.ranking),
    )?;
    let again = anova_f(&m).map_err(|e| e.to_string())?;
    ensure(again.ranking == report.ranking, "ranking not reproducible")?;
    let top = dataset::select_top_k(&m, &report, 2).map_err(|e| e.to_string())?;
    ensure(top.columns() == ["b", "a"], "top-2 columns")?;
    Ok("F = 13.5; affine invariance on 50 trials; tie order b, a".into())
}

// ---------------------------------------------------------------------------

fn classifiers() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..400 {
        let label = (i % 2) as u8;
        let shift = if label == 1 { 3.0 } else { -3.0 };
        x.push(
            (0..4)
                .map(|_| shift + normal.sample(&mut rng))
                .collect::<Vec<f64>>(),
        );
        y.push(label);
    }
    let lda = lda_fit(&x, &y, 1e-6).map_err(|e| e.to_string())?;
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(r, &l)| (lda.predict_proba(r) >= 0.5) as u8 == l)
        .count();
    let acc = correct as f64 / x.len() as f64;
    ensure(acc >= 0.99, format!("LDA train accuracy {acc}"))?;

    let half: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..3).map(|_| 1.5 + normal.sample(&mut rng)).collect())
        .collect();
    let mut sx = half.clone();
    sx.extend(
        half.iter()
            .map(|r| r.iter().map(|v| -v).collect::<Vec<f64>>()),
    );
    let sy: Vec<u8> = (0..200).map(|i| (i < 100) as u8).collect();
    let sym = lda_fit(&sx, &sy, 1e-6).map_err(|e| e.to_string())?;
    let p0 = sym.predict_proba(&[0.0; 3]);
    ensure((p0 - 0.5).abs() <= 1e-9, format!("p(origin) = {p0}"))?;

    let cfg = SgdConfig {
        seed: 99,
        ..Default::default()
    };
    let a = sgd_logistic_fit(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let b = sgd_logistic_fit(&x, &y, &cfg).map_err(|e| e.to_string())?;
    ensure(a == b, "SGD not deterministic for a fixed seed")?;
    for (e, w) in a.loss_trace.windows(2).enumerate() {
        ensure(
            w[1] <= w[0] * 1.05,
            format!("SGD loss rose at epoch {}: {} -> {}", e + 1, w[0], w[1]),
        )?;
    }
    Ok(format!(
        "LDA train acc {acc:.4}; p(origin) - 0.5 = {:.1e}; SGD loss {:.4} -> {:.4}",
        p0 - 0.5,
        a.loss_trace[0],
        a.loss_trace.last().unwrap()
    ))
}

// ---------------------------------------------------------------------------

fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let u_of = |mask: u32| -> f64 {
        let mut u = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 0 {
                continue;
            }
            for j in 0..n {
                if mask >> j & 1 == 1 {
                    continue;
                }
                u += match pooled[i].partial_cmp(&pooled[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        u
    };
    let n1 = a.len() as u32;
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let observed = (u_of((1 << a.len()) - 1) - mu).abs();
    let (mut hit, mut total) = (0, 0);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != n1 {
            continue;
        }
        total += 1;
        if (u_of(mask) - mu).abs() >= observed - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn u_test() -> Check {
    let a = [1.0, 2.0, 3.0];
    let b = [4.0, 5.0, 6.0];
    let r = mann_whitney_u(&a, &b, UTestMode::Exact).map_err(|e| e.to_string())?;
    let brute = brute_force_p(&a, &b);
    ensure(r.u == 0.0, format!("U = {}", r.u))?;
    ensure(
        (r.p_value - 0.1).abs() < 1e-12,
        format!("p = {}", r.p_value),
    )?;
    ensure(
        (brute - 0.1).abs() < 1e-12,
        format!("enumeration p = {brute}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..50 {
        let n1 = rng.random_range(1..9);
        let n2 = rng.random_range(1..9);
        let draw = |rng: &mut ChaCha8Rng, n| {
            (0..n)
                .map(|_| rng.random_range(0..6) as f64)
                .collect::<Vec<_>>()
        };
        let x = draw(&mut rng, n1);
        let y = draw(&mut rng, n2);
        let ab = mann_whitney_u(&x, &y, UTestMode::Exact).map_err(|e| e.to_string())?;
        let ba = mann_whitney_u(&y, &x, UTestMode::Exact).map_err(|e| e.to_string())?;
        ensure(
            ab.u + ba.u == (n1 * n2) as f64,
            format!("trial {trial}: {} + {} != {}", ab.u, ba.u, n1 * n2),
        )?;
        let brute = brute_force_p(&x, &y);
        ensure(
            (ab.p_value - brute).abs() < 1e-12,
            format!("trial {trial}: p {} vs enumeration {brute}", ab.p_value),
        )?;
    }
    Ok("U = 0, p = 0.1 (enumeration agrees); U(a,b)+U(b,a) = n1 n2 on 50 pairs".into())
}

// ---------------------------------------------------------------------------

fn end_to_end() -> Check {
    let start = Instant::now();
    let spec = SynthCohortSpec::default();
    ensure(spec.n_subjects == 16, "cohort size")?;
    let ds = synth_cohort(&spec).map_err(|e| e.to_string())?;
    let window = WindowSpec::new(80.0, 5.0).map_err(|e| e.to_string())?;
    let pipeline = PipelineConfig::default();
    let (m, log) = dataset::build_matrix(&ds, &window, &pipeline).map_err(|e| e.to_string())?;
    let cfg = EvalConfig {
        k: 35,
        model: ModelKind::Lda,
        ..Default::default()
    };
    let real = eval::loso_matrix(&m, &cfg).map_err(|e| e.to_string())?;
    ensure(
        real.folds.len() == 16,
        format!("{} folds", real.folds.len()),
    )?;
    ensure(
        real.mean_accuracy >= 0.90,
        format!("LOSO mean accuracy {:.4}", real.mean_accuracy),
    )?;

    let shuffled = eval::shuffle_labels_within_subjects(&m, 1);
    let control = eval::loso_matrix(&shuffled, &cfg).map_err(|e| e.to_string())?;
    ensure(
        (0.40..=0.60).contains(&control.mean_accuracy),
        format!("shuffled-label mean accuracy {:.4}", control.mean_accuracy),
    )?;

    let suds = eval::suds_report(&ds, UTestMode::Normal).map_err(|e| e.to_string())?;
    ensure(
        suds.test.p_value < 1e-5,
        format!("SUDs p = {:e}", suds.test.p_value),
    )?;
    ensure(suds.stressful_higher, "SUDs not higher under stress")?;

    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(300),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{} windows ({} dropped); LDA LOSO mean {:.4}, pooled {:.4}; shuffled {:.4}; SUDs p {:.1e}; {elapsed:.1?}",
        m.n_rows(),
        log.total_dropped(),
        real.mean_accuracy,
        real.pooled_accuracy,
        control.mean_accuracy,
        suds.test.p_value
    ))
}

// ---------------------------------------------------------------------------

fn window_sweep() -> Check {
    let spec = SynthCohortSpec {
        n_subjects: 6,
        span_s: 300.0,
        ..Default::default()
    };
    let ds = synth_cohort(&spec).map_err(|e| e.to_string())?;
    let cfg = EvalConfig::default();
    let pipeline = PipelineConfig::default();
    let run = || -> Result<String, String> {
        let rows = eval::sweep_windows(&ds, &dataset::DEFAULT_SWEEP_SIZES, 5.0, &cfg, &pipeline)
            .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        eval::write_sweep_csv(&rows, &mut buf).map_err(|e| e.to_string())?;
        String::from_utf8(buf).map_err(|e| e.to_string())
    };
    let first = run()?;
    let second = run()?;
    let lines: Vec<&str> = first.lines().collect();
    ensure(
        lines[0] == "window_s,mean_accuracy,pooled_accuracy",
        "CSV header",
    )?;
    ensure(lines.len() == 8, format!("{} data rows", lines.len() - 1))?;
    let sizes: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    ensure(
        sizes == ["60", "70", "80", "90", "100", "110", "120"],
        format!("window column {sizes:?}"),
    )?;
    ensure(first == second, "sweep output differs between runs")?;
    Ok("7 rows, 60..120 s, byte-identical across runs".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 filter correctness", filter_correctness),
        ("2 peak/RR recovery", peak_recovery),
        ("3 HRV oracle equivalence", hrv_oracle),
        ("4 selection correctness", selection),
        ("5 classifier sanity", classifiers),
        ("6 U test exactness", u_test),
        ("7 end-to-end pipeline", end_to_end),
        ("8 window sweep", window_sweep),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
