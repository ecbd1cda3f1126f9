//! Acceptance run: one PASS/FAIL line per criterion. Tolerances are fixed
//! constants below. A failing criterion is reported, not hidden; the process
//! exits nonzero on failure only when `EQOPT_ACCEPTANCE_STRICT=1` is set, so
//! the workspace test run still completes.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use common::{
    band_edges, max_ratio_deviation, reference_band_mags, reference_mse, reference_path_energies, reference_sigma,
    Realized,
};
use eqopt::baselines::{fir_ops_per_sample, sos_ops_per_sample};
use eqopt::bands::make_bands;
use eqopt::biasnet::{Network, RunConfig};
use eqopt::filter::{design_peaking_section, Equalizer, FrequencyGrid, ParametricSection, SosCascade};
use eqopt::loss::{analytic_gradient, Objective};
use eqopt::metrics::RunInfo;
use eqopt::params::ParamRanges;
use eqopt::pipeline::{design, evaluate_exported, write_run, Design, DesignConfig, Method, Outcome, Prepared, SceneSource};
use eqopt::scene::{preprocess, synth_scene, Scene, SynthSpec};

const FS: f64 = 48_000.0;

// criterion 1
const GRAD_SCENES: usize = 100;
const GRAD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-3;
const GRAD_POINT_BOUND: f64 = 0.9;
/// Coarser step reported alongside the gated one; it does not affect the verdict.
const GRAD_DIAG_STEP: f64 = 1e-4;

// criterion 2
const RECIPROCITY_TOL: f64 = 1e-12;
const STABILITY_DRAWS: usize = 10_000;
const PATH_AGREEMENT_TOL: f64 = 1e-9;

// criteria 4, 5, 6, 8
const ROOM_SEED: u64 = 1;
const MIN_ORDERS: f64 = 4.0;
const MAX_SIGMA: f64 = 0.1;
/// `BiasNet <~ FD8192`: same order of magnitude.
const SIMILAR_FACTOR: f64 = 10.0;
const ENERGY_TOL: f64 = 0.1;
const BIAS_ONLY_FACTOR: f64 = 10.0;
/// Relative agreement between reported and reference-simulated MSE.
const ORACLE_TOL: f64 = 1e-6;
const LONG_N: usize = 1 << 16;
const ADVERSARIAL_ITERS: usize = 2000;

// criterion 9
const ROUND_TRIP_TOL: f64 = 1e-12;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn scene_with_range(s: usize, m: usize, seed: u64, lo: f64, hi: f64) -> Scene {
    let mut spec = SynthSpec::new(s, m, seed);
    spec.f_low = lo;
    spec.f_high = hi;
    preprocess(&synth_scene(&spec).unwrap()).unwrap()
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let band_ranges = [(3usize, 630.0, 1000.0), (8, 400.0, 2000.0), (22, 100.0, 14_000.0)];
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut worst_noise = 0.0f64;
    let mut worst_coarse = 0.0f64;
    let mut failures = 0;
    let mut combos = BTreeMap::new();
    for i in 0..GRAD_SCENES {
        let s = [1, 2, 4][i % 3];
        let m = [1, 2][(i / 3) % 2];
        let (nb, lo, hi) = band_ranges[(i / 6) % 3];
        let scene = scene_with_range(s, m, 1000 + i as u64, lo, hi);
        let obj = Objective::for_scene(&scene).unwrap();
        assert_eq!(obj.bands().len(), nb);
        *combos.entry((s, m, nb)).or_insert(0) += 1;
        let p = common::uniform(obj.param_len(), GRAD_POINT_BOUND, 2000 + i as u64);
        let analytic = analytic_gradient(&obj, &p).unwrap();
        let numeric = common::central_diff(|x| obj.loss(x).unwrap().total, &p, GRAD_STEP);
        let coarse = common::central_diff(|x| obj.loss(x).unwrap().total, &p, GRAD_DIAG_STEP);
        let loss = obj.loss(&p).unwrap().total;
        let mut scene_worst = 0.0f64;
        for (j, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(GRAD_FLOOR);
            let e = (a - n).abs() / denom;
            worst_coarse = worst_coarse.max((a - coarse[j]).abs() / a.abs().max(coarse[j].abs()).max(GRAD_FLOOR));
            if e > scene_worst {
                scene_worst = e;
            }
            if e > worst {
                worst = e;
                // machine epsilon of the loss divided by the step, relative to the same denominator
                worst_noise = f64::EPSILON * loss.abs() / (2.0 * GRAD_STEP) / denom;
                worst_at = format!("scene {i} (S={s} M={m} bands={nb}) component {j} ({:?})", obj.ranges().class_of(j));
            }
        }
        if !(scene_worst < GRAD_TOL) {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures == 0 && combos.len() == 18,
        format!(
            "{GRAD_SCENES} scenes over {} (S, M, bands) combinations, step {GRAD_STEP:e}: worst relative error {worst:.2e} at {worst_at}, where a relative loss error of machine epsilon alone gives {worst_noise:.1e}; {failures} scenes over {GRAD_TOL:e}; step {GRAD_DIAG_STEP:e} worst {worst_coarse:.1e}; {secs:.0} s",
            combos.len()
        ),
    )
}

fn c2_filters() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = FrequencyGrid::new(8192, FS).unwrap();

    let mut unity_ok = true;
    for fc in [20.0, 100.0, 1000.0, 5000.0, 15_000.0, 23_000.0] {
        for q in [0.05, 0.5, 1.0, 5.0] {
            let c = design_peaking_section(fc, q, 0.0, FS).unwrap();
            unity_ok &= c.b0 == 1.0 && c.a0 == 1.0 && c.b1 == c.a1 && c.b2 == c.a2;
            let h = SosCascade { gain_db: 0.0, sections: vec![c] }.response(&grid);
            unity_ok &= h.iter().all(|v| *v == Complex64::new(1.0, 0.0));
        }
    }

    let mut recip_err = 0.0f64;
    let mut recip_at = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let fc = rng.gen_range(20.0..20_000.0);
        let q = rng.gen_range(0.05..5.0);
        let g = rng.gen_range(0.0..20.0);
        let pair = SosCascade {
            gain_db: 0.0,
            sections: vec![
                design_peaking_section(fc, q, g, FS).unwrap(),
                design_peaking_section(fc, q, -g, FS).unwrap(),
            ],
        };
        for v in pair.response(&grid) {
            if (v - 1.0).norm() > recip_err {
                recip_err = (v - 1.0).norm();
                recip_at = (fc, q, g);
            }
        }
    }

    let mut max_pole = 0.0f64;
    for _ in 0..STABILITY_DRAWS {
        let fc = rng.gen_range(10.0..0.49 * FS);
        let q = rng.gen_range(0.05..5.0);
        let g = rng.gen_range(-20.0..20.0);
        max_pole = max_pole.max(design_peaking_section(fc, q, g, FS).unwrap().max_pole_modulus());
    }

    let n = 1 << 17;
    let long = FrequencyGrid::new(n, FS).unwrap();
    let mut path_err = 0.0f64;
    let ranges = ParamRanges::with_bands(make_bands(100.0, 14_000.0, &grid).unwrap().fc_ranges()).unwrap();
    for _ in 0..10 {
        let eq = Equalizer {
            gain_db: rng.gen_range(-20.0..20.0),
            sections: ranges
                .fc_bands
                .iter()
                .enumerate()
                .map(|(b, r)| ParametricSection {
                    fc: rng.gen_range(r.lo..r.hi),
                    q: rng.gen_range(0.05..5.0),
                    gain_db: rng.gen_range(-10.0..10.0),
                    band: b,
                })
                .collect(),
        };
        let cascade = eq.cascade(FS).unwrap();
        let mut impulse = vec![0.0; n];
        impulse[0] = 1.0;
        let time = cascade.filter(&impulse);
        let mut buf: Vec<Complex64> = time.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        for (a, b) in buf.iter().zip(cascade.response(&long)) {
            path_err = path_err.max((a - b).norm() / b.norm());
        }
    }

    verdict(
        unity_ok && recip_err <= RECIPROCITY_TOL && max_pole < 1.0 && path_err <= PATH_AGREEMENT_TOL,
        format!(
            "0 dB unity exact: {unity_ok}; boost x cut max |H-1| {recip_err:.1e} (tol {RECIPROCITY_TOL:e}) at fc {:.0} Hz Q {:.2} {:.1} dB; max pole modulus over {STABILITY_DRAWS} draws {max_pole:.6}; time vs frequency path max relative error {path_err:.1e} (tol {PATH_AGREEMENT_TOL:e})",
            recip_at.0, recip_at.1, recip_at.2
        ),
    )
}

fn c3_counts() -> Verdict {
    let grid = FrequencyGrid::new(8192, FS).unwrap();
    let b22 = make_bands(100.0, 14_000.0, &grid).unwrap();
    let b29 = make_bands(20.0, 14_000.0, &grid).unwrap();
    let edges_match = [(&b22, band_edges(100.0, 14_000.0)), (&b29, band_edges(20.0, 14_000.0))]
        .iter()
        .all(|(set, want)| {
            set.len() == want.len()
                && set
                    .bands()
                    .iter()
                    .zip(want)
                    .all(|(b, (lo, hi))| rel(b.lo, *lo) < 1e-12 && rel(b.hi, *hi) < 1e-12)
        });
    let params = ParamRanges::with_bands(b22.fc_ranges()).unwrap().param_len(8);
    verdict(
        b22.len() == 22 && b29.len() == 29 && params == 536 && edges_match,
        format!(
            "100 Hz-14 kHz: {} bands; 20 Hz-14 kHz: {} bands; 8 sources x 22 bands: {params} parameters; edges match formula: {edges_match}",
            b22.len(),
            b29.len()
        ),
    )
}

struct RoomRuns {
    scene: Scene,
    outcomes: BTreeMap<String, Outcome>,
    bias_only: Outcome,
    times: BTreeMap<String, f64>,
    unequalized_mse: f64,
    unequalized_ref: f64,
}

fn room_runs() -> RoomRuns {
    let source = SceneSource::Synth(SynthSpec::room(ROOM_SEED));
    let raw = source.load().unwrap();
    let prepared = Prepared::new(&raw, source.describe(), None, 10.0).unwrap();
    let config = DesignConfig {
        scene: Some(source),
        methods: vec![Method::Biasnet, Method::Dsm, Method::Fd],
        fir_lens: vec![1024, 8192],
        ..DesignConfig::default()
    };
    let mut outcomes = BTreeMap::new();
    let mut times = BTreeMap::new();
    for m in &config.methods {
        let t = Instant::now();
        for o in prepared.run(*m, &config).unwrap() {
            outcomes.insert(o.label.clone(), o);
        }
        times.insert(m.name().to_string(), t.elapsed().as_secs_f64());
    }
    let bias_cfg = DesignConfig {
        biasnet: RunConfig {
            layers: vec![],
            ..RunConfig::default()
        },
        ..config.clone()
    };
    let t = Instant::now();
    let bias_only = prepared.run(Method::Biasnet, &bias_cfg).unwrap().remove(0);
    times.insert("bias-only".into(), t.elapsed().as_secs_f64());
    let unequalized_mse = outcomes["biasnet"].report.mse_unequalized;
    let n = prepared.objective.simulator().grid().size();
    let unequalized_ref = reference_mse(&reference_band_mags(&prepared.scene, Realized::None, n, LONG_N));
    RoomRuns {
        scene: prepared.scene,
        outcomes,
        bias_only,
        times,
        unequalized_mse,
        unequalized_ref,
    }
}

fn iir_cascades(o: &Outcome, fs: f64) -> Vec<SosCascade> {
    match &o.design {
        Design::Iir { equalizers, .. } => equalizers.iter().map(|e| e.cascade(fs).unwrap()).collect(),
        Design::Fir { .. } => panic!("{} is not an IIR design", o.label),
    }
}

/// MSE of a design recomputed through the reference simulation.
fn reference_mse_of(room: &RoomRuns, o: &Outcome) -> f64 {
    let n = 8192;
    let mags = match &o.design {
        Design::Iir { .. } => {
            let c = iir_cascades(o, room.scene.fs);
            reference_band_mags(&room.scene, Realized::Iir(&c), n, LONG_N)
        }
        Design::Fir { filters } => {
            let taps: Vec<Vec<f64>> = filters.iter().map(|f| f.taps.clone()).collect();
            reference_band_mags(&room.scene, Realized::Fir(&taps), n, LONG_N)
        }
    };
    reference_mse(&mags)
}

fn c4_efficacy(room: &RoomRuns) -> Verdict {
    let o = &room.outcomes["biasnet"];
    let c = iir_cascades(o, room.scene.fs);
    let mags = reference_band_mags(&room.scene, Realized::Iir(&c), 8192, LONG_N);
    let mse = reference_mse(&mags);
    let sigma = reference_sigma(&mags, 10.0);
    let orders = (room.unequalized_ref / mse).log10();
    let agree = rel(o.report.mse_avg, mse) < ORACLE_TOL
        && rel(room.unequalized_mse, room.unequalized_ref) < ORACLE_TOL
        && rel(o.report.sigma_avg, sigma) < ORACLE_TOL;
    verdict(
        orders >= MIN_ORDERS && sigma <= MAX_SIGMA && agree && room.unequalized_ref > 0.01,
        format!(
            "8x2 room scene: no-EQ MSE {:.3e} -> BiasNet {:.3e} ({orders:.2} orders, need {MIN_ORDERS}); sigma {sigma:.4} (max {MAX_SIGMA}); best at iteration {} of {}; reference simulation agrees: {agree}; {:.0} s",
            room.unequalized_ref,
            mse,
            match &o.design {
                Design::Iir { history, .. } => history
                    .iter()
                    .min_by(|a, b| a.total.total_cmp(&b.total))
                    .map_or(0, |h| h.iteration),
                _ => 0,
            },
            o.report.iterations,
            room.times["biasnet"]
        ),
    )
}

fn c5_ordering(room: &RoomRuns) -> Verdict {
    let mut mse = BTreeMap::new();
    let mut agree = true;
    for (label, o) in &room.outcomes {
        let m = reference_mse_of(room, o);
        agree &= rel(o.report.mse_avg, m) < ORACLE_TOL;
        mse.insert(label.as_str(), m);
    }
    let dsm_monotone = match &room.outcomes["dsm"].design {
        Design::Iir { history, .. } => {
            // one entry for the start plus one per iteration
            history.len() == room.outcomes["dsm"].report.iterations + 1
                && history.windows(2).all(|w| w[1].total <= w[0].total)
        }
        _ => false,
    };
    let (b, f8, f1, d) = (mse["biasnet"], mse["fd8192"], mse["fd1024"], mse["dsm"]);
    let ordered = b <= SIMILAR_FACTOR * f8 && f8 < f1 && f1 < d && d < room.unequalized_ref;
    verdict(
        ordered && dsm_monotone && agree,
        format!(
            "BiasNet {b:.3e} <~ FD8192 {f8:.3e} (ratio {:.2}, allowed {SIMILAR_FACTOR}) < FD1024 {f1:.3e} < DSM {d:.3e} < no-EQ {:.3e}; DSM history non-increasing over {} iterations: {dsm_monotone}; reference simulation agrees: {agree}",
            b / f8,
            room.unequalized_ref,
            room.outcomes["dsm"].report.iterations
        ),
    )
}

fn identity(n: usize) -> Vec<SosCascade> {
    vec![
        SosCascade {
            gain_db: 0.0,
            sections: vec![]
        };
        n
    ]
}

/// Two sources, two mics; each source dominates one mic and the second one
/// sits 12 dB lower, so flattening both mics alone must shift the balance.
fn adversarial_scene() -> Scene {
    let mut raw = synth_scene(&SynthSpec::new(2, 2, 11)).unwrap();
    for (s, m, gain) in [(0, 1, 0.1), (1, 0, 0.1), (1, 1, 0.25)] {
        raw.rirs[s][m].iter_mut().for_each(|v| *v *= gain);
    }
    raw
}

fn energy_deviation(scene: &Scene, o: &Outcome) -> f64 {
    let before = reference_path_energies(scene, &identity(scene.n_sources()), LONG_N);
    let after = reference_path_energies(scene, &iir_cascades(o, scene.fs), LONG_N);
    max_ratio_deviation(&before, &after, scene.reference_source)
}

fn c6_energy(room: &RoomRuns) -> Verdict {
    let room_dev = energy_deviation(&room.scene, &room.outcomes["biasnet"]);
    let raw = adversarial_scene();
    let cfg = DesignConfig {
        biasnet: RunConfig {
            iterations: ADVERSARIAL_ITERS,
            ..RunConfig::default()
        },
        ..DesignConfig::default()
    };
    let run = |g2: Option<f64>| {
        let p = Prepared::new(&raw, "adversarial".into(), g2, 10.0).unwrap();
        let o = p.run(Method::Biasnet, &cfg).unwrap().remove(0);
        (energy_deviation(&p.scene, &o), o.report.max_energy_ratio_deviation, p.objective.gammas().1)
    };
    let (off, off_reported, _) = run(Some(0.0));
    let (on, _, g2_default) = run(None);
    let reported = room.outcomes["biasnet"].report.max_energy_ratio_deviation;
    verdict(
        room_dev < ENERGY_TOL && off > ENERGY_TOL && (reported - room_dev).abs() < 1e-3 && (off_reported - off).abs() < 1e-3,
        format!(
            "8x2 room, gamma2 4: max |r'-r|/r {room_dev:.4} (< {ENERGY_TOL}); adversarial 2x2 with gamma2 0: {off:.3} (> {ENERGY_TOL}), with default gamma2 {g2_default}: {on:.4}"
        ),
    )
}

fn c7_ops() -> Verdict {
    let got = [
        fir_ops_per_sample(8192),
        fir_ops_per_sample(1024),
        sos_ops_per_sample(22),
        sos_ops_per_sample(29),
    ];
    verdict(
        got == [16383, 2047, 198, 261],
        format!("FIR 8192: {}, FIR 1024: {}, 22 SOS: {}, 29 SOS: {}", got[0], got[1], got[2], got[3]),
    )
}

fn c8_architecture(room: &RoomRuns) -> Verdict {
    let default = reference_mse_of(room, &room.outcomes["biasnet"]);
    let bias_only = reference_mse_of(room, &room.bias_only);
    let big = Network::init(&[1024, 512, 256, 128], 536, 0, 1.0, false).unwrap().param_count();
    let small = Network::init(&[256], 536, 0, 1.0, false).unwrap().param_count();
    let same_iters = room.bias_only.report.iterations == room.outcomes["biasnet"].report.iterations;
    verdict(
        bias_only > BIAS_ONLY_FACTOR * default && big == 758_784 && small == 137_728 && same_iters,
        format!(
            "bias-only MSE {bias_only:.3e} vs default {default:.3e} (ratio {:.0}, need > {BIAS_ONLY_FACTOR}) at {} iterations each; parameters (1024,512,256,128): {big}, (256): {small}",
            bias_only / default,
            room.bias_only.report.iterations
        ),
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c9_determinism() -> Verdict {
    let mut spec = SynthSpec::new(2, 2, 5);
    spec.f_low = 200.0;
    spec.f_high = 6000.0;
    let config = DesignConfig {
        scene: Some(SceneSource::Synth(spec)),
        methods: vec![Method::Biasnet, Method::Dsm, Method::Fd],
        fir_lens: vec![1024, 8192],
        biasnet: RunConfig {
            iterations: 300,
            layers: vec![128, 64],
            seed: 9,
            ..RunConfig::default()
        },
        dsm: eqopt::baselines::DsmConfig {
            iterations: 300,
            seed: 9,
            ..Default::default()
        },
        ..DesignConfig::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    let mut prepared = None;
    for d in &dirs {
        let (p, outcomes) = design(&config).unwrap();
        write_run(d, &config, &p, &outcomes).unwrap();
        prepared = Some((p, outcomes));
    }
    let (a, b) = (read_tree(&dirs[0]), read_tree(&dirs[1]));
    let identical = !a.is_empty() && a == b;

    let (p, outcomes) = prepared.unwrap();
    let mut max_diff = 0.0f64;
    for o in &outcomes {
        let again = evaluate_exported(&p, &dirs[0].join(&o.label), RunInfo::from_report(&o.report)).unwrap();
        let pairs = [
            (vec![o.report.mse_avg, o.report.sigma_avg, o.report.max_energy_ratio_deviation], vec![
                again.mse_avg,
                again.sigma_avg,
                again.max_energy_ratio_deviation,
            ]),
            (o.report.mse_per_mic.clone(), again.mse_per_mic.clone()),
            (o.report.sigma_per_mic.clone(), again.sigma_per_mic.clone()),
            (
                o.report.curves_after_db.concat(),
                again.curves_after_db.concat(),
            ),
        ];
        for (x, y) in pairs {
            assert_eq!(x.len(), y.len());
            for (u, v) in x.iter().zip(&y) {
                max_diff = max_diff.max((u - v).abs());
            }
        }
    }
    verdict(
        identical && max_diff <= ROUND_TRIP_TOL,
        format!(
            "two runs, {} files each, byte-identical: {identical}; re-evaluation of exported filters ({} methods) max abs metric difference {max_diff:.1e} (tol {ROUND_TRIP_TOL:e})",
            a.len(),
            outcomes.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut emit = |id: u32, name: &'static str, v: Verdict| {
        println!("criterion {id} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    emit(1, "gradient exactness", c1_gradients());
    emit(2, "filter identities", c2_filters());
    emit(3, "band and parameter counts", c3_counts());
    let room = room_runs();
    emit(4, "optimization efficacy", c4_efficacy(&room));
    emit(5, "method ordering", c5_ordering(&room));
    emit(6, "energy-balance regularization", c6_energy(&room));
    emit(7, "cost accounting", c7_ops());
    emit(8, "architecture sensitivity", c8_architecture(&room));
    emit(9, "determinism and round trip", c9_determinism());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {failed:?}")
        }
    );
    let strict = std::env::var("EQOPT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed.is_empty() || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
