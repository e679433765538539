//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use memwave::config::{Profile, RunConfig};
use memwave::delay::{check_admissibility, delayed_feedback, make_delay_line, DelayCoefficient};
use memwave::diagnostics::{
    estimate_semigroup_constants, fit_decay, lemma_bound_check, ConstantsSettings,
};
use memwave::integrator::{initial_state, run, step, Couplings, InitialData, Model, RunSettings, Stepper, Termination};
use memwave::kernels::{validate_kernel, KernelTable, MemoryKernel};
use memwave::memory::{init_history, memory_convolution, oracle_convolution, HistoryMode, HistorySettings};
use memwave::pipeline::{execute, prepare, run_config, validate, Prepared};
use memwave::spectral::{Field, ProblemKind, SpectralProblem};
use nalgebra::Matrix3;

const CONSERVATION_TOL: f64 = 1e-8;
const DISSIPATION_ALLOWANCE: f64 = 10.0; // × dt² × E(0), per step
const OMEGA_REL_TOL: f64 = 0.05;
const ORACLE_REL_TOL: f64 = 1e-4;
const MODES_REL_TOL: f64 = 1e-5;
const LEMMA_SLACK: f64 = 1e-6;
const FIT_RMS_MAX: f64 = 0.1;
const ENVELOPE_SLACK: f64 = 0.1;
const ORDER_TARGET: f64 = 4.0;
const ORDER_REL_TOL: f64 = 0.2;
const SUPERCRITICAL_FACTOR: f64 = 10.0;

const SMALL_DATA: &str = include_str!("../../../configs/small_data.toml");

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn wave(k: usize, support: (f64, f64)) -> SpectralProblem {
    SpectralProblem::new(ProblemKind::Wave, PI, k, support, 2.0).unwrap()
}

fn settings(dt: f64, t_end: f64, stride: usize) -> RunSettings {
    RunSettings {
        dt,
        t_end,
        sample_stride: stride,
        stop_on_lower_bound_loss: false,
        keep_snapshots: false,
    }
}

fn regime_config() -> RunConfig {
    RunConfig::from_toml_str(SMALL_DATA).unwrap()
}

fn conservation() -> Verdict {
    let model = Model {
        problem: wave(8, (0.0, PI)),
        kernel: MemoryKernel::exponential(0.5, 1.0).unwrap(),
        coeff: DelayCoefficient::zero(),
        tau: 0.1,
        couplings: Couplings::none(),
    };
    let u0 = Field::from_modal((1..=8).map(|k| 0.3 / k as f64).collect());
    let u1 = Field::from_modal((1..=8).map(|k| if k % 2 == 0 { 0.2 } else { -0.1 }).collect());
    let hist = move |_s: f64| Ok(u0.clone());
    let g = |_t: f64| Field::zeros(8);
    let dt = 1e-3;
    let state = initial_state(
        &model,
        &InitialData {
            u0_history: &hist,
            u1,
            g: &g,
        },
        dt,
        HistoryMode::PronyOde,
        &HistorySettings::default(),
    )
    .unwrap();
    let tr = run(&model, state, &settings(dt, 20.0, 100)).unwrap();
    let e0 = tr.rows[0].energy.total;
    let worst = tr.rows.iter().map(|r| (r.energy.total / e0 - 1.0).abs()).fold(0.0, f64::max);
    check(
        worst <= CONSERVATION_TOL && tr.termination == Termination::Completed,
        format!("max |E/E0 - 1| = {worst:.3e} over {} samples (tol {CONSERVATION_TOL:e})", tr.rows.len()),
    )
}

fn dissipation() -> Verdict {
    let model = Model {
        problem: wave(8, (0.0, PI)),
        kernel: MemoryKernel::exponential(0.5, 1.0).unwrap(),
        coeff: DelayCoefficient::zero(),
        tau: 0.1,
        couplings: Couplings::linear(),
    };
    let u0 = Field::from_modal((1..=8).map(|k| 0.5 / k as f64).collect());
    let hist = move |s: f64| Ok(u0.scaled(1.0 + 0.2 * s * (-s).exp()));
    let g = |_t: f64| Field::zeros(8);
    let dt = 1e-3;
    let state = initial_state(
        &model,
        &InitialData {
            u0_history: &hist,
            u1: Field::mode(8, 3, 0.4),
            g: &g,
        },
        dt,
        HistoryMode::PronyOde,
        &HistorySettings::default(),
    )
    .unwrap();
    let tr = run(&model, state, &settings(dt, 20.0, 1)).unwrap();
    let trace = tr.energy_trace();
    let e0 = trace[0].1;
    let allowance = DISSIPATION_ALLOWANCE * dt * dt * e0;
    let worst = trace.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
    let fit = fit_decay(&trace).map_err(|e| e.to_string())?;
    check(
        worst <= allowance && fit.beta > 0.0,
        format!(
            "max per-step increase {worst:.3e} (allowance {allowance:.3e}), fitted beta = {:.4}",
            fit.beta
        ),
    )
}

fn semigroup_constants() -> Verdict {
    let (a, d, lambda, mu_tilde) = (0.5, 1.0, 1.0, 0.5);
    // u' = v, v' = −(1−μ̃)λu − λy, y' = (a/d)v − dy
    let m = Matrix3::new(
        0.0,
        1.0,
        0.0,
        -(1.0 - mu_tilde) * lambda,
        0.0,
        -lambda,
        0.0,
        a / d,
        -d,
    );
    let abscissa = m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let model = Model {
        problem: wave(1, (0.0, PI)),
        kernel: MemoryKernel::exponential(a, d).unwrap(),
        coeff: DelayCoefficient::zero(),
        tau: 0.1,
        couplings: Couplings::linear(),
    };
    let c = estimate_semigroup_constants(&model, &ConstantsSettings::default()).map_err(|e| e.to_string())?;
    let rel = (c.omega + abscissa).abs() / abscissa.abs();
    check(
        rel <= OMEGA_REL_TOL && c.m >= 1.0,
        format!(
            "fitted omega = {:.5}, spectral abscissa = {abscissa:.5}, rel. error {rel:.3e} (tol {OMEGA_REL_TOL}), M = {:.4}",
            c.omega, c.m
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let k = 4;
    let model = Model {
        problem: wave(k, (0.0, PI)),
        kernel: MemoryKernel::exponential(0.5, 1.0).unwrap(),
        coeff: DelayCoefficient::zero(),
        tau: 0.1,
        couplings: Couplings::linear(),
    };
    let p = &model.problem;
    let base = Field::from_modal(vec![0.4, -0.2, 0.1, 0.05]);
    let sampler = {
        let base = base.clone();
        move |s: f64| Ok(base.scaled((-0.5 * s).exp() * s.cos()))
    };
    let g = |_t: f64| Field::zeros(k);
    let dt = 1e-3;
    let hs = HistorySettings::default();
    let mut state = initial_state(
        &model,
        &InitialData {
            u0_history: &sampler,
            u1: Field::mode(k, 2, 0.3),
            g: &g,
        },
        dt,
        HistoryMode::PronyOde,
        &hs,
    )
    .unwrap();
    let mut transport = init_history(p, &model.kernel, &sampler, HistoryMode::Transport, dt, &hs).unwrap();
    let stepper = Stepper::new(&model, dt);
    let n_steps = 5000;
    let mut traj = vec![state.u.clone()];
    let rel = |a: &Field, b: &Field| (a - b).max_abs() / b.max_abs();
    let (mut worst_prony, mut worst_transport, mut worst_mutual) = (0.0f64, 0.0f64, 0.0f64);
    for n in 0..=n_steps {
        if n % 50 == 0 {
            let oracle = oracle_convolution(p, &model.kernel, &traj, dt, &sampler, n).unwrap();
            let cp = memory_convolution(p, &state.hist);
            let ct = memory_convolution(p, &transport);
            worst_prony = worst_prony.max(rel(&cp, &oracle));
            worst_transport = worst_transport.max(rel(&ct, &oracle));
            worst_mutual = worst_mutual.max(rel(&ct, &cp));
        }
        if n == n_steps {
            break;
        }
        let before = state.u.clone();
        step(&model, &stepper, &mut state).unwrap();
        transport.advance(&(&state.u - &before).scaled(1.0 / dt), dt);
        traj.push(state.u.clone());
    }
    check(
        worst_prony <= ORACLE_REL_TOL && worst_transport <= ORACLE_REL_TOL && worst_mutual <= MODES_REL_TOL,
        format!(
            "vs oracle: prony {worst_prony:.3e}, transport {worst_transport:.3e} (tol {ORACLE_REL_TOL:e}); mutual {worst_mutual:.3e} (tol {MODES_REL_TOL:e})"
        ),
    )
}

fn delay_exactness() -> Verdict {
    let k = 6;
    let p = wave(k, (0.4, 2.1));
    let dt = 0.01;
    let m = 10;
    let tau = m as f64 * dt;
    let coeff = DelayCoefficient::ExponentialDecay { k0: 0.7, rate: 0.3 };
    let g_field = |t: f64| Field::from_modal((1..=k).map(|j| (j as f64 * t).sin() + 0.1).collect());
    let mut line = make_delay_line(&p, &g_field, tau, dt).unwrap();
    let sawtooth = |n: usize| {
        let phase = (n % 7) as f64 / 7.0;
        Field::from_modal((1..=k).map(|j| phase * j as f64 - 0.5).collect())
    };
    let mut mismatches = 0;
    let mut checked = 0;
    for n in 0..200 {
        line.push(n, p.apply_b(&sawtooth(n))).unwrap();
        let t = n as f64 * dt;
        let got = delayed_feedback(&p, &line, &coeff, n).unwrap();
        let source = if n >= m {
            sawtooth(n - m)
        } else {
            g_field((n as f64 - m as f64) * dt)
        };
        let expect = p.apply_b(&p.apply_b(&source)).scaled(coeff.eval(t));
        checked += 1;
        if got.modal() != expect.modal() {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{mismatches} of {checked} steps differ bit-wise (tau = {m} dt)"),
    )
}

fn regime_run(scale: f64) -> (Prepared, memwave::pipeline::Outcome) {
    let mut cfg = regime_config();
    cfg.initial.scale = scale;
    cfg.integrator.sample_stride = 1;
    run_config(&cfg, false).unwrap()
}

fn lemma_bound() -> Verdict {
    let (prep, out) = regime_run(1.0);
    let theory = out.report.validation.theory.clone().ok_or("no theory report")?;
    let trace = out.trajectory.energy_trace();
    let lemma = lemma_bound_check(&trace, &prep.model.active_coeff(), prep.model.b(), prep.model.tau, prep.dt)
        .map_err(|e| e.to_string())?;
    let e0 = trace[0].1;
    let bound_factor = 1.0 + LEMMA_SLACK + 10.0 * prep.dt * prep.dt;
    let all_bounded = out
        .trajectory
        .rows
        .iter()
        .all(|r| r.energy.total <= r.cbar * e0 * bound_factor);
    let lb = out.report.lb_all_hold;
    check(
        theory.data_small && all_bounded && lemma.pass && lb,
        format!(
            "data small = {}, max E/(Cbar E0) - 1 = {:.3e} (allowance {:.3e}), lower bounds hold at all {} samples = {lb}",
            theory.data_small,
            lemma.max_violation,
            lemma.allowance,
            trace.len()
        ),
    )
}

fn decay_theorem() -> Verdict {
    let (mut prep, mut out) = regime_run(1.0);
    let mut theory = out.report.validation.theory.clone().ok_or("no theory report")?;
    let mut rescaled = 1.0;
    if !theory.applicable && theory.deficit.is_finite() && theory.deficit > 0.0 {
        rescaled = 0.9 / theory.deficit;
        (prep, out) = regime_run(rescaled);
        theory = out.report.validation.theory.clone().ok_or("no theory report")?;
    }
    let t_end = prep.config.integrator.t_end;
    let fit = out.report.fit.ok_or_else(|| out.report.fit_error.clone().unwrap_or_default())?;
    let worst_envelope = out
        .trajectory
        .rows
        .iter()
        .map(|r| r.norm_u / theory.decay_envelope(r.t))
        .fold(0.0, f64::max);
    let envelope_ok = !theory.applicable || worst_envelope <= 1.0 + ENVELOPE_SLACK;
    check(
        t_end >= 50.0 && fit.beta > 0.0 && fit.residual_rms < FIT_RMS_MAX && envelope_ok && theory.applicable,
        format!(
            "T = {t_end}, beta = {:.4}, rms = {:.4} (max {FIT_RMS_MAX}), applicable = {} (scale {rescaled}), max |U|/envelope = {worst_envelope:.4}, certified rate {:.4}",
            fit.beta, fit.residual_rms, theory.applicable, theory.predicted_rate
        ),
    )
}

fn convergence_order() -> Verdict {
    let cfg = RunConfig::from_toml_str(
        r#"
[problem]
kind = "wave"
modes = 8
sigma = 2.0
feedback = [0.3, 1.9]

[kernel]
form = "exp"
a = 0.5
d = 1.0

[delay]
tau = 0.1
coefficient = { form = "expdecay", k0 = 0.4, rate = 0.5 }

[initial]
u0 = { kind = "bump", center = 1.4, width = 1.2, amplitude = 0.6 }
history = { kind = "ramp_history", rate = 0.2 }
u1 = { kind = "mode", k = 2, amplitude = 0.3 }

[integrator]
dt = 0.01
t_end = 2.0
sample_stride = 1000000
"#,
    )
    .unwrap();
    let terminal = |dt: f64| {
        let mut c = cfg.clone();
        c.integrator.dt = dt;
        let prep = prepare(&c).unwrap();
        let mut state = prep.initial_state().unwrap();
        let stepper = Stepper::new(&prep.model, prep.dt);
        let n = (c.integrator.t_end / prep.dt).round() as usize;
        for _ in 0..n {
            step(&prep.model, &stepper, &mut state).unwrap();
        }
        (prep, state)
    };
    let (prep, reference) = terminal(1e-4);
    let err = |dt: f64| {
        let (_, s) = terminal(dt);
        let p = &prep.model.problem;
        (p.a_half_norm_sq(&(&s.u - &reference.u)) + p.h_norm_sq(&(&s.v - &reference.v))).sqrt()
    };
    let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
    let (r1, r2) = (e1 / e2, e2 / e3);
    let within = |r: f64| (r - ORDER_TARGET).abs() <= ORDER_REL_TOL * ORDER_TARGET;
    check(
        within(r1) && within(r2),
        format!("errors {e1:.3e}, {e2:.3e}, {e3:.3e}; ratios {r1:.3}, {r2:.3} (target {ORDER_TARGET} ± {}%)", ORDER_REL_TOL * 100.0),
    )
}

fn hypothesis_validators() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    let r = validate_kernel(&MemoryKernel::exponential(0.5, 1.0).unwrap());
    let pass1 = r.mu0 == 0.5 && (r.mu_tilde - 0.5).abs() < 1e-14 && (r.delta - 1.0).abs() < 1e-14 && r.usable;
    ok &= pass1;
    notes.push(format!("0.5e^-s usable={}", r.usable));

    let r = validate_kernel(&MemoryKernel::exponential(2.0, 1.0).unwrap());
    let pass2 = (r.mu_tilde - 2.0).abs() < 1e-14 && r.failures() == vec!["(iii)"];
    ok &= pass2;
    notes.push(format!("2e^-s fails {:?}", r.failures()));

    let n = 4001;
    let s: Vec<f64> = (0..n).map(|i| i as f64 * 40.0 / (n - 1) as f64).collect();
    let mu = s.iter().map(|s| (1.0 + s) * (-s).exp()).collect();
    let dmu = s.iter().map(|s| -s * (-s).exp()).collect();
    let r = validate_kernel(&MemoryKernel::tabulated(KernelTable::new(s, mu, dmu).unwrap()));
    let pass3 = !r.exponential_decay && r.failures().contains(&"(iv)");
    ok &= pass3;
    notes.push(format!("(1+s)e^-s fails {:?}", r.failures()));

    let (tau, b, m, omega) = (0.1, 1.0, 1.2, 0.5);
    let a = check_admissibility(&DelayCoefficient::zero(), tau, b, m, omega, 0.0).unwrap();
    let pass4 = a.admissible && a.gamma == 0.0 && a.c_star == 0.0;
    ok &= pass4;
    notes.push(format!("k=0 admissible={} gamma={}", a.admissible, a.gamma));

    let k0 = 0.05;
    let slope = b * b * m * (omega * tau).exp() * k0;
    let c = DelayCoefficient::Constant { k0 };
    let above = check_admissibility(&c, tau, b, m, omega, slope * 1.01).unwrap();
    let below = check_admissibility(&c, tau, b, m, omega, slope * 0.99).unwrap();
    let pass5 = above.admissible && above.gamma == 0.0 && (above.c_star - k0 * tau).abs() < 1e-15 && !below.admissible;
    ok &= pass5;
    notes.push(format!("const k0: above={} below={}", above.admissible, below.admissible));

    let e = DelayCoefficient::ExponentialDecay { k0: 1.0, rate: 1.0 };
    let a = check_admissibility(&e, tau, b, m, omega, 0.0).unwrap();
    let gamma = b * b * m * (omega * tau).exp() * (-tau).exp();
    let cstar = 1.0 - (-tau).exp();
    let pass6 = a.admissible && (a.gamma - gamma).abs() <= 1e-12 * gamma && (a.c_star - cstar).abs() <= 1e-12;
    ok &= pass6;
    notes.push(format!("e^-t gamma={:.6} C*={:.6}", a.gamma, a.c_star));

    check(ok, notes.join("; "))
}

fn supercritical_safety() -> Verdict {
    let base = regime_config();
    let prep = prepare(&base).unwrap();
    let v = validate(&prep).unwrap();
    let rho = v.theory.as_ref().ok_or("no theory report")?.rho;
    let mut cfg = base.clone();
    cfg.initial.u0 = Profile::Mode { k: 1, amplitude: 1.0 };
    cfg.initial.u1 = Profile::Zero;
    let unit = prepare(&cfg).unwrap();
    let unit_norm = memwave::diagnostics::state_norm(&unit.model, &unit.initial_state().unwrap());
    cfg.initial.scale = SUPERCRITICAL_FACTOR * rho / unit_norm;
    let mut notes = Vec::new();
    let mut ok = true;
    for stop in [false, true] {
        cfg.integrator.stop_on_lower_bound_loss = stop;
        let prep = prepare(&cfg).unwrap();
        let v = validate(&prep).unwrap();
        let out = match catch_unwind(AssertUnwindSafe(|| execute(&prep, v))) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => return Err(format!("run failed: {e}")),
            Err(_) => return Err("run panicked".into()),
        };
        let finite = out.trajectory.rows.iter().all(|r| {
            let e = &r.energy;
            [r.t, r.norm_u, r.cbar, e.total, e.kinetic, e.elastic, e.source, e.delay_window, e.memory]
                .iter()
                .all(|x| x.is_finite())
        });
        let clean = matches!(
            out.trajectory.termination,
            Termination::Diverged { .. } | Termination::EnergyPositivityLost { .. }
        );
        ok &= finite && clean;
        notes.push(format!("stop_on_lb_loss={stop}: {:?}, finite trace = {finite}", out.trajectory.termination));
    }
    check(ok, format!("rho = {rho:.4}, data norm = {:.4}; {}", SUPERCRITICAL_FACTOR * rho, notes.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("conservation", conservation),
        ("dissipation", dissipation),
        ("semigroup constants", semigroup_constants),
        ("oracle equivalence", oracle_equivalence),
        ("delay exactness", delay_exactness),
        ("lemma bound", lemma_bound),
        ("decay theorem", decay_theorem),
        ("convergence order", convergence_order),
        ("hypothesis validators", hypothesis_validators),
        ("supercritical safety", supercritical_safety),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = match catch_unwind(f) {
            Ok(v) => v,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
