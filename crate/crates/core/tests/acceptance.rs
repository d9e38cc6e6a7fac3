//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use fpfl_core::accountant::{calibrate_sigma, epsilon, rdp_per_step};
use fpfl_core::config::{Mode, RunConfig};
use fpfl_core::data::{shard_with_duplication, split_train_test, synthetic_adult, Batch, SyntheticConfig};
use fpfl_core::distill::{distill_sgd_step, mean_distill_loss, transfer_bound_check, TeacherSnapshot};
use fpfl_core::dp::{clip, ClippedSum, DpConfig, DpTrainState};
use fpfl_core::fairness::{phase1_loss, phase1_loss_and_grad, FairnessMetricKind, LagrangeState};
use fpfl_core::federation::{
    evaluate, model_dims, run_fpfl, train_fair, Agent, FairSgd, FairTrainState, FairTrajectory, FederatedData,
    FederationSetup, SharedParams, WireMessage, WirePayload, WIRE_FIELDS,
};
use fpfl_core::nn::{Mlp, Optimizer, ParamVector, SampleLoss, PROB_CLIP};
use fpfl_core::seed::{stream, Phase, Purpose};
use fpfl_core::{Phase1Config, Phase2Config, RunReport, TabularDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1. Transfer inequality

fn transfer_inequality() -> Outcome {
    let mut r = rng(1);
    let n = 1_000_000;
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let lo = PROB_CLIP;
    let hi = 1.0 - PROB_CLIP;
    let draw = |r: &mut ChaCha8Rng| -> f64 {
        // Half uniform, half log-uniform towards either edge.
        if r.random::<bool>() {
            r.random_range(lo..hi)
        } else {
            let e = 10f64.powf(r.random_range(-7.0..0.0)).clamp(lo, 0.5);
            if r.random::<bool>() { e } else { 1.0 - e }
        }
    };
    for _ in 0..n {
        let ps = draw(&mut r);
        let pt = draw(&mut r);
        let y = r.random_range(0..2u8);
        let b = transfer_bound_check(ps, pt, y);
        worst = worst.max(b.lhs - b.rhs);
        if !b.holds {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{n} triples, {violations} violations, max(lhs - rhs) = {worst:.3e}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Gradient oracle

const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

fn central_difference(params: &ParamVector, i: usize, f: &dyn Fn(&ParamVector) -> f64) -> f64 {
    let mut up = params.clone();
    up.0[i] += FD_STEP;
    let mut dn = params.clone();
    dn.0[i] -= FD_STEP;
    (f(&up) - f(&dn)) / (2.0 * FD_STEP)
}

fn random_model(r: &mut ChaCha8Rng, input: usize) -> Mlp {
    let depth = r.random_range(1..=2);
    let mut dims = vec![input];
    for _ in 0..depth {
        dims.push(r.random_range(2..=5));
    }
    dims.push(1);
    // Nonzero biases keep hidden pre-activations off the ReLU kink at exactly 0.
    let mut params = Mlp::new(&dims, r).unwrap().flatten();
    for p in &mut params.0 {
        *p += 0.1 * r.sample::<f64, _>(StandardNormal);
    }
    Mlp::unflatten(&dims, params).unwrap()
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn gradient_oracle() -> Outcome {
    let mut r = rng(2);
    let models = 120;
    let (mut checked, mut worst, mut failures) = (0usize, 0.0f64, 0usize);
    for _ in 0..models {
        let d = r.random_range(2..=4);
        let model = random_model(&mut r, d);
        let dims = model.dims().to_vec();
        let n = 12;
        let rows = random_rows(&mut r, n, d);
        // Every (group, label) cell is populated.
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        let x: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let batch = Batch {
            x: x.clone(),
            y: y.clone(),
            a: a.clone(),
        };
        let lambda = r.random_range(0.0..5.0);
        let params = model.params().clone();

        for kind in [FairnessMetricKind::DemP, FairnessMetricKind::Eo] {
            let mut grad = vec![0.0; params.len()];
            phase1_loss_and_grad(&model, &batch, kind, lambda, &mut grad).unwrap();
            let f = |p: &ParamVector| {
                let m = Mlp::unflatten(&dims, p.clone()).unwrap();
                phase1_loss(&m, &batch, kind, lambda).unwrap().total
            };
            for (i, &g) in grad.iter().enumerate() {
                let e = rel_err(g, central_difference(&params, i, &f));
                worst = worst.max(e);
                checked += 1;
                if e > FD_REL_TOL {
                    failures += 1;
                }
            }
        }

        let targets: Vec<f64> = (0..n).map(|_| r.random_range(0.01..0.99)).collect();
        let per = model.per_example_grads(&x, &targets, SampleLoss::Distill).unwrap();
        let mut grad = vec![0.0; params.len()];
        for g in per.iter() {
            for (acc, v) in grad.iter_mut().zip(&g.0) {
                *acc += v / n as f64;
            }
        }
        let f = |p: &ParamVector| mean_distill_loss(&Mlp::unflatten(&dims, p.clone()).unwrap(), &x, &targets).unwrap();
        for (i, &g) in grad.iter().enumerate() {
            let e = rel_err(g, central_difference(&params, i, &f));
            worst = worst.max(e);
            checked += 1;
            if e > FD_REL_TOL {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{models} models, {checked} partials (DemP, EO, distill), {failures} over tolerance, worst rel err {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. DP mechanism

fn dp_mechanism() -> Outcome {
    let mut r = rng(3);
    let c = 1.5;

    let mut clip_ok = true;
    let mut max_norm = 0.0f64;
    for _ in 0..10_000 {
        let dim = r.random_range(1..50);
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let g = ParamVector((0..dim).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect());
        let n = clip(&g, c).unwrap().l2_norm();
        max_norm = max_norm.max(n);
        clip_ok &= n <= c + 1e-12;
    }

    let mut max_sens = 0.0f64;
    let dim = 8;
    for _ in 0..10_000 {
        let size = r.random_range(1..20);
        let scale = 10f64.powf(r.random_range(-2.0..2.0));
        let grads: Vec<Vec<f64>> = (0..=size)
            .map(|_| (0..dim).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut with = ClippedSum::new(dim, c);
        let mut without = ClippedSum::new(dim, c);
        let drop = r.random_range(0..=size);
        for (k, g) in grads.iter().enumerate() {
            with.add(g).unwrap();
            if k != drop {
                without.add(g).unwrap();
            }
        }
        let diff: f64 = with
            .sum()
            .iter()
            .zip(without.sum())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        max_sens = max_sens.max(diff);
    }
    let sens_ok = max_sens <= c + 1e-12;

    let sigma = 1.1;
    let cfg = DpConfig {
        clip_norm: c,
        noise_multiplier: sigma,
        batch_size: 1,
        sample_rate: 1.0,
        lr: 1.0,
    };
    let draws = 100_000usize;
    let per = 100;
    let mut samples = Vec::with_capacity(draws);
    while samples.len() < draws {
        samples.extend(ClippedSum::new(per, c).finish(&cfg, &mut r).0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let target = sigma * c;
    let se = target / (2.0 * (n - 1.0)).sqrt();
    let noise_ok = (sd - target).abs() <= 3.0 * se;

    outcome(
        clip_ok && sens_ok && noise_ok,
        format!(
            "max clipped norm {max_norm:.6} (C = {c}); max neighbour sensitivity {max_sens:.6}; \
             noise sd {sd:.5} vs σC {target:.5} (3 SE = {:.5})",
            3.0 * se
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Accountant

fn accountant() -> Outcome {
    let mut exact = true;
    for &sigma in &[0.5, 0.8, 1.0, 1.7, 4.0] {
        for &alpha in &[1.25, 1.5, 2.0, 3.0, 10.0, 64.0, 256.0] {
            exact &= rdp_per_step(1.0, sigma, alpha).unwrap() == alpha / (2.0 * sigma * sigma);
        }
    }

    let sigmas = [0.6, 0.9, 1.3, 2.0, 4.0];
    let steps = [10u64, 50, 200, 800, 3000];
    let qs = [0.001, 0.01, 0.05, 0.2, 0.6];
    let delta = 1e-4;
    let eps = |q: f64, s: f64, t: u64| epsilon(q, s, t, delta).unwrap();
    let mut mono_fail = 0;
    for &q in &qs {
        for &t in &steps {
            for w in sigmas.windows(2) {
                mono_fail += usize::from(eps(q, w[0], t) <= eps(q, w[1], t));
            }
        }
    }
    for &q in &qs {
        for &s in &sigmas {
            for w in steps.windows(2) {
                mono_fail += usize::from(eps(q, s, w[1]) <= eps(q, s, w[0]));
            }
        }
    }
    for &s in &sigmas {
        for &t in &steps {
            for w in qs.windows(2) {
                mono_fail += usize::from(eps(w[1], s, t) <= eps(w[0], s, t));
            }
        }
    }

    // Shard of 10 000 rows, B = 500, 5 local epochs × 4 rounds.
    let q = 500.0 / 10_000.0;
    let t = 20 * (1.0f64 / q).ceil() as u64;
    let mut calib = Vec::new();
    let mut calib_ok = true;
    for target in [1.0, 3.0, 10.0] {
        let s = calibrate_sigma(q, t, delta, target).unwrap();
        let achieved = eps(q, s, t);
        let tight = eps(q, s * (1.0 - 1e-6), t) > target;
        calib_ok &= achieved <= target && tight;
        calib.push(format!("ε={target}: σ={s:.4} → {achieved:.6}"));
    }
    outcome(
        exact && mono_fail == 0 && calib_ok,
        format!(
            "q=1 closed form exact: {exact}; monotonicity failures {mono_fail}/300; calibration (q={q}, T={t}, δ=1e-4) {}",
            calib.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Degeneracy equivalence

fn one_step_equivalence() -> (bool, String) {
    let mut r = rng(5);
    let student = Mlp::new(&[4, 6, 3, 1], &mut r).unwrap();
    let teacher = Mlp::new(&[4, 6, 3, 1], &mut r).unwrap();
    let rows = random_rows(&mut r, 40, 4);
    let x: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let targets = TeacherSnapshot::new(teacher, &x).unwrap().outputs().to_vec();
    let lr = 0.25;
    let cfg = DpConfig::for_shard(1e12, 0.0, x.len(), x.len(), lr).unwrap();

    let mut dp = DpTrainState::new(student.clone(), rng(50), rng(51));
    let info = dp.sample_and_step(&x, &targets, &cfg).unwrap();
    let mut plain = student;
    distill_sgd_step(&mut plain, &x, &targets, lr).unwrap();

    let bits = |p: &ParamVector| p.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = info.realized == x.len() && bits(dp.model.params()) == bits(plain.params());
    (same, format!("one step on {} rows bit-identical: {same}", x.len()))
}

fn single_agent_equivalence() -> (bool, String) {
    let seed = 21;
    let ds = synthetic_adult(
        &SyntheticConfig {
            rows: 400,
            ..Default::default()
        },
        &mut rng(7),
    )
    .unwrap();
    let split = split_train_test(&ds, 0.2, &mut rng(8)).unwrap();
    let plan = shard_with_duplication(&split.train, 1, split.train.len(), &mut rng(9)).unwrap();
    let data = FederatedData {
        train: split.train.clone(),
        test: split.test.clone(),
        plan,
    };
    let setup = FederationSetup {
        hidden: vec![8, 4],
        seed,
        fairness: FairnessMetricKind::DemP,
        phase1: Phase1Config {
            epochs: 5,
            batch_size: 64,
            lr: 0.01,
            lambda_init: 2.0,
            ..Default::default()
        },
        phase2: Phase2Config {
            batch_size: 64,
            local_epochs: 2,
            rounds: 3,
            ..Default::default()
        },
        sigma: 0.0,
        delta: 1e-4,
    };
    let fed = match run_fpfl(&setup, &data).ok() {
        Ok(o) => o,
        Err(e) => return (false, format!("federated run failed: {e}")),
    };

    // Centralized two-phase training on the same rows, no agents, no messages.
    let rows = data.train.subset(&data.plan.shards[0]);
    let dims = model_dims(rows.n_features, &setup.hidden);
    let p1 = &setup.phase1;
    let mut teacher = Mlp::new(&dims, &mut stream(seed, 0, Phase::Fair, Purpose::Init)).unwrap();
    let mut opt = Optimizer::new(p1.optimizer, p1.lr, teacher.num_params());
    let mut lagrange = LagrangeState::new(p1.lambda_init, p1.lambda_max, p1.dual_lr).unwrap();
    train_fair(
        &mut teacher,
        &mut opt,
        &mut lagrange,
        &rows,
        FairSgd {
            kind: setup.fairness,
            batch_size: p1.batch_size,
            epochs: p1.epochs,
        },
        &mut stream(seed, 0, Phase::Fair, Purpose::Shuffle),
        &mut FairTrajectory::default(),
    )
    .unwrap();
    let x = rows.rows();
    let soft = TeacherSnapshot::new(teacher, &x).unwrap();
    let p2 = &setup.phase2;
    let cfg = DpConfig::for_shard(p2.clip_norm, 0.0, p2.batch_size, rows.len(), p2.lr).unwrap();
    let init = Mlp::new(&dims, &mut stream(seed, u64::MAX, Phase::Global, Purpose::Init)).unwrap();
    let mut student = DpTrainState::new(
        init,
        stream(seed, 0, Phase::Private, Purpose::Sampler),
        stream(seed, 0, Phase::Private, Purpose::Noise),
    );
    let total = cfg.steps_per_epoch() * (p2.local_epochs * p2.rounds) as u64;
    for _ in 0..total {
        student.sample_and_step(&x, soft.outputs(), &cfg).unwrap();
    }
    let central = evaluate(&student.model, &data.test).unwrap();

    let same_params = fed.global.as_ref() == Some(student.model.params());
    let fm = fed.final_metrics.unwrap();
    let same_metrics = fm.accuracy == central.accuracy && fm.demp == central.demp && fm.eo == central.eo;
    (
        same_params && same_metrics,
        format!(
            "m=1 federated vs centralized ({total} steps): params equal {same_params}, metrics equal {same_metrics} (acc {:.4})",
            central.accuracy
        ),
    )
}

fn degeneracy() -> Outcome {
    let (a, da) = one_step_equivalence();
    let (b, db) = single_agent_equivalence();
    outcome(a && b, format!("{da}; {db}"))
}

// ---------------------------------------------------------------------------
// 6 and 7. Experiments

/// Desk-scale stand-in for the Adult setting: 20k synthetic rows, 5 agents,
/// small network, the default round schedule and Phase-2 step size.
fn desk_config(mode: Mode, seed: u64) -> RunConfig {
    let mut c = RunConfig {
        mode,
        seed,
        agents: Some(5),
        n_target: 20_000,
        hidden: vec![16, 8],
        synthetic: SyntheticConfig {
            rows: 20_000,
            bias: 0.8,
            proxy: 0.5,
            majority: 0.67,
        },
        ..Default::default()
    };
    c.phase1.epochs = 30;
    c.phase1.batch_size = 100;
    c.phase1.lr = 0.01;
    c.phase1.lambda_init = 2.5;
    c.phase2.batch_size = 100;
    c
}

fn fpfl_config(seed: u64, eps: f64) -> RunConfig {
    let mut c = desk_config(Mode::Fpfl, seed);
    c.phase2.epsilon = Some(eps);
    c
}

fn run_ok(cfg: &RunConfig) -> Result<RunReport, String> {
    let r = fpfl_core::run(cfg).map_err(|e| e.to_string())?;
    if r.partial {
        return Err(r.abort_reason.unwrap_or_default());
    }
    Ok(r)
}

fn acc_demp(r: &RunReport) -> (f64, f64) {
    let m = r.final_metrics.as_ref().expect("complete report");
    (m.accuracy, m.demp.unwrap_or(f64::NAN))
}

fn adult_csv() -> Option<PathBuf> {
    std::env::var_os("FPFL_ADULT_CSV")
        .map(PathBuf::from)
        .or_else(|| Some(PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/adult.csv"))))
        .filter(|p| p.is_file())
}

fn reference_results() -> Outcome {
    if let Some(csv) = adult_csv() {
        let cfg = |mode| RunConfig {
            mode,
            seed: 1,
            dataset: csv.display().to_string(),
            schema: Some(PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/schemas/adult.toml"))),
            agents: Some(5),
            ..Default::default()
        };
        let (b1, b2) = match (run_ok(&cfg(Mode::B1)), run_ok(&cfg(Mode::B2))) {
            (Ok(a), Ok(b)) => (acc_demp(&a), acc_demp(&b)),
            (Err(e), _) | (_, Err(e)) => return outcome(false, format!("real Adult run failed: {e}")),
        };
        let pass = (b1.0 - 0.87).abs() <= 0.02
            && (b1.1 - 0.17).abs() <= 0.05
            && (b2.0 - 0.85).abs() <= 0.02
            && b2.1 <= 0.06;
        return outcome(
            pass,
            format!(
                "real Adult ({}): B1 acc {:.4} DemP {:.4}; B2 acc {:.4} DemP {:.4}",
                csv.display(),
                b1.0,
                b1.1,
                b2.0,
                b2.1
            ),
        );
    }
    let (b1, b2) = match (run_ok(&desk_config(Mode::B1, 1)), run_ok(&desk_config(Mode::B2, 1))) {
        (Ok(a), Ok(b)) => (acc_demp(&a), acc_demp(&b)),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("synthetic run failed: {e}")),
    };
    let pass = b2.1 < 0.5 * b1.1 && b1.0 - b2.0 <= 0.03;
    outcome(
        pass,
        format!(
            "no Adult CSV, synthetic substitute: B1 acc {:.4} DemP {:.4}; B2 acc {:.4} DemP {:.4} \
             (DemP ratio {:.3}, accuracy cost {:.2} points)",
            b1.0,
            b1.1,
            b2.0,
            b2.1,
            b2.1 / b1.1,
            100.0 * (b1.0 - b2.0)
        ),
    )
}

fn tradeoff_trend() -> Outcome {
    let mut lines = Vec::new();
    let mut close_all = true;
    let mut monotone_votes = 0;
    for seed in [1u64, 2, 3] {
        let runs = (
            run_ok(&desk_config(Mode::B2, seed)),
            run_ok(&fpfl_config(seed, 10.0)),
            run_ok(&fpfl_config(seed, 1.0)),
        );
        let (b2, hi, lo) = match runs {
            (Ok(a), Ok(b), Ok(c)) => (acc_demp(&a), acc_demp(&b), acc_demp(&c)),
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                return outcome(false, format!("seed {seed}: run failed: {e}"))
            }
        };
        let close = (hi.0 - b2.0).abs() <= 0.03 && (hi.1 - b2.1).abs() <= 0.03;
        let monotone = lo.0 < hi.0;
        close_all &= close;
        monotone_votes += usize::from(monotone);
        lines.push(format!(
            "seed {seed}: B2 {:.4}/{:.4}, ε=10 {:.4}/{:.4}, ε=1 {:.4}/{:.4}",
            b2.0, b2.1, hi.0, hi.1, lo.0, lo.1
        ));
    }
    outcome(
        close_all && monotone_votes >= 2,
        format!(
            "acc/DemP {}; ε=10 near B2 on every seed: {close_all}; ε=1 below ε=10 on {monotone_votes}/3 seeds",
            lines.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Information flow

/// Fails to compile if `$t` implements `$tr`: with an impl, the `_` below
/// would be ambiguous between the two blanket impls.
macro_rules! assert_not_impl {
    ($t:ty, $tr:path) => {
        const _: fn() = || {
            trait AmbiguousIfImpl<A> {
                fn some_item() {}
            }
            impl<T: ?Sized> AmbiguousIfImpl<()> for T {}
            struct Invalid;
            impl<T: ?Sized + $tr> AmbiguousIfImpl<Invalid> for T {}
            let _ = <$t as AmbiguousIfImpl<_>>::some_item;
        };
    };
}

// Teacher-side state and raw data have no route onto the wire.
assert_not_impl!(FairTrainState, WirePayload);
assert_not_impl!(TeacherSnapshot, WirePayload);
assert_not_impl!(LagrangeState, WirePayload);
assert_not_impl!(Mlp, WirePayload);
assert_not_impl!(ParamVector, WirePayload);
assert_not_impl!(TabularDataset, WirePayload);
assert_not_impl!(Batch<'static>, WirePayload);
assert_not_impl!(Vec<f64>, WirePayload);
assert_not_impl!([f64], WirePayload);

fn is_payload<T: WirePayload>() {}

fn information_flow() -> Outcome {
    is_payload::<SharedParams>();

    // A real round on one agent: fair teacher, then one private round.
    let ds = synthetic_adult(
        &SyntheticConfig {
            rows: 200,
            ..Default::default()
        },
        &mut rng(4),
    )
    .unwrap();
    let mut agent = Agent::new(2, ds, 9).unwrap();
    let p1 = Phase1Config {
        epochs: 2,
        batch_size: 50,
        ..Default::default()
    };
    let p2 = Phase2Config {
        batch_size: 50,
        ..Default::default()
    };
    let teacher = agent.run_phase1(&[3], &p1, FairnessMetricKind::DemP).unwrap().model.clone();
    agent.begin_phase2(&p2, 1.0, 1e-4).unwrap();
    let global = Mlp::new(teacher.dims(), &mut rng(5)).unwrap().flatten();
    let shared = agent.run_phase2_round(&global, 1).unwrap();
    let msg_json = WireMessage::new(agent.id() as u32, 0, &shared, agent.shard_len() as u64);
    let student = shared.into_inner();
    let value = serde_json::to_value(&msg_json).unwrap();
    let mut got: Vec<String> = value.as_object().unwrap().keys().cloned().collect();
    got.sort_unstable();
    let mut expected: Vec<String> = WIRE_FIELDS.iter().map(|s| s.to_string()).collect();
    expected.sort_unstable();
    let fields_ok = got == expected;
    let blob_ok = msg_json.params().unwrap() == student && student != *teacher.params();

    let mut smuggled = value.clone();
    smuggled["phi"] = serde_json::json!([0.1, 0.2]);
    let extra_rejected = serde_json::from_value::<WireMessage>(smuggled).is_err();
    let mut with_rows = value;
    with_rows["rows"] = serde_json::json!([[1.0, 2.0]]);
    let rows_rejected = serde_json::from_value::<WireMessage>(with_rows).is_err();

    outcome(
        fields_ok && blob_ok && extra_rejected && rows_rejected,
        format!(
            "payload trait only on shared params (compile-time checks on 9 types); fields {got:?}; \
             extra fields rejected: {}",
            extra_rejected && rows_rejected
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("transfer inequality", Duration::from_secs(10), transfer_inequality),
        ("gradient oracle", Duration::from_secs(30), gradient_oracle),
        ("DP mechanism", Duration::from_secs(60), dp_mechanism),
        ("accountant", Duration::from_secs(30), accountant),
        ("degeneracy equivalence", Duration::from_secs(60), degeneracy),
        ("reference-result reproduction", Duration::from_secs(30 * 60), reference_results),
        ("privacy/fairness trend", Duration::from_secs(45 * 60), tradeoff_trend),
        ("information-flow audit", Duration::from_secs(5), information_flow),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let in_time = took <= *budget;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "{} criterion {}: {name}: {} [{:.2}s of {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
