//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drive_cli::commands::{cmd_ablate, cmd_run, mean_std, ABLATION_FILE, SUMMARY_FILE};
use drive_cli::config::ExperimentConfig;
use drive_core::adaptation::{pretrain, stage1_epoch, stage2_epoch, AdaptState, AdaptationConfig, PretrainConfig};
use drive_core::data::{generate, ShiftSpec};
use drive_core::distributions::{mi_oracle, mutual_information, BatchDistributionPair, ProbVector};
use drive_core::losses::{loss_mce, loss_mic_stage1, loss_mic_stage2, loss_pc, loss_tsv, LossWeights};
use drive_core::models::{DenseNet, PriorModel, PromptContext};
use drive_core::numerics::{numeric_gradient, DenseArray, Tape, Var};
use drive_core::perturbation::{dynamic_eta, init_batch, max_row_norm, pgd_attack, PgdConfig};
use drive_core::pseudo_label::{combine, entropy_weights, pseudo_label_batch, ConsistencyCache, Stage};

/// Adapted-minus-source accuracy margin (points) measured on the 5-seed
/// benchmark with default settings. Later runs must land within one point.
const MARGIN_FLOOR: f64 = 38.87;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> DenseArray {
    let z = DenseArray::new(n, c, (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    z.softmax_rows()
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:.2?}, budget {budget:?}"))?;
    Ok(t)
}

// 1 ----------------------------------------------------------------------

/// Straight double sum over the joint, written independently of the library.
fn mi_reference(p: &DenseArray, q: &DenseArray) -> f64 {
    let (n, c) = (p.rows(), p.cols());
    let mut joint = vec![vec![0.0; c]; c];
    for i in 0..n {
        for a in 0..c {
            for b in 0..c {
                joint[a][b] += p.get(i, a) * q.get(i, b) / n as f64;
            }
        }
    }
    let row: Vec<f64> = (0..c).map(|a| joint[a].iter().sum()).collect();
    let col: Vec<f64> = (0..c).map(|b| (0..c).map(|a| joint[a][b]).sum()).collect();
    let mut mi = 0.0;
    for a in 0..c {
        for b in 0..c {
            let j = joint[a][b];
            if j > 0.0 {
                mi += j * (j.max(1e-12).ln() - (row[a] * col[b]).max(1e-12).ln());
            }
        }
    }
    mi
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let c = rng.random_range(2..=5);
        let p = rand_probs(&mut rng, n, c);
        let q = rand_probs(&mut rng, n, c);
        let pair = BatchDistributionPair::new(p.clone(), q.clone()).map_err(e2s)?;
        let mi = mutual_information(&pair).map_err(e2s)?;
        let oracle = mi_oracle(&pair).map_err(e2s)?;
        let reference = mi_reference(&p, &q);
        worst = worst.max((mi - oracle).abs()).max((mi - reference).abs());
    }
    ensure(worst <= 1e-10, || format!("max |MI - oracle| = {worst:e}"))?;
    let t = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("1000 batches, max deviation {worst:.1e}, {t:.2?}"))
}

// 2 ----------------------------------------------------------------------

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
/// Central differences at this step carry ~1e-10 of rounding noise, so
/// entries smaller than this are compared on an absolute scale.
const FD_FLOOR: f64 = 1e-4;

fn floored_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FD_FLOOR)
}

fn fd_error<F>(f: F, point: &DenseArray, analytic: &DenseArray) -> Result<f64, String>
where
    F: FnMut(&DenseArray) -> drive_core::Result<f64>,
{
    let numeric = numeric_gradient(f, point, FD_STEP).map_err(e2s)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| floored_error(a, n))
        .fold(0.0, f64::max))
}

/// Each loss checked through a softmax against its logits.
fn loss_gradients_on_logits(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let n = rng.random_range(2..=6);
    let c = rng.random_range(3..=5);
    let base = DenseArray::new(n, c, (0..n * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let target = rand_probs(rng, n, c);
    let other = rand_probs(rng, n, c);
    let n_top = rng.random_range(1..c);
    let tau = rng.random_range(0.2..1.0);
    let alpha = rng.random_range(0.0..2.0);

    type Build = Box<dyn Fn(&mut Tape, Var) -> drive_core::Result<Var>>;
    let (t1, t2, t3, o1, o2) = (target.clone(), target.clone(), target, other.clone(), other);
    let builds: Vec<(&str, Build)> = vec![
        ("tsv", Box::new(move |tp: &mut Tape, p| loss_tsv(tp, p, &t1))),
        (
            "mic1",
            Box::new(move |tp: &mut Tape, p| {
                let o = tp.constant(o1.clone());
                loss_mic_stage1(tp, p, o)
            }),
        ),
        (
            "mic2",
            Box::new(move |tp: &mut Tape, p| {
                let o = tp.constant(o2.clone());
                loss_mic_stage2(tp, o, p)
            }),
        ),
        ("pc", Box::new(move |tp: &mut Tape, p| loss_pc(tp, p, &t2, alpha).map(|r| r.0))),
        ("mce", Box::new(move |tp: &mut Tape, p| loss_mce(tp, p, &t3, n_top, tau))),
    ];
    let mut worst: f64 = 0.0;
    for (name, build) in &builds {
        let eval = |z: &DenseArray| -> drive_core::Result<(f64, DenseArray)> {
            let mut tape = Tape::new();
            let zv = tape.leaf(z.clone());
            let p = tape.softmax(zv)?;
            let l = build(&mut tape, p)?;
            let g = tape.backward(l)?.wrt(zv)?;
            Ok((tape.value(l).item()?, g))
        };
        let (_, g) = eval(&base).map_err(e2s)?;
        let err = fd_error(|z| eval(z).map(|r| r.0), &base, &g)?;
        ensure(err < FD_TOL, || format!("{name}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn small_models(rng: &mut ChaCha8Rng, d: usize, c: usize) -> (DenseNet, PriorModel, PromptContext) {
    let net = DenseNet::new(&[d, 4, c], rng).unwrap();
    let mut prior = PriorModel::new(&[d, 4, 3], c, 0.7, rng).unwrap();
    prior.freeze();
    let v = PromptContext::new((0..3).map(|_| rng.random_range(-0.5..0.5)).collect());
    (net, prior, v)
}

/// Stage-one total against the context, with exact-zero target gradients.
fn stage1_gradients(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (d, c, n) = (3, rng.random_range(2..=4), rng.random_range(2..=5));
    let (net, prior, v) = small_models(rng, d, c);
    let x = DenseArray::new(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let delta = DenseArray::new(n, d, (0..n * d).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
    let beta = rng.random_range(0.1..2.0);

    let eval = |ctx: &DenseArray, check_frozen: bool| -> Result<(f64, DenseArray), String> {
        let ctx = PromptContext::new(ctx.data().to_vec());
        let mut tape = Tape::new();
        let tvars = net.register(&mut tape, true);
        let pvars = prior.register(&mut tape, &ctx, false, true).map_err(e2s)?;
        let xv = tape.constant(x.clone());
        let xp = tape.constant(x.add(&delta).unwrap());
        let tl = net.forward(&mut tape, &tvars, xv).map_err(e2s)?;
        let tp = tape.softmax(tl).map_err(e2s)?;
        let s = prior.forward(&mut tape, &pvars, xv).map_err(e2s)?;
        let clean = tape.softmax(s).map_err(e2s)?;
        let sp = prior.forward(&mut tape, &pvars, xp).map_err(e2s)?;
        let pert = tape.softmax(sp).map_err(e2s)?;
        let pseudo = pseudo_label_batch(tape.value(tp), tape.value(clean), Some(1.0), Stage::One).map_err(e2s)?;
        let tsv = loss_tsv(&mut tape, clean, &pseudo).map_err(e2s)?;
        let mic = loss_mic_stage1(&mut tape, clean, pert).map_err(e2s)?;
        let mic = tape.scale(mic, beta).map_err(e2s)?;
        let total = tape.add(tsv, mic).map_err(e2s)?;
        let grads = tape.backward(total).map_err(e2s)?;
        if check_frozen {
            for var in tvars.all() {
                let g = grads.wrt(var).map_err(e2s)?;
                ensure(g.data().iter().all(|&x| x == 0.0), || {
                    "stage one produced a nonzero target-model gradient".into()
                })?;
            }
        }
        Ok((tape.value(total).item().map_err(e2s)?, grads.wrt(pvars.context).map_err(e2s)?))
    };
    let base = v.values().clone();
    let (_, g) = eval(&base, true)?;
    // pseudo-labels are rebuilt from the perturbed context, so compare with the
    // labels held at their base value
    let pseudo_base = {
        let p_t = net.logits(&x).map_err(e2s)?.probs();
        let p_v = prior.predict(&x, &v).map_err(e2s)?;
        pseudo_label_batch(&p_t, &p_v, Some(1.0), Stage::One).map_err(e2s)?
    };
    let fixed = |ctx: &DenseArray| -> drive_core::Result<f64> {
        let ctx = PromptContext::new(ctx.data().to_vec());
        let mut tape = Tape::new();
        let pvars = prior.register(&mut tape, &ctx, false, false)?;
        let xv = tape.constant(x.clone());
        let xp = tape.constant(x.add(&delta)?);
        let s = prior.forward(&mut tape, &pvars, xv)?;
        let clean = tape.softmax(s)?;
        let sp = prior.forward(&mut tape, &pvars, xp)?;
        let pert = tape.softmax(sp)?;
        let tsv = loss_tsv(&mut tape, clean, &pseudo_base)?;
        let mic = loss_mic_stage1(&mut tape, clean, pert)?;
        Ok(tape.value(tsv).item()? + beta * tape.value(mic).item()?)
    };
    let err = fd_error(fixed, &base, &g)?;
    ensure(err < FD_TOL, || format!("stage-one context gradient: relative error {err:e}"))?;
    Ok(err)
}

/// Stage-two total against every target parameter, with exact-zero context
/// gradients.
fn stage2_gradients(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (d, n) = (3, rng.random_range(2..=5));
    let c = rng.random_range(3..=4);
    let (net, prior, v) = small_models(rng, d, c);
    let x = DenseArray::new(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let delta = DenseArray::new(n, d, (0..n * d).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
    let weights = LossWeights {
        beta: 1.0,
        xi1: rng.random_range(0.1..2.0),
        xi2: rng.random_range(0.1..2.0),
    };
    let (tau, alpha, n_top) = (rng.random_range(0.2..1.0), rng.random_range(0.0..2.0), 1);

    let p_v = prior.predict(&x, &v).map_err(e2s)?;
    let p_t0 = net.logits(&x).map_err(e2s)?.probs();
    let pseudo = pseudo_label_batch(&p_t0, &p_v, Some(1.0), Stage::Two).map_err(e2s)?;

    let eval = |net: &DenseNet, check_frozen: bool| -> Result<(f64, Vec<DenseArray>), String> {
        let mut tape = Tape::new();
        let tvars = net.register(&mut tape, true);
        let pvars = prior.register(&mut tape, &v, false, true).map_err(e2s)?;
        let xv = tape.constant(x.clone());
        let xp = tape.constant(x.add(&delta).unwrap());
        let s = prior.forward(&mut tape, &pvars, xv).map_err(e2s)?;
        let prior_probs = tape.softmax(s).map_err(e2s)?;
        let prior_vals = tape.value(prior_probs).clone();
        let l = net.forward(&mut tape, &tvars, xv).map_err(e2s)?;
        let clean = tape.softmax(l).map_err(e2s)?;
        let lp = net.forward(&mut tape, &tvars, xp).map_err(e2s)?;
        let pert = tape.softmax(lp).map_err(e2s)?;
        let mce = loss_mce(&mut tape, clean, &pseudo, n_top, tau).map_err(e2s)?;
        let (pc, _) = loss_pc(&mut tape, clean, &prior_vals, alpha).map_err(e2s)?;
        let mic = loss_mic_stage2(&mut tape, clean, pert).map_err(e2s)?;
        let pc = tape.scale(pc, weights.xi1).map_err(e2s)?;
        let mic = tape.scale(mic, weights.xi2).map_err(e2s)?;
        let total = tape.add(mce, pc).map_err(e2s)?;
        let total = tape.add(total, mic).map_err(e2s)?;
        let grads = tape.backward(total).map_err(e2s)?;
        if check_frozen {
            let g = grads.wrt(pvars.context).map_err(e2s)?;
            ensure(g.data().iter().all(|&x| x == 0.0), || {
                "stage two produced a nonzero context gradient".into()
            })?;
        }
        let gs = tvars.all().map(|var| grads.wrt(var)).collect::<Result<Vec<_>, _>>().map_err(e2s)?;
        Ok((tape.value(total).item().map_err(e2s)?, gs))
    };
    let (_, analytic) = eval(&net, true)?;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let n_params = net.params().count();
    for (k, g) in analytic.iter().enumerate().take(n_params) {
        for e in 0..g.len() {
            let orig = probe.params().nth(k).unwrap().data()[e];
            probe.params_mut().nth(k).unwrap().data_mut()[e] = orig + FD_STEP;
            let plus = eval(&probe, false)?.0;
            probe.params_mut().nth(k).unwrap().data_mut()[e] = orig - FD_STEP;
            let minus = eval(&probe, false)?.0;
            probe.params_mut().nth(k).unwrap().data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(floored_error(g.data()[e], numeric));
        }
    }
    ensure(worst < FD_TOL, || format!("stage-two target gradient: relative error {worst:e}"))?;
    Ok(worst)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = loss_gradients_on_logits(&mut rng)
            .and_then(|a| Ok(a.max(stage1_gradients(&mut rng)?)))
            .and_then(|a| Ok(a.max(stage2_gradients(&mut rng)?)))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.max(w);
    }
    let t = within_budget(start, Duration::from_secs(60))?;
    Ok(format!("100 seeds, max relative error {worst:.1e}, frozen groups exactly zero, {t:.2?}"))
}

// 3 ----------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let (s_v, s_t, lambda) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..2.0));
        let (w_t, w_v) = entropy_weights(s_v, s_t, lambda);
        ensure(w_t + w_v == 1.0, || format!("weights ({w_t}, {w_v}) do not sum to exactly 1"))?;
    }
    for _ in 0..1000 {
        let c = rng.random_range(2..=6);
        let p = rand_probs(&mut rng, 2, c);
        let a = ProbVector::new(p.row_slice(0).to_vec()).map_err(e2s)?;
        let b = ProbVector::new(p.row_slice(1).to_vec()).map_err(e2s)?;
        let label = combine(&a, &b, rng.random_range(0.0..2.0)).map_err(e2s)?;
        let sum: f64 = label.dist.probs().iter().sum();
        ensure(
            (sum - 1.0).abs() <= 1e-9 && label.dist.probs().iter().all(|&x| x >= 0.0),
            || format!("combined label off the simplex: sum {sum}"),
        )?;
    }

    ensure(entropy_weights(0.8, 0.8, 0.0) == (0.5, 0.5), || "equal entropies, lambda 0".into())?;
    let p = ProbVector::new(vec![0.2, 0.5, 0.3]).map_err(e2s)?;
    let mid = combine(&p, &p, 0.0).map_err(e2s)?;
    ensure(
        mid.dist.probs().iter().zip(p.probs()).all(|(a, b)| (a - b).abs() <= 1e-12),
        || "midpoint of identical inputs".into(),
    )?;
    let w = entropy_weights(1.0, 0.5, 0.1);
    ensure(w == (0.625, 0.375), || format!("hand-evaluated case gave {w:?}"))?;
    let (_, w_v) = entropy_weights(0.9, 0.4, 1e9);
    ensure((w_v - 1.0).abs() <= 1e-6, || format!("large lambda prior weight {w_v}"))?;
    Ok("weights sum to 1 exactly; simplex within 1e-9; 0.5/0.5, 0.625/0.375 and large-lambda cases hold".into())
}

// 4 ----------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut iterates = 0usize;
    for attack in 0..10_000 {
        let n = rng.random_range(1..=4);
        let d = rng.random_range(1..=5);
        let r = rng.random_range(0.01..3.0);
        let steps = rng.random_range(1..=8);
        let gamma = rng.random_range(0.0..5.0);
        let x = DenseArray::new(n, d, (0..n * d).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
        let etas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let init = init_batch(&x, &etas, r, &mut rng).map_err(e2s)?;
        let w = DenseArray::new(n, d, (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let cfg = PgdConfig::constant(steps, r, 1.0)
            .map(|c| PgdConfig {
                step_sizes: vec![gamma; steps],
                ..c
            })
            .map_err(e2s)?;
        let mut outside = None;
        // value sum(w . delta) + sum(delta^3): unbounded ascent pushes to the boundary
        let res = pgd_attack(
            |delta| {
                iterates += 1;
                let norm = max_row_norm(delta);
                if norm > r + 1e-9 {
                    outside = Some(norm);
                }
                let cube = delta.map(|v| v * v * v).sum();
                let grad = w.add(&delta.map(|v| 3.0 * v * v))?;
                Ok((delta.mul(&w)?.sum() + cube, grad))
            },
            &init,
            &cfg,
            Stage::Two,
        )
        .map_err(|e| format!("attack {attack}: {e}"))?;
        if let Some(norm) = outside {
            return Err(format!("attack {attack}: iterate norm {norm} exceeds {r}"));
        }
        ensure(max_row_norm(res.delta()) <= r + 1e-9, || format!("attack {attack}: final delta outside"))?;
    }

    let c = DenseArray::new(2, 3, vec![0.3, -0.2, 0.1, -0.4, 0.0, 0.5]).unwrap();
    let cfg = PgdConfig::constant(200, 1.0, 1.0).map_err(e2s)?;
    let cfg = PgdConfig {
        step_sizes: vec![0.1; 200],
        ..cfg
    };
    let res = pgd_attack(
        |delta| {
            let diff = delta.sub(&c)?;
            Ok((-diff.mul(&diff)?.sum(), diff.scale(-2.0)))
        },
        &DenseArray::zeros(2, 3),
        &cfg,
        Stage::One,
    )
    .map_err(e2s)?;
    let dist = res.delta().sub(&c).unwrap().frobenius_norm();
    ensure(dist < 1e-3, || format!("quadratic attack ended {dist:e} from the maximizer"))?;
    Ok(format!("10^4 attacks, {iterates} iterates inside the ball; quadratic maximizer reached within {dist:.1e}"))
}

// 5 ----------------------------------------------------------------------

/// Cache whose score for sample `i` is `scale * JS(p_i, q_i)`.
fn scaled_cache(pairs: &[(ProbVector, ProbVector)], scale: f64) -> Result<ConsistencyCache, String> {
    let mut cache = ConsistencyCache::new(0);
    for (i, (p, q)) in pairs.iter().enumerate() {
        cache.record_consistency(i, p, p, q, scale).map_err(e2s)?;
    }
    Ok(cache)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = ProbVector::new(vec![0.7, 0.2, 0.1]).map_err(e2s)?;
    let q = ProbVector::new(vec![0.1, 0.3, 0.6]).map_err(e2s)?;
    for eta0 in [0.5, 1.0, 2.5] {
        let equal = scaled_cache(&vec![(p.clone(), q.clone()); 7], 1.0)?;
        let sched = dynamic_eta(&equal, eta0, (0.1, 10.0)).map_err(e2s)?;
        ensure(sched.iter().all(|(_, e)| e == eta0), || format!("equal proxies did not give eta0 = {eta0}"))?;
    }

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=20);
        let pairs: Vec<(ProbVector, ProbVector)> = (0..n)
            .map(|_| {
                let m = rand_probs(&mut rng, 2, 4);
                (
                    ProbVector::new(m.row_slice(0).to_vec()).unwrap(),
                    ProbVector::new(m.row_slice(1).to_vec()).unwrap(),
                )
            })
            .collect();
        let k = rng.random_range(0.01..100.0);
        let clip = (0.1, 10.0);
        let a = dynamic_eta(&scaled_cache(&pairs, 1.0)?, 1.0, clip).map_err(e2s)?;
        let b = dynamic_eta(&scaled_cache(&pairs, k)?, 1.0, clip).map_err(e2s)?;
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            worst = worst.max((x - y).abs());
        }
        let tight = (0.9, 1.1);
        let c = dynamic_eta(&scaled_cache(&pairs, 1.0)?, 1.0, tight).map_err(e2s)?;
        ensure(c.iter().all(|(_, e)| (tight.0..=tight.1).contains(&e)), || "eta outside clamp".into())?;
    }
    ensure(worst <= 1e-12, || format!("rescaled proxies changed eta by {worst:e}"))?;
    Ok(format!("equal proxies give eta0 exactly; rescaling changes eta by at most {worst:.1e}; clamps hold"))
}

// 6, 7, 8 ----------------------------------------------------------------

fn accuracy_means(dir: &Path, seeds: Vec<u64>) -> Result<(f64, f64, Duration), String> {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        seeds,
        out: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    let rows = cmd_run(&cfg).map_err(e2s)?;
    let src: Vec<f64> = rows.iter().map(|r| 100.0 * r.accuracies.unwrap().source).collect();
    let ada: Vec<f64> = rows.iter().map(|r| 100.0 * r.accuracies.unwrap().adapted).collect();
    Ok((mean_std(&src).0, mean_std(&ada).0, start.elapsed()))
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let (src, ada, t) = accuracy_means(dir.path(), (0..5).collect())?;
    let margin = ada - src;
    ensure(ada > src, || format!("adapted {ada:.2}% does not exceed source {src:.2}%"))?;
    ensure((margin - MARGIN_FLOOR).abs() <= 1.0, || {
        format!("margin {margin:.2} points is not within 1 point of {MARGIN_FLOOR}")
    })?;
    ensure(t < Duration::from_secs(600), || format!("took {t:.2?}"))?;
    Ok(format!("source {src:.2}% -> adapted {ada:.2}% (margin {margin:.2}, floor {MARGIN_FLOOR}), {t:.2?}"))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg = ExperimentConfig {
        seeds: (0..10).collect(),
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let (rows, holds) = cmd_ablate(&cfg).map_err(e2s)?;
    let line = rows
        .iter()
        .map(|r| format!("{} {:.2}", r.variant.name(), r.mean))
        .collect::<Vec<_>>()
        .join(" -> ");
    let csv = std::fs::read_to_string(dir.path().join(ABLATION_FILE)).map_err(e2s)?;
    ensure(csv.lines().count() == 5, || "ablation.csv should have 4 rows".into())?;
    ensure(holds, || format!("ordering flagged: {line}"))?;
    Ok(line)
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(&cfg_path, "adapt.epochs = 3\nrun.seeds = 0,1\n").map_err(e2s)?;
    let mut summaries = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_drive"))
            .arg("run")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(e2s)?;
        ensure(status.status.success(), || {
            format!("drive run failed: {}", String::from_utf8_lossy(&status.stderr))
        })?;
        summaries.push(std::fs::read(out.join(SUMMARY_FILE)).map_err(e2s)?);
    }
    ensure(summaries[0] == summaries[1], || "summary CSVs differ".into())?;
    Ok(format!("two invocations, identical {}-byte summaries", summaries[0].len()))
}

// 9 ----------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let spec = ShiftSpec {
        per_class: 60,
        ..ShiftSpec::rotated_gaussians(9)
    };
    let (source, target, broad) = generate(&spec).map_err(e2s)?;
    let pre = pretrain(&source, &broad, &PretrainConfig::default(), 9).map_err(e2s)?;
    let prior_print = pre.prior.fingerprint();
    ensure(pre.prior.is_frozen(), || "pretrained prior is not frozen".into())?;

    let cfg = AdaptationConfig {
        epochs: 3,
        batch_size: 32,
        ..AdaptationConfig::default()
    };
    let x = target.features();
    let radius = drive_core::adaptation::default_radius(x);
    let mut state = AdaptState {
        target: pre.source.clone(),
        prior: pre.prior.clone(),
        context: pre.prior.zero_context(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batches: Vec<Vec<usize>> = (0..x.rows()).collect::<Vec<_>>().chunks(32).map(<[usize]>::to_vec).collect();
    let (mut target_moved, mut context_moved) = (false, false);
    for epoch in 0..cfg.epochs {
        let t0 = state.target.fingerprint();
        let v0 = state.context.fingerprint();
        let (cache, _) = stage1_epoch(&mut state, x, &batches, &cfg, radius, epoch, &mut rng).map_err(e2s)?;
        ensure(state.target.fingerprint() == t0, || format!("epoch {epoch}: stage one changed the target model"))?;
        context_moved |= state.context.fingerprint() != v0;

        let etas = dynamic_eta(&cache, cfg.eta0, cfg.eta_clip).map_err(e2s)?;
        let v1 = state.context.fingerprint();
        stage2_epoch(&mut state, x, &batches, &etas, &cfg, radius, &mut rng).map_err(e2s)?;
        ensure(state.context.fingerprint() == v1, || format!("epoch {epoch}: stage two changed the context"))?;
        target_moved |= state.target.fingerprint() != t0;
        ensure(state.prior.fingerprint() == prior_print, || format!("epoch {epoch}: prior backbone changed"))?;
    }
    // the checks are only meaningful if each stage trains its own group
    ensure(target_moved && context_moved, || "a stage did not update its own parameters".into())?;

    let mut prior = pre.prior.clone();
    let mut tape = Tape::new();
    let vars = prior.register(&mut tape, &prior.zero_context(), true, false).map_err(e2s)?;
    let xv = tape.constant(x.clone());
    let s = prior.forward(&mut tape, &vars, xv).map_err(e2s)?;
    let l = tape.sum(s).map_err(e2s)?;
    let grads = tape.backward(l).map_err(e2s)?;
    ensure(prior.update_backbone(&grads, &vars, 0.1).is_err(), || "frozen prior accepted an update".into())?;
    ensure(prior.fingerprint() == prior_print, || "rejected update still changed the prior".into())?;
    Ok(format!("{} epochs: target fixed in stage one, context fixed in stage two, prior fixed throughout", cfg.epochs))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("MI oracle equivalence", criterion_1),
        ("gradient suite", criterion_2),
        ("pseudo-label combiner contract", criterion_3),
        ("PGD contract", criterion_4),
        ("dynamic eta contract", criterion_5),
        ("end-to-end improvement", criterion_6),
        ("ablation ordering", criterion_7),
        ("determinism", criterion_8),
        ("freeze contracts", criterion_9),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
