//! Two-stage adaptation loop.
//!
//! Every epoch runs stage one (prompt-context customization against the
//! frozen target model) and then stage two (target-model adaptation against
//! the frozen customized prior). Stage one's per-sample consistency scores set
//! the perturbation initialization scale used in stage two.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{generate, LabeledSet, ShiftSpec};
use crate::distributions::{mutual_information_traced, ProbVector};
use crate::error::{Error, Result};
use crate::losses::{
    loss_mce, loss_mic_stage1, loss_mic_stage2, loss_pc, loss_tsv, stage_totals, LossBreakdown, LossComponents,
    LossWeights,
};
use crate::models::{
    net_accuracy, pretrain_prior, pretrain_source, DenseNet, PriorModel, PromptContext, TrainConfig,
};
use crate::numerics::{DenseArray, Tape, Var};
use crate::perturbation::{dynamic_eta, init_batch, median_pairwise_distance, pgd_attack, EtaSchedule, PgdConfig};
use crate::pseudo_label::{pseudo_label_batch, ConsistencyCache, Stage};

/// Rows sampled for the default perturbation radius.
const RADIUS_SAMPLE: usize = 200;

/// Components switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Variant {
    /// Fixed equal-weight pseudo-label mix instead of entropy weighting.
    pub entropy_off: bool,
    /// No PGD and no perturbed-model loss terms.
    pub perturb_off: bool,
    /// Every sample uses the base initialization scale.
    pub dynamic_eta_off: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        entropy_off: false,
        perturb_off: false,
        dynamic_eta_off: false,
    };

    /// Ablation ladder: nothing, then entropy weighting, then perturbations,
    /// then the dynamic initialization scale.
    pub fn ladder() -> [Variant; 4] {
        [
            Variant {
                entropy_off: true,
                perturb_off: true,
                dynamic_eta_off: true,
            },
            Variant {
                entropy_off: false,
                perturb_off: true,
                dynamic_eta_off: true,
            },
            Variant {
                entropy_off: false,
                perturb_off: false,
                dynamic_eta_off: true,
            },
            Variant::FULL,
        ]
    }

    pub fn name(&self) -> &'static str {
        match (self.entropy_off, self.perturb_off, self.dynamic_eta_off) {
            (true, true, true) => "all-off",
            (false, true, true) => "entropy",
            (false, false, true) => "entropy+perturb",
            (false, false, false) => "full",
            (true, false, false) => "no-entropy",
            (false, true, false) => "no-perturb",
            (true, false, true) => "perturb-only",
            (true, true, false) => "dynamic-eta-only",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        let all = [
            (true, true, true),
            (false, true, true),
            (false, false, true),
            (false, false, false),
            (true, false, false),
            (false, true, false),
            (true, false, true),
            (true, true, false),
        ];
        all.into_iter()
            .map(|(e, p, d)| Variant {
                entropy_off: e,
                perturb_off: p,
                dynamic_eta_off: d,
            })
            .find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    /// Prior bias in the entropy weighting.
    pub lambda: f64,
    pub beta: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub alpha_balance: f64,
    pub tau: f64,
    /// Top-N size for the calibration loss; `None` picks `min(3, C - 1)`.
    pub top_n: Option<usize>,
    pub pgd_steps: usize,
    /// Perturbation radius; `None` uses half the median pairwise distance of
    /// a target subsample.
    pub radius: Option<f64>,
    pub eta0: f64,
    pub eta_clip: (f64, f64),
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_context: f64,
    pub lr_target: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta: 1.0,
            xi1: 1.0,
            xi2: 0.5,
            alpha_balance: 1.0,
            tau: 0.07,
            top_n: Some(1),
            pgd_steps: 5,
            radius: None,
            eta0: 1.0,
            eta_clip: (0.1, 10.0),
            epochs: 10,
            batch_size: 64,
            lr_context: 0.01,
            lr_target: 0.01,
            seed: 0,
            variant: Variant::FULL,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("xi1", self.xi1),
            ("xi2", self.xi2),
            ("alpha_balance", self.alpha_balance),
            ("lr_context", self.lr_context),
            ("lr_target", self.lr_target),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::InvalidConfig(format!("eta0 = {} must be > 0", self.eta0)));
        }
        let (lo, hi) = self.eta_clip;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(Error::InvalidConfig(format!("eta_clip [{lo}, {hi}] must contain 1 with lo > 0")));
        }
        if self.pgd_steps == 0 {
            return Err(Error::InvalidConfig("pgd_steps must be >= 1".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::InvalidConfig(format!("radius = {r} must be > 0")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size = {} must be >= 2",
                self.batch_size
            )));
        }
        if self.top_n == Some(0) {
            return Err(Error::InvalidConfig("top_n must be >= 1".into()));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        if self.variant.perturb_off {
            LossWeights {
                beta: 0.0,
                xi1: self.xi1,
                xi2: 0.0,
            }
        } else {
            LossWeights {
                beta: self.beta,
                xi1: self.xi1,
                xi2: self.xi2,
            }
        }
    }

    fn lambda(&self) -> Option<f64> {
        (!self.variant.entropy_off).then_some(self.lambda)
    }

    fn top_n_for(&self, c: usize) -> Result<usize> {
        let n = self.top_n.unwrap_or(3.min(c - 1));
        if n >= c {
            return Err(Error::InvalidConfig(format!("top_n = {n} must be < {c} classes")));
        }
        Ok(n)
    }
}

/// Mutable state of one adaptation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    pub target: DenseNet,
    pub prior: PriorModel,
    pub context: PromptContext,
}

/// One epoch of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage1: LossBreakdown,
    pub stage2: LossBreakdown,
    /// Target-model accuracy after stage one.
    pub accuracy_stage1: f64,
    /// Target-model accuracy after stage two.
    pub accuracy_stage2: f64,
    /// Prior accuracy with the customized context.
    pub prior_accuracy: f64,
    /// `(min, mean, max)` of the stage-two initialization scale.
    pub eta: (f64, f64, f64),
    pub target_fingerprint: String,
    pub context_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationReport {
    pub epochs: Vec<EpochRecord>,
    pub source_accuracy: f64,
    pub final_accuracy: f64,
    pub radius: f64,
    pub target: DenseNet,
    pub context: PromptContext,
}

/// Perturbation radius used when none is configured.
pub fn default_radius(x: &DenseArray) -> f64 {
    0.5 * median_pairwise_distance(x, RADIUS_SAMPLE)
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn check_finite(b: &LossBreakdown, what: &str) -> Result<()> {
    if b.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} total loss {}", b.total)))
    }
}

fn mean_components(all: &[LossComponents]) -> LossComponents {
    let avg = |f: fn(&LossComponents) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = all.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    LossComponents {
        tsv: avg(|c| c.tsv),
        mic1: avg(|c| c.mic1),
        mic2: avg(|c| c.mic2),
        pc: avg(|c| c.pc),
        balance: avg(|c| c.balance),
        mce: avg(|c| c.mce),
    }
}

/// Mean over batches; an epoch without batches reports a zero total.
fn epoch_breakdown(stage: Stage, comps: &[LossComponents], weights: LossWeights) -> Result<LossBreakdown> {
    if comps.is_empty() {
        return Ok(LossBreakdown {
            stage,
            components: LossComponents::default(),
            total: 0.0,
        });
    }
    stage_totals(stage, mean_components(comps), weights)
}

/// Adversarial objective `-I(model(x + delta), pseudo)` and its gradient in
/// delta. `forward` maps a traced input to class probabilities.
fn adversarial_objective<'a, F>(
    x: &'a DenseArray,
    pseudo: &'a DenseArray,
    forward: F,
) -> impl FnMut(&DenseArray) -> Result<(f64, DenseArray)> + 'a
where
    F: Fn(&mut Tape, Var) -> Result<Var> + 'a,
{
    move |delta: &DenseArray| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let dv = tape.leaf(delta.clone());
        let shifted = tape.add(xv, dv)?;
        let probs = forward(&mut tape, shifted)?;
        let label = tape.constant(pseudo.clone());
        let mi = mutual_information_traced(&mut tape, probs, label)?;
        let obj = tape.scale(mi, -1.0)?;
        let g = tape.backward(obj)?.wrt(dv)?;
        Ok((tape.value(obj).item()?, g))
    }
}

fn rows_of(m: &DenseArray, r: usize) -> Result<ProbVector> {
    ProbVector::new(m.row_slice(r).to_vec())
}

/// Stage one over `batches` of `x`: customizes the prompt context with the
/// target model held fixed. Returns the consistency cache and the mean loss
/// breakdown.
pub fn stage1_epoch(
    state: &mut AdaptState,
    x: &DenseArray,
    batches: &[Vec<usize>],
    cfg: &AdaptationConfig,
    radius: f64,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ConsistencyCache, LossBreakdown)> {
    let weights = cfg.weights();
    let perturb = !cfg.variant.perturb_off;
    let mut cache = ConsistencyCache::new(epoch);
    let mut comps = Vec::with_capacity(batches.len());
    let pgd = PgdConfig::constant(cfg.pgd_steps, radius, cfg.eta0)?;

    for batch in batches {
        let xb = x.select_rows(batch);
        let p_t = state.target.logits(&xb)?.probs();
        let p_v = state.prior.predict(&xb, &state.context)?;
        let pseudo = pseudo_label_batch(&p_t, &p_v, cfg.lambda(), Stage::One)?;

        let delta = if perturb {
            let init = init_batch(&xb, &vec![1.0; xb.rows()], radius, rng)?;
            let prior = &state.prior;
            let ctx = &state.context;
            let objective = adversarial_objective(&xb, &pseudo, move |tape, input| {
                let vars = prior.register(tape, ctx, false, false)?;
                let scores = prior.forward(tape, &vars, input)?;
                tape.softmax(scores)
            });
            Some(pgd_attack(objective, &init, &pgd, Stage::One)?.into_delta())
        } else {
            None
        };

        let mut tape = Tape::new();
        let vars = state.prior.register(&mut tape, &state.context, false, true)?;
        let xv = tape.constant(xb.clone());
        let scores = state.prior.forward(&mut tape, &vars, xv)?;
        let clean = tape.softmax(scores)?;
        let tsv = loss_tsv(&mut tape, clean, &pseudo)?;
        let mut total = tsv;
        let mut c = LossComponents {
            tsv: Some(tape.value(tsv).item()?),
            ..Default::default()
        };
        let mut p_v_pert = p_v.clone();
        if let Some(d) = &delta {
            let dv = tape.constant(d.clone());
            let shifted = tape.add(xv, dv)?;
            let pscores = state.prior.forward(&mut tape, &vars, shifted)?;
            let pert = tape.softmax(pscores)?;
            let mic1 = loss_mic_stage1(&mut tape, clean, pert)?;
            c.mic1 = Some(tape.value(mic1).item()?);
            p_v_pert = tape.value(pert).clone();
            let weighted = tape.scale(mic1, weights.beta)?;
            total = tape.add(total, weighted)?;
        }
        let bd = stage_totals(Stage::One, c, weights)?;
        check_finite(&bd, "stage-one batch")?;

        for (r, &i) in batch.iter().enumerate() {
            cache.record_consistency(i, &rows_of(&p_t, r)?, &rows_of(&p_v, r)?, &rows_of(&p_v_pert, r)?, cfg.beta)?;
        }

        let grad = tape.backward(total)?.wrt(vars.context)?;
        state.context.step(&grad, cfg.lr_context);
        comps.push(c);
    }

    Ok((cache, epoch_breakdown(Stage::One, &comps, weights)?))
}

/// Stage two over `batches` of `x`: adapts the target model with the
/// customized context held fixed. Returns the mean loss breakdown.
pub fn stage2_epoch(
    state: &mut AdaptState,
    x: &DenseArray,
    batches: &[Vec<usize>],
    etas: &EtaSchedule,
    cfg: &AdaptationConfig,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let weights = cfg.weights();
    let perturb = !cfg.variant.perturb_off;
    let c = state.prior.num_classes();
    let top_n = cfg.top_n_for(c)?;
    let pgd = PgdConfig::constant(cfg.pgd_steps, radius, cfg.eta0)?;
    let mut comps = Vec::with_capacity(batches.len());

    for batch in batches {
        let xb = x.select_rows(batch);
        let p_t = state.target.logits(&xb)?.probs();
        let p_v = state.prior.predict(&xb, &state.context)?;
        let pseudo = pseudo_label_batch(&p_t, &p_v, cfg.lambda(), Stage::Two)?;

        let delta = if perturb {
            let scale: Vec<f64> = batch.iter().map(|&i| etas.eta(i)).collect();
            let init = init_batch(&xb, &scale, radius, rng)?;
            let net = &state.target;
            let objective = adversarial_objective(&xb, &pseudo, move |tape, input| {
                let vars = net.register(tape, false);
                let logits = net.forward(tape, &vars, input)?;
                tape.softmax(logits)
            });
            Some(pgd_attack(objective, &init, &pgd, Stage::Two)?.into_delta())
        } else {
            None
        };

        let mut tape = Tape::new();
        let vars = state.target.register(&mut tape, true);
        let xv = tape.constant(xb.clone());
        let logits = state.target.forward(&mut tape, &vars, xv)?;
        let probs = tape.softmax(logits)?;
        let mce = loss_mce(&mut tape, probs, &pseudo, top_n, cfg.tau)?;
        let (pc, balance) = loss_pc(&mut tape, probs, &p_v, cfg.alpha_balance)?;
        let mut comp = LossComponents {
            mce: Some(tape.value(mce).item()?),
            pc: Some(tape.value(pc).item()?),
            balance: Some(tape.value(balance).item()?),
            ..Default::default()
        };
        let wpc = tape.scale(pc, weights.xi1)?;
        let mut total = tape.add(mce, wpc)?;
        if let Some(d) = &delta {
            let dv = tape.constant(d.clone());
            let shifted = tape.add(xv, dv)?;
            let plogits = state.target.forward(&mut tape, &vars, shifted)?;
            let pert = tape.softmax(plogits)?;
            let mic2 = loss_mic_stage2(&mut tape, probs, pert)?;
            comp.mic2 = Some(tape.value(mic2).item()?);
            let weighted = tape.scale(mic2, weights.xi2)?;
            total = tape.add(total, weighted)?;
        }
        let bd = stage_totals(Stage::Two, comp, weights)?;
        check_finite(&bd, "stage-two batch")?;

        let grads = tape.backward(total)?;
        state.target.apply_gradients(&grads, &vars, cfg.lr_target)?;
        comps.push(comp);
    }

    epoch_breakdown(Stage::Two, &comps, weights)
}

fn freeze_violation(what: &str, epoch: usize) -> Error {
    Error::Frozen(format!("{what} changed during epoch {epoch}"))
}

/// Progress callbacks for a run.
pub trait RunObserver {
    /// Called once validation has passed, before the first epoch.
    fn run_started(&mut self) {}

    /// Called when `stage` of `epoch` has finished.
    fn stage_done(&mut self, _epoch: usize, _stage: Stage) {}

    /// Called with each completed epoch; an error aborts the run.
    fn epoch_done(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Adapts a copy of `source` to `target` with the frozen `prior`.
///
/// Target labels are read only to report accuracy.
pub fn run(source: &DenseNet, prior: &PriorModel, target: &LabeledSet, cfg: &AdaptationConfig) -> Result<AdaptationReport> {
    run_observed(source, prior, target, cfg, &mut ())
}

/// [`run`] with progress callbacks.
pub fn run_observed(
    source: &DenseNet,
    prior: &PriorModel,
    target: &LabeledSet,
    cfg: &AdaptationConfig,
    observer: &mut dyn RunObserver,
) -> Result<AdaptationReport> {
    cfg.validate()?;
    if !prior.is_frozen() {
        return Err(Error::InvalidConfig("prior model must be pretrained and frozen".into()));
    }
    if target.is_empty() {
        return Err(Error::EmptyBatch("adaptation target set"));
    }
    if source.input_dim() != target.dim() || prior.input_dim() != target.dim() {
        return Err(Error::InvalidConfig(format!(
            "input dims differ: source {}, prior {}, data {}",
            source.input_dim(),
            prior.input_dim(),
            target.dim()
        )));
    }
    if source.output_dim() != target.num_classes() || prior.num_classes() != target.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "class counts differ: source {}, prior {}, data {}",
            source.output_dim(),
            prior.num_classes(),
            target.num_classes()
        )));
    }
    cfg.top_n_for(target.num_classes())?;

    let x = target.features();
    let radius = match cfg.radius {
        Some(r) => r,
        None => default_radius(x),
    };
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig("target samples are all identical; set radius explicitly".into()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(10);
    let mut perturb_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    perturb_rng.set_stream(11);

    let mut state = AdaptState {
        target: source.clone(),
        prior: prior.clone(),
        context: prior.zero_context(),
    };
    let prior_print = prior.fingerprint();
    let source_accuracy = net_accuracy(source, target)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    observer.run_started();

    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(x.rows(), cfg.batch_size, &mut shuffle_rng);

        let before = state.target.fingerprint();
        let (cache, stage1) = stage1_epoch(&mut state, x, &batches, cfg, radius, epoch, &mut perturb_rng)?;
        if state.target.fingerprint() != before {
            return Err(freeze_violation("target model during stage one", epoch));
        }
        if !cache.covers(x.rows()) {
            return Err(Error::InvalidConfig(format!("epoch {epoch} did not visit every sample once")));
        }
        let accuracy_stage1 = net_accuracy(&state.target, target)?;
        observer.stage_done(epoch, Stage::One);

        let etas = if cfg.variant.dynamic_eta_off {
            EtaSchedule::constant(cfg.eta0)
        } else {
            dynamic_eta(&cache, cfg.eta0, cfg.eta_clip)?
        };
        let context_print = state.context.fingerprint();
        let stage2 = stage2_epoch(&mut state, x, &batches, &etas, cfg, radius, &mut perturb_rng)?;
        if state.context.fingerprint() != context_print {
            return Err(freeze_violation("prompt context during stage two", epoch));
        }
        if state.prior.fingerprint() != prior_print {
            return Err(freeze_violation("prior backbone", epoch));
        }
        let accuracy_stage2 = net_accuracy(&state.target, target)?;
        observer.stage_done(epoch, Stage::Two);
        let pred = state.prior.predict(x, &state.context)?.argmax_rows();
        let prior_accuracy = target.accuracy(&pred);

        log::debug!(
            "epoch {epoch}: stage1 {:.5} stage2 {:.5} acc {:.4}",
            stage1.total,
            stage2.total,
            accuracy_stage2
        );
        let record = EpochRecord {
            epoch,
            stage1,
            stage2,
            accuracy_stage1,
            accuracy_stage2,
            prior_accuracy,
            eta: etas.summary(),
            target_fingerprint: state.target.fingerprint(),
            context_fingerprint: context_print,
        };
        observer.epoch_done(&record)?;
        epochs.push(record);
    }

    let final_accuracy = net_accuracy(&state.target, target)?;
    Ok(AdaptationReport {
        epochs,
        source_accuracy,
        final_accuracy,
        radius,
        target: state.target,
        context: state.context,
    })
}

/// Architecture and pretraining settings for the source model and the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub source_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub prior_feature_dim: usize,
    pub prior_temperature: f64,
    pub source: TrainConfig,
    pub prior: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            source_hidden: vec![32, 32],
            prior_hidden: vec![32],
            prior_feature_dim: 16,
            prior_temperature: 0.5,
            source: TrainConfig::default(),
            prior: TrainConfig::default(),
        }
    }
}

/// Pretrained models for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub source: DenseNet,
    pub source_train_accuracy: f64,
    pub prior: PriorModel,
}

/// Trains the prior on `broad` and the source classifier on `source`.
/// Initialization and minibatch order derive from `seed`.
pub fn pretrain(source: &LabeledSet, broad: &LabeledSet, cfg: &PretrainConfig, seed: u64) -> Result<Pretrained> {
    let c = source.num_classes();
    let d = source.dim();
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(20);

    let mut prior_widths = vec![d];
    prior_widths.extend(&cfg.prior_hidden);
    prior_widths.push(cfg.prior_feature_dim);
    let prior = PriorModel::new(&prior_widths, c, cfg.prior_temperature, &mut init_rng)?;
    let prior = pretrain_prior(
        prior,
        broad,
        &TrainConfig {
            seed: seed ^ 0x5052_494f,
            ..cfg.prior.clone()
        },
    )?;

    let mut widths = vec![d];
    widths.extend(&cfg.source_hidden);
    widths.push(c);
    let net = DenseNet::new(&widths, &mut init_rng)?;
    let (source_net, acc) = pretrain_source(
        net,
        source,
        &TrainConfig {
            seed: seed ^ 0x534f_5552,
            ..cfg.source.clone()
        },
    )?;
    Ok(Pretrained {
        source: source_net,
        source_train_accuracy: acc,
        prior,
    })
}

/// Result of one generate, pretrain and adapt pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub variant: Variant,
    pub source_accuracy: f64,
    pub adapted_accuracy: f64,
    pub prior_accuracy: f64,
    pub report: AdaptationReport,
    pub pretrained: Pretrained,
}

/// Generates the benchmark for `seed`, pretrains both models and adapts.
/// `adapt.seed` is overridden by `seed`.
pub fn run_experiment(
    spec: &ShiftSpec,
    pretrain_cfg: &PretrainConfig,
    adapt: &AdaptationConfig,
    seed: u64,
) -> Result<ExperimentOutcome> {
    let spec = ShiftSpec { seed, ..spec.clone() };
    let (source, target, broad) = generate(&spec)?;
    run_on_data(&source, &target, &broad, pretrain_cfg, adapt, seed, &mut ())
}

/// [`run_experiment`] on already loaded splits.
pub fn run_on_data(
    source: &LabeledSet,
    target: &LabeledSet,
    broad: &LabeledSet,
    pretrain_cfg: &PretrainConfig,
    adapt: &AdaptationConfig,
    seed: u64,
    observer: &mut dyn RunObserver,
) -> Result<ExperimentOutcome> {
    adapt.validate()?;
    let pretrained = pretrain(source, broad, pretrain_cfg, seed)?;
    let cfg = AdaptationConfig {
        seed,
        ..adapt.clone()
    };
    let report = run_observed(&pretrained.source, &pretrained.prior, target, &cfg, observer)?;
    let pred = pretrained
        .prior
        .predict(target.features(), &pretrained.prior.zero_context())?
        .argmax_rows();
    Ok(ExperimentOutcome {
        seed,
        variant: adapt.variant,
        source_accuracy: report.source_accuracy,
        adapted_accuracy: report.final_accuracy,
        prior_accuracy: target.accuracy(&pred),
        report,
        pretrained,
    })
}
